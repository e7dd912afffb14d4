#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "spurctx/toy_policy.hpp"

namespace spurctx {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_coordinate = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

// Compare an analytic gradient against central finite differences of the loss
// over every policy parameter. The loss callable must evaluate the current
// parameter vector; the analytic callable must return d loss / d theta of the
// same length. Relative error per coordinate is
//   |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|).
// A central difference of a well-scaled loss carries cancellation noise of
// roughly |loss| * machine-eps / eps; absolute differences below noise_floor
// are agreement within the oracle's own resolution, not gradient error.
inline GradCheckResult grad_check(ToyPolicy& policy, const std::function<double()>& loss,
                                  const std::function<std::vector<double>()>& analytic_grad,
                                  double eps = 1e-6, double noise_floor = 1e-9) {
    if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be > 0");
    std::vector<double> ga = analytic_grad();
    auto params = policy.parameters();
    if (ga.size() != params.size())
        throw std::invalid_argument("grad_check: gradient length mismatch");

    GradCheckResult result;
    for (std::size_t i = 0; i < params.size(); ++i) {
        double saved = params[i];
        params[i] = saved + eps;
        double up = loss();
        params[i] = saved - eps;
        double down = loss();
        params[i] = saved;
        double gfd = (up - down) / (2.0 * eps);
        double abs_diff = std::fabs(ga[i] - gfd);
        if (abs_diff < noise_floor) continue;
        double denom = std::max(1e-8, std::fabs(ga[i]) + std::fabs(gfd));
        double rel = abs_diff / denom;
        if (rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_coordinate = i;
            result.analytic_at_worst = ga[i];
            result.numeric_at_worst = gfd;
        }
    }
    return result;
}

}  // namespace spurctx
