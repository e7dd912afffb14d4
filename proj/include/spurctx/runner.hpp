#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "spurctx/contexts.hpp"
#include "spurctx/corpus.hpp"
#include "spurctx/metrics.hpp"
#include "spurctx/mitigations.hpp"
#include "spurctx/policy.hpp"
#include "spurctx/rubric.hpp"
#include "spurctx/toy_policy.hpp"
#include "spurctx/util.hpp"

namespace spurctx {

// ---------------------------------------------------------------------------
// Run configuration: layered key=value text with CLI overrides. The config
// hash is embedded in every artifact so reported numbers stay traceable to
// the exact configuration that produced them.
// ---------------------------------------------------------------------------

struct RunConfig {
    std::string corpus;  // path to csv/jsonl, or "synth:<n>" for a generated corpus
    std::string model = "stub:constant:4";
    std::vector<std::string> dimensions = {"CLBM", "CLINSTD", "SMQR"};
    std::vector<std::string> categories = {"experience"};
    std::vector<MitigationSpec> mitigations;
    int repeats = 1;
    double temperature = 0.0;
    int max_tokens = 64;
    std::uint64_t seed = 0;
    std::string out_dir = "runs";
    std::string cache_dir = ".cache";
    int workers = 8;

    DecodingParams decoding() const {
        DecodingParams dp;
        dp.temperature = temperature;
        dp.max_tokens = max_tokens;
        dp.seed = seed;
        return dp;
    }
};

inline std::map<std::string, std::string> parse_kv_config(std::string_view text) {
    std::map<std::string, std::string> kv;
    for (const auto& raw : split(text, '\n')) {
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line is not key=value: " + line);
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto as_bool = [&](const std::string& v) { return v == "1" || v == "true" || v == "yes"; };
    if (key == "corpus") cfg.corpus = value;
    else if (key == "model") cfg.model = value;
    else if (key == "dimensions") {
        cfg.dimensions.clear();
        for (auto& d : split(value, ',')) {
            std::string id = trim(d);
            if (!id.empty()) cfg.dimensions.push_back(id);
        }
    } else if (key == "categories") {
        cfg.categories.clear();
        for (auto& c : split(value, ',')) {
            std::string id = trim(c);
            if (!id.empty()) cfg.categories.push_back(id);
        }
    } else if (key == "avg_n") {
        if (int n = std::stoi(value); n > 1)
            cfg.mitigations.push_back({MitigationKind::avg_n, n, 4});
    } else if (key == "segments") {
        if (int k = std::stoi(value); k > 1)
            cfg.mitigations.push_back({MitigationKind::segment_avg, 1, k});
    } else if (key == "safety") {
        if (as_bool(value)) cfg.mitigations.push_back({MitigationKind::safety, 1, 4});
    } else if (key == "cot") {
        if (as_bool(value)) cfg.mitigations.push_back({MitigationKind::cot, 1, 4});
    } else if (key == "repeats") cfg.repeats = std::stoi(value);
    else if (key == "temperature") cfg.temperature = std::stod(value);
    else if (key == "max_tokens") cfg.max_tokens = std::stoi(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "cache_dir") cfg.cache_dir = value;
    else if (key == "workers") cfg.workers = std::stoi(value);
    else throw std::runtime_error("unknown config key: " + key);
}

inline RunConfig parse_run_config(std::string_view text,
                                  const std::map<std::string, std::string>& overrides = {}) {
    RunConfig cfg;
    for (const auto& [k, v] : parse_kv_config(text)) apply_config_entry(cfg, k, v);
    for (const auto& [k, v] : overrides) apply_config_entry(cfg, k, v);
    return cfg;
}

inline std::string config_fingerprint(const RunConfig& cfg) {
    std::ostringstream canon;
    canon << "corpus=" << cfg.corpus << ";model=" << cfg.model << ";dims=";
    for (const auto& d : cfg.dimensions) canon << d << ",";
    canon << ";cats=";
    for (const auto& c : cfg.categories) canon << c << ",";
    canon << ";mit=";
    for (const auto& m : cfg.mitigations) canon << m.label() << ",";
    canon << ";repeats=" << cfg.repeats << ";temp=" << fmt_fixed(cfg.temperature, 4)
          << ";max_tokens=" << cfg.max_tokens << ";seed=" << cfg.seed;
    return hex64(fnv1a64(canon.str()));
}

// ---------------------------------------------------------------------------
// Record persistence
// ---------------------------------------------------------------------------

inline nlohmann::json record_to_json(const PredictionRecord& r) {
    nlohmann::json obj;
    obj["transcript_id"] = r.transcript_id;
    obj["dimension"] = r.dimension_id;
    if (r.context) {
        obj["category"] = r.context->category_id;
        obj["valence"] = to_string(r.context->valence);
        obj["statement"] = r.context->statement;
    } else {
        obj["category"] = "";
        obj["valence"] = "";
    }
    obj["strategy"] = r.strategy;
    obj["raw_text"] = r.raw_text;
    if (r.parsed_score) obj["parsed_score"] = *r.parsed_score;
    else obj["parsed_score"] = nullptr;
    obj["repeat_index"] = r.repeat_index;
    obj["model_id"] = r.model_id;
    return obj;
}

inline PredictionRecord record_from_json(const nlohmann::json& obj) {
    PredictionRecord r;
    r.transcript_id = obj.at("transcript_id").get<std::string>();
    r.dimension_id = obj.at("dimension").get<std::string>();
    std::string category = obj.value("category", std::string());
    if (!category.empty()) {
        SpuriousContext ctx;
        ctx.category_id = category;
        ctx.valence = valence_from_string(obj.at("valence").get<std::string>());
        ctx.statement = obj.value("statement", std::string());
        r.context = ctx;
    }
    r.strategy = obj.value("strategy", std::vector<std::string>{});
    r.raw_text = obj.value("raw_text", std::string());
    if (obj.contains("parsed_score") && !obj["parsed_score"].is_null())
        r.parsed_score = obj["parsed_score"].get<int>();
    r.repeat_index = obj.value("repeat_index", 0);
    r.model_id = obj.value("model_id", std::string());
    return r;
}

inline std::string records_to_jsonl(const std::vector<PredictionRecord>& records) {
    std::string out;
    for (const auto& r : records) out += record_to_json(r).dump() + "\n";
    return out;
}

inline std::vector<PredictionRecord> records_from_jsonl(std::string_view text) {
    std::vector<PredictionRecord> records;
    for (const auto& line : split(text, '\n')) {
        if (trim(line).empty()) continue;
        records.push_back(record_from_json(nlohmann::json::parse(line)));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Evaluation: issue the paired, baseline and mitigation calls, producing one
// PredictionRecord per model call.
// ---------------------------------------------------------------------------

namespace detail {

// Jobs are prepared single-threaded, dispatched to a bounded worker pool, and
// written back by index so record order is deterministic.
inline void run_jobs(std::vector<std::function<void()>>& jobs, int workers) {
    if (workers <= 1 || jobs.size() <= 1) {
        for (auto& job : jobs) job();
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            jobs[i]();
        }
    };
    std::vector<std::thread> pool;
    int n = std::min<int>(workers, static_cast<int>(jobs.size()));
    pool.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

inline std::string parent_id(const std::string& transcript_id) {
    auto pos = transcript_id.rfind('#');
    return pos == std::string::npos ? transcript_id : transcript_id.substr(0, pos);
}

}  // namespace detail

inline std::vector<PredictionRecord> run_prediction_pass(Policy& policy,
                                                         const TranscriptSet& corpus,
                                                         const RunConfig& cfg) {
    struct Job {
        PromptSpec prompt;
        std::optional<SpuriousContext> context;
        std::string transcript_id;
        std::string dimension_id;
        std::vector<std::string> strategy;
        int repeat_index = 0;
    };
    std::vector<Job> jobs;

    auto add_job = [&](PromptSpec prompt, const std::optional<SpuriousContext>& ctx,
                       const std::string& tid, const std::string& dim_id,
                       std::vector<std::string> strategy, int repeat) {
        jobs.push_back({std::move(prompt), ctx, tid, dim_id, std::move(strategy), repeat});
    };

    for (const auto& dim_id : cfg.dimensions) {
        const RubricDimension& dim = dimension_or_throw(dim_id);
        for (const auto& t : corpus.items) {
            if (!t.labels.count(dim_id)) continue;

            // Default no-context pass; at least two repeats feed the
            // same-prompt baseline row.
            int plain_repeats = std::max(cfg.repeats, 2);
            for (int r = 0; r < plain_repeats; ++r)
                add_job(build_prompt(t, dim), std::nullopt, t.id, dim_id, {}, r);

            for (const auto& cat : cfg.categories) {
                for (Valence v : {Valence::positive, Valence::negative}) {
                    SpuriousContext ctx = instantiate(cat, v, dim);
                    for (int r = 0; r < cfg.repeats; ++r)
                        add_job(build_prompt(t, dim, ctx), ctx, t.id, dim_id, {}, r);
                }
            }

            for (const auto& mit : cfg.mitigations) {
                mit.validate();
                std::string label = mit.label();
                auto contexts_for = [&]() {
                    std::vector<std::optional<SpuriousContext>> out{std::nullopt};
                    for (const auto& cat : cfg.categories)
                        for (Valence v : {Valence::positive, Valence::negative})
                            out.push_back(instantiate(cat, v, dim));
                    return out;
                };
                for (const auto& ctx : contexts_for()) {
                    switch (mit.kind) {
                        case MitigationKind::avg_n:
                            for (int r = 0; r < mit.n; ++r)
                                add_job(build_prompt(t, dim, ctx), ctx, t.id, dim_id, {label}, r);
                            break;
                        case MitigationKind::segment_avg:
                            for (const auto& seg : segment(t, mit.k))
                                add_job(build_prompt(seg, dim, ctx), ctx, seg.id, dim_id, {label},
                                        0);
                            break;
                        case MitigationKind::safety:
                            add_job(build_prompt(t, dim, ctx, {Decoration::safety}), ctx, t.id,
                                    dim_id, {label}, 0);
                            break;
                        case MitigationKind::cot:
                            add_job(build_prompt(t, dim, ctx, {Decoration::cot}), ctx, t.id,
                                    dim_id, {label}, 0);
                            break;
                    }
                }
            }
        }
    }

    std::vector<PredictionRecord> records(jobs.size());
    std::vector<std::function<void()>> tasks;
    tasks.reserve(jobs.size());
    DecodingParams base_dp = cfg.decoding();
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        tasks.push_back([&, i] {
            const Job& job = jobs[i];
            DecodingParams dp = base_dp;
            dp.repeat_index = job.repeat_index;
            Completion completion = policy.complete(job.prompt, dp);
            PredictionRecord r;
            r.transcript_id = job.transcript_id;
            r.dimension_id = job.dimension_id;
            r.context = job.context;
            r.strategy = job.strategy;
            r.raw_text = completion.text;
            r.parsed_score = parse_score(completion.text, job.prompt.dimension);
            r.repeat_index = job.repeat_index;
            r.model_id = completion.model_id;
            records[i] = std::move(r);
        });
    }
    detail::run_jobs(tasks, cfg.workers);
    return records;
}

// ---------------------------------------------------------------------------
// Aggregation: every reported number is recomputable from the records alone.
// ---------------------------------------------------------------------------

struct RunReports {
    std::vector<DeltaReport> deltas;        // incl. the "baseline" category rows
    std::vector<AccuracyReport> accuracy;   // keyed by (dimension, strategy)
    std::vector<std::string> warnings;
};

inline RunReports aggregate_records(const std::vector<PredictionRecord>& records,
                                    const TranscriptSet& corpus) {
    RunReports reports;

    auto strategy_label = [](const PredictionRecord& r) {
        return r.strategy.empty() ? std::string() : r.strategy.front();
    };

    // (dim, strategy, category, valence-or-plain, parent transcript) -> scores
    struct Group {
        std::vector<double> parsed;
        int failures = 0;
    };
    // plain predictions per transcript for accuracy, and per-valence means
    std::map<std::tuple<std::string, std::string, std::string, std::string, std::string>, Group>
        groups;
    // baseline: first two plain repeats per (dim, strategy="", transcript)
    std::map<std::tuple<std::string, std::string>, std::map<int, double>> baseline;

    for (const auto& r : records) {
        std::string strategy = strategy_label(r);
        std::string parent = detail::parent_id(r.transcript_id);
        std::string category = r.context ? r.context->category_id : "";
        std::string valence = r.context ? to_string(r.context->valence) : "";
        auto& g = groups[{r.dimension_id, strategy, category, valence, parent}];
        if (r.parsed_score) g.parsed.push_back(static_cast<double>(*r.parsed_score));
        else g.failures++;

        if (!r.context && strategy.empty() && r.repeat_index < 2 && r.parsed_score)
            baseline[{r.dimension_id, parent}][r.repeat_index] =
                static_cast<double>(*r.parsed_score);
    }

    // A group is usable when parses hold a majority of its calls.
    auto group_mean = [](const Group& g) -> std::optional<double> {
        int total = static_cast<int>(g.parsed.size()) + g.failures;
        if (g.parsed.empty() || static_cast<int>(g.parsed.size()) < (total + 1) / 2)
            return std::nullopt;
        double acc = 0.0;
        for (double v : g.parsed) acc += v;
        return acc / static_cast<double>(g.parsed.size());
    };

    std::set<std::string> dims, strategies, categories;
    for (const auto& [key, g] : groups) {
        dims.insert(std::get<0>(key));
        strategies.insert(std::get<1>(key));
        if (!std::get<2>(key).empty()) categories.insert(std::get<2>(key));
    }

    for (const auto& dim_id : dims) {
        for (const auto& strategy : strategies) {
            // Accuracy from no-context groups.
            std::vector<double> pred, truth;
            for (const auto& [key, g] : groups) {
                if (std::get<0>(key) != dim_id || std::get<1>(key) != strategy) continue;
                if (!std::get<2>(key).empty()) continue;
                auto m = group_mean(g);
                if (!m) continue;
                const Transcript* t = corpus.find(std::get<4>(key));
                if (!t) continue;
                auto label = t->labels.find(dim_id);
                if (label == t->labels.end()) continue;
                pred.push_back(*m);
                truth.push_back(static_cast<double>(label->second));
            }
            if (!pred.empty()) {
                AccuracyReport acc = accuracy_report(pred, truth);
                acc.dimension_id = dim_id;
                acc.strategy = strategy;
                reports.accuracy.push_back(std::move(acc));
            }

            // Sensitivity per category.
            for (const auto& category : categories) {
                std::map<std::string, std::pair<std::optional<double>, std::optional<double>>>
                    by_transcript;
                int dropped = 0;
                for (const auto& [key, g] : groups) {
                    if (std::get<0>(key) != dim_id || std::get<1>(key) != strategy ||
                        std::get<2>(key) != category)
                        continue;
                    auto m = group_mean(g);
                    auto& slot = by_transcript[std::get<4>(key)];
                    if (std::get<3>(key) == "positive") slot.first = m;
                    else slot.second = m;
                    if (!m) ++dropped;
                }
                std::vector<ScorePair> pairs;
                for (const auto& [tid, scores] : by_transcript) {
                    (void)tid;
                    if (scores.first && scores.second)
                        pairs.push_back({*scores.first, *scores.second});
                }
                if (pairs.empty()) {
                    if (!by_transcript.empty())
                        reports.warnings.push_back("no usable pairs for " + dim_id + "/" +
                                                   category + "/" +
                                                   (strategy.empty() ? "default" : strategy));
                    continue;
                }
                DeltaReport delta = sensitivity_delta(pairs);
                delta.dimension_id = dim_id;
                delta.category_id = category;
                delta.strategy = strategy;
                delta.dropped = dropped;
                reports.deltas.push_back(std::move(delta));
            }
        }

        // Baseline row: difference between two repeats of the identical
        // no-context prompt.
        std::vector<ScorePair> base_pairs;
        for (const auto& [key, repeats] : baseline) {
            if (std::get<0>(key) != dim_id) continue;
            auto r0 = repeats.find(0);
            auto r1 = repeats.find(1);
            if (r0 != repeats.end() && r1 != repeats.end())
                base_pairs.push_back({r0->second, r1->second});
        }
        if (!base_pairs.empty()) {
            DeltaReport delta = sensitivity_delta(base_pairs);
            delta.dimension_id = dim_id;
            delta.category_id = "baseline";
            reports.deltas.push_back(std::move(delta));
        }
    }
    return reports;
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

enum class ReportLayout { sensitivity, accuracy, training, generalization };

inline ReportLayout layout_from_string(std::string_view s) {
    if (s == "sensitivity") return ReportLayout::sensitivity;
    if (s == "accuracy") return ReportLayout::accuracy;
    if (s == "training") return ReportLayout::training;
    if (s == "generalization") return ReportLayout::generalization;
    throw std::invalid_argument("unknown report layout: " + std::string(s));
}

inline std::string starred(double value, double p, int decimals = 2) {
    std::string cell = fmt_fixed(value, decimals);
    if (p < kSignificanceLevel) cell += "*";
    return cell;
}

inline std::string rho_cell(const std::optional<double>& rho, const std::optional<double>& p) {
    if (!rho) return "-";
    return starred(*rho, p.value_or(1.0));
}

namespace detail {

inline std::string markdown_table(const std::vector<std::string>& header,
                                  const std::vector<std::vector<std::string>>& rows) {
    std::string out = "|";
    for (const auto& h : header) out += " " + h + " |";
    out += "\n|";
    for (std::size_t i = 0; i < header.size(); ++i) out += " --- |";
    out += "\n";
    for (const auto& row : rows) {
        out += "|";
        for (const auto& cell : row) out += " " + (cell.empty() ? std::string(" ") : cell) + " |";
        out += "\n";
    }
    return out;
}

inline std::string csv_table(const std::vector<std::string>& header,
                             const std::vector<std::vector<std::string>>& rows) {
    std::string out = join(header, ",") + "\n";
    for (const auto& row : rows) out += join(row, ",") + "\n";
    return out;
}

}  // namespace detail

struct RenderedReport {
    std::string markdown;
    std::string csv;
    std::vector<std::string> warnings;
};

// Sensitivity layout: one row per (dimension, category), one column per
// strategy; starred when p < 0.05. Baseline rows lead each dimension block.
inline RenderedReport render_sensitivity(const RunReports& reports) {
    std::set<std::string> strategies;
    std::set<std::string> dims;
    std::set<std::string> categories;
    for (const auto& d : reports.deltas) {
        strategies.insert(d.strategy);
        dims.insert(d.dimension_id);
        if (d.category_id != "baseline") categories.insert(d.category_id);
    }
    std::vector<std::string> strategy_order(strategies.begin(), strategies.end());
    std::sort(strategy_order.begin(), strategy_order.end(),
              [](const std::string& a, const std::string& b) {
                  if (a.empty() != b.empty()) return a.empty();
                  return a < b;
              });

    auto find_delta = [&](const std::string& dim, const std::string& cat,
                          const std::string& strat) -> const DeltaReport* {
        for (const auto& d : reports.deltas)
            if (d.dimension_id == dim && d.category_id == cat && d.strategy == strat) return &d;
        return nullptr;
    };

    std::vector<std::string> header{"Query", "Context"};
    for (const auto& s : strategy_order) header.push_back(s.empty() ? "Default" : s);

    RenderedReport out;
    std::vector<std::vector<std::string>> rows;
    for (const auto& dim : dims) {
        std::vector<std::string> cats{"baseline"};
        cats.insert(cats.end(), categories.begin(), categories.end());
        for (const auto& cat : cats) {
            std::vector<std::string> row{dim, cat};
            bool any = false;
            for (const auto& strat : strategy_order) {
                const DeltaReport* d = find_delta(dim, cat, strat);
                if (!d && cat == "baseline" && !strat.empty()) {
                    row.push_back("");  // baseline exists only for the default pass
                    continue;
                }
                if (!d) {
                    row.push_back("");
                    out.warnings.push_back("missing cell: " + dim + "/" + cat + "/" +
                                           (strat.empty() ? "default" : strat));
                    continue;
                }
                any = true;
                row.push_back(starred(d->delta, d->p_value));
            }
            if (any) rows.push_back(std::move(row));
        }
    }
    out.markdown = detail::markdown_table(header, rows);
    out.csv = detail::csv_table(header, rows);
    return out;
}

inline RenderedReport render_accuracy(const RunReports& reports) {
    std::set<std::string> strategies, dims;
    for (const auto& a : reports.accuracy) {
        strategies.insert(a.strategy);
        dims.insert(a.dimension_id);
    }
    std::vector<std::string> strategy_order(strategies.begin(), strategies.end());
    std::sort(strategy_order.begin(), strategy_order.end(),
              [](const std::string& a, const std::string& b) {
                  if (a.empty() != b.empty()) return a.empty();
                  return a < b;
              });
    auto find = [&](const std::string& dim, const std::string& strat) -> const AccuracyReport* {
        for (const auto& a : reports.accuracy)
            if (a.dimension_id == dim && a.strategy == strat) return &a;
        return nullptr;
    };

    std::vector<std::string> header{"Query", "Metric"};
    for (const auto& s : strategy_order) header.push_back(s.empty() ? "Default" : s);
    std::vector<std::vector<std::string>> rows;
    RenderedReport out;
    for (const auto& dim : dims) {
        std::vector<std::string> rmse_row{dim, "RMSE"};
        std::vector<std::string> rho_row{dim, "Spearman"};
        for (const auto& strat : strategy_order) {
            const AccuracyReport* a = find(dim, strat);
            if (!a) {
                rmse_row.push_back("");
                rho_row.push_back("");
                out.warnings.push_back("missing accuracy cell: " + dim + "/" +
                                       (strat.empty() ? "default" : strat));
                continue;
            }
            rmse_row.push_back(fmt_fixed(a->rmse, 2));
            rho_row.push_back(rho_cell(a->spearman_rho, a->spearman_p));
        }
        rows.push_back(std::move(rmse_row));
        rows.push_back(std::move(rho_row));
    }
    out.markdown = detail::markdown_table(header, rows);
    out.csv = detail::csv_table(header, rows);
    return out;
}

// Training layout: one row per method with its sensitivity, error and rank
// correlation after training (plus the untrained row first).
struct TrainingRow {
    std::string method;
    DeltaReport delta;
    AccuracyReport accuracy;
    double entropy = 0.0;
};

inline RenderedReport render_training(const std::vector<TrainingRow>& rows_in) {
    std::vector<std::string> header{"Method", "Delta", "RMSE", "Spearman", "Entropy"};
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : rows_in) {
        rows.push_back({r.method, starred(r.delta.delta, r.delta.p_value),
                        fmt_fixed(r.accuracy.rmse, 2),
                        rho_cell(r.accuracy.spearman_rho, r.accuracy.spearman_p),
                        fmt_fixed(r.entropy, 3)});
    }
    RenderedReport out;
    out.markdown = detail::markdown_table(header, rows);
    out.csv = detail::csv_table(header, rows);
    return out;
}

// Generalization layout: sensitivity per context category before and after
// training, the training category first.
struct GeneralizationRow {
    std::string category;
    bool seen = false;  // category used during training
    DeltaReport before;
    DeltaReport after;
};

inline RenderedReport render_generalization(const std::vector<GeneralizationRow>& rows_in) {
    std::vector<std::string> header{"Context", "Seen", "Default", "Trained"};
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : rows_in) {
        rows.push_back({r.category, r.seen ? "yes" : "no",
                        starred(r.before.delta, r.before.p_value),
                        starred(r.after.delta, r.after.p_value)});
    }
    RenderedReport out;
    out.markdown = detail::markdown_table(header, rows);
    out.csv = detail::csv_table(header, rows);
    return out;
}

// ---------------------------------------------------------------------------
// Full evaluation run with artifacts on disk
// ---------------------------------------------------------------------------

struct RunArtifacts {
    std::string run_id;
    std::string run_dir;
    std::vector<PredictionRecord> records;
    RunReports reports;
};

inline TranscriptSet resolve_corpus(const RunConfig& cfg) {
    if (cfg.corpus.rfind("synth:", 0) == 0) {
        int n = std::stoi(cfg.corpus.substr(6));
        std::vector<RubricDimension> dims;
        for (const auto& id : cfg.dimensions) dims.push_back(dimension_or_throw(id));
        return generate_synthetic_corpus(n, dims, cfg.seed);
    }
    auto loaded = load_corpus(cfg.corpus);
    return loaded.set;
}

inline RunArtifacts run_evaluation(Policy& policy, const TranscriptSet& corpus,
                                   const RunConfig& cfg) {
    RunArtifacts artifacts;
    artifacts.run_id = config_fingerprint(cfg);
    artifacts.run_dir = cfg.out_dir + "/" + artifacts.run_id;
    std::filesystem::create_directories(artifacts.run_dir);

    artifacts.records = run_prediction_pass(policy, corpus, cfg);
    artifacts.reports = aggregate_records(artifacts.records, corpus);

    write_file(artifacts.run_dir + "/records.jsonl", records_to_jsonl(artifacts.records));
    RenderedReport sensitivity = render_sensitivity(artifacts.reports);
    RenderedReport accuracy = render_accuracy(artifacts.reports);
    write_file(artifacts.run_dir + "/deltas.csv", sensitivity.csv);
    write_file(artifacts.run_dir + "/accuracy.csv", accuracy.csv);

    std::string md = "# Evaluation run " + artifacts.run_id + "\n\n";
    md += "model: " + cfg.model + "\n";
    md += "seed: " + std::to_string(cfg.seed) + "\n\n";
    md += "## Sensitivity\n\n" + sensitivity.markdown + "\n";
    md += "## Accuracy\n\n" + accuracy.markdown;
    for (const auto& w : artifacts.reports.warnings) md += "\nwarning: " + w;
    for (const auto& w : sensitivity.warnings) md += "\nwarning: " + w;
    md += "\n";
    write_file(artifacts.run_dir + "/report.md", md);
    return artifacts;
}

}  // namespace spurctx
