#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace spurctx {

enum class TranscriptSource { real, synthetic };

inline const char* to_string(TranscriptSource s) {
    return s == TranscriptSource::real ? "real" : "synthetic";
}

// One classroom transcript (or one segment of one) plus its expert scores.
// Labels map dimension id to an integer within that dimension's scale.
struct Transcript {
    std::string id;
    std::string text;
    std::map<std::string, int> labels;
    TranscriptSource source = TranscriptSource::real;
    std::optional<int> segment_index;

    bool operator==(const Transcript&) const = default;
};

struct TranscriptSet {
    std::vector<Transcript> items;

    std::size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }

    const Transcript* find(const std::string& id) const {
        for (const auto& t : items)
            if (t.id == id) return &t;
        return nullptr;
    }

    bool operator==(const TranscriptSet&) const = default;
};

}  // namespace spurctx
