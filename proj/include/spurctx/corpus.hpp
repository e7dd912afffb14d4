#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spurctx/rubric.hpp"
#include "spurctx/transcript.hpp"
#include "spurctx/util.hpp"

namespace spurctx {

enum class CorpusFormat { csv, jsonl };

inline CorpusFormat format_from_path(const std::string& path) {
    if (path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl") return CorpusFormat::jsonl;
    return CorpusFormat::csv;
}

// A row that could not be ingested, with the reason. Rows with problems are
// reported here instead of being silently dropped.
struct RowIssue {
    std::size_t line = 0;  // 1-based line in the source file
    std::string id;        // may be empty when the id itself is missing
    std::string message;
};

struct LoadResult {
    TranscriptSet set;
    std::vector<RowIssue> issues;
};

namespace detail {

// Minimal RFC-4180 CSV: quoted fields may contain commas, doubled quotes and
// newlines. Returns one row per record.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool row_started = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        switch (c) {
            case '"': in_quotes = true; row_started = true; break;
            case ',': row.push_back(std::move(field)); field.clear(); row_started = true; break;
            case '\r': break;
            case '\n':
                if (row_started || !field.empty() || !row.empty()) {
                    row.push_back(std::move(field));
                    field.clear();
                    rows.push_back(std::move(row));
                    row.clear();
                    row_started = false;
                }
                break;
            default: field += c; row_started = true; break;
        }
    }
    if (row_started || !field.empty() || !row.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string csv_quote(const std::string& s) {
    bool needs = s.find_first_of(",\"\n\r") != std::string::npos;
    if (!needs) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

inline std::optional<int> parse_int_field(const std::string& s) {
    std::string t = trim(s);
    if (t.empty()) return std::nullopt;
    try {
        std::size_t pos = 0;
        int v = std::stoi(t, &pos);
        if (pos != t.size()) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Loading and saving
// ---------------------------------------------------------------------------

// Ingest a corpus file. Row-level problems (missing id/text, no labels,
// duplicate ids, out-of-scale labels) are reported as issues and the row is
// excluded; a malformed file or unreadable path throws.
inline LoadResult load_corpus_text(std::string_view text, CorpusFormat format) {
    LoadResult result;
    std::set<std::string> seen_ids;
    const auto dims = dimension_ids();

    auto ingest = [&](std::size_t line, Transcript t, bool any_label_field) {
        if (t.id.empty()) {
            result.issues.push_back({line, "", "missing id"});
            return;
        }
        if (trim(t.text).empty()) {
            result.issues.push_back({line, t.id, "missing text"});
            return;
        }
        if (!any_label_field || t.labels.empty()) {
            result.issues.push_back({line, t.id, "no dimension label"});
            return;
        }
        for (const auto& [dim_id, score] : t.labels) {
            const RubricDimension& d = dimension_or_throw(dim_id);
            if (!d.in_scale(score)) {
                result.issues.push_back({line, t.id,
                                         dim_id + "=" + std::to_string(score) + " outside scale " +
                                             std::to_string(d.scale_min) + "-" +
                                             std::to_string(d.scale_max)});
                return;
            }
        }
        if (!seen_ids.insert(t.id).second) {
            result.issues.push_back({line, t.id, "duplicate id"});
            return;
        }
        result.set.items.push_back(std::move(t));
    };

    if (format == CorpusFormat::csv) {
        auto rows = detail::parse_csv(text);
        if (rows.empty()) return result;
        const auto& header = rows[0];
        std::map<std::string, std::size_t> col;
        for (std::size_t i = 0; i < header.size(); ++i) col[trim(header[i])] = i;
        if (!col.count("id") || !col.count("text"))
            throw std::runtime_error("csv header must contain id and text columns");
        for (std::size_t r = 1; r < rows.size(); ++r) {
            const auto& cells = rows[r];
            auto cell = [&](const std::string& name) -> std::string {
                auto it = col.find(name);
                if (it == col.end() || it->second >= cells.size()) return "";
                return cells[it->second];
            };
            Transcript t;
            t.id = trim(cell("id"));
            t.text = cell("text");
            bool any_label_field = false;
            bool bad_label = false;
            for (const auto& dim_id : dims) {
                std::string raw = cell(dim_id);
                if (trim(raw).empty()) continue;
                any_label_field = true;
                auto v = detail::parse_int_field(raw);
                if (!v) {
                    result.issues.push_back({r + 1, t.id, dim_id + " not an integer: " + raw});
                    bad_label = true;
                    break;
                }
                t.labels[dim_id] = *v;
            }
            if (!bad_label) ingest(r + 1, std::move(t), any_label_field);
        }
    } else {
        std::size_t line_no = 0;
        std::istringstream in{std::string(text)};
        std::string line;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            nlohmann::json obj;
            try {
                obj = nlohmann::json::parse(line);
            } catch (const nlohmann::json::parse_error& e) {
                result.issues.push_back({line_no, "", std::string("invalid json: ") + e.what()});
                continue;
            }
            Transcript t;
            t.id = obj.value("id", std::string());
            t.text = obj.value("text", std::string());
            bool any_label_field = false;
            bool bad_label = false;
            for (const auto& dim_id : dims) {
                if (!obj.contains(dim_id) || obj[dim_id].is_null()) continue;
                any_label_field = true;
                if (!obj[dim_id].is_number_integer()) {
                    result.issues.push_back({line_no, t.id, dim_id + " not an integer"});
                    bad_label = true;
                    break;
                }
                t.labels[dim_id] = obj[dim_id].get<int>();
            }
            if (obj.contains("source") && obj["source"].is_string())
                t.source = obj["source"] == "synthetic" ? TranscriptSource::synthetic
                                                        : TranscriptSource::real;
            if (obj.contains("segment_index") && obj["segment_index"].is_number_integer())
                t.segment_index = obj["segment_index"].get<int>();
            if (!bad_label) ingest(line_no, std::move(t), any_label_field);
        }
    }
    return result;
}

inline LoadResult load_corpus(const std::string& path, CorpusFormat format) {
    return load_corpus_text(read_file(path), format);
}

inline LoadResult load_corpus(const std::string& path) {
    return load_corpus(path, format_from_path(path));
}

inline std::string save_corpus_text(const TranscriptSet& set, CorpusFormat format) {
    const auto dims = dimension_ids();
    std::string out;
    if (format == CorpusFormat::csv) {
        out = "id,text";
        for (const auto& d : dims) out += "," + d;
        out += "\n";
        for (const auto& t : set.items) {
            out += detail::csv_quote(t.id) + "," + detail::csv_quote(t.text);
            for (const auto& d : dims) {
                out += ",";
                auto it = t.labels.find(d);
                if (it != t.labels.end()) out += std::to_string(it->second);
            }
            out += "\n";
        }
    } else {
        for (const auto& t : set.items) {
            nlohmann::json obj;
            obj["id"] = t.id;
            obj["text"] = t.text;
            for (const auto& d : dims) {
                auto it = t.labels.find(d);
                if (it != t.labels.end()) obj[d] = it->second;
            }
            obj["source"] = to_string(t.source);
            if (t.segment_index) obj["segment_index"] = *t.segment_index;
            out += obj.dump() + "\n";
        }
    }
    return out;
}

inline void save_corpus(const TranscriptSet& set, const std::string& path, CorpusFormat format) {
    write_file(path, save_corpus_text(set, format));
}

// ---------------------------------------------------------------------------
// Balanced splitting
// ---------------------------------------------------------------------------

struct SplitSpec {
    int per_bucket_cap = 50;
    // Optional per-dimension low/high boundary; a label <= boundary is "low".
    // Defaults to the scale midpoint: 4 on a 1-7 scale, 2 on a 1-3 scale.
    std::map<std::string, int> low_boundary;
    std::uint64_t seed = 0;

    int boundary_for(const RubricDimension& d) const {
        auto it = low_boundary.find(d.id);
        if (it != low_boundary.end()) return it->second;
        return (d.scale_min + d.scale_max) / 2;
    }
};

struct SplitResult {
    TranscriptSet eval;
    TranscriptSet train;
    std::vector<std::string> warnings;
};

// For each dimension (fixed id order), draw up to per_bucket_cap transcripts
// from its low bucket and up to per_bucket_cap from its high bucket, without
// ever selecting a transcript twice. Selected transcripts form the eval set,
// everything else the training set. Greedy and order-sensitive by design;
// deterministic given the seed.
inline SplitResult balanced_split(const TranscriptSet& set,
                                  const std::vector<RubricDimension>& dims,
                                  const SplitSpec& spec) {
    if (set.empty()) throw std::invalid_argument("balanced_split: empty corpus");
    if (spec.per_bucket_cap < 0) throw std::invalid_argument("balanced_split: negative cap");

    std::vector<RubricDimension> ordered = dims;
    std::sort(ordered.begin(), ordered.end(),
              [](const RubricDimension& a, const RubricDimension& b) { return a.id < b.id; });

    std::set<std::size_t> selected;
    SplitResult result;

    for (const auto& dim : ordered) {
        int boundary = spec.boundary_for(dim);
        for (int bucket = 0; bucket < 2; ++bucket) {
            bool want_low = bucket == 0;
            std::vector<std::size_t> candidates;
            for (std::size_t i = 0; i < set.items.size(); ++i) {
                auto it = set.items[i].labels.find(dim.id);
                if (it == set.items[i].labels.end()) continue;
                bool is_low = it->second <= boundary;
                if (is_low == want_low) candidates.push_back(i);
            }
            if (candidates.empty()) {
                result.warnings.push_back(dim.id + (want_low ? " low" : " high") +
                                          " bucket is empty");
                continue;
            }
            auto rng = make_rng(spec.seed, dim.id + (want_low ? "/low" : "/high"));
            shuffle_vec(candidates, rng);
            int taken = 0;
            for (std::size_t idx : candidates) {
                if (taken >= spec.per_bucket_cap) break;
                if (selected.count(idx)) continue;
                selected.insert(idx);
                ++taken;
            }
            if (taken < spec.per_bucket_cap) {
                result.warnings.push_back(dim.id + (want_low ? " low" : " high") +
                                          " bucket contributed " + std::to_string(taken) + " of " +
                                          std::to_string(spec.per_bucket_cap));
            }
        }
    }

    for (std::size_t i = 0; i < set.items.size(); ++i) {
        if (selected.count(i)) result.eval.items.push_back(set.items[i]);
        else result.train.items.push_back(set.items[i]);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

// Split a transcript into k whitespace-token segments whose lengths differ by
// at most one token. Every segment inherits the parent's labels.
inline std::vector<Transcript> segment(const Transcript& t, int k) {
    if (k < 1) throw std::invalid_argument("segment: k must be >= 1");
    if (k == 1) {
        Transcript seg = t;
        seg.segment_index = 0;
        return {seg};
    }
    auto tokens = tokenize(t.text);
    if (static_cast<std::size_t>(k) > tokens.size())
        throw std::invalid_argument("segment: k exceeds token count of transcript " + t.id);

    std::vector<Transcript> segments;
    std::size_t n = tokens.size();
    std::size_t base = n / static_cast<std::size_t>(k);
    std::size_t extra = n % static_cast<std::size_t>(k);
    std::size_t pos = 0;
    for (int i = 0; i < k; ++i) {
        std::size_t len = base + (static_cast<std::size_t>(i) < extra ? 1 : 0);
        std::vector<std::string> part(tokens.begin() + static_cast<std::ptrdiff_t>(pos),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
        Transcript seg;
        seg.id = t.id + "#" + std::to_string(i);
        seg.text = join(part);
        seg.labels = t.labels;
        seg.source = t.source;
        seg.segment_index = i;
        segments.push_back(std::move(seg));
    }
    return segments;
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation
// ---------------------------------------------------------------------------
//
// Each synthetic transcript is built from four structurally identical
// quarters so that token counts, speaker tags and per-dimension marker words
// are spread evenly; quarter-level segmentation then sees the same marker
// rate as the whole transcript. A dimension's planted score s appears as
// exactly 4*s occurrences of that dimension's marker word in the 320-token
// transcript, i.e. marker_rate = s / 80.

inline constexpr int kSynthTokensTotal = 320;
inline constexpr int kSynthQuarterTokens = 80;
inline constexpr int kSynthMarkersPerScoreUnit = 4;
inline constexpr double kSynthTokensPerScoreUnit =
    static_cast<double>(kSynthTokensTotal) / kSynthMarkersPerScoreUnit;  // 80

inline const std::map<std::string, std::string>& marker_words() {
    static const std::map<std::string, std::string> words = {
        {"CLBM", "orderly"},     {"CLINSTD", "dialogue"}, {"CLPC", "warmly"},
        {"EXPL", "because"},     {"LANGIMP", "precisely"}, {"REMED", "misconception"},
        {"SMQR", "conjecture"},
    };
    return words;
}

// Occurrences of a dimension's marker word per whitespace token.
inline double marker_rate(std::string_view text, const RubricDimension& dim) {
    auto tokens = tokenize(text);
    if (tokens.empty()) return 0.0;
    const std::string& marker = marker_words().at(dim.id);
    std::size_t count = 0;
    for (const auto& tok : tokens)
        if (tok == marker) ++count;
    return static_cast<double>(count) / static_cast<double>(tokens.size());
}

// Planted-quality estimate recovered from the marker rate; exact on
// synthetic transcripts, clamped to the scale on anything else.
inline double planted_quality(std::string_view text, const RubricDimension& dim) {
    return marker_rate(text, dim) * kSynthTokensPerScoreUnit;
}

inline TranscriptSet generate_synthetic_corpus(int n, const std::vector<RubricDimension>& dims,
                                               std::uint64_t seed) {
    if (n <= 0) throw std::invalid_argument("generate_synthetic_corpus: n must be > 0");
    if (dims.empty()) throw std::invalid_argument("generate_synthetic_corpus: no dimensions");

    static const std::vector<std::string> filler = {
        "the",    "class",  "looks",   "at",      "today's", "problem", "and",   "students",
        "share",  "ideas",  "about",   "numbers", "while",   "the",     "group", "checks",
        "each",   "answer", "on",      "the",     "board",   "then",    "moves", "to",
        "another", "example", "with",  "partners", "before", "writing", "down",  "their",
        "steps",
    };

    TranscriptSet set;
    for (int i = 0; i < n; ++i) {
        auto rng = make_rng(seed, "synth/" + std::to_string(i));
        Transcript t;
        {
            std::ostringstream id;
            id << "synth-" << std::setw(4) << std::setfill('0') << i;
            t.id = id.str();
        }
        t.source = TranscriptSource::synthetic;

        std::vector<std::string> quarter_words;  // words for one quarter, tags excluded
        for (const auto& dim : dims) {
            int s = static_cast<int>(uniform_int(rng, dim.scale_min, dim.scale_max));
            t.labels[dim.id] = s;
            const std::string& marker = marker_words().at(dim.id);
            for (int m = 0; m < s; ++m) quarter_words.push_back(marker);  // s per quarter
        }

        // 8 utterances of 10 tokens per quarter: 1 speaker tag + 9 words.
        constexpr int utterances = 8, words_per_utterance = 9;
        const int slots = utterances * words_per_utterance;
        if (static_cast<int>(quarter_words.size()) > slots)
            throw std::logic_error("synthetic quarter overflow");
        std::size_t f = 0;
        while (static_cast<int>(quarter_words.size()) < slots) {
            quarter_words.push_back(filler[f % filler.size()]);
            ++f;
        }

        std::vector<std::string> parts;
        for (int q = 0; q < 4; ++q) {
            auto words = quarter_words;
            shuffle_vec(words, rng);  // same multiset in every quarter, varied order
            std::size_t w = 0;
            for (int u = 0; u < utterances; ++u) {
                parts.push_back(u % 2 == 0 ? "Teacher:" : "Student:");
                for (int j = 0; j < words_per_utterance; ++j) parts.push_back(words[w++]);
            }
        }
        t.text = join(parts);
        set.items.push_back(std::move(t));
    }
    return set;
}

}  // namespace spurctx
