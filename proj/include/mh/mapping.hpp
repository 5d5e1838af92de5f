#pragma once

// Output-processing and nearest-label mapping: free-form model output is cut
// down to its answer field, then mapped onto the label set by exact match or
// by cosine similarity of sentence embeddings.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mh/backends.hpp"
#include "mh/datamodel.hpp"
#include "mh/errors.hpp"

namespace mh {

inline double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
    if (u.dim() != v.dim()) throw DomainError("cosine: dimension mismatch");
    double dot = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < u.dim(); ++i) {
        dot += u.values[i] * v.values[i];
        nu += u.values[i] * u.values[i];
        nv += v.values[i] * v.values[i];
    }
    if (nu == 0 || nv == 0) throw DomainError("cosine: zero vector");
    return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

inline constexpr double kEchoPrefixThreshold = 0.9;

namespace mapping_detail {

inline std::string process_once(std::string_view raw, std::string_view prompt, double threshold) {
    std::string_view rest = raw;
    // echo: strip the prompt while the shared prefix covers enough of it
    while (!prompt.empty()) {
        std::size_t lcp = 0;
        while (lcp < rest.size() && lcp < prompt.size() && rest[lcp] == prompt[lcp]) ++lcp;
        if (lcp == 0 || double(lcp) < threshold * double(prompt.size())) break;
        rest.remove_prefix(lcp);
    }
    constexpr std::string_view marker = "Answer:";
    if (auto at = rest.rfind(marker); at != std::string_view::npos) rest.remove_prefix(at + marker.size());
    return trim(rest);
}

}  // namespace mapping_detail

/// Answer field of a raw model output: echoed prompt removed, text after the
/// last "Answer:" kept, whitespace trimmed. The steps repeat until nothing
/// changes, so the function is idempotent.
inline std::string output_process(std::string_view raw, std::string_view prompt,
                                  double echo_threshold = kEchoPrefixThreshold) {
    std::string cur = mapping_detail::process_once(raw, prompt, echo_threshold);
    for (;;) {
        auto next = mapping_detail::process_once(cur, prompt, echo_threshold);
        if (next == cur) return cur;
        cur = std::move(next);
    }
}

enum class MappingVia { exact_match, embedding, fallback };

NLOHMANN_JSON_SERIALIZE_ENUM(MappingVia, {{MappingVia::exact_match, "exact-match"},
                                          {MappingVia::embedding, "embedding"},
                                          {MappingVia::fallback, "fallback"}})

struct MappingResult {
    std::string label;
    std::map<std::string, double> scores;
    MappingVia via = MappingVia::exact_match;
};

/// Label used for blank answers: "Unknown" when the set has it, else the first.
inline std::string default_fallback_label(const LabelSet& labels) {
    if (auto u = canonicalize_label("Unknown", labels)) return *u;
    return labels[0];
}

inline MappingResult map_to_label(std::string_view answer, const LabelSet& labels, Embedder& embedder,
                                  std::optional<std::string> fallback = std::nullopt) {
    const std::string text = trim(answer);
    if (text.empty()) {
        auto label = fallback ? canonicalize_label(*fallback, labels) : std::nullopt;
        return {label ? *label : default_fallback_label(labels), {}, MappingVia::fallback};
    }
    if (auto exact = canonicalize_label(text, labels)) return {*exact, {{*exact, 1.0}}, MappingVia::exact_match};

    std::vector<std::string> inputs{text};
    inputs.insert(inputs.end(), labels.labels().begin(), labels.labels().end());
    const auto vectors = embed_texts(embedder, inputs);

    // cosines this close count as tied so rescaled vectors keep the same winner
    constexpr double tie_eps = 1e-12;
    MappingResult out{"", {}, MappingVia::embedding};
    double best = -2.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double c = cosine(vectors[0], vectors[i + 1]);
        out.scores[labels[i]] = c;
        if (c > best + tie_eps) {
            best = c;
            out.label = labels[i];
        }
    }
    return out;
}

}  // namespace mh
