#pragma once

// Story segmentation for QA: obtain split points from the proposer (or evenly
// spaced fallbacks), snap them to full stops, make them distinct, and cut the
// story into a character-exact partition whose pieces fit the text-encoder
// token cap whenever some sentence-aligned split allows it.

#include <algorithm>
#include <cstdlib>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mh/backends.hpp"
#include "mh/datamodel.hpp"
#include "mh/errors.hpp"
#include "mh/tokenizer.hpp"

namespace mh {

inline constexpr int kStorySegments = 5;

class DegenerateStory : public Error {
public:
    using Error::Error;
};

enum class SegmentMethod { proposed, fallback_quartile };

NLOHMANN_JSON_SERIALIZE_ENUM(SegmentMethod,
                             {{SegmentMethod::proposed, "proposed"}, {SegmentMethod::fallback_quartile, "fallback-quartile"}})

struct Segment {
    std::size_t char_start = 0;
    std::size_t char_end = 0;
    std::string text;
    std::size_t token_count = 0;
    bool over_cap = false;

    bool operator==(const Segment&) const = default;
};

struct Segmentation {
    std::string story_id;
    std::vector<Segment> segments;
    SegmentMethod method = SegmentMethod::proposed;

    /// Interior cut offsets, ascending.
    std::vector<std::size_t> boundaries() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 1; i < segments.size(); ++i) out.push_back(segments[i].char_start);
        return out;
    }

    std::size_t over_cap_count() const {
        return std::size_t(std::count_if(segments.begin(), segments.end(), [](const Segment& s) { return s.over_cap; }));
    }
};

/// Character offset right after the '.' nearest (in token distance) to the
/// cut before token `token_index`; ties go to the earlier full stop. Without
/// any '.', the start of token `token_index`.
inline std::size_t snap_to_full_stop(const TokenizedText& tokenized, std::size_t token_index) {
    if (token_index == 0 || token_index >= tokenized.size())
        throw PreconditionError("snap_to_full_stop: token index must lie in (0, token count)");
    std::optional<std::size_t> best;
    std::size_t best_dist = std::numeric_limits<std::size_t>::max();
    for (std::size_t d = 0; d < tokenized.size(); ++d) {
        const auto& tok = tokenized.tokens[d];
        for (std::size_t c = tok.char_start; c < tok.char_end; ++c) {
            if (tokenized.text[c] != '.') continue;
            // cutting after this token puts the boundary at token index d + 1
            const std::size_t dist = d + 1 > token_index ? d + 1 - token_index : token_index - d - 1;
            if (dist < best_dist) {
                best_dist = dist;
                best = c + 1;
            }
        }
    }
    return best ? *best : tokenized.tokens[token_index].char_start;
}

namespace segmentation_detail {

/// Number of tokens starting before `offset`.
inline std::size_t tokens_before(const TokenizedText& t, std::size_t offset) {
    return std::size_t(std::lower_bound(t.tokens.begin(), t.tokens.end(), offset,
                                        [](const Token& tok, std::size_t off) { return tok.char_start < off; }) -
                       t.tokens.begin());
}

/// Index of the element of `sorted` nearest to `value`, ties to the earlier.
inline std::size_t nearest(const std::vector<std::size_t>& sorted, std::size_t value) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        auto d = [&](std::size_t x) { return x > value ? x - value : value - x; };
        if (d(sorted[i]) < d(sorted[best])) best = i;
    }
    return best;
}

/// Turns target indices into strictly increasing indices within [0, size).
inline std::vector<std::size_t> spread(std::vector<std::size_t> idx, std::size_t size) {
    for (std::size_t k = 1; k < idx.size(); ++k) idx[k] = std::max(idx[k], idx[k - 1] + 1);
    for (std::size_t k = idx.size(); k-- > 0;) {
        const std::size_t hi = k + 1 < idx.size() ? idx[k + 1] - 1 : size - 1;
        idx[k] = std::min(idx[k], hi);
    }
    return idx;
}

/// Cheapest choice of `m` candidates (by token-boundary distance to the
/// targets) such that every resulting segment has at most `cap` tokens.
inline std::optional<std::vector<std::size_t>> fit_under_cap(const std::vector<std::size_t>& cand_tokens,
                                                             const std::vector<std::size_t>& target_tokens,
                                                             std::size_t total_tokens, std::size_t cap) {
    const std::size_t m = target_tokens.size(), c = cand_tokens.size();
    constexpr auto inf = std::numeric_limits<std::size_t>::max();
    auto cost = [&](std::size_t k, std::size_t j) {
        auto a = cand_tokens[j], b = target_tokens[k];
        return a > b ? a - b : b - a;
    };
    std::vector<std::vector<std::size_t>> best(m, std::vector<std::size_t>(c, inf));
    std::vector<std::vector<std::size_t>> from(m, std::vector<std::size_t>(c, 0));
    for (std::size_t j = 0; j < c; ++j)
        if (cand_tokens[j] <= cap) best[0][j] = cost(0, j);
    for (std::size_t k = 1; k < m; ++k)
        for (std::size_t j = 0; j < c; ++j)
            for (std::size_t i = 0; i < j; ++i) {
                if (best[k - 1][i] == inf || cand_tokens[j] - cand_tokens[i] > cap) continue;
                auto v = best[k - 1][i] + cost(k, j);
                if (v < best[k][j]) {
                    best[k][j] = v;
                    from[k][j] = i;
                }
            }
    std::optional<std::size_t> last;
    for (std::size_t j = 0; j < c; ++j)
        if (best[m - 1][j] != inf && total_tokens - cand_tokens[j] <= cap && (!last || best[m - 1][j] < best[m - 1][*last]))
            last = j;
    if (!last) return std::nullopt;
    std::vector<std::size_t> out(m);
    out[m - 1] = *last;
    for (std::size_t k = m - 1; k > 0; --k) out[k - 1] = from[k][out[k]];
    return out;
}

}  // namespace segmentation_detail

/// Offsets right after each '.' that still have at least one token after them.
inline std::vector<std::size_t> sentence_boundaries(const TokenizedText& t) {
    std::vector<std::size_t> out;
    if (t.tokens.empty()) return out;
    const std::size_t last_start = t.tokens.back().char_start;
    for (const auto& tok : t.tokens)
        for (std::size_t c = tok.char_start; c < tok.char_end; ++c)
            if (t.text[c] == '.' && c + 1 <= last_start && (out.empty() || out.back() != c + 1)) out.push_back(c + 1);
    return out;
}

inline Segmentation segment_story(const Story& story, SegmentProposer& proposer, int parts = kStorySegments,
                                  int token_cap = kTextEncoderTokenCap,
                                  const Tokenizer& tokenizer = whitespace_punct_tokenize) {
    using namespace segmentation_detail;
    if (parts < 2) throw PreconditionError("segment_story: parts must be >= 2");
    const auto tok = count_tokens(story.text, tokenizer);
    const std::size_t n = tok.size(), m = std::size_t(parts - 1);
    const auto sentences = sentence_boundaries(tok);
    if (sentences.size() < m && n < std::size_t(parts))
        throw DegenerateStory("story '" + story.id + "' has fewer than " + std::to_string(parts) +
                              " sentences and tokens");

    Segmentation out{story.id, {}, SegmentMethod::proposed};
    std::vector<std::size_t> proposal;
    if (auto p = propose_splits(proposer, story.text, parts, token_cap, tokenizer)) {
        proposal = *p;
    } else {
        out.method = SegmentMethod::fallback_quartile;
        for (auto v : even_split_indices(n, parts)) proposal.push_back(std::clamp<std::size_t>(std::size_t(v), 1, n - 1));
    }

    std::vector<std::size_t> cuts;
    if (sentences.size() >= m) {
        std::vector<std::size_t> target;
        for (auto p : proposal) target.push_back(nearest(sentences, snap_to_full_stop(tok, p)));
        for (auto i : spread(target, sentences.size())) cuts.push_back(sentences[i]);

        std::vector<std::size_t> cand_tokens;
        for (auto s : sentences) cand_tokens.push_back(tokens_before(tok, s));
        auto over = [&](const std::vector<std::size_t>& c) {
            std::size_t prev = 0;
            for (std::size_t k = 0; k <= c.size(); ++k) {
                std::size_t next = k < c.size() ? tokens_before(tok, c[k]) : n;
                if (next - prev > std::size_t(token_cap)) return true;
                prev = next;
            }
            return false;
        };
        if (over(cuts)) {
            if (auto fitted = fit_under_cap(cand_tokens, proposal, n, std::size_t(token_cap))) {
                cuts.clear();
                for (auto i : *fitted) cuts.push_back(sentences[i]);
            }
        }
    } else {
        // too few sentences: cut at token starts instead
        std::vector<std::size_t> starts;
        for (std::size_t i = 1; i < n; ++i) starts.push_back(tok.tokens[i].char_start);
        std::vector<std::size_t> target;
        for (auto p : proposal) target.push_back(nearest(starts, snap_to_full_stop(tok, p)));
        for (auto i : spread(target, starts.size())) cuts.push_back(starts[i]);
    }

    std::size_t prev = 0;
    for (std::size_t k = 0; k <= cuts.size(); ++k) {
        const std::size_t end = k < cuts.size() ? cuts[k] : story.text.size();
        Segment s{prev, end, story.text.substr(prev, end - prev), 0, false};
        s.token_count = tokens_before(tok, end) - tokens_before(tok, prev);
        s.over_cap = s.token_count > std::size_t(token_cap);
        out.segments.push_back(std::move(s));
        prev = end;
    }
    return out;
}

/// Persisted form: {"id","method","boundaries":[...],"over_cap":[...]}.
inline json segmentation_to_json(const Segmentation& s) {
    std::vector<std::size_t> over;
    for (std::size_t i = 0; i < s.segments.size(); ++i)
        if (s.segments[i].over_cap) over.push_back(i);
    return {{"id", s.story_id}, {"method", s.method}, {"boundaries", s.boundaries()}, {"over_cap", over}};
}

}  // namespace mh
