#pragma once

#include <cctype>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace mh {

/// Default token budget of the diffusion text encoder.
inline constexpr int kTextEncoderTokenCap = 77;

struct Token {
    std::string surface;
    std::size_t char_start = 0;
    std::size_t char_end = 0;  // one past the last byte

    bool operator==(const Token&) const = default;
};

/// Text plus ordered, non-overlapping token spans into it.
struct TokenizedText {
    std::string text;
    std::vector<Token> tokens;
    int cap = kTextEncoderTokenCap;

    std::size_t size() const noexcept { return tokens.size(); }
};

/// Splits on whitespace and emits every ASCII punctuation mark as its own
/// token. Bytes >= 0x80 count as word characters so UTF-8 stays intact.
inline TokenizedText whitespace_punct_tokenize(std::string_view text) {
    TokenizedText out;
    out.text = std::string(text);
    auto is_space = [](unsigned char c) { return c < 0x80 && std::isspace(c); };
    auto is_punct = [](unsigned char c) { return c < 0x80 && std::ispunct(c); };
    std::size_t i = 0;
    while (i < text.size()) {
        auto c = static_cast<unsigned char>(text[i]);
        if (is_space(c)) {
            ++i;
        } else if (is_punct(c)) {
            out.tokens.push_back({std::string(1, text[i]), i, i + 1});
            ++i;
        } else {
            std::size_t j = i;
            while (j < text.size() && !is_space(static_cast<unsigned char>(text[j])) &&
                   !is_punct(static_cast<unsigned char>(text[j])))
                ++j;
            out.tokens.push_back({std::string(text.substr(i, j - i)), i, j});
            i = j;
        }
    }
    return out;
}

/// Seam for an exact tokenizer (e.g. the diffusion model's own BPE).
using Tokenizer = std::function<TokenizedText(std::string_view)>;

inline TokenizedText count_tokens(std::string_view text, const Tokenizer& tokenizer = whitespace_punct_tokenize) {
    return tokenizer(text);
}

}  // namespace mh
