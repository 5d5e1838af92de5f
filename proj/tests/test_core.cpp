#include <gtest/gtest.h>

#include <random>

#include "mh/hashing.hpp"
#include "mh/image.hpp"
#include "mh/png.hpp"
#include "mh/tokenizer.hpp"
#include "mh/backends.hpp"

using namespace mh;

TEST(Fnv1a64, KnownVectors) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Fnv1a64, ChainsLikeConcatenation) {
    EXPECT_EQ(fnv1a64("bar", fnv1a64("foo")), fnv1a64("foobar"));
}

TEST(Sha256, EmptyAndAbc) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(CacheKey, CanonicalForm) {
    EXPECT_EQ(cache_key("m", "p", 0, 64, 64), "1830591643210e149c614728bf1f719a1b27360f9481ae44241da73a1ad602b7");
    EXPECT_EQ(cache_key("mock-t2i", "a cat", 7, 4, 2),
              "b8fc12ebc41d39c72de1a23482ba961e0855b0c0edd9a7769b42af5b865fcb96");
}

TEST(CacheKey, EveryFieldMatters) {
    const auto k = cache_key("m", "p", 0, 64, 64);
    EXPECT_NE(k, cache_key("m2", "p", 0, 64, 64));
    EXPECT_NE(k, cache_key("m", "p2", 0, 64, 64));
    EXPECT_NE(k, cache_key("m", "p", 1, 64, 64));
    EXPECT_NE(k, cache_key("m", "p", 0, 32, 64));
    EXPECT_NE(k, cache_key("m", "p", 0, 64, 32));
}

TEST(Base64, RoundTripAndKnownValue) {
    EXPECT_EQ(base64_encode("hello world!?"), "aGVsbG8gd29ybGQhPw==");
    for (const std::string& s : std::vector<std::string>{"", "a", "ab", "abc", "abcd", std::string("\0\xff\x10", 3)})
        EXPECT_EQ(base64_decode(base64_encode(s)), s);
    EXPECT_THROW(base64_decode("abc"), FormatError);
}

TEST(Png, RoundTripIsLosslessAndDeterministic) {
    std::mt19937_64 rng(11);
    for (std::uint32_t w : {1u, 3u, 17u, 64u}) {
        for (std::uint32_t h : {1u, 2u, 9u}) {
            Raster r{w, h, {}};
            for (std::size_t i = 0; i < std::size_t(w) * h * 3; ++i) r.rgb.push_back(std::uint8_t(rng()));
            const auto png = encode_png(r);
            EXPECT_EQ(png, encode_png(r));
            EXPECT_EQ(decode_png(png), r);
        }
    }
    EXPECT_THROW(encode_png(Raster{2, 2, std::vector<std::uint8_t>(5)}), PreconditionError);
}

TEST(Png, DecodesFilteredRgb) {
    const auto png = base64_decode(
        "iVBORw0KGgoAAAANSUhEUgAAAAcAAAAFCAIAAAAG+GGPAAAAJElEQVR42mNkYGDQwEAsDDYMDAy8aAguKoWMkEXV4QhN1ASCAOJPBHxHODcYAAAAAElFTkSuQmCC");
    const auto r = decode_png(png);
    EXPECT_EQ(r.width, 7u);
    EXPECT_EQ(r.height, 5u);
    EXPECT_EQ(sha256_hex(std::string_view(reinterpret_cast<const char*>(r.rgb.data()), r.rgb.size())),
              "9edf5165460f56811c3ded2ba58d944c56788f24b0168f6d665d30e60aac0d50");
}

TEST(Png, DecodesRgbaDroppingAlpha) {
    const auto r = decode_png(base64_decode(
        "iVBORw0KGgoAAAANSUhEUgAAAAcAAAAFCAYAAACJmvbYAAAAKklEQVR4nGNkYGBo0GBgYMCGWRhsGBgYGHixYiRJKQyMJqmOgrFImsAxAHOYBPyOHfA5AAAAAElFTkSuQmCC"));
    EXPECT_EQ(sha256_hex(std::string_view(reinterpret_cast<const char*>(r.rgb.data()), r.rgb.size())),
              "9edf5165460f56811c3ded2ba58d944c56788f24b0168f6d665d30e60aac0d50");
}

TEST(Png, DecodesGreyscale) {
    const auto r = decode_png(base64_decode(
        "iVBORw0KGgoAAAANSUhEUgAAAAcAAAAFCAAAAACs8akEAAAALUlEQVR4nAXBsQ0AMAgDsCIxBpLwAv3/u+614wAAENvVVZ1LkmReybJyZ8aPHyzOAzyDyLrnAAAAAElFTkSuQmCC"));
    EXPECT_EQ(sha256_hex(std::string_view(reinterpret_cast<const char*>(r.rgb.data()), r.rgb.size())),
              "04645fba7596c4f6b4817796ebc5031928474a1ec96f7c4780cb6e672748c5af");
}

TEST(Png, RejectsGarbageAndBadCrc) {
    EXPECT_THROW(decode_png("not a png"), FormatError);
    Raster r{2, 2, std::vector<std::uint8_t>(12, 7)};
    auto png = encode_png(r);
    png[png.size() - 20] ^= 0x01;  // inside the IDAT payload
    EXPECT_THROW(decode_png(png), FormatError);
}

TEST(MockT2I, FillIsTiledHash) {
    const auto r = mock_t2i_raster("mock-t2i", "a cat", 7, 4, 2);
    const std::vector<std::uint8_t> first{233, 50, 71, 204, 122, 5, 177, 220};
    EXPECT_EQ(std::vector<std::uint8_t>(r.rgb.begin(), r.rgb.begin() + 8), first);
    for (std::size_t i = 8; i < r.rgb.size(); ++i) EXPECT_EQ(r.rgb[i], r.rgb[i % 8]);
}

TEST(Tokenizer, SplitsPunctuationAndKeepsOffsets) {
    const auto t = whitespace_punct_tokenize("Hi, you're ok.  Fine");
    std::vector<std::string> surfaces;
    for (const auto& tok : t.tokens) {
        surfaces.push_back(tok.surface);
        EXPECT_EQ(t.text.substr(tok.char_start, tok.char_end - tok.char_start), tok.surface);
    }
    EXPECT_EQ(surfaces, (std::vector<std::string>{"Hi", ",", "you", "'", "re", "ok", ".", "Fine"}));
}

TEST(Tokenizer, Utf8BytesAreWordCharacters) {
    const auto t = whitespace_punct_tokenize("caf\xc3\xa9 na\xc3\xafve.");
    ASSERT_EQ(t.size(), 3u);
    EXPECT_EQ(t.tokens[0].surface, "caf\xc3\xa9");
    EXPECT_EQ(t.tokens[2].surface, ".");
}

TEST(Tokenizer, EmptyAndBlank) {
    EXPECT_EQ(whitespace_punct_tokenize("").size(), 0u);
    EXPECT_EQ(whitespace_punct_tokenize(" \t\n").size(), 0u);
}
