#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <span>
#include <string>
#include <string_view>

#include "mh/errors.hpp"

namespace mh {

/// 64-bit FNV-1a. Used wherever a cheap, stable, platform-independent hash is
/// needed (mock payloads, per-item seeds, feature hashing).
constexpr std::uint64_t fnv1a64(std::string_view data,
                                std::uint64_t state = 0xcbf29ce484222325ULL) noexcept {
    for (unsigned char c : data) {
        state ^= c;
        state *= 0x100000001b3ULL;
    }
    return state;
}

inline std::string to_hex(std::span<const unsigned char> bytes) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (unsigned char b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0x0f]);
    }
    return out;
}

/// Lower-case hex SHA-256 of `data`.
inline std::string sha256_hex(std::string_view data) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
        throw Error("sha256: digest computation failed");
    }
    return to_hex({digest.data(), len});
}

}  // namespace mh
