#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <string>
#include <string_view>

#include "mh/errors.hpp"
#include "mh/hashing.hpp"
#include "mh/png.hpp"

namespace mh {

/// PNG bytes plus the content address of the request that produced them.
struct ImageArtifact {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::string png;
    std::string cache_key;

    bool operator==(const ImageArtifact&) const = default;
};

/// SHA-256 over `model_id \n prompt \n seed \n WxH`, lower-case hex.
inline std::string cache_key(std::string_view model_id, std::string_view prompt, std::uint64_t seed,
                             std::uint32_t width, std::uint32_t height) {
    std::string canonical;
    canonical.append(model_id).append("\n").append(prompt).append("\n");
    canonical.append(std::to_string(seed)).append("\n");
    canonical.append(std::to_string(width)).append("x").append(std::to_string(height));
    return sha256_hex(canonical);
}

inline ImageArtifact make_artifact(const Raster& raster, std::string key) {
    return {raster.width, raster.height, encode_png(raster), std::move(key)};
}

inline std::string base64_encode(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(bytes.data()), int(bytes.size()));
    out.resize(std::size_t(n));
    return out;
}

inline std::string base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) throw FormatError("base64: length is not a multiple of 4");
    std::string out(3 * text.size() / 4, '\0');
    int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(text.data()), int(text.size()));
    if (n < 0) throw FormatError("base64: invalid input");
    std::size_t pad = 0;
    if (!text.empty() && text.back() == '=') ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
    out.resize(std::size_t(n) - pad);
    return out;
}

}  // namespace mh
