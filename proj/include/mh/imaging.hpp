#pragma once

// The staged image store and horizontal composition for QA.
//
// Cache layout: <dir>/<first two hex digits>/<key>.png with a sidecar
// <key>.json holding the request. Writes go to a unique temp file and are
// renamed into place, so readers never see partial files.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>

#include "mh/backends.hpp"
#include "mh/errors.hpp"
#include "mh/hashing.hpp"
#include "mh/image.hpp"
#include "mh/png.hpp"

namespace mh {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot read '" + p.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes via a temp file in the same directory, then renames over `target`.
inline void write_file_atomic(const fs::path& target, std::string_view bytes) {
    static std::atomic<unsigned long> counter{0};
    fs::create_directories(target.parent_path());
    auto tmp = target;
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), std::streamsize(bytes.size()));
        out.flush();
        if (!out) throw Error("short write to '" + tmp.string() + "'");
    }
    fs::rename(tmp, target);
}

struct FetchResult {
    ImageArtifact image;
    bool cache_hit = false;
};

class ImageCache {
public:
    explicit ImageCache(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    const fs::path& dir() const noexcept { return dir_; }

    fs::path png_path(const std::string& key) const { return dir_ / key.substr(0, 2) / (key + ".png"); }
    fs::path sidecar_path(const std::string& key) const { return dir_ / key.substr(0, 2) / (key + ".json"); }

    /// Stored image for `key` if present and decodable at the expected size.
    std::optional<ImageArtifact> lookup(const std::string& key, std::uint32_t width, std::uint32_t height) const {
        const auto path = png_path(key);
        std::error_code ec;
        if (!fs::exists(path, ec)) return std::nullopt;
        try {
            auto bytes = read_file(path);
            auto r = decode_png(bytes);
            if (r.width != width || r.height != height) return std::nullopt;
            return ImageArtifact{width, height, std::move(bytes), key};
        } catch (const Error&) {
            return std::nullopt;  // corrupt: caller regenerates
        }
    }

    /// Cached image for the request, generating and storing it on a miss.
    /// Concurrent callers asking for the same key share one generation.
    FetchResult fetch_or_generate(const T2IRequest& request, TextToImage& backend) {
        const auto key = cache_key(backend.model_id(), request.prompt, request.seed, request.width, request.height);
        auto lock = lock_key(key);
        if (auto hit = lookup(key, request.width, request.height)) return {std::move(*hit), true};

        auto image = t2i_generate(backend, request);
        image.cache_key = key;
        write_file_atomic(png_path(key), image.png);
        json sidecar{{"model_id", backend.model_id()},
                     {"prompt", request.prompt},
                     {"seed", request.seed},
                     {"width", request.width},
                     {"height", request.height}};
        write_file_atomic(sidecar_path(key), sidecar.dump(2) + "\n");
        return {std::move(image), false};
    }

private:
    std::unique_lock<std::mutex> lock_key(const std::string& key) {
        std::shared_ptr<std::mutex> m;
        {
            std::lock_guard guard(map_mu_);
            auto& slot = key_locks_[key];
            if (!slot) slot = std::make_shared<std::mutex>();
            m = slot;
        }
        // the map keeps the mutex alive for the cache's lifetime
        return std::unique_lock<std::mutex>(*m);
    }

    fs::path dir_;
    std::mutex map_mu_;
    std::map<std::string, std::shared_ptr<std::mutex>> key_locks_;
};

/// Fixed stand-in image used by the demo-image configurations: a diagonal
/// colour gradient.
inline ImageArtifact builtin_demo_image(std::uint32_t width = 64, std::uint32_t height = 64) {
    Raster r{width, height, std::vector<std::uint8_t>(std::size_t(width) * height * 3)};
    for (std::uint32_t y = 0; y < height; ++y)
        for (std::uint32_t x = 0; x < width; ++x) {
            auto* p = r.pixel(x, y);
            p[0] = std::uint8_t(255 * x / std::max(1u, width - 1));
            p[1] = std::uint8_t(255 * y / std::max(1u, height - 1));
            p[2] = std::uint8_t(128);
        }
    auto png = encode_png(r);
    auto key = sha256_hex(png);
    return {width, height, std::move(png), std::move(key)};
}

/// Demo image from a PNG file; its key is the SHA-256 of the file bytes.
inline ImageArtifact load_demo_image(const fs::path& path) {
    auto bytes = read_file(path);
    Raster r;
    try {
        r = decode_png(bytes);
    } catch (const FormatError& e) {
        throw FormatError("demo image '" + path.string() + "': " + e.what());
    }
    auto key = sha256_hex(bytes);
    return {r.width, r.height, std::move(bytes), std::move(key)};
}

/// Nearest-neighbour resize.
inline Raster resize_nearest(const Raster& src, std::uint32_t width, std::uint32_t height) {
    Raster out{width, height, std::vector<std::uint8_t>(std::size_t(width) * height * 3)};
    for (std::uint32_t y = 0; y < height; ++y) {
        const auto sy = std::uint32_t(std::uint64_t(y) * src.height / height);
        for (std::uint32_t x = 0; x < width; ++x) {
            const auto sx = std::uint32_t(std::uint64_t(x) * src.width / width);
            std::copy_n(src.pixel(sx, sy), 3, out.pixel(x, y));
        }
    }
    return out;
}

/// Left-to-right concatenation. Images taller than the shortest one are
/// scaled down to its height, keeping aspect ratio (width rounded).
inline ImageArtifact hstack(std::span<const ImageArtifact> images) {
    if (images.empty()) throw PreconditionError("hstack: no images");
    if (images.size() == 1) return images.front();

    std::vector<Raster> rasters;
    for (const auto& img : images) {
        try {
            rasters.push_back(decode_png(img.png));
        } catch (const FormatError& e) {
            throw FormatError("hstack: cannot decode image '" + img.cache_key + "': " + e.what());
        }
    }
    const auto min_h = std::min_element(rasters.begin(), rasters.end(), [](auto& a, auto& b) {
                           return a.height < b.height;
                       })->height;
    std::uint32_t total_w = 0;
    for (auto& r : rasters) {
        if (r.height != min_h) {
            auto w = std::uint32_t((2 * std::uint64_t(r.width) * min_h + r.height) / (2 * std::uint64_t(r.height)));
            r = resize_nearest(r, std::max(1u, w), min_h);
        }
        total_w += r.width;
    }
    Raster out{total_w, min_h, std::vector<std::uint8_t>(std::size_t(total_w) * min_h * 3)};
    std::uint32_t x0 = 0;
    for (const auto& r : rasters) {
        for (std::uint32_t y = 0; y < min_h; ++y) std::copy_n(r.pixel(0, y), std::size_t(r.width) * 3, out.pixel(x0, y));
        x0 += r.width;
    }
    std::string joined = "hstack";
    for (const auto& img : images) joined += "\n" + img.cache_key;
    return make_artifact(out, sha256_hex(joined));
}

}  // namespace mh
