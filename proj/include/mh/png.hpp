#pragma once

// PNG encode/decode through libpng's simplified API. Encoding writes 8-bit
// RGB; decoding accepts any PNG libpng reads and converts it to 8-bit RGB,
// discarding alpha.

#include <png.h>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mh/errors.hpp"

namespace mh {

/// Packed 8-bit RGB pixels, row-major, no padding.
struct Raster {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> rgb;

    std::uint8_t* pixel(std::uint32_t x, std::uint32_t y) { return &rgb[(std::size_t(y) * width + x) * 3]; }
    const std::uint8_t* pixel(std::uint32_t x, std::uint32_t y) const {
        return &rgb[(std::size_t(y) * width + x) * 3];
    }

    bool operator==(const Raster&) const = default;
};

inline std::string encode_png(const Raster& image) {
    if (image.width == 0 || image.height == 0 || image.rgb.size() != std::size_t(image.width) * image.height * 3) {
        throw PreconditionError("encode_png: raster dimensions do not match pixel buffer");
    }
    png_image info{};
    info.version = PNG_IMAGE_VERSION;
    info.width = image.width;
    info.height = image.height;
    info.format = PNG_FORMAT_RGB;

    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&info, nullptr, &size, 0, image.rgb.data(), 0, nullptr))
        throw Error(std::string("encode_png: ") + info.message);
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&info, out.data(), &size, 0, image.rgb.data(), 0, nullptr))
        throw Error(std::string("encode_png: ") + info.message);
    out.resize(size);
    return out;
}

inline Raster decode_png(std::string_view bytes) {
    png_image info{};
    info.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&info, bytes.data(), bytes.size()))
        throw FormatError(std::string("png: ") + info.message);
    info.format = PNG_FORMAT_RGBA;
    std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(info));
    if (!png_image_finish_read(&info, nullptr, rgba.data(), 0, nullptr)) {
        const std::string message = info.message;
        png_image_free(&info);
        throw FormatError("png: " + message);
    }
    Raster out{info.width, info.height, {}};
    out.rgb.reserve(std::size_t(info.width) * info.height * 3);
    for (std::size_t i = 0; i < rgba.size(); i += 4) out.rgb.insert(out.rgb.end(), &rgba[i], &rgba[i + 3]);
    return out;
}

}  // namespace mh
