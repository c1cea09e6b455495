#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "dept/errors.hpp"

// Minimal 16-bit grayscale PNG codec, enough for depth-map interchange.
// The writer always emits unfiltered scanlines; the reader handles all five
// standard filter types so files from other tools load too.
namespace dept::png16 {

struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint16_t> pixels;  // row-major

    bool operator==(const Image&) const = default;
};

namespace detail {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t read_u32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline void put_chunk(std::vector<uint8_t>& out, const char type[4],
                      const std::vector<uint8_t>& data) {
    put_u32(out, static_cast<uint32_t>(data.size()));
    const size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, out.data() + type_at, static_cast<uInt>(4 + data.size()));
    put_u32(out, static_cast<uint32_t>(crc));
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    return pb <= pc ? b : c;
}

inline constexpr uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

}  // namespace detail

inline std::vector<uint8_t> encode(const std::vector<uint16_t>& pixels, int width, int height) {
    if (width <= 0 || height <= 0 || pixels.size() != static_cast<size_t>(width) * height)
        throw DimensionMismatch("pixel buffer vs image dims");

    std::vector<uint8_t> out(detail::kSignature, detail::kSignature + 8);

    std::vector<uint8_t> ihdr;
    detail::put_u32(ihdr, static_cast<uint32_t>(width));
    detail::put_u32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(16);  // bit depth
    ihdr.push_back(0);   // grayscale
    ihdr.push_back(0);   // deflate
    ihdr.push_back(0);   // adaptive filtering
    ihdr.push_back(0);   // no interlace
    detail::put_chunk(out, "IHDR", ihdr);

    const size_t row_bytes = static_cast<size_t>(width) * 2;
    std::vector<uint8_t> raw;
    raw.reserve((row_bytes + 1) * height);
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);  // filter: none
        for (int x = 0; x < width; ++x) {
            const uint16_t v = pixels[static_cast<size_t>(y) * width + x];
            raw.push_back(static_cast<uint8_t>(v >> 8));
            raw.push_back(static_cast<uint8_t>(v));
        }
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> packed(bound);
    if (compress2(packed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                  Z_DEFAULT_COMPRESSION) != Z_OK)
        throw IoError("deflate failed");
    packed.resize(bound);

    detail::put_chunk(out, "IDAT", packed);
    detail::put_chunk(out, "IEND", {});
    return out;
}

inline Image decode(std::span<const uint8_t> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), detail::kSignature, 8) != 0)
        throw CorruptHeader("not a png file");

    Image img;
    bool seen_ihdr = false;
    std::vector<uint8_t> idat;
    size_t at = 8;
    while (at + 12 <= bytes.size()) {
        const uint32_t len = detail::read_u32(bytes.data() + at);
        if (at + 12 + len > bytes.size()) throw CorruptHeader("truncated chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + at + 4);
        const uint8_t* data = bytes.data() + at + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw CorruptHeader("bad IHDR length");
            img.width = static_cast<int>(detail::read_u32(data));
            img.height = static_cast<int>(detail::read_u32(data + 4));
            if (img.width <= 0 || img.height <= 0) throw CorruptHeader("bad image dims");
            if (data[8] != 16 || data[9] != 0)
                throw CorruptHeader("expected 16-bit grayscale");
            if (data[10] != 0 || data[11] != 0 || data[12] != 0)
                throw CorruptHeader("unsupported compression/filter/interlace");
            seen_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        at += 12 + len;
    }
    if (!seen_ihdr) throw CorruptHeader("missing IHDR");
    if (idat.empty()) throw CorruptHeader("missing IDAT");

    const size_t row_bytes = static_cast<size_t>(img.width) * 2;
    std::vector<uint8_t> raw((row_bytes + 1) * img.height);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw CorruptHeader("bad IDAT stream");

    // Unfilter in place, 2 bytes per pixel.
    std::vector<uint8_t> prev(row_bytes, 0);
    img.pixels.resize(static_cast<size_t>(img.width) * img.height);
    for (int y = 0; y < img.height; ++y) {
        const uint8_t filter = raw[(row_bytes + 1) * y];
        uint8_t* row = raw.data() + (row_bytes + 1) * y + 1;
        for (size_t i = 0; i < row_bytes; ++i) {
            const int a = i >= 2 ? row[i - 2] : 0;
            const int b = prev[i];
            const int c = i >= 2 ? prev[i - 2] : 0;
            switch (filter) {
                case 0: break;
                case 1: row[i] = static_cast<uint8_t>(row[i] + a); break;
                case 2: row[i] = static_cast<uint8_t>(row[i] + b); break;
                case 3: row[i] = static_cast<uint8_t>(row[i] + (a + b) / 2); break;
                case 4: row[i] = static_cast<uint8_t>(row[i] + detail::paeth(a, b, c)); break;
                default: throw CorruptHeader("bad filter type " + std::to_string(filter));
            }
        }
        for (int x = 0; x < img.width; ++x)
            img.pixels[static_cast<size_t>(y) * img.width + x] =
                static_cast<uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
        std::memcpy(prev.data(), row, row_bytes);
    }
    return img;
}

}  // namespace dept::png16
