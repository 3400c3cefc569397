#pragma once

// Minimal PNG reader/writer: 8-bit greyscale and RGB, no palette, no
// interlacing. Deflate and CRC come from zlib; filtering is handled here.

#include <austkit/tensor.hpp>

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace austkit {

struct ImageIoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Interleaved 8-bit image; channels is 1 (grey) or 3 (RGB).
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;
};

namespace pngdetail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void write_chunk(std::vector<std::uint8_t>& out, const char type[5],
                        const std::vector<std::uint8_t>& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0L, out.data() + crc_start, static_cast<uInt>(4 + data.size())));
    put_u32(out, crc);
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

} // namespace pngdetail

inline std::vector<std::uint8_t> encode_png(const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw ImageIoError("encode_png: only 1- or 3-channel images supported");
    if (img.width <= 0 || img.height <= 0)
        throw ImageIoError("encode_png: empty image");
    if (img.pixels.size() !=
        static_cast<std::size_t>(img.width) * img.height * img.channels)
        throw ImageIoError("encode_png: pixel buffer does not match dimensions");

    const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    std::vector<std::uint8_t> raw((stride + 1) * static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) {
        raw[static_cast<std::size_t>(y) * (stride + 1)] = 0; // filter: none
        std::memcpy(raw.data() + static_cast<std::size_t>(y) * (stride + 1) + 1,
                    img.pixels.data() + static_cast<std::size_t>(y) * stride, stride);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw ImageIoError("encode_png: deflate failed");
    compressed.resize(bound);

    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<std::uint8_t> ihdr;
    pngdetail::put_u32(ihdr, static_cast<std::uint32_t>(img.width));
    pngdetail::put_u32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);                                        // bit depth
    ihdr.push_back(img.channels == 1 ? 0 : 2);                // color type
    ihdr.push_back(0);                                        // compression
    ihdr.push_back(0);                                        // filter method
    ihdr.push_back(0);                                        // no interlace
    pngdetail::write_chunk(out, "IHDR", ihdr);
    pngdetail::write_chunk(out, "IDAT", compressed);
    pngdetail::write_chunk(out, "IEND", {});
    return out;
}

inline ImageU8 decode_png(const std::vector<std::uint8_t>& bytes) {
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw ImageIoError("decode_png: not a PNG file");

    int width = 0, height = 0, channels = 0;
    bool saw_ihdr = false;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t len = pngdetail::get_u32(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw ImageIoError("decode_png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const std::uint8_t* data = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw ImageIoError("decode_png: bad IHDR");
            width = static_cast<int>(pngdetail::get_u32(data));
            height = static_cast<int>(pngdetail::get_u32(data + 4));
            const int depth = data[8], color = data[9], interlace = data[12];
            if (depth != 8)
                throw ImageIoError("decode_png: unsupported bit depth " + std::to_string(depth));
            if (color == 0)
                channels = 1;
            else if (color == 2)
                channels = 3;
            else
                throw ImageIoError("decode_png: unsupported color type " + std::to_string(color) +
                                   " (palette/alpha not handled)");
            if (interlace != 0) throw ImageIoError("decode_png: interlaced PNG not handled");
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || width <= 0 || height <= 0) throw ImageIoError("decode_png: missing IHDR");

    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    std::vector<std::uint8_t> raw((stride + 1) * static_cast<std::size_t>(height));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    const int zrc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || raw_len != raw.size())
        throw ImageIoError("decode_png: inflate failed");

    ImageU8 img{width, height, channels, {}};
    img.pixels.resize(stride * static_cast<std::size_t>(height));
    const int bpp = channels;
    for (int y = 0; y < height; ++y) {
        const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
        const int filter = src[0];
        std::uint8_t* cur = img.pixels.data() + static_cast<std::size_t>(y) * stride;
        const std::uint8_t* up = y > 0 ? cur - stride : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            const int x = src[1 + i];
            const int a = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
            const int b = up ? up[i] : 0;
            const int c = (up && i >= static_cast<std::size_t>(bpp)) ? up[i - bpp] : 0;
            int v;
            switch (filter) {
                case 0: v = x; break;
                case 1: v = x + a; break;
                case 2: v = x + b; break;
                case 3: v = x + (a + b) / 2; break;
                case 4: v = x + pngdetail::paeth(a, b, c); break;
                default: throw ImageIoError("decode_png: bad filter type " + std::to_string(filter));
            }
            cur[i] = static_cast<std::uint8_t>(v & 0xff);
        }
    }
    return img;
}

inline void save_png(const std::string& path, const ImageU8& img) {
    const auto bytes = encode_png(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ImageIoError("save_png: cannot open " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ImageIoError("save_png: write failed for " + path);
}

inline ImageU8 load_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ImageIoError("load_png: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

// ---- conversions between images and tensors ----

inline std::uint8_t quantize_u8(double v) {
    const double c = std::min(std::max(v, 0.0), 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

/// [3,H,W] tensor in [0,1] -> interleaved RGB bytes.
inline ImageU8 tensor_to_image(const Tensor& chw) {
    if (chw.ndim() != 3 || chw.dim(0) != 3)
        throw ImageIoError("tensor_to_image: expected [3,H,W]");
    const int H = chw.dim(1), W = chw.dim(2);
    ImageU8 img{W, H, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(W) * H * 3)};
    const auto& v = chw.values();
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c)
            img.pixels[p * 3 + static_cast<std::size_t>(c)] = quantize_u8(v[c * plane + p]);
    return img;
}

inline Tensor image_to_tensor(const ImageU8& img) {
    if (img.channels != 3) throw ImageIoError("image_to_tensor: expected RGB image");
    const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
    std::vector<double> v(plane * 3);
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c)
            v[static_cast<std::size_t>(c) * plane + p] =
                img.pixels[p * 3 + static_cast<std::size_t>(c)] / 255.0;
    return Tensor::from_data(std::move(v), {3, img.height, img.width});
}

/// [H,W] map in [0,1] -> grey bytes.
inline ImageU8 mask_to_image(const Tensor& hw) {
    if (hw.ndim() != 2) throw ImageIoError("mask_to_image: expected [H,W]");
    const int H = hw.dim(0), W = hw.dim(1);
    ImageU8 img{W, H, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(W) * H)};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = quantize_u8(hw.values()[i]);
    return img;
}

inline Tensor image_to_mask(const ImageU8& img) {
    if (img.channels != 1) throw ImageIoError("image_to_mask: expected greyscale image");
    std::vector<double> v(img.pixels.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = img.pixels[i] / 255.0;
    return Tensor::from_data(std::move(v), {img.height, img.width});
}

} // namespace austkit
