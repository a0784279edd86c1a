#include "png_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "segflow/errors.hpp"

namespace segflow {

namespace {

constexpr unsigned char kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

uint32_t get_u32(const unsigned char* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void write_chunk(std::ofstream& os, const char type[4],
                 const std::vector<unsigned char>& data) {
    std::vector<unsigned char> head;
    put_u32(head, static_cast<uint32_t>(data.size()));
    os.write(reinterpret_cast<const char*>(head.data()), 4);
    os.write(type, 4);
    if (!data.empty()) os.write(reinterpret_cast<const char*>(data.data()),
                                static_cast<std::streamsize>(data.size()));
    uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(type), 4);
    if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
    std::vector<unsigned char> tail;
    put_u32(tail, static_cast<uint32_t>(crc));
    os.write(reinterpret_cast<const char*>(tail.data()), 4);
}

void write_png_bytes(const std::string& path, const unsigned char* pixels, int h, int w,
                     int channels) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open for writing: " + path);
    os.write(reinterpret_cast<const char*>(kSignature), 8);

    std::vector<unsigned char> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(w));
    put_u32(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);                                   // bit depth
    ihdr.push_back(channels == 1 ? 0 : 2);               // gray or truecolor
    ihdr.push_back(0);                                   // compression
    ihdr.push_back(0);                                   // filter method
    ihdr.push_back(0);                                   // no interlace
    write_chunk(os, "IHDR", ihdr);

    const size_t stride = static_cast<size_t>(w) * channels;
    std::vector<unsigned char> raw((stride + 1) * h);
    for (int y = 0; y < h; ++y) {
        raw[y * (stride + 1)] = 0;  // filter type 0
        std::memcpy(&raw[y * (stride + 1) + 1], pixels + y * stride, stride);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> idat(bound);
    if (compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw io_error("deflate failed while writing: " + path);
    idat.resize(bound);
    write_chunk(os, "IDAT", idat);
    write_chunk(os, "IEND", {});
    if (!os) throw io_error("failed writing: " + path);
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

struct DecodedPng {
    int h = 0, w = 0, channels = 0;  // channels after palette/alpha resolution: 1 or 3
    std::vector<unsigned char> pixels;
};

DecodedPng decode_png(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open: " + path);
    std::vector<unsigned char> file((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
    if (file.size() < 8 || std::memcmp(file.data(), kSignature, 8) != 0)
        throw io_error("not a PNG file: " + path);

    int w = 0, h = 0, bit_depth = 0, color_type = 0, interlace = 0;
    std::vector<unsigned char> idat;
    std::vector<unsigned char> palette;  // rgb triples
    size_t pos = 8;
    bool seen_ihdr = false, seen_iend = false;
    while (pos + 8 <= file.size() && !seen_iend) {
        const uint32_t len = get_u32(&file[pos]);
        if (pos + 12 + len > file.size()) throw io_error("truncated PNG chunk: " + path);
        const char* type = reinterpret_cast<const char*>(&file[pos + 4]);
        const unsigned char* data = &file[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw io_error("bad IHDR: " + path);
            w = static_cast<int>(get_u32(data));
            h = static_cast<int>(get_u32(data + 4));
            bit_depth = data[8];
            color_type = data[9];
            interlace = data[12];
            seen_ihdr = true;
        } else if (std::memcmp(type, "PLTE", 4) == 0) {
            palette.assign(data, data + len);
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            seen_iend = true;
        }
        pos += 12 + len;
    }
    if (!seen_ihdr || w <= 0 || h <= 0) throw io_error("missing image header: " + path);
    if (bit_depth != 8)
        throw io_error("unsupported PNG bit depth " + std::to_string(bit_depth) + ": " + path);
    if (interlace != 0) throw io_error("interlaced PNG not supported: " + path);

    int src_channels = 0;
    switch (color_type) {
        case 0: src_channels = 1; break;  // gray
        case 2: src_channels = 3; break;  // rgb
        case 3: src_channels = 1; break;  // palette indices
        case 4: src_channels = 2; break;  // gray + alpha
        case 6: src_channels = 4; break;  // rgba
        default:
            throw io_error("unsupported PNG color type " + std::to_string(color_type) + ": " +
                           path);
    }
    if (color_type == 3 && palette.empty()) throw io_error("palette PNG missing PLTE: " + path);

    const size_t stride = static_cast<size_t>(w) * src_channels;
    std::vector<unsigned char> raw((stride + 1) * h);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    const int zrc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || raw_len != raw.size())
        throw io_error("corrupt PNG pixel data: " + path);

    // undo per-row filters in place
    std::vector<unsigned char> img(stride * h);
    const int bpp = src_channels;
    for (int y = 0; y < h; ++y) {
        const unsigned char filter = raw[y * (stride + 1)];
        const unsigned char* src = &raw[y * (stride + 1) + 1];
        unsigned char* dst = &img[y * stride];
        const unsigned char* up = y > 0 ? &img[(y - 1) * stride] : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            const int left = i >= static_cast<size_t>(bpp) ? dst[i - bpp] : 0;
            const int above = up ? up[i] : 0;
            const int upleft = (up && i >= static_cast<size_t>(bpp)) ? up[i - bpp] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += above; break;
                case 3: v += (left + above) / 2; break;
                case 4: v += paeth(left, above, upleft); break;
                default: throw io_error("bad PNG filter byte: " + path);
            }
            dst[i] = static_cast<unsigned char>(v & 0xff);
        }
    }

    DecodedPng out;
    out.h = h;
    out.w = w;
    const size_t n = static_cast<size_t>(h) * w;
    if (color_type == 0) {
        out.channels = 1;
        out.pixels = std::move(img);
    } else if (color_type == 2) {
        out.channels = 3;
        out.pixels = std::move(img);
    } else if (color_type == 3) {
        out.channels = 3;
        out.pixels.resize(n * 3);
        for (size_t i = 0; i < n; ++i) {
            const size_t idx = static_cast<size_t>(img[i]) * 3;
            if (idx + 2 >= palette.size()) throw io_error("palette index out of range: " + path);
            out.pixels[i * 3] = palette[idx];
            out.pixels[i * 3 + 1] = palette[idx + 1];
            out.pixels[i * 3 + 2] = palette[idx + 2];
        }
    } else if (color_type == 4) {
        out.channels = 1;
        out.pixels.resize(n);
        for (size_t i = 0; i < n; ++i) out.pixels[i] = img[i * 2];
    } else {  // rgba
        out.channels = 3;
        out.pixels.resize(n * 3);
        for (size_t i = 0; i < n; ++i) {
            out.pixels[i * 3] = img[i * 4];
            out.pixels[i * 3 + 1] = img[i * 4 + 1];
            out.pixels[i * 3 + 2] = img[i * 4 + 2];
        }
    }
    return out;
}

}  // namespace

void write_png(const std::string& path, const Tensor<float>& image) {
    if (image.ndim() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
        throw invalid_input("write_png: image must be [1,h,w] or [3,h,w]");
    const int C = image.dim(0), h = image.dim(1), w = image.dim(2);
    std::vector<unsigned char> pixels(static_cast<size_t>(h) * w * C);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < C; ++c) {
                float v = image(c, y, x);
                v = std::min(std::max(v, 0.0f), 1.0f);
                pixels[(static_cast<size_t>(y) * w + x) * C + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
    write_png_bytes(path, pixels.data(), h, w, C);
}

Tensor<float> read_png(const std::string& path) {
    const DecodedPng png = decode_png(path);
    Tensor<float> out({png.channels, png.h, png.w});
    const size_t n = static_cast<size_t>(png.h) * png.w;
    for (size_t i = 0; i < n; ++i)
        for (int c = 0; c < png.channels; ++c)
            out[c * n + i] = static_cast<float>(png.pixels[i * png.channels + c]) / 255.0f;
    return out;
}

void write_mask_png(const std::string& path, const Tensor<uint8_t>& mask) {
    if (mask.ndim() != 2) throw invalid_input("write_mask_png: mask must be [h,w]");
    const int h = mask.dim(0), w = mask.dim(1);
    std::vector<unsigned char> pixels(static_cast<size_t>(h) * w);
    for (size_t i = 0; i < pixels.size(); ++i) pixels[i] = mask[i] ? 255 : 0;
    write_png_bytes(path, pixels.data(), h, w, 1);
}

Tensor<uint8_t> read_mask_png(const std::string& path) {
    const DecodedPng png = decode_png(path);
    Tensor<uint8_t> mask({png.h, png.w});
    const size_t n = static_cast<size_t>(png.h) * png.w;
    for (size_t i = 0; i < n; ++i) {
        int lum;
        if (png.channels == 1) {
            lum = png.pixels[i];
        } else {
            lum = (png.pixels[i * 3] * 299 + png.pixels[i * 3 + 1] * 587 +
                   png.pixels[i * 3 + 2] * 114) /
                  1000;
        }
        mask[i] = lum > 127 ? 1 : 0;
    }
    return mask;
}

}  // namespace segflow
