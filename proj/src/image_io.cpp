#include "flowgen/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "flowgen/data.hpp"

namespace flowgen {

namespace {

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::ofstream& f, const char type[4], const std::vector<uint8_t>& data) {
    std::vector<uint8_t> head;
    put_be32(head, static_cast<uint32_t>(data.size()));
    f.write(reinterpret_cast<const char*>(head.data()), 4);
    f.write(type, 4);
    if (!data.empty()) f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    uint32_t crc = crc32(0, reinterpret_cast<const Bytef*>(type), 4);
    if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
    std::vector<uint8_t> tail;
    put_be32(tail, crc);
    f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace

void write_png(const std::string& path, int width, int height, int channels,
               const std::vector<uint8_t>& pixels) {
    require(width >= 1 && height >= 1, "write_png: empty image");
    require(channels == 1 || channels == 3, "write_png: channels must be 1 or 3");
    require(pixels.size() == static_cast<size_t>(width) * height * channels,
            "write_png: pixel buffer size mismatch");

    // filter byte 0 in front of every scanline
    size_t stride = static_cast<size_t>(width) * channels;
    std::vector<uint8_t> raw((stride + 1) * static_cast<size_t>(height));
    for (int r = 0; r < height; ++r) {
        raw[r * (stride + 1)] = 0;
        std::memcpy(raw.data() + r * (stride + 1) + 1, pixels.data() + r * stride, stride);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> idat(bound);
    int rc = compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9);
    require(rc == Z_OK, "write_png: deflate failed");
    idat.resize(bound);

    std::ofstream f(path, std::ios::binary);
    require(f.good(), "write_png: cannot open '" + path + "'");
    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    f.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<uint8_t> ihdr;
    put_be32(ihdr, static_cast<uint32_t>(width));
    put_be32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);                                   // bit depth
    ihdr.push_back(channels == 1 ? 0 : 2);               // gray or rgb
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(f, "IHDR", ihdr);
    put_chunk(f, "IDAT", idat);
    put_chunk(f, "IEND", {});
    require(f.good(), "write_png: write failed for '" + path + "'");
}

void write_image_grid(const std::string& path, const Tensor& images, int cols) {
    require(images.defined() && images.rank() == 4, "write_image_grid: want [N, C, H, W]");
    int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    require(n >= 1, "write_image_grid: empty batch");
    require(c == 1 || c == 3, "write_image_grid: channels must be 1 or 3");
    if (cols == 0) cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    require(cols >= 1, "write_image_grid: cols must be positive");
    int rows = (n + cols - 1) / cols;

    std::vector<uint8_t> canvas(static_cast<size_t>(rows) * h * cols * w * c, 0);
    int canvas_w = cols * w;
    for (int i = 0; i < n; ++i) {
        int tr = (i / cols) * h, tc = (i % cols) * w;
        for (int ch = 0; ch < c; ++ch)
            for (int r = 0; r < h; ++r)
                for (int cc = 0; cc < w; ++cc) {
                    double v = images.at(((static_cast<int64_t>(i) * c + ch) * h + r) * w + cc);
                    canvas[(static_cast<size_t>(tr + r) * canvas_w + tc + cc) * c + ch] =
                        denormalize_u8(v);
                }
    }
    write_png(path, canvas_w, rows * h, c, canvas);
}

}  // namespace flowgen
