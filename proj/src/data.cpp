#include "flowgen/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace flowgen {

namespace {

constexpr int kCifarDim = 32;
constexpr int kCifarBytes = 1 + 3 * kCifarDim * kCifarDim;

std::vector<unsigned char> read_all(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cifar10: cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

}  // namespace

double normalize_u8(uint8_t v) { return static_cast<double>(v) / 127.5 - 1.0; }

uint8_t denormalize_u8(double v) {
    double scaled = (v + 1.0) * 127.5;
    long r = std::lround(scaled);
    return static_cast<uint8_t>(std::clamp(r, 0L, 255L));
}

Dataset load_cifar10_binary(const std::string& dir, const std::string& split) {
    std::vector<std::string> files;
    if (split == "train") {
        for (int i = 1; i <= 5; ++i) files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
    } else if (split == "test") {
        files.push_back(dir + "/test_batch.bin");
    } else {
        arg_error("cifar10: split must be 'train' or 'test', got '" + split + "'");
    }

    std::vector<double> pixels;
    std::vector<int> labels;
    for (const std::string& path : files) {
        std::vector<unsigned char> bytes = read_all(path);
        require(bytes.size() % kCifarBytes == 0,
                "cifar10: '" + path + "' size is not a multiple of 3073");
        size_t n = bytes.size() / kCifarBytes;
        pixels.reserve(pixels.size() + n * (kCifarBytes - 1));
        for (size_t r = 0; r < n; ++r) {
            const unsigned char* rec = bytes.data() + r * kCifarBytes;
            require(rec[0] <= 9, "cifar10: label byte > 9 in '" + path + "'");
            labels.push_back(rec[0]);
            for (int k = 1; k < kCifarBytes; ++k) pixels.push_back(normalize_u8(rec[k]));
        }
    }

    Dataset ds;
    int n = static_cast<int>(labels.size());
    ds.images = Tensor::from({n, 3, kCifarDim, kCifarDim}, std::move(pixels));
    ds.labels = std::move(labels);
    ds.num_classes = 10;
    return ds;
}

std::vector<std::pair<double, double>> eight_gaussian_means() {
    std::vector<std::pair<double, double>> means;
    for (int i = 0; i < 8; ++i) {
        double a = i * M_PI / 4.0;
        means.emplace_back(2.0 * std::cos(a), 2.0 * std::sin(a));
    }
    return means;
}

Dataset toy_2d(const std::string& name, int64_t n, Rng& rng) {
    require(n >= 1, "toy_2d: n must be positive");
    Dataset ds;
    std::vector<double> pts(static_cast<size_t>(2 * n));
    ds.labels.resize(static_cast<size_t>(n));

    if (name == "eight_gaussians") {
        auto means = eight_gaussian_means();
        for (int64_t i = 0; i < n; ++i) {
            int m = static_cast<int>(rng.uniform_int(0, 7));
            ds.labels[static_cast<size_t>(i)] = m;
            pts[static_cast<size_t>(2 * i)] = means[static_cast<size_t>(m)].first + 0.1 * rng.normal();
            pts[static_cast<size_t>(2 * i + 1)] = means[static_cast<size_t>(m)].second + 0.1 * rng.normal();
        }
        ds.num_classes = 8;
    } else if (name == "two_moons") {
        for (int64_t i = 0; i < n; ++i) {
            int arc = static_cast<int>(rng.uniform_int(0, 1));
            double t = rng.uniform(0.0, M_PI);
            double x = arc == 0 ? std::cos(t) : 1.0 - std::cos(t);
            double y = arc == 0 ? std::sin(t) : 0.5 - std::sin(t);
            ds.labels[static_cast<size_t>(i)] = arc;
            pts[static_cast<size_t>(2 * i)] = x + 0.05 * rng.normal();
            pts[static_cast<size_t>(2 * i + 1)] = y + 0.05 * rng.normal();
        }
        ds.num_classes = 2;
    } else {
        arg_error("toy_2d: unknown dataset '" + name + "'");
    }
    ds.images = Tensor::from({static_cast<int>(n), 2}, std::move(pts));
    return ds;
}

Dataset tiny_shapes(int64_t n, int size, Rng& rng) {
    require(n >= 1, "tiny_shapes: n must be positive");
    require(size >= 8, "tiny_shapes: size must be at least 8");

    Dataset ds;
    std::vector<double> imgs(static_cast<size_t>(n) * size * size);
    ds.labels.resize(static_cast<size_t>(n));
    ds.num_classes = 4;

    for (int64_t i = 0; i < n; ++i) {
        int cls = static_cast<int>(rng.uniform_int(0, 3));
        double bg = rng.uniform(-1.0, -0.5);
        double fg = rng.uniform(0.0, 1.0);
        ds.labels[static_cast<size_t>(i)] = cls;
        double* img = imgs.data() + i * size * size;
        std::fill(img, img + size * size, bg);

        if (cls == 0) {
            int side = size / 2;
            int r0 = static_cast<int>(rng.uniform_int(0, size - side));
            int c0 = static_cast<int>(rng.uniform_int(0, size - side));
            for (int r = r0; r < r0 + side; ++r)
                for (int c = c0; c < c0 + side; ++c) img[r * size + c] = fg;
        } else if (cls == 1) {
            double cy = rng.uniform(size / 2.0 - 1.0, size / 2.0 + 1.0);
            double cx = rng.uniform(size / 2.0 - 1.0, size / 2.0 + 1.0);
            double rad = rng.uniform(size / 4.0 - 0.5, size / 4.0 + 0.5);
            for (int r = 0; r < size; ++r)
                for (int c = 0; c < size; ++c) {
                    double dy = r + 0.5 - cy, dx = c + 0.5 - cx;
                    if (dy * dy + dx * dx <= rad * rad) img[r * size + c] = fg;
                }
        } else if (cls == 2) {
            int phase = static_cast<int>(rng.uniform_int(0, 1));
            for (int r = 0; r < size; ++r)
                if ((r + phase) % 2 == 0)
                    for (int c = 0; c < size; ++c) img[r * size + c] = fg;
        } else {
            int phase = static_cast<int>(rng.uniform_int(0, 1));
            for (int c = 0; c < size; ++c)
                if ((c + phase) % 2 == 0)
                    for (int r = 0; r < size; ++r) img[r * size + c] = fg;
        }
    }
    ds.images = Tensor::from({static_cast<int>(n), 1, size, size}, std::move(imgs));
    return ds;
}

std::vector<LabeledBatch> batches(const Dataset& ds, int batch_size, Rng& rng) {
    require(batch_size >= 1, "batches: batch_size must be positive");
    require(ds.images.defined() && ds.images.rank() >= 2, "batches: dataset has no images");
    int64_t n = ds.images.dim(0);
    require(static_cast<int64_t>(ds.labels.size()) == n, "batches: labels/images length mismatch");

    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    for (int64_t i = n - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(0, i))]);

    int64_t per = ds.images.size() / n;
    std::vector<LabeledBatch> out;
    for (int64_t start = 0; start < n; start += batch_size) {
        int64_t b = std::min<int64_t>(batch_size, n - start);
        std::vector<double> img(static_cast<size_t>(b * per));
        std::vector<int> lab(static_cast<size_t>(b));
        for (int64_t j = 0; j < b; ++j) {
            int64_t src = order[static_cast<size_t>(start + j)];
            std::copy(ds.images.data() + src * per, ds.images.data() + (src + 1) * per,
                      img.begin() + j * per);
            lab[static_cast<size_t>(j)] = ds.labels[static_cast<size_t>(src)];
        }
        Shape shape = ds.images.shape();
        shape[0] = static_cast<int>(b);
        out.push_back({Tensor::from(shape, std::move(img)), std::move(lab)});
    }
    return out;
}

}  // namespace flowgen
