#include "flowgen/inpaint.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "flowgen/rng.hpp"

namespace flowgen {

namespace {

Mask finalize(std::vector<double> values, int size, std::string kind) {
    Tensor v = Tensor::from({size, size}, std::move(values));
    return make_mask_from(std::move(v), std::move(kind));
}

}  // namespace

Mask make_mask_from(Tensor values, std::string kind) {
    require(values.rank() == 2, "mask: values must be [H,W]");
    double known = 0.0;
    for (int64_t i = 0; i < values.size(); ++i) {
        double p = values.at(i);
        require(p == 0.0 || p == 1.0, "mask: non-binary value");
        known += p;
    }
    Mask m;
    m.coverage = known / static_cast<double>(values.size());
    m.values = std::move(values);
    m.kind = std::move(kind);
    return m;
}

Mask gen_center(int image_size, Rng&) {
    require(image_size >= 4, "center mask: image size must be >= 4");
    int hole = image_size / 2;
    int lo = (image_size - hole) / 2;
    int hi = lo + hole;  // exclusive
    std::vector<double> v(static_cast<size_t>(image_size) * image_size, 1.0);
    for (int r = lo; r < hi; ++r)
        for (int c = lo; c < hi; ++c) v[static_cast<size_t>(r) * image_size + c] = 0.0;
    return finalize(std::move(v), image_size, "center");
}

Mask gen_random_bbox(int image_size, Rng& rng) {
    require(image_size >= 20, "random_bbox mask: image size must be >= 20");
    int w = static_cast<int>(rng.uniform_int(8, 20));
    int h = static_cast<int>(rng.uniform_int(8, 20));
    int r0 = static_cast<int>(rng.uniform_int(0, image_size - h));
    int c0 = static_cast<int>(rng.uniform_int(0, image_size - w));
    std::vector<double> v(static_cast<size_t>(image_size) * image_size, 1.0);
    for (int r = r0; r < r0 + h; ++r)
        for (int c = c0; c < c0 + w; ++c) v[static_cast<size_t>(r) * image_size + c] = 0.0;
    return finalize(std::move(v), image_size, "random_bbox");
}

std::vector<Stroke> sample_strokes(int image_size, Rng& rng) {
    int n_strokes = static_cast<int>(rng.uniform_int(3, 8));
    std::vector<Stroke> strokes;
    strokes.reserve(static_cast<size_t>(n_strokes));
    for (int s = 0; s < n_strokes; ++s) {
        int n_verts = static_cast<int>(rng.uniform_int(4, 8));
        double width = static_cast<double>(rng.uniform_int(1, 5));
        double x = rng.uniform(0.0, static_cast<double>(image_size - 1));
        double y = rng.uniform(0.0, static_cast<double>(image_size - 1));
        double theta = rng.uniform(0.0, 2.0 * M_PI);
        Stroke st;
        st.radius = width / 2.0;
        st.pts.emplace_back(x, y);
        for (int v = 1; v < n_verts; ++v) {
            double step = rng.uniform(4.0, 10.0);
            theta += rng.uniform(-M_PI / 2.0, M_PI / 2.0);
            x += step * std::cos(theta);
            y += step * std::sin(theta);
            st.pts.emplace_back(x, y);
        }
        strokes.push_back(std::move(st));
    }
    return strokes;
}

Mask gen_irregular(int image_size, Rng& rng) {
    require(image_size >= 4, "irregular mask: image size must be >= 4");
    std::vector<Stroke> strokes = sample_strokes(image_size, rng);
    std::vector<double> v(static_cast<size_t>(image_size) * image_size, 1.0);
    auto stamp = [&](double cx, double cy, double radius) {
        int r_lo = std::max(0, static_cast<int>(std::floor(cy - radius)));
        int r_hi = std::min(image_size - 1, static_cast<int>(std::ceil(cy + radius)));
        int c_lo = std::max(0, static_cast<int>(std::floor(cx - radius)));
        int c_hi = std::min(image_size - 1, static_cast<int>(std::ceil(cx + radius)));
        for (int r = r_lo; r <= r_hi; ++r)
            for (int c = c_lo; c <= c_hi; ++c) {
                double dx = c - cx, dy = r - cy;
                if (dx * dx + dy * dy <= radius * radius) v[static_cast<size_t>(r) * image_size + c] = 0.0;
            }
    };
    for (const Stroke& st : strokes)
        for (size_t i = 0; i + 1 < st.pts.size(); ++i) {
            auto [x0, y0] = st.pts[i];
            auto [x1, y1] = st.pts[i + 1];
            double len = std::hypot(x1 - x0, y1 - y0);
            int samples = std::max(1, static_cast<int>(std::ceil(len / 0.5)));
            for (int k = 0; k <= samples; ++k) {
                double a = static_cast<double>(k) / samples;
                stamp(x0 + a * (x1 - x0), y0 + a * (y1 - y0), st.radius);
            }
        }
    return finalize(std::move(v), image_size, "irregular");
}

Mask gen_half(int image_size, Rng& rng) {
    require(image_size >= 2 && image_size % 2 == 0, "half mask: image size must be even");
    int side = static_cast<int>(rng.uniform_int(0, 3));  // left, right, top, bottom
    int h = image_size / 2;
    std::vector<double> v(static_cast<size_t>(image_size) * image_size, 1.0);
    for (int r = 0; r < image_size; ++r)
        for (int c = 0; c < image_size; ++c) {
            bool hole = (side == 0 && c < h) || (side == 1 && c >= h) || (side == 2 && r < h) ||
                        (side == 3 && r >= h);
            if (hole) v[static_cast<size_t>(r) * image_size + c] = 0.0;
        }
    return finalize(std::move(v), image_size, "half");
}

Mask make_mask(const std::string& kind, int image_size, Rng& rng) {
    if (kind == "center") return gen_center(image_size, rng);
    if (kind == "random_bbox") return gen_random_bbox(image_size, rng);
    if (kind == "irregular") return gen_irregular(image_size, rng);
    if (kind == "half") return gen_half(image_size, rng);
    arg_error("mask: unknown kind '" + kind + "'");
}

namespace {

// m*x + (1-m)*z with the [H,W] mask broadcast over batch and channels
Tensor replace_known(const Tensor& x, const Tensor& z, const Tensor& mask) {
    int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::vector<double> out(static_cast<size_t>(x.size()));
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p) {
                int64_t k = ((static_cast<int64_t>(b) * C + c) * H * W) + p;
                double m = mask.at(p);
                out[static_cast<size_t>(k)] = m * x.at(k) + (1.0 - m) * z.at(k);
            }
    return Tensor::from(x.shape(), std::move(out));
}

}  // namespace

SampleResult inpaint_sample_core(const ModelFn& v_model, const Tensor& x, const Mask& m, const SamplerConfig& cfg,
                                 const Tensor& eps) {
    cfg.validate();
    require(cfg.method == "cfm_euler", "inpaint_sample: rides the cfm_euler method");
    require(x.rank() == 4, "inpaint_sample: image must be [B,C,H,W]");
    require(m.values.rank() == 2 && m.values.dim(0) == x.dim(2) && m.values.dim(1) == x.dim(3),
            "inpaint_sample: mask shape does not match the image");
    require(same_shape(x.shape(), eps.shape()), "inpaint_sample: noise shape mismatch");
    int B = x.dim(0);
    int N = cfg.steps;
    double h = 1.0 / static_cast<double>(N);
    Tensor z = replace_known(x, eps, m.values);
    int64_t evals = 0;
    for (int i = 0; i < N; ++i) {
        Tensor tv = Tensor::full({B}, static_cast<double>(i) / static_cast<double>(N));
        Tensor v = cfg_velocity(v_model, z, tv, cfg.label, cfg.cfg_scale, nullptr, &evals);
        std::vector<double> out(static_cast<size_t>(z.size()));
        for (int64_t k = 0; k < z.size(); ++k) out[static_cast<size_t>(k)] = z.at(k) + h * v.at(k);
        z = replace_known(x, Tensor::from(z.shape(), std::move(out)), m.values);
        check_finite(z, "inpaint_sample");
    }
    return {z, N, evals};
}

SampleResult inpaint_sample(const ModelSpec& spec, const ParamSet& params, const Tensor& x, const Mask& m,
                            const SamplerConfig& cfg) {
    Rng rng(cfg.seed);
    Tensor eps = Tensor::from(x.shape(), rng.normal_vec(x.size()));
    return inpaint_sample_core(make_model_fn(spec, params), x, m, cfg, eps);
}

void write_mask_pgm(const Mask& m, const std::string& path) {
    require(m.values.rank() == 2, "mask: values must be [H,W]");
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "mask: cannot open '" + path + "' for writing");
    int H = m.values.dim(0), W = m.values.dim(1);
    f << "P5\n# kind " << m.kind << "\n" << W << " " << H << "\n255\n";
    for (int64_t i = 0; i < m.values.size(); ++i)
        f.put(m.values.at(i) == 1.0 ? static_cast<char>(0xFF) : static_cast<char>(0x00));
    require(f.good(), "mask: write failed for '" + path + "'");
}

Mask read_mask_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "mask: cannot open '" + path + "'");
    std::string magic;
    f >> magic;
    require(magic == "P5", "mask: '" + path + "' is not a binary PGM");
    std::string kind = "custom";
    auto next_token = [&]() {
        std::string tok;
        while (f >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(f, rest);
                std::istringstream line(tok.substr(1) + rest);
                std::string key, val;
                if (line >> key >> val && key == "kind") kind = val;
                continue;
            }
            return tok;
        }
        run_error("mask: truncated header in '" + path + "'");
    };
    int W = std::stoi(next_token());
    int H = std::stoi(next_token());
    int maxval = std::stoi(next_token());
    require(W >= 1 && H >= 1, "mask: bad dimensions in '" + path + "'");
    require(maxval == 255, "mask: expected maxval 255 in '" + path + "'");
    f.get();  // single whitespace byte after maxval
    std::vector<double> v(static_cast<size_t>(W) * H);
    for (auto& p : v) {
        int byte = f.get();
        require(byte != EOF, "mask: truncated pixel data in '" + path + "'");
        require(byte == 0 || byte == 255, "mask: non-binary pixel in '" + path + "'");
        p = byte == 255 ? 1.0 : 0.0;
    }
    Tensor values = Tensor::from({H, W}, std::move(v));
    return make_mask_from(std::move(values), std::move(kind));
}

}  // namespace flowgen
