#include "flowgen/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "flowgen/rng.hpp"

namespace flowgen {

namespace {

// Average-pool [C, H, W] planes by integer factor f (partial edge cells
// average over their actual members).
std::vector<double> pool_plane(const double* src, int h, int w, int f, int& ph, int& pw) {
    ph = (h + f - 1) / f;
    pw = (w + f - 1) / f;
    std::vector<double> out(static_cast<size_t>(ph) * pw, 0.0);
    for (int pr = 0; pr < ph; ++pr) {
        for (int pc = 0; pc < pw; ++pc) {
            double acc = 0.0;
            int n = 0;
            for (int r = pr * f; r < std::min((pr + 1) * f, h); ++r)
                for (int c = pc * f; c < std::min((pc + 1) * f, w); ++c) {
                    acc += src[static_cast<int64_t>(r) * w + c];
                    ++n;
                }
            out[static_cast<size_t>(pr) * pw + pc] = acc / n;
        }
    }
    return out;
}

Eigen::MatrixXd to_eigen(const Tensor& t, int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = t.at(static_cast<int64_t>(r) * cols + c);
    return m;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

double poly3_kernel(const double* x, const double* y, int64_t d) {
    double dot = 0.0;
    for (int64_t k = 0; k < d; ++k) dot += x[k] * y[k];
    double v = dot / static_cast<double>(d) + 1.0;
    return v * v * v;
}

struct MaskIndex {
    std::vector<int64_t> hole;  // flat [H*W] indices with mask == 0
    int h = 0, w = 0;
};

MaskIndex hole_pixels(const Tensor& x, const Tensor& mask, const char* who) {
    require(mask.rank() == 2, std::string(who) + ": mask must be [H, W]");
    require(x.rank() == 2 || x.rank() == 3, std::string(who) + ": image must be [H, W] or [C, H, W]");
    int h = mask.dim(0), w = mask.dim(1);
    require(x.dim(x.rank() - 2) == h && x.dim(x.rank() - 1) == w,
            std::string(who) + ": image and mask sizes differ");
    MaskIndex mi;
    mi.h = h;
    mi.w = w;
    for (int64_t i = 0; i < mask.size(); ++i)
        if (mask.at(i) == 0.0) mi.hole.push_back(i);
    require(!mi.hole.empty(), std::string(who) + ": mask has no hole pixels");
    return mi;
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_fixed(double v, int prec) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

}  // namespace

Tensor pixel_features(const Tensor& images, int out_dim, uint64_t proj_seed) {
    require(images.defined() && images.rank() >= 2, "pixel_features: want [N, ...]");
    require(out_dim >= 1, "pixel_features: out_dim must be positive");
    int64_t n = images.dim(0);
    require(n >= 1, "pixel_features: empty batch");

    // Flatten each image, pooling spatial layouts down to at most 8x8.
    std::vector<std::vector<double>> flat(static_cast<size_t>(n));
    if (images.rank() == 4) {
        int ch = images.dim(1), h = images.dim(2), w = images.dim(3);
        int f = std::max(1, (std::max(h, w) + 7) / 8);
        for (int64_t i = 0; i < n; ++i) {
            for (int c = 0; c < ch; ++c) {
                int ph = 0, pw = 0;
                const double* plane = images.data() + (i * ch + c) * static_cast<int64_t>(h) * w;
                auto pooled = pool_plane(plane, h, w, f, ph, pw);
                flat[static_cast<size_t>(i)].insert(flat[static_cast<size_t>(i)].end(),
                                                    pooled.begin(), pooled.end());
            }
        }
    } else {
        int64_t per = images.size() / n;
        for (int64_t i = 0; i < n; ++i)
            flat[static_cast<size_t>(i)].assign(images.data() + i * per, images.data() + (i + 1) * per);
    }

    int64_t in_dim = static_cast<int64_t>(flat[0].size());
    Rng rng(proj_seed);
    std::vector<double> proj = rng.normal_vec(in_dim * out_dim);
    double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));

    std::vector<double> out(static_cast<size_t>(n) * out_dim, 0.0);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const std::vector<double>& row = flat[static_cast<size_t>(i)];
        for (int j = 0; j < out_dim; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < in_dim; ++k) acc += row[static_cast<size_t>(k)] * proj[static_cast<size_t>(k) * out_dim + j];
            out[static_cast<size_t>(i) * out_dim + j] = acc * scale;
        }
    }
    return Tensor::from({static_cast<int>(n), out_dim}, std::move(out));
}

GaussianStats feature_stats(const Tensor& images, const FeatureFn& extractor) {
    Tensor feats = extractor(images);
    require(feats.rank() == 2, "feature_stats: extractor must return [N, d]");
    int64_t n = feats.dim(0);
    int d = feats.dim(1);
    require(n >= 2, "feature_stats: need at least 2 samples");

    std::vector<double> mu(static_cast<size_t>(d), 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mu[static_cast<size_t>(j)] += feats.at(i * d + j);
    for (int j = 0; j < d; ++j) mu[static_cast<size_t>(j)] /= static_cast<double>(n);

    std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
    for (int64_t i = 0; i < n; ++i) {
        for (int a = 0; a < d; ++a) {
            double ca = feats.at(i * d + a) - mu[static_cast<size_t>(a)];
            for (int b = a; b < d; ++b)
                cov[static_cast<size_t>(a) * d + b] += ca * (feats.at(i * d + b) - mu[static_cast<size_t>(b)]);
        }
    }
    for (int a = 0; a < d; ++a)
        for (int b = a; b < d; ++b) {
            double v = cov[static_cast<size_t>(a) * d + b] / static_cast<double>(n - 1);
            cov[static_cast<size_t>(a) * d + b] = v;
            cov[static_cast<size_t>(b) * d + a] = v;
        }

    if (n < d) {
        std::fprintf(stderr, "feature_stats: %lld samples < %d dims, regularizing covariance\n",
                     static_cast<long long>(n), d);
        for (int a = 0; a < d; ++a) cov[static_cast<size_t>(a) * d + a] += 1e-6;
    }

    GaussianStats st;
    st.mean = Tensor::from({d}, std::move(mu));
    st.cov = Tensor::from({d, d}, std::move(cov));
    st.count = n;
    return st;
}

double fid(const GaussianStats& a, const GaussianStats& b) {
    require(a.mean.defined() && b.mean.defined(), "fid: undefined stats");
    int d = a.mean.dim(0);
    require(b.mean.dim(0) == d, "fid: dimension mismatch");

    Eigen::MatrixXd ca = to_eigen(a.cov, d, d);
    Eigen::MatrixXd cb = to_eigen(b.cov, d, d);
    Eigen::VectorXd dmu(d);
    for (int i = 0; i < d; ++i) dmu(i) = a.mean.at(i) - b.mean.at(i);

    Eigen::MatrixXd sa = psd_sqrt(ca);
    Eigen::MatrixXd inner = sa * cb * sa;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()));
    double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    double v = dmu.squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
    return std::max(v, 0.0);
}

double kid(const Tensor& feat_a, const Tensor& feat_b, uint64_t seed) {
    require(feat_a.rank() == 2 && feat_b.rank() == 2, "kid: features must be [N, d]");
    int64_t na = feat_a.dim(0), nb = feat_b.dim(0);
    int64_t d = feat_a.dim(1);
    require(feat_b.dim(1) == d, "kid: feature dims differ");
    require(na >= 2 && nb >= 2, "kid: need at least 2 samples per set");

    int64_t m = std::min<int64_t>(1000, na);
    int64_t k = std::min<int64_t>(1000, nb);
    const int kSubsets = 10;

    Rng rng(seed);
    auto pick = [&rng](int64_t n, int64_t take) {
        std::vector<int64_t> idx(static_cast<size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        for (int64_t i = 0; i < take; ++i) {
            int64_t j = rng.uniform_int(i, n - 1);
            std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        }
        idx.resize(static_cast<size_t>(take));
        return idx;
    };

    double total = 0.0;
    for (int rep = 0; rep < kSubsets; ++rep) {
        std::vector<int64_t> ia = pick(na, m);
        std::vector<int64_t> ib = pick(nb, k);

        double xx = 0.0, yy = 0.0, xy = 0.0;
#pragma omp parallel for reduction(+ : xx) schedule(static)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < m; ++j)
                if (i != j)
                    xx += poly3_kernel(feat_a.data() + ia[static_cast<size_t>(i)] * d,
                                       feat_a.data() + ia[static_cast<size_t>(j)] * d, d);
#pragma omp parallel for reduction(+ : yy) schedule(static)
        for (int64_t i = 0; i < k; ++i)
            for (int64_t j = 0; j < k; ++j)
                if (i != j)
                    yy += poly3_kernel(feat_b.data() + ib[static_cast<size_t>(i)] * d,
                                       feat_b.data() + ib[static_cast<size_t>(j)] * d, d);
#pragma omp parallel for reduction(+ : xy) schedule(static)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < k; ++j)
                xy += poly3_kernel(feat_a.data() + ia[static_cast<size_t>(i)] * d,
                                   feat_b.data() + ib[static_cast<size_t>(j)] * d, d);

        total += xx / static_cast<double>(m * (m - 1)) + yy / static_cast<double>(k * (k - 1)) -
                 2.0 * xy / static_cast<double>(m * k);
    }
    return total / kSubsets;
}

double nmse_masked(const Tensor& x, const Tensor& xhat, const Tensor& mask) {
    require(same_shape(x.shape(), xhat.shape()), "nmse_masked: image shapes differ");
    MaskIndex mi = hole_pixels(x, mask, "nmse_masked");
    int64_t channels = x.size() / (static_cast<int64_t>(mi.h) * mi.w);
    double num = 0.0, den = 0.0;
    for (int64_t c = 0; c < channels; ++c) {
        int64_t base = c * mi.h * mi.w;
        for (int64_t i : mi.hole) {
            double xv = x.at(base + i);
            double dv = xv - xhat.at(base + i);
            num += dv * dv;
            den += xv * xv;
        }
    }
    require(den > 0.0, "nmse_masked: reference is zero on the hole");
    return num / den;
}

double psnr_masked(const Tensor& x, const Tensor& xhat, const Tensor& mask) {
    require(same_shape(x.shape(), xhat.shape()), "psnr_masked: image shapes differ");
    MaskIndex mi = hole_pixels(x, mask, "psnr_masked");
    int64_t channels = x.size() / (static_cast<int64_t>(mi.h) * mi.w);
    double acc = 0.0;
    for (int64_t c = 0; c < channels; ++c) {
        int64_t base = c * mi.h * mi.w;
        for (int64_t i : mi.hole) {
            double dv = x.at(base + i) - xhat.at(base + i);
            acc += dv * dv;
        }
    }
    double mse = acc / (static_cast<double>(channels) * static_cast<double>(mi.hole.size()));
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Tensor& x, const Tensor& xhat, const Tensor& mask) {
    require(same_shape(x.shape(), xhat.shape()), "ssim: image shapes differ");
    MaskIndex mi = hole_pixels(x, mask, "ssim");
    const int kWin = 11, kHalf = 5;
    require(mi.h >= kWin && mi.w >= kWin, "ssim: image smaller than the 11x11 window");

    double win[kWin][kWin];
    double wsum = 0.0;
    for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
            double di = i - kHalf, dj = j - kHalf;
            win[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
            wsum += win[i][j];
        }
    for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) win[i][j] /= wsum;

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    int64_t channels = x.size() / (static_cast<int64_t>(mi.h) * mi.w);

    // Hole pixels of xhat against x; known pixels of xhat are replaced by x
    // before windowing so the score depends on the fill alone.
    double chan_acc = 0.0;
    for (int64_t c = 0; c < channels; ++c) {
        int64_t base = c * mi.h * mi.w;
        double acc = 0.0;
        int64_t windows = 0;
        for (int r = kHalf; r < mi.h - kHalf; ++r) {
            for (int cc = kHalf; cc < mi.w - kHalf; ++cc) {
                if (mask.at(static_cast<int64_t>(r) * mi.w + cc) != 0.0) continue;
                double mx = 0.0, my = 0.0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        int64_t p = static_cast<int64_t>(r - kHalf + i) * mi.w + (cc - kHalf + j);
                        double xv = x.at(base + p);
                        double yv = mask.at(p) == 0.0 ? xhat.at(base + p) : xv;
                        mx += win[i][j] * xv;
                        my += win[i][j] * yv;
                    }
                double vx = 0.0, vy = 0.0, cov = 0.0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        int64_t p = static_cast<int64_t>(r - kHalf + i) * mi.w + (cc - kHalf + j);
                        double xv = x.at(base + p);
                        double yv = mask.at(p) == 0.0 ? xhat.at(base + p) : xv;
                        vx += win[i][j] * (xv - mx) * (xv - mx);
                        vy += win[i][j] * (yv - my) * (yv - my);
                        cov += win[i][j] * (xv - mx) * (yv - my);
                    }
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++windows;
            }
        }
        require(windows > 0, "ssim: no full window centered in the hole");
        chan_acc += acc / static_cast<double>(windows);
    }
    return chan_acc / static_cast<double>(channels);
}

double delta_pct(double before, double after) {
    require(before != 0.0, "delta_pct: zero baseline");
    return 100.0 * (after - before) / before;
}

MetricReport build_report(const std::vector<MethodRow>& methods,
                          const std::vector<ClassFidRow>& class_fid,
                          const std::vector<MaskRunRow>& mask_runs) {
    MetricReport rep;
    rep.methods = methods;
    rep.class_fid = class_fid;

    std::map<std::string, MaskRow> by_kind;
    std::vector<std::string> order;
    for (const MaskRunRow& run : mask_runs) {
        auto it = by_kind.find(run.mask_kind);
        if (it == by_kind.end()) {
            order.push_back(run.mask_kind);
            it = by_kind.emplace(run.mask_kind, MaskRow{run.mask_kind, {}, {}}).first;
        }
        std::optional<MaskMetrics>& slot = run.finetuned ? it->second.finetuned : it->second.base;
        require(!slot.has_value(), "build_report: duplicate mask run for '" + run.mask_kind + "'");
        slot = run.metrics;
    }
    for (const std::string& kind : order) rep.masks.push_back(by_kind.at(kind));
    return rep;
}

void write_report_csv(const MetricReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "write_report_csv: cannot open '" + path + "'");
    f << "method,class,mask,metric,value\n";
    for (const MethodRow& m : report.methods) {
        f << m.method << ",,,fid," << fmt17(m.fid) << "\n";
        f << m.method << ",,,kid_x1000," << fmt17(m.kid_x1000) << "\n";
        f << m.method << ",,,nfe," << fmt17(m.nfe) << "\n";
        f << m.method << ",,,images_per_sec," << fmt17(m.images_per_sec) << "\n";
    }
    for (const ClassFidRow& c : report.class_fid)
        f << c.method << "," << c.class_id << ",,fid," << fmt17(c.fid) << "\n";
    for (const MaskRow& row : report.masks) {
        auto cell = [&](const char* name, const std::optional<MaskMetrics>& m,
                        double MaskMetrics::*field) {
            f << ",," << row.mask_kind << "," << name << ","
              << (m.has_value() ? fmt17((*m).*field) : "absent") << "\n";
        };
        cell("nmse_base", row.base, &MaskMetrics::nmse);
        cell("psnr_base", row.base, &MaskMetrics::psnr);
        cell("ssim_base", row.base, &MaskMetrics::ssim);
        cell("nmse_finetuned", row.finetuned, &MaskMetrics::nmse);
        cell("psnr_finetuned", row.finetuned, &MaskMetrics::psnr);
        cell("ssim_finetuned", row.finetuned, &MaskMetrics::ssim);
        auto delta = [&](const char* name, double MaskMetrics::*field) {
            f << ",," << row.mask_kind << "," << name << ",";
            if (row.base.has_value() && row.finetuned.has_value())
                f << fmt17(delta_pct((*row.base).*field, (*row.finetuned).*field));
            else
                f << "absent";
            f << "\n";
        };
        delta("nmse_delta_pct", &MaskMetrics::nmse);
        delta("psnr_delta_pct", &MaskMetrics::psnr);
        delta("ssim_delta_pct", &MaskMetrics::ssim);
    }
    require(f.good(), "write_report_csv: write failed for '" + path + "'");
}

std::string format_report_text(const MetricReport& report) {
    std::string out;
    auto pad = [](std::string s, size_t w) {
        if (s.size() < w) s.append(w - s.size(), ' ');
        return s;
    };

    if (!report.methods.empty()) {
        out += pad("method", 18) + pad("fid", 12) + pad("kid*1000", 12) + pad("nfe", 8) +
               "img/s\n";
        for (const MethodRow& m : report.methods)
            out += pad(m.method, 18) + pad(fmt_fixed(m.fid, 4), 12) +
                   pad(fmt_fixed(m.kid_x1000, 4), 12) + pad(fmt_fixed(m.nfe, 1), 8) +
                   fmt_fixed(m.images_per_sec, 2) + "\n";
        out += "\n";
    }
    if (!report.class_fid.empty()) {
        out += pad("method", 18) + pad("class", 8) + "fid\n";
        for (const ClassFidRow& c : report.class_fid)
            out += pad(c.method, 18) + pad(std::to_string(c.class_id), 8) +
                   fmt_fixed(c.fid, 4) + "\n";
        out += "\n";
    }
    if (!report.masks.empty()) {
        out += pad("mask", 14) + pad("metric", 8) + pad("base", 12) + pad("fine-tuned", 12) +
               "delta%\n";
        for (const MaskRow& row : report.masks) {
            auto line = [&](const char* name, double MaskMetrics::*field) {
                out += pad(row.mask_kind, 14) + pad(name, 8);
                out += pad(row.base ? fmt_fixed((*row.base).*field, 4) : "absent", 12);
                out += pad(row.finetuned ? fmt_fixed((*row.finetuned).*field, 4) : "absent", 12);
                if (row.base && row.finetuned)
                    out += fmt_fixed(delta_pct((*row.base).*field, (*row.finetuned).*field), 1);
                else
                    out += "absent";
                out += "\n";
            };
            line("nmse", &MaskMetrics::nmse);
            line("psnr", &MaskMetrics::psnr);
            line("ssim", &MaskMetrics::ssim);
        }
    }
    return out;
}

void write_report_text(const MetricReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "write_report_text: cannot open '" + path + "'");
    f << format_report_text(report);
    require(f.good(), "write_report_text: write failed for '" + path + "'");
}

}  // namespace flowgen
