#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flowgen/tensor.hpp"

namespace flowgen {

// Fréchet statistics of a feature cloud.
struct GaussianStats {
    Tensor mean;    // [d]
    Tensor cov;     // [d, d], symmetric
    int64_t count = 0;
};

// Maps a batch of images [N, ...] to feature rows [N, d].
using FeatureFn = std::function<Tensor(const Tensor&)>;

// Average-pools spatial images down to <= 8x8, flattens, and applies a fixed
// seeded random projection to out_dim columns. Non-spatial input ([N, d0]) is
// projected directly.
Tensor pixel_features(const Tensor& images, int out_dim = 64, uint64_t proj_seed = 1234);

GaussianStats feature_stats(const Tensor& images, const FeatureFn& extractor);

double fid(const GaussianStats& a, const GaussianStats& b);

// Unbiased MMD^2 with kernel (x.y/d + 1)^3, averaged over 10 random subsets
// of size min(1000, n). Raw value; reports scale it by 1000.
double kid(const Tensor& feat_a, const Tensor& feat_b, uint64_t seed = 0);

// Masked-region reconstruction metrics. x and xhat are [C, H, W] or [H, W]
// in [0, 1]; mask is [H, W] with 0 marking the hole.
double nmse_masked(const Tensor& x, const Tensor& xhat, const Tensor& mask);
double psnr_masked(const Tensor& x, const Tensor& xhat, const Tensor& mask);
double ssim(const Tensor& x, const Tensor& xhat, const Tensor& mask);

struct MethodRow {
    std::string method;
    double fid = 0.0;
    double kid_x1000 = 0.0;
    double nfe = 0.0;
    double images_per_sec = 0.0;
};

struct ClassFidRow {
    std::string method;
    int class_id = 0;
    double fid = 0.0;
};

struct MaskMetrics {
    double nmse = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct MaskRunRow {
    std::string mask_kind;
    bool finetuned = false;
    MaskMetrics metrics;
};

struct MaskRow {
    std::string mask_kind;
    std::optional<MaskMetrics> base;
    std::optional<MaskMetrics> finetuned;
};

// 100 * (after - before) / before; negative NMSE delta means improvement.
double delta_pct(double before, double after);

struct MetricReport {
    std::vector<MethodRow> methods;
    std::vector<ClassFidRow> class_fid;
    std::vector<MaskRow> masks;
};

MetricReport build_report(const std::vector<MethodRow>& methods,
                          const std::vector<ClassFidRow>& class_fid,
                          const std::vector<MaskRunRow>& mask_runs);

// One row per cell: method,class,mask,metric,value (value as %.17g).
void write_report_csv(const MetricReport& report, const std::string& path);
std::string format_report_text(const MetricReport& report);
void write_report_text(const MetricReport& report, const std::string& path);

}  // namespace flowgen
