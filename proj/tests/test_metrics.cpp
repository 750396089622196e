#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "flowgen/metrics.hpp"
#include "flowgen/rng.hpp"
#include "flowgen/tensor.hpp"

using namespace flowgen;

namespace {

Tensor randu(Shape shape, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform();
    return Tensor::from(shape, std::move(v));
}

FeatureFn identity_features() {
    return [](const Tensor& t) { return t; };
}

// rows ~ N(mu, diag(var)), one cloud per seed
Tensor gaussian_cloud(int64_t n, const std::vector<double>& mu,
                      const std::vector<double>& var, uint64_t seed) {
    int d = static_cast<int>(mu.size());
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(n * d));
    for (int64_t i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            v[static_cast<size_t>(i * d + j)] =
                mu[static_cast<size_t>(j)] + std::sqrt(var[static_cast<size_t>(j)]) * rng.normal();
    return Tensor::from({static_cast<int>(n), d}, std::move(v));
}

Tensor all_hole(int h, int w) { return Tensor::zeros({h, w}); }

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("nmse is zero for a perfect fill and one for a zero fill") {
    Tensor x = randu({1, 8, 8}, 11);
    Tensor m = Tensor::from({8, 8}, [] {
        std::vector<double> v(64, 1.0);
        for (int i = 20; i < 30; ++i) v[static_cast<size_t>(i)] = 0.0;
        return v;
    }());
    CHECK(nmse_masked(x, x, m) == 0.0);

    std::vector<double> zeroed(x.vec());
    for (int i = 20; i < 30; ++i) zeroed[static_cast<size_t>(i)] = 0.0;
    CHECK(nmse_masked(x, Tensor::from({1, 8, 8}, std::move(zeroed)), m) == 1.0);
}

TEST_CASE("nmse matches a hand-summed 2x2 case") {
    Tensor x = Tensor::from({2, 2}, {0.5, 0.9, 0.25, 0.1});
    Tensor xh = Tensor::from({2, 2}, {0.3, 0.0, 0.75, 0.0});
    Tensor m = Tensor::from({2, 2}, {0.0, 1.0, 0.0, 1.0});
    // holes (0,0) and (1,0): num = 0.2^2 + 0.5^2 = 0.29, den = 0.25 + 0.0625
    CHECK(nmse_masked(x, xh, m) == doctest::Approx(0.29 / 0.3125).epsilon(1e-12));
}

TEST_CASE("nmse rejects empty holes and zero references") {
    Tensor x = randu({4, 4}, 3);
    CHECK_THROWS(nmse_masked(x, x, Tensor::full({4, 4}, 1.0)));
    Tensor m = Tensor::from({4, 4}, [] {
        std::vector<double> v(16, 1.0);
        v[5] = 0.0;
        return v;
    }());
    std::vector<double> xz(x.vec());
    xz[5] = 0.0;
    CHECK_THROWS(nmse_masked(Tensor::from({4, 4}, std::move(xz)), x, m));
    CHECK_THROWS(nmse_masked(x, randu({5, 5}, 4), m));
}

TEST_CASE("psnr hits the cap when identical and 20 dB at mse 0.01") {
    Tensor x = randu({1, 8, 8}, 21);
    Tensor m = all_hole(8, 8);
    CHECK(psnr_masked(x, x, m) == 100.0);

    std::vector<double> off(x.vec());
    for (auto& v : off) v += 0.1;
    CHECK(psnr_masked(x, Tensor::from({1, 8, 8}, std::move(off)), m) ==
          doctest::Approx(20.0).epsilon(1e-12));

    CHECK_THROWS(psnr_masked(x, x, Tensor::full({8, 8}, 1.0)));
}

TEST_CASE("psnr falls strictly as the hole error grows") {
    Tensor x = Tensor::full({8, 8}, 0.5);
    Tensor m = all_hole(8, 8);
    double prev = 1e300;
    for (double step : {0.01, 0.05, 0.1, 0.2, 0.4}) {
        double cur = psnr_masked(x, Tensor::full({8, 8}, 0.5 + step), m);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("masked metrics ignore the fill outside the hole") {
    Tensor x = randu({1, 16, 16}, 31);
    Tensor m = Tensor::from({16, 16}, [] {
        std::vector<double> v(256, 1.0);
        for (int r = 5; r < 11; ++r)
            for (int c = 5; c < 11; ++c) v[static_cast<size_t>(r * 16 + c)] = 0.0;
        return v;
    }());
    Tensor xh = randu({1, 16, 16}, 32);

    double n0 = nmse_masked(x, xh, m);
    double p0 = psnr_masked(x, xh, m);
    double s0 = ssim(x, xh, m);

    // trash every known pixel of the fill
    std::vector<double> v(xh.vec());
    for (int i = 0; i < 256; ++i)
        if (m.at(i) != 0.0) v[static_cast<size_t>(i)] = 123.0 + i;
    Tensor trashed = Tensor::from({1, 16, 16}, std::move(v));

    CHECK(nmse_masked(x, trashed, m) == n0);
    CHECK(psnr_masked(x, trashed, m) == p0);
    CHECK(ssim(x, trashed, m) == s0);
}

TEST_CASE("ssim of an image with itself is one") {
    Tensor x = randu({3, 16, 16}, 41);
    CHECK(ssim(x, x, all_hole(16, 16)) == doctest::Approx(1.0).epsilon(1e-12));

    Tensor m = Tensor::from({16, 16}, [] {
        std::vector<double> v(256, 1.0);
        for (int r = 6; r < 10; ++r)
            for (int c = 6; c < 10; ++c) v[static_cast<size_t>(r * 16 + c)] = 0.0;
        return v;
    }());
    CHECK(ssim(x, x, m) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim of constant images matches the zero-variance closed form") {
    double a = 0.25, b = 0.75;
    Tensor x = Tensor::full({16, 16}, a);
    Tensor xh = Tensor::full({16, 16}, b);
    double c1 = 1e-4;
    double want = (2.0 * a * b + c1) / (a * a + b * b + c1);
    CHECK(ssim(x, xh, all_hole(16, 16)) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("ssim of an inverted half-and-half image is near zero") {
    std::vector<double> v(16 * 16, 0.0);
    for (int r = 0; r < 16; ++r)
        for (int c = 8; c < 16; ++c) v[static_cast<size_t>(r * 16 + c)] = 1.0;
    Tensor x = Tensor::from({16, 16}, v);
    for (auto& p : v) p = 1.0 - p;
    Tensor inv = Tensor::from({16, 16}, std::move(v));

    double s = ssim(x, inv, all_hole(16, 16));
    CHECK(s < 0.1);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
}

TEST_CASE("ssim is symmetric when the pair agrees off the hole") {
    Tensor x = randu({1, 16, 16}, 51);
    Tensor m = all_hole(16, 16);
    Tensor xh = randu({1, 16, 16}, 52);
    CHECK(ssim(x, xh, m) == doctest::Approx(ssim(xh, x, m)).epsilon(1e-12));

    // center hole, fill equal to the reference outside it
    Tensor mc = Tensor::from({16, 16}, [] {
        std::vector<double> v(256, 1.0);
        for (int r = 5; r < 11; ++r)
            for (int c = 5; c < 11; ++c) v[static_cast<size_t>(r * 16 + c)] = 0.0;
        return v;
    }());
    std::vector<double> fv(x.vec());
    Rng rng(53);
    for (int i = 0; i < 256; ++i)
        if (mc.at(i) == 0.0) fv[static_cast<size_t>(i)] = rng.uniform();
    Tensor fill = Tensor::from({1, 16, 16}, std::move(fv));
    CHECK(ssim(x, fill, mc) == doctest::Approx(ssim(fill, x, mc)).epsilon(1e-12));
}

TEST_CASE("ssim rejects small images and holes without full windows") {
    Tensor x = randu({10, 10}, 61);
    CHECK_THROWS(ssim(x, x, all_hole(10, 10)));

    // hole pixel too close to the border for any 11x11 center
    Tensor m = Tensor::from({16, 16}, [] {
        std::vector<double> v(256, 1.0);
        v[1 * 16 + 1] = 0.0;
        return v;
    }());
    Tensor y = randu({16, 16}, 62);
    CHECK_THROWS(ssim(y, y, m));
}

TEST_CASE("fid of a cloud with itself is zero") {
    Tensor feats = gaussian_cloud(500, {0, 0, 0, 0}, {1, 2, 0.5, 1}, 71);
    GaussianStats st = feature_stats(feats, identity_features());
    CHECK(st.count == 500);
    CHECK(fid(st, st) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("fid reduces to the mean gap when covariances match") {
    std::vector<double> cov = {1.0, 0.2, 0.2, 0.7};
    GaussianStats a{Tensor::from({2}, {0.0, 0.0}), Tensor::from({2, 2}, cov), 100};
    GaussianStats b{Tensor::from({2}, {3.0, -4.0}), Tensor::from({2, 2}, cov), 100};
    CHECK(fid(a, b) == doctest::Approx(25.0).epsilon(1e-9));
}

TEST_CASE("fid matches the diagonal closed form on seeded clouds") {
    std::vector<double> mu1 = {0, 0, 0, 0}, var1 = {1.0, 0.5, 2.0, 1.5};
    std::vector<double> mu2 = {1.0, -0.5, 0.25, 0}, var2 = {0.8, 1.2, 0.6, 1.0};
    GaussianStats a = feature_stats(gaussian_cloud(20000, mu1, var1, 81), identity_features());
    GaussianStats b = feature_stats(gaussian_cloud(20000, mu2, var2, 82), identity_features());

    double want = 0.0;
    for (int i = 0; i < 4; ++i) {
        double dm = mu1[static_cast<size_t>(i)] - mu2[static_cast<size_t>(i)];
        double ds = std::sqrt(var1[static_cast<size_t>(i)]) - std::sqrt(var2[static_cast<size_t>(i)]);
        want += dm * dm + ds * ds;
    }
    double got = fid(a, b);
    CHECK(got == doctest::Approx(want).epsilon(0.02));
    CHECK(fid(b, a) == doctest::Approx(got).epsilon(1e-9));
}

TEST_CASE("feature stats regularize when samples are scarce") {
    Tensor feats = randu({10, 64}, 91);
    GaussianStats st = feature_stats(feats, identity_features());
    for (int i = 0; i < 64; ++i) CHECK(st.cov.at(i * 64 + i) >= 0.0);
    CHECK(fid(st, st) >= 0.0);
    CHECK(fid(st, st) < 1e-6);
    CHECK_THROWS(feature_stats(randu({1, 4}, 92), identity_features()));
}

TEST_CASE("pixel features are deterministic and pool spatial input") {
    Tensor imgs = randu({6, 3, 32, 32}, 101);
    Tensor f1 = pixel_features(imgs, 64, 7);
    Tensor f2 = pixel_features(imgs, 64, 7);
    CHECK(same_shape(f1.shape(), {6, 64}));
    CHECK(std::memcmp(f1.data(), f2.data(), sizeof(double) * static_cast<size_t>(f1.size())) == 0);

    // different projection seed, different features
    Tensor f3 = pixel_features(imgs, 64, 8);
    CHECK(f1.at(0) != f3.at(0));

    Tensor pts = randu({5, 2}, 102);
    CHECK(same_shape(pixel_features(pts, 16, 7).shape(), {5, 16}));
}

TEST_CASE("kid matches a two-point-mass hand calculation") {
    Tensor a = Tensor::from({2, 2}, {0.0, 0.0, 0.0, 0.0});
    Tensor b = Tensor::from({2, 2}, {1.0, 0.0, 1.0, 0.0});
    // k(a,a)=1, k(b,b)=1.5^3, k(a,b)=1 -> mmd = 1 + 3.375 - 2
    CHECK(kid(a, b) == doctest::Approx(2.375).epsilon(1e-12));
    CHECK_THROWS(kid(Tensor::from({1, 2}, {0.0, 0.0}), b));
}

TEST_CASE("kid of identical sample sets is non-positive") {
    Tensor f = gaussian_cloud(300, {0, 0, 0}, {1, 1, 1}, 111);
    CHECK(kid(f, f) <= 0.0);
}

TEST_CASE("kid is unbiased across same-distribution trials") {
    std::vector<double> mu(8, 0.0), var(8, 1.0);
    const int kTrials = 100;
    std::vector<double> vals(kTrials);
    for (int t = 0; t < kTrials; ++t) {
        Tensor a = gaussian_cloud(200, mu, var, 1000 + static_cast<uint64_t>(2 * t));
        Tensor b = gaussian_cloud(200, mu, var, 1001 + static_cast<uint64_t>(2 * t));
        vals[static_cast<size_t>(t)] = kid(a, b, static_cast<uint64_t>(t));
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= kTrials;
    double var_hat = 0.0;
    for (double v : vals) var_hat += (v - mean) * (v - mean);
    var_hat /= (kTrials - 1);
    double sigma_mean = std::sqrt(var_hat / kTrials);
    CHECK(std::abs(mean) <= 3.0 * sigma_mean);
}

TEST_CASE("report deltas are recomputed from base and fine-tuned cells") {
    std::vector<MaskRunRow> runs = {
        {"center", false, {2.37, 4.9, 0.512}},
        {"center", true, {1.06, 8.6, 0.614}},
        {"half", false, {1.5, 6.0, 0.4}},
    };
    MetricReport rep = build_report({{"cfm_euler", 42.0, 3.1, 50, 120.0}},
                                    {{"cfm_euler", 0, 41.0}, {"cfm_euler", 1, 44.5}}, runs);
    REQUIRE(rep.masks.size() == 2);
    CHECK(rep.masks[0].mask_kind == "center");
    REQUIRE(rep.masks[0].base.has_value());
    REQUIRE(rep.masks[0].finetuned.has_value());
    CHECK(!rep.masks[1].finetuned.has_value());

    CHECK(delta_pct(2.37, 1.06) == doctest::Approx(-55.27).epsilon(1e-3));
    CHECK(delta_pct(4.9, 8.6) == doctest::Approx(75.51).epsilon(1e-3));
    CHECK(delta_pct(1.0, 1.0) == 0.0);
    CHECK_THROWS(delta_pct(0.0, 1.0));

    std::string path = "report_test.csv";
    write_report_csv(rep, path);
    std::string csv = slurp(path);
    CHECK(csv.find("method,class,mask,metric,value") == 0);
    CHECK(csv.find("cfm_euler,,,fid,42") != std::string::npos);
    CHECK(csv.find("cfm_euler,1,,fid,44.5") != std::string::npos);
    CHECK(csv.find(",,center,nmse_delta_pct,-55.27") != std::string::npos);
    CHECK(csv.find(",,half,psnr_finetuned,absent") != std::string::npos);
    CHECK(csv.find(",,half,ssim_delta_pct,absent") != std::string::npos);

    // identical base and fine-tuned rows give zero deltas
    MetricReport same = build_report({}, {}, {{"half", false, {1.0, 10.0, 0.5}},
                                             {"half", true, {1.0, 10.0, 0.5}}});
    write_report_csv(same, path);
    csv = slurp(path);
    CHECK(csv.find(",,half,nmse_delta_pct,0\n") != std::string::npos);
    CHECK(csv.find(",,half,psnr_delta_pct,0\n") != std::string::npos);
    std::remove(path.c_str());
}

TEST_CASE("report export is deterministic and text marks absent cells") {
    MetricReport rep = build_report({{"ddim", 50.0, 4.0, 100, 30.0}}, {},
                                    {{"irregular", true, {0.8, 12.0, 0.7}}});
    write_report_csv(rep, "rep_a.csv");
    write_report_csv(rep, "rep_b.csv");
    CHECK(slurp("rep_a.csv") == slurp("rep_b.csv"));
    std::remove("rep_a.csv");
    std::remove("rep_b.csv");

    std::string text = format_report_text(rep);
    CHECK(text.find("ddim") != std::string::npos);
    CHECK(text.find("irregular") != std::string::npos);
    CHECK(text.find("absent") != std::string::npos);

    CHECK_THROWS(build_report({}, {}, {{"center", false, {1, 1, 1}},
                                       {"center", false, {2, 2, 2}}}));
}
