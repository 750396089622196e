#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "flowgen/model.hpp"
#include "flowgen/ops.hpp"
#include "flowgen/processes.hpp"
#include "flowgen/record.hpp"
#include "flowgen/rng.hpp"

using namespace flowgen;

namespace {

Tensor randu(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v));
}

Tensor randn(Rng& rng, Shape shape) {
    return Tensor::from(shape, rng.normal_vec(shape_numel(shape)));
}

ModelFn zero_model() {
    return [](const Tensor& x, const Tensor&, const std::vector<int>&, const Tensor*) {
        return Tensor::zeros(x.shape());
    };
}

ModelSpec tiny_unet_spec() {
    ModelSpec s;
    s.arch = "unet";
    s.unet.image_channels = 1;
    s.unet.image_size = 8;
    s.unet.base_channels = 8;
    s.unet.channel_multipliers = {1, 2};
    s.unet.blocks_per_resolution = 1;
    s.unet.time_embed_dim = 16;
    s.unet.num_classes = 4;
    return s;
}

ModelSpec tiny_mlp_spec(bool meanflow) {
    ModelSpec s;
    s.arch = "mlp2d";
    s.mlp2d.hidden_dim = 16;
    s.mlp2d.hidden_layers = 2;
    s.mlp2d.time_embed_dim = 8;
    s.mlp2d.num_classes = 4;
    s.mlp2d.meanflow_mode = meanflow;
    return s;
}

// one optimizer step; returns the loss value
template <typename LossBuilder>
double train_step(Model& m, AdamState& st, double lr, LossBuilder&& build) {
    Record rec;
    ParamSet tp = tracked(m.params, rec);
    Tensor loss = build(tp);
    std::vector<Tensor> leaves;
    for (auto& [name, t] : tp.items) leaves.push_back(t);
    std::vector<Tensor> gs = grad(rec, loss, leaves);
    adamw_step(m.params, gs, st, lr, 0.0);
    return loss.item();
}

double window_mean(const std::vector<double>& xs, size_t from, size_t count) {
    double s = 0.0;
    for (size_t i = from; i < from + count; ++i) s += xs[i];
    return s / static_cast<double>(count);
}

}  // namespace

TEST_CASE("cosine schedule endpoints and fixture") {
    CHECK(cosine_alpha_bar(0, 200, 0.008) == 1.0);
    CHECK(cosine_alpha_bar(200, 200, 0.008) < 1e-30);
    // reference value computed independently at 50-digit precision
    CHECK(cosine_alpha_bar(100, 200, 0.008) == doctest::Approx(0.4938435904406377).epsilon(1e-13));
    CHECK(cosine_alpha_bar(50, 200, 0.008) == doctest::Approx(0.8470121613269047).epsilon(1e-13));
    CHECK(cosine_alpha_bar(150, 200, 0.008) == doctest::Approx(0.1442721023857357).epsilon(1e-13));
    CHECK_THROWS_AS(cosine_alpha_bar(-1, 200, 0.008), std::invalid_argument);
    CHECK_THROWS_AS(cosine_alpha_bar(201, 200, 0.008), std::invalid_argument);
}

TEST_CASE("schedule table: alpha_bar[0]=1, strictly decreasing, tail below 1e-5") {
    for (int T : {50, 200, 400}) {
        CAPTURE(T);
        CosineSchedule s = CosineSchedule::make(T);
        CHECK(s.alpha_bar[0] == 1.0);
        for (int t = 1; t <= T; ++t) CHECK(s.at(t) < s.at(t - 1));
        CHECK(s.at(T) <= 1e-5);
    }
}

TEST_CASE("ddpm_forward at t=0 returns x0 exactly") {
    Rng rng(1);
    CosineSchedule s = CosineSchedule::make();
    Tensor x0 = randu(rng, {2, 1, 4, 4});
    Tensor eps = randn(rng, {2, 1, 4, 4});
    Tensor xt = ddpm_forward(x0, 0, eps, s);
    CHECK(std::memcmp(xt.data(), x0.data(), static_cast<size_t>(x0.size()) * sizeof(double)) == 0);
}

TEST_CASE("ddpm_forward at t=T is the noise to within 1e-3") {
    Rng rng(2);
    CosineSchedule s = CosineSchedule::make();
    Tensor x0 = randu(rng, {2, 1, 4, 4});
    Tensor eps = randn(rng, {2, 1, 4, 4});
    Tensor xt = ddpm_forward(x0, s.T, eps, s);
    for (int64_t i = 0; i < xt.size(); ++i) CHECK(std::abs(xt.at(i) - eps.at(i)) < 1e-3);
}

TEST_CASE("ddpm_forward variance matches 1 - alpha_bar over 10k draws") {
    Rng rng(3);
    CosineSchedule s = CosineSchedule::make();
    int t = 120;
    double want = 1.0 - s.at(t);
    Tensor x0 = randu(rng, {1, 1, 4, 4});
    const int draws = 10000;
    int64_t n = x0.size();
    std::vector<double> sum(static_cast<size_t>(n), 0.0), sum2(static_cast<size_t>(n), 0.0);
    for (int d = 0; d < draws; ++d) {
        Tensor eps = randn(rng, {1, 1, 4, 4});
        Tensor xt = ddpm_forward(x0, t, eps, s);
        for (int64_t i = 0; i < n; ++i) {
            sum[static_cast<size_t>(i)] += xt.at(i);
            sum2[static_cast<size_t>(i)] += xt.at(i) * xt.at(i);
        }
    }
    double var_avg = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double mean = sum[static_cast<size_t>(i)] / draws;
        var_avg += sum2[static_cast<size_t>(i)] / draws - mean * mean;
    }
    var_avg /= static_cast<double>(n);
    CHECK(var_avg == doctest::Approx(want).epsilon(0.05));
}

TEST_CASE("ddpm loss against the zero and perfect oracles") {
    Rng rng(4);
    CosineSchedule s = CosineSchedule::make();
    Tensor x0 = randu(rng, {16, 1, 8, 8});
    Tensor eps = randn(rng, {16, 1, 8, 8});
    std::vector<int> y(16, 0);
    std::vector<int> t_steps(16);
    for (auto& t : t_steps) t = rng.uniform_int(1, s.T);

    Tensor zero_loss = ddpm_loss_core(zero_model(), x0, y, t_steps, eps, s);
    double eps_sq = 0.0;
    for (int64_t i = 0; i < eps.size(); ++i) eps_sq += eps.at(i) * eps.at(i);
    eps_sq /= static_cast<double>(eps.size());
    CHECK(zero_loss.item() == doctest::Approx(eps_sq).epsilon(1e-12));
    CHECK(zero_loss.item() == doctest::Approx(1.0).epsilon(0.15));

    ModelFn perfect = [&eps](const Tensor&, const Tensor&, const std::vector<int>&, const Tensor*) {
        return eps;
    };
    CHECK(ddpm_loss_core(perfect, x0, y, t_steps, eps, s).item() == 0.0);
}

TEST_CASE("ddpm loss falls when overfitting one image") {
    Model m = init_model(tiny_unet_spec(), 101);
    Rng rng(102);
    Tensor x0 = randu(rng, {1, 1, 8, 8}, -0.8, 0.8);
    std::vector<int> y = {1};
    CosineSchedule s = CosineSchedule::make();
    AdamState st = AdamState::init(m.params);
    std::vector<double> losses;
    for (int step = 0; step < 200; ++step)
        losses.push_back(train_step(m, st, 1e-3, [&](const ParamSet& tp) {
            return ddpm_loss(m.spec, tp, x0, y, s, 0.0, rng);
        }));
    CHECK(window_mean(losses, 180, 20) < window_mean(losses, 0, 20));
}

TEST_CASE("cfm_interpolate endpoints and midpoint") {
    Rng rng(5);
    Tensor x0 = randn(rng, {3, 2});
    Tensor x1 = randu(rng, {3, 2});
    Tensor at0 = cfm_interpolate(x0, x1, 0.0);
    Tensor at1 = cfm_interpolate(x0, x1, 1.0);
    Tensor mid = cfm_interpolate(x0, x1, 0.5);
    for (int64_t i = 0; i < x0.size(); ++i) {
        CHECK(at0.at(i) == x0.at(i));
        CHECK(at1.at(i) == x1.at(i));
        CHECK(mid.at(i) == doctest::Approx(0.5 * (x0.at(i) + x1.at(i))).epsilon(1e-15));
    }
    CHECK_THROWS_AS(cfm_interpolate(x0, Tensor::zeros({4, 2}), 0.5), std::invalid_argument);
}

TEST_CASE("cfm loss oracles and t-free target") {
    Rng rng(6);
    Tensor x1 = randu(rng, {8, 2});
    Tensor x0 = randn(rng, {8, 2});
    std::vector<int> y(8, 2);
    std::vector<double> t_lo(8, 0.1), t_hi(8, 0.9);

    Tensor target_a = cfm_target(x0, x1);
    Tensor target_b = cfm_target(x0, x1);
    CHECK(std::memcmp(target_a.data(), target_b.data(), static_cast<size_t>(target_a.size()) * sizeof(double)) ==
          0);

    ModelFn perfect = [&](const Tensor&, const Tensor&, const std::vector<int>&, const Tensor*) {
        return cfm_target(x0, x1);
    };
    CHECK(cfm_loss_core(perfect, x1, y, x0, t_lo).item() == 0.0);

    double want = 0.0;
    for (int64_t i = 0; i < x1.size(); ++i) {
        double d = x1.at(i) - x0.at(i);
        want += d * d;
    }
    want /= static_cast<double>(x1.size());
    double lo = cfm_loss_core(zero_model(), x1, y, x0, t_lo).item();
    double hi = cfm_loss_core(zero_model(), x1, y, x0, t_hi).item();
    CHECK(lo == doctest::Approx(want).epsilon(1e-12));
    CHECK(lo == hi);  // the target never depends on t
}

TEST_CASE("sample_rt bounds, degenerate fraction, reproducibility") {
    Rng rng(7);
    int degenerate = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        RtSample s = sample_rt(rng);
        CHECK(s.r >= 0.0);
        CHECK(s.r <= s.t);
        CHECK(s.t <= 1.0);
        if (s.r == s.t) ++degenerate;
    }
    double frac = static_cast<double>(degenerate) / draws;
    CHECK(frac == doctest::Approx(0.25).epsilon(0.08));  // 0.25 +- 0.02 absolute

    Rng a(99), b(99);
    for (int i = 0; i < 100; ++i) {
        RtSample sa = sample_rt(a), sb = sample_rt(b);
        CHECK(sa.r == sb.r);
        CHECK(sa.t == sb.t);
    }
}

TEST_CASE("meanflow target collapses to v when r == t") {
    Model m = init_model(tiny_mlp_spec(true), 8);
    Rng rng(9);
    Tensor z = randn(rng, {4, 2});
    Tensor v = randn(rng, {4, 2});
    Tensor t = Tensor::from({4}, {0.2, 0.4, 0.6, 0.8});
    std::vector<int> y(4, 1);
    Tensor target = meanflow_target_core(make_model_fn(m.spec, m.params), z, t, t, y, v);
    CHECK(std::memcmp(target.data(), v.data(), static_cast<size_t>(v.size()) * sizeof(double)) == 0);
}

TEST_CASE("meanflow target with a constant network equals v") {
    Rng rng(10);
    Tensor z = randn(rng, {3, 2});
    Tensor v = randn(rng, {3, 2});
    Tensor r = Tensor::from({3}, {0.1, 0.2, 0.3});
    Tensor t = Tensor::from({3}, {0.5, 0.6, 0.9});
    Tensor c = randu(rng, {3, 2});
    ModelFn constant = [&c](const Tensor&, const Tensor&, const std::vector<int>&, const Tensor*) { return c; };
    Tensor target = meanflow_target_core(constant, z, r, t, {0, 0, 0}, v);
    CHECK(std::memcmp(target.data(), v.data(), static_cast<size_t>(v.size()) * sizeof(double)) == 0);
}

TEST_CASE("meanflow target matches the hand-computed total derivative") {
    // u(z, r, t) = a z t + b r on a scalar z; along tangent (v, 0, 1) the
    // jvp is a (v t + z), so target = v - (t - r) * a * (v t + z)
    const double a = 1.3, b = -0.7;
    ModelFn u = [&](const Tensor& z, const Tensor& t, const std::vector<int>&, const Tensor* r) {
        Tensor t2 = reshape(t, {1, 1});
        Tensor r2 = reshape(*r, {1, 1});
        return add(smul(mul(z, t2), a), smul(r2, b));
    };
    double z0 = 0.37, v0 = -1.21, r0 = 0.25, t0 = 0.85;
    Tensor target = meanflow_target_core(u, Tensor::from({1, 1}, {z0}), Tensor::from({1}, {r0}),
                                         Tensor::from({1}, {t0}), {0}, Tensor::from({1, 1}, {v0}));
    double want = v0 - (t0 - r0) * a * (v0 * t0 + z0);
    CHECK(std::abs(target.at(0) - want) < 1e-8);
}

TEST_CASE("meanflow target is a constant even under tracked parameters") {
    Model m = init_model(tiny_mlp_spec(true), 11);
    Record rec;
    ParamSet tp = tracked(m.params, rec);
    Rng rng(12);
    Tensor z = randn(rng, {2, 2});
    Tensor v = randn(rng, {2, 2});
    Tensor r = Tensor::from({2}, {0.1, 0.3});
    Tensor t = Tensor::from({2}, {0.6, 0.7});
    Tensor target = meanflow_target_core(make_model_fn(m.spec, tp), z, r, t, {0, 1}, v);
    CHECK(!target.grad_tracked());
}

TEST_CASE("meanflow loss with degenerate intervals is plain flow matching") {
    Model m = init_model(tiny_mlp_spec(true), 13);
    Rng rng(14);
    Tensor x1 = randu(rng, {4, 2});
    Tensor eps = randn(rng, {4, 2});
    std::vector<int> y(4, 2);
    std::vector<RtSample> rt = {{0.2, 0.2}, {0.5, 0.5}, {0.7, 0.7}, {0.9, 0.9}};
    Tensor loss = meanflow_loss_core(make_model_fn(m.spec, m.params), x1, y, eps, rt);

    // same interpolant and the instantaneous target, assembled directly
    int B = 4;
    std::vector<double> zbuf(8);
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < 2; ++j)
            zbuf[static_cast<size_t>(i * 2 + j)] =
                (1.0 - rt[static_cast<size_t>(i)].t) * x1.at(i * 2 + j) + rt[static_cast<size_t>(i)].t * eps.at(i * 2 + j);
    Tensor z = Tensor::from({4, 2}, std::move(zbuf));
    Tensor v = cfm_target(x1, eps);
    Tensor t = Tensor::from({4}, {0.2, 0.5, 0.7, 0.9});
    Tensor pred = model_forward(m.spec, m.params, z, t, y, &t);
    CHECK(loss.item() == mse(pred, v).item());
}

TEST_CASE("meanflow loss vanishes at the point-mass optimum") {
    // for x1 identically p, u*(z, r, t) = (z - p) / t solves the identity
    const int B = 5;
    Rng rng(15);
    double p = 0.6;
    Tensor x1 = Tensor::full({B, 1}, p);
    Tensor eps = randn(rng, {B, 1});
    ModelFn ustar = [&](const Tensor& z, const Tensor& t, const std::vector<int>&, const Tensor*) {
        return div(sub(z, Tensor::full(z.shape(), p)), reshape(t, z.shape()));
    };
    std::vector<RtSample> rt;
    for (int i = 0; i < B; ++i) {
        double t = rng.uniform(0.3, 1.0);
        rt.push_back({rng.uniform(0.0, t), t});
    }
    Tensor loss = meanflow_loss_core(ustar, x1, std::vector<int>(B, 0), eps, rt);
    CHECK(loss.item() < 1e-20);
}

TEST_CASE("meanflow loss falls when overfitting four points") {
    Model m = init_model(tiny_mlp_spec(true), 103);
    Rng rng(104);
    Tensor x1 = Tensor::from({4, 2}, {1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0});
    std::vector<int> y = {0, 1, 2, 3};
    AdamState st = AdamState::init(m.params);
    std::vector<double> losses;
    for (int step = 0; step < 200; ++step)
        losses.push_back(train_step(m, st, 3e-4, [&](const ParamSet& tp) {
            return meanflow_loss(m.spec, tp, x1, y, 0.0, rng);
        }));
    for (double l : losses) CHECK(std::isfinite(l));
    CHECK(window_mean(losses, 180, 20) < window_mean(losses, 0, 20));
}

TEST_CASE("inpainting loss oracles over mask extremes") {
    Rng rng(16);
    const int B = 3, C = 1, H = 6, W = 6;
    Tensor x1 = randu(rng, {B, C, H, W});
    Tensor x0 = randn(rng, {B, C, H, W});
    std::vector<int> y(B, 0);
    std::vector<double> t = {0.2, 0.5, 0.8};

    double full_mse = 0.0;
    for (int64_t i = 0; i < x1.size(); ++i) {
        double d = x1.at(i) - x0.at(i);
        full_mse += d * d;
    }
    full_mse /= static_cast<double>(x1.size());

    // all-known mask: the network must see the clean image, hole term absent
    ModelFn sees_clean = [&](const Tensor& x, const Tensor&, const std::vector<int>&, const Tensor*) {
        double diff = 0.0;
        for (int64_t i = 0; i < x.size(); ++i) diff = std::max(diff, std::abs(x.at(i) - x1.at(i)));
        CHECK(diff == 0.0);
        return Tensor::zeros(x.shape());
    };
    Tensor ones_mask = Tensor::full({H, W}, 1.0);
    Tensor loss_ones = inpaint_loss_core(sees_clean, x1, y, x0, t, ones_mask, 0.7, 0.3);
    CHECK(loss_ones.item() == doctest::Approx(0.7 * full_mse).epsilon(1e-12));

    Tensor zeros_mask = Tensor::zeros({H, W});
    Tensor loss_zeros = inpaint_loss_core(zero_model(), x1, y, x0, t, zeros_mask, 0.7, 0.3);
    CHECK(loss_zeros.item() == doctest::Approx(full_mse).epsilon(1e-12));

    ModelFn perfect = [&](const Tensor&, const Tensor&, const std::vector<int>&, const Tensor*) {
        return cfm_target(x0, x1);
    };
    Rng mrng(17);
    std::vector<double> mv(H * W);
    for (auto& v : mv) v = mrng.bernoulli(0.5) ? 1.0 : 0.0;
    Tensor random_mask = Tensor::from({H, W}, std::move(mv));
    CHECK(inpaint_loss_core(perfect, x1, y, x0, t, random_mask, 0.7, 0.3).item() == 0.0);

    Tensor bad_mask = Tensor::full({H, W}, 0.5);
    CHECK_THROWS_AS(inpaint_loss_core(zero_model(), x1, y, x0, t, bad_mask, 0.7, 0.3), std::invalid_argument);
}

TEST_CASE("cfg dropout nulls the configured fraction") {
    Rng rng(18);
    std::vector<int> y(10000, 3);
    std::vector<int> dropped = apply_cfg_dropout(y, 0.10, rng);
    int nulls = 0;
    for (int cls : dropped)
        if (cls == kNullClass) ++nulls;
    double frac = nulls / 10000.0;
    CHECK(std::abs(frac - 0.10) < 0.01);

    std::vector<int> keep = apply_cfg_dropout(y, 0.0, rng);
    for (int cls : keep) CHECK(cls == 3);
}

TEST_CASE("losses are deterministic given the seed") {
    Model m = init_model(tiny_mlp_spec(false), 19);
    Rng r1(77), r2(77);
    Tensor x1 = Tensor::from({3, 2}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
    std::vector<int> y = {0, 1, 2};
    Tensor a = cfm_loss(m.spec, m.params, x1, y, 0.1, r1);
    Tensor b = cfm_loss(m.spec, m.params, x1, y, 0.1, r2);
    CHECK(a.item() == b.item());
}

TEST_CASE("adamw basics") {
    ParamSet p;
    p.items.emplace_back("w", Tensor::from({2}, {1.0, -2.0}));
    AdamState st = AdamState::init(p);

    SUBCASE("zero gradient and zero decay leave parameters alone") {
        adamw_step(p, {Tensor::zeros({2})}, st, 0.1, 0.0);
        CHECK(p.items[0].second.at(0) == 1.0);
        CHECK(p.items[0].second.at(1) == -2.0);
    }

    SUBCASE("one hand-checked step") {
        adamw_step(p, {Tensor::from({2}, {0.5, 0.5})}, st, 0.1, 0.0);
        // mhat = g, vhat = g^2 after one step, so the update is lr * g/(|g|+eps)
        CHECK(p.items[0].second.at(0) == doctest::Approx(0.9).epsilon(1e-6));
        CHECK(p.items[0].second.at(1) == doctest::Approx(-2.1).epsilon(1e-6));
    }

    SUBCASE("decoupled weight decay pulls toward zero") {
        adamw_step(p, {Tensor::zeros({2})}, st, 0.1, 0.01);
        CHECK(p.items[0].second.at(0) == doctest::Approx(1.0 - 0.1 * 0.01 * 1.0).epsilon(1e-12));
    }

    SUBCASE("descends w^2 from w=1") {
        double w = 1.0;
        for (int i = 0; i < 50; ++i) {
            Tensor g = Tensor::from({2}, {2.0 * p.items[0].second.at(0), 0.0});
            adamw_step(p, {g}, st, 0.05, 0.0);
        }
        w = p.items[0].second.at(0);
        CHECK(std::abs(w) < 1.0);
    }

    SUBCASE("rejects non-positive learning rate") {
        CHECK_THROWS_AS(adamw_step(p, {Tensor::zeros({2})}, st, 0.0, 0.0), std::invalid_argument);
    }
}

TEST_CASE("cosine learning rate endpoints and monotone decay") {
    CHECK(cosine_lr(0, 1000, 3e-4, 1e-4) == 3e-4);
    CHECK(cosine_lr(1000, 1000, 3e-4, 1e-4) == 1e-4);
    double prev = cosine_lr(0, 1000, 3e-4, 1e-4);
    for (int s = 1; s <= 1000; s += 50) {
        double cur = cosine_lr(s, 1000, 3e-4, 1e-4);
        CHECK(cur <= prev);
        prev = cur;
    }
    CHECK_THROWS_AS(cosine_lr(0, 0, 3e-4, 1e-4), std::invalid_argument);
}

TEST_CASE("training hyper rejects bad weights and probabilities") {
    TrainingHyper h;
    h.validate();
    TrainingHyper bad_w = h;
    bad_w.masked_weight = 0.2;
    CHECK_THROWS_AS(bad_w.validate(), std::invalid_argument);
    TrainingHyper bad_p = h;
    bad_p.cfg_dropout = 1.5;
    CHECK_THROWS_AS(bad_p.validate(), std::invalid_argument);
}
