#include "flowgen/processes.hpp"

#include <cmath>

#include "flowgen/ops.hpp"
#include "flowgen/record.hpp"

namespace flowgen {

namespace {

// per-sample convex combination a[i]*u + b[i]*w over leading-dim slices
Tensor per_sample_mix(const std::vector<double>& a, const Tensor& u, const std::vector<double>& b,
                      const Tensor& w) {
    require(same_shape(u.shape(), w.shape()), "mix: shape mismatch");
    int B = u.dim(0);
    require(static_cast<int>(a.size()) == B && static_cast<int>(b.size()) == B, "mix: coefficient count");
    int64_t stride = u.size() / B;
    std::vector<double> out(static_cast<size_t>(u.size()));
    for (int i = 0; i < B; ++i)
        for (int64_t j = 0; j < stride; ++j) {
            int64_t k = static_cast<int64_t>(i) * stride + j;
            out[static_cast<size_t>(k)] = a[static_cast<size_t>(i)] * u.at(k) + b[static_cast<size_t>(i)] * w.at(k);
        }
    return Tensor::from(u.shape(), std::move(out));
}

}  // namespace

// ---------------------------------------------------------------------------
// schedule
// ---------------------------------------------------------------------------

double cosine_alpha_bar(int t, int T, double s) {
    require(T >= 1, "schedule: T must be >= 1");
    require(t >= 0 && t <= T, "schedule: t=" + std::to_string(t) + " outside [0," + std::to_string(T) + "]");
    auto f = [&](double u) {
        double c = std::cos((u / T + s) / (1.0 + s) * M_PI / 2.0);
        return c * c;
    };
    return f(static_cast<double>(t)) / f(0.0);
}

CosineSchedule CosineSchedule::make(int T, double s) {
    CosineSchedule sched;
    sched.T = T;
    sched.s = s;
    sched.alpha_bar.resize(static_cast<size_t>(T) + 1);
    for (int t = 0; t <= T; ++t) sched.alpha_bar[static_cast<size_t>(t)] = cosine_alpha_bar(t, T, s);
    require(sched.alpha_bar[0] == 1.0, "schedule: alpha_bar[0] != 1");
    for (int t = 1; t <= T; ++t)
        require(sched.alpha_bar[static_cast<size_t>(t)] < sched.alpha_bar[static_cast<size_t>(t - 1)],
                "schedule: alpha_bar not strictly decreasing at t=" + std::to_string(t));
    require(sched.alpha_bar[static_cast<size_t>(T)] <= 1e-5, "schedule: alpha_bar[T] above 1e-5");
    return sched;
}

double CosineSchedule::at(int t) const {
    require(t >= 0 && t <= T, "schedule: t=" + std::to_string(t) + " outside [0," + std::to_string(T) + "]");
    return alpha_bar[static_cast<size_t>(t)];
}

void TrainingHyper::validate() const {
    require(cfg_dropout >= 0.0 && cfg_dropout <= 1.0, "hyper: cfg_dropout outside [0,1]");
    require(mask_prob >= 0.0 && mask_prob <= 1.0, "hyper: mask_prob outside [0,1]");
    require(std::abs(full_weight + masked_weight - 1.0) < 1e-12, "hyper: loss weights must sum to 1");
    require(full_weight >= 0.0 && masked_weight >= 0.0, "hyper: negative loss weight");
    require(lr > 0.0 && lr_final > 0.0, "hyper: learning rates must be positive");
    require(epochs >= 1 && batch_size >= 1, "hyper: epochs and batch_size must be >= 1");
}

// ---------------------------------------------------------------------------
// model adapter and dropout
// ---------------------------------------------------------------------------

ModelFn make_model_fn(const ModelSpec& spec, const ParamSet& params) {
    // copies are cheap (tensors share buffers) and keep the closure valid
    // past the caller's scope
    return [spec, params](const Tensor& x, const Tensor& t, const std::vector<int>& y, const Tensor* r) {
        return model_forward(spec, params, x, t, y, r);
    };
}

std::vector<int> apply_cfg_dropout(const std::vector<int>& y, double p, Rng& rng) {
    require(p >= 0.0 && p <= 1.0, "cfg dropout probability outside [0,1]");
    std::vector<int> out = y;
    for (auto& cls : out)
        if (rng.bernoulli(p)) cls = kNullClass;
    return out;
}

// ---------------------------------------------------------------------------
// forward processes
// ---------------------------------------------------------------------------

Tensor ddpm_forward(const Tensor& x0, int t, const Tensor& eps, const CosineSchedule& sched) {
    require(same_shape(x0.shape(), eps.shape()), "ddpm_forward: x0/eps shape mismatch");
    double ab = sched.at(t);
    double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    std::vector<double> out(static_cast<size_t>(x0.size()));
    for (int64_t i = 0; i < x0.size(); ++i) out[static_cast<size_t>(i)] = sa * x0.at(i) + sb * eps.at(i);
    return Tensor::from(x0.shape(), std::move(out));
}

Tensor cfm_interpolate(const Tensor& x0, const Tensor& x1, double t) {
    require(same_shape(x0.shape(), x1.shape()), "cfm_interpolate: shape mismatch");
    require(t >= 0.0 && t <= 1.0, "cfm_interpolate: t outside [0,1]");
    std::vector<double> out(static_cast<size_t>(x0.size()));
    for (int64_t i = 0; i < x0.size(); ++i) out[static_cast<size_t>(i)] = (1.0 - t) * x0.at(i) + t * x1.at(i);
    return Tensor::from(x0.shape(), std::move(out));
}

Tensor cfm_target(const Tensor& x0, const Tensor& x1) {
    require(same_shape(x0.shape(), x1.shape()), "cfm_target: shape mismatch");
    std::vector<double> out(static_cast<size_t>(x0.size()));
    for (int64_t i = 0; i < x0.size(); ++i) out[static_cast<size_t>(i)] = x1.at(i) - x0.at(i);
    return Tensor::from(x0.shape(), std::move(out));
}

RtSample sample_rt(Rng& rng) {
    if (rng.bernoulli(0.25)) {
        double t = rng.uniform();
        return {t, t};
    }
    double t = rng.uniform();
    double r = rng.uniform(0.0, t);
    return {r, t};
}

// ---------------------------------------------------------------------------
// loss cores
// ---------------------------------------------------------------------------

Tensor ddpm_loss_core(const ModelFn& eps_model, const Tensor& x0, const std::vector<int>& y,
                      const std::vector<int>& t_steps, const Tensor& eps, const CosineSchedule& sched) {
    int B = x0.dim(0);
    require(static_cast<int>(t_steps.size()) == B, "ddpm_loss: one t per sample");
    std::vector<double> sa(static_cast<size_t>(B)), sb(static_cast<size_t>(B)), tt(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) {
        double ab = sched.at(t_steps[static_cast<size_t>(i)]);
        sa[static_cast<size_t>(i)] = std::sqrt(ab);
        sb[static_cast<size_t>(i)] = std::sqrt(1.0 - ab);
        tt[static_cast<size_t>(i)] = static_cast<double>(t_steps[static_cast<size_t>(i)]) / sched.T;
    }
    Tensor x_t = per_sample_mix(sa, x0, sb, eps);
    Tensor pred = eps_model(x_t, Tensor::from({B}, std::move(tt)), y, nullptr);
    return mse(pred, eps);
}

Tensor cfm_loss_core(const ModelFn& v_model, const Tensor& x1, const std::vector<int>& y, const Tensor& x0,
                     const std::vector<double>& t) {
    int B = x1.dim(0);
    require(static_cast<int>(t.size()) == B, "cfm_loss: one t per sample");
    std::vector<double> a(static_cast<size_t>(B)), b(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) {
        require(t[static_cast<size_t>(i)] >= 0.0 && t[static_cast<size_t>(i)] <= 1.0, "cfm_loss: t outside [0,1]");
        a[static_cast<size_t>(i)] = 1.0 - t[static_cast<size_t>(i)];
        b[static_cast<size_t>(i)] = t[static_cast<size_t>(i)];
    }
    Tensor x_t = per_sample_mix(a, x0, b, x1);
    Tensor pred = v_model(x_t, Tensor::from({B}, t), y, nullptr);
    return mse(pred, cfm_target(x0, x1));
}

Tensor meanflow_target_core(const ModelFn& u_model, const Tensor& z, const Tensor& r, const Tensor& t,
                            const std::vector<int>& y, const Tensor& v) {
    int B = z.dim(0);
    require(r.rank() == 1 && t.rank() == 1 && r.dim(0) == B && t.dim(0) == B, "meanflow_target: r,t must be [B]");
    require(same_shape(z.shape(), v.shape()), "meanflow_target: z/v shape mismatch");
    for (int i = 0; i < B; ++i)
        require(r.at(i) <= t.at(i), "meanflow_target: r > t at sample " + std::to_string(i));

    auto f = [&](const std::vector<Tensor>& in) { return u_model(in[0], in[2], y, &in[1]); };
    auto [u_val, du] = jvp(f, {z, r, t}, {v, Tensor::zeros(r.shape()), Tensor::full(t.shape(), 1.0)});

    int64_t stride = z.size() / B;
    std::vector<double> out(static_cast<size_t>(z.size()));
    for (int i = 0; i < B; ++i) {
        double coef = t.at(i) - r.at(i);
        for (int64_t j = 0; j < stride; ++j) {
            int64_t k = static_cast<int64_t>(i) * stride + j;
            out[static_cast<size_t>(k)] = v.at(k) - coef * du.at(k);
        }
    }
    Tensor target = Tensor::from(z.shape(), std::move(out));
    check_finite(target, "meanflow_target");
    return target;
}

Tensor meanflow_loss_core(const ModelFn& u_model, const Tensor& x1, const std::vector<int>& y, const Tensor& eps,
                          const std::vector<RtSample>& rt) {
    int B = x1.dim(0);
    require(static_cast<int>(rt.size()) == B, "meanflow_loss: one (r,t) per sample");
    std::vector<double> a(static_cast<size_t>(B)), b(static_cast<size_t>(B)), rv(static_cast<size_t>(B)),
        tv(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) {
        const RtSample& s = rt[static_cast<size_t>(i)];
        require(s.r >= 0.0 && s.r <= s.t && s.t <= 1.0, "meanflow_loss: need 0 <= r <= t <= 1");
        a[static_cast<size_t>(i)] = 1.0 - s.t;  // data at t=0, noise at t=1
        b[static_cast<size_t>(i)] = s.t;
        rv[static_cast<size_t>(i)] = s.r;
        tv[static_cast<size_t>(i)] = s.t;
    }
    Tensor z = per_sample_mix(a, x1, b, eps);
    Tensor v = cfm_target(x1, eps);  // eps - x1
    Tensor r_t = Tensor::from({B}, std::move(rv));
    Tensor t_t = Tensor::from({B}, std::move(tv));
    Tensor target = meanflow_target_core(u_model, z, r_t, t_t, y, v);
    Tensor pred = u_model(z, t_t, y, &r_t);
    return mse(pred, target);
}

Tensor inpaint_loss_core(const ModelFn& v_model, const Tensor& x1, const std::vector<int>& y, const Tensor& x0,
                         const std::vector<double>& t, const Tensor& mask, double full_weight,
                         double masked_weight) {
    int B = x1.dim(0), C = x1.dim(1), H = x1.dim(2), W = x1.dim(3);
    require(mask.rank() == 2 && mask.dim(0) == H && mask.dim(1) == W, "inpaint_loss: mask must be [H,W]");
    int64_t hole_pixels = 0;
    for (int64_t i = 0; i < mask.size(); ++i) {
        require(mask.at(i) == 0.0 || mask.at(i) == 1.0, "inpaint_loss: non-binary mask");
        if (mask.at(i) == 0.0) ++hole_pixels;
    }

    std::vector<double> a(static_cast<size_t>(B)), b(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) {
        require(t[static_cast<size_t>(i)] >= 0.0 && t[static_cast<size_t>(i)] <= 1.0,
                "inpaint_loss: t outside [0,1]");
        a[static_cast<size_t>(i)] = 1.0 - t[static_cast<size_t>(i)];
        b[static_cast<size_t>(i)] = t[static_cast<size_t>(i)];
    }
    Tensor x_t = per_sample_mix(a, x0, b, x1);

    // known pixels pinned to the data, hole keeps the noisy interpolant
    std::vector<double> mixed(static_cast<size_t>(x1.size()));
    std::vector<double> hole(static_cast<size_t>(x1.size()));
    for (int bi = 0; bi < B; ++bi)
        for (int c = 0; c < C; ++c)
            for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p) {
                int64_t k = ((static_cast<int64_t>(bi) * C + c) * H * W) + p;
                double m = mask.at(p);
                mixed[static_cast<size_t>(k)] = m * x1.at(k) + (1.0 - m) * x_t.at(k);
                hole[static_cast<size_t>(k)] = 1.0 - m;
            }
    Tensor x_tilde = Tensor::from(x1.shape(), std::move(mixed));
    Tensor hole_t = Tensor::from(x1.shape(), std::move(hole));

    Tensor target = cfm_target(x0, x1);
    Tensor pred = v_model(x_tilde, Tensor::from({B}, t), y, nullptr);
    Tensor full = mse(pred, target);

    Tensor loss = smul(full, full_weight);
    if (hole_pixels > 0) {
        Tensor diff = mul(sub(pred, target), hole_t);
        Tensor masked = smul(sum(mul(diff, diff)), 1.0 / static_cast<double>(hole_pixels * B * C));
        loss = add(loss, smul(masked, masked_weight));
    }
    return loss;
}

// ---------------------------------------------------------------------------
// rng wrappers
// ---------------------------------------------------------------------------

Tensor ddpm_loss(const ModelSpec& spec, const ParamSet& params, const Tensor& x0, const std::vector<int>& y,
                 const CosineSchedule& sched, double cfg_dropout, Rng& rng) {
    int B = x0.dim(0);
    std::vector<int> t_steps(static_cast<size_t>(B));
    for (auto& t : t_steps) t = rng.uniform_int(1, sched.T);
    Tensor eps = Tensor::from(x0.shape(), rng.normal_vec(x0.size()));
    std::vector<int> y_drop = apply_cfg_dropout(y, cfg_dropout, rng);
    return ddpm_loss_core(make_model_fn(spec, params), x0, y_drop, t_steps, eps, sched);
}

Tensor cfm_loss(const ModelSpec& spec, const ParamSet& params, const Tensor& x1, const std::vector<int>& y,
                double cfg_dropout, Rng& rng) {
    int B = x1.dim(0);
    std::vector<double> t(static_cast<size_t>(B));
    for (auto& ti : t) ti = rng.uniform();
    Tensor x0 = Tensor::from(x1.shape(), rng.normal_vec(x1.size()));
    std::vector<int> y_drop = apply_cfg_dropout(y, cfg_dropout, rng);
    return cfm_loss_core(make_model_fn(spec, params), x1, y_drop, x0, t);
}

Tensor meanflow_loss(const ModelSpec& spec, const ParamSet& params, const Tensor& x1, const std::vector<int>& y,
                     double cfg_dropout, Rng& rng) {
    int B = x1.dim(0);
    std::vector<RtSample> rt(static_cast<size_t>(B));
    for (auto& s : rt) s = sample_rt(rng);
    Tensor eps = Tensor::from(x1.shape(), rng.normal_vec(x1.size()));
    std::vector<int> y_drop = apply_cfg_dropout(y, cfg_dropout, rng);
    return meanflow_loss_core(make_model_fn(spec, params), x1, y_drop, eps, rt);
}

Tensor inpaint_finetune_loss(const ModelSpec& spec, const ParamSet& params, const Tensor& x1,
                             const std::vector<int>& y, const Tensor& mask, const TrainingHyper& hyper, Rng& rng) {
    hyper.validate();
    int B = x1.dim(0);
    std::vector<double> t(static_cast<size_t>(B));
    for (auto& ti : t) ti = rng.uniform();
    Tensor x0 = Tensor::from(x1.shape(), rng.normal_vec(x1.size()));
    std::vector<int> y_drop = apply_cfg_dropout(y, hyper.cfg_dropout, rng);
    return inpaint_loss_core(make_model_fn(spec, params), x1, y_drop, x0, t, mask, hyper.full_weight,
                             hyper.masked_weight);
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

AdamState AdamState::init(const ParamSet& params) {
    AdamState st;
    st.m.reserve(params.items.size());
    st.v.reserve(params.items.size());
    for (const auto& [name, t] : params.items) {
        st.m.emplace_back(static_cast<size_t>(t.size()), 0.0);
        st.v.emplace_back(static_cast<size_t>(t.size()), 0.0);
    }
    return st;
}

void adamw_step(ParamSet& params, const std::vector<Tensor>& grads, AdamState& state, double lr, double wd,
                double beta1, double beta2, double eps) {
    require(lr > 0.0, "adamw: lr must be positive");
    require(grads.size() == params.items.size(), "adamw: gradient count mismatch");
    require(state.m.size() == params.items.size(), "adamw: state not initialized for these params");
    state.step += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.items.size(); ++i) {
        Tensor& p = params.items[i].second;
        const Tensor& g = grads[i];
        require(same_shape(p.shape(), g.shape()), "adamw: gradient shape mismatch for " + params.items[i].first);
        std::vector<double> next(static_cast<size_t>(p.size()));
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        for (int64_t j = 0; j < p.size(); ++j) {
            size_t k = static_cast<size_t>(j);
            m[k] = beta1 * m[k] + (1.0 - beta1) * g.at(j);
            v[k] = beta2 * v[k] + (1.0 - beta2) * g.at(j) * g.at(j);
            double mhat = m[k] / bc1;
            double vhat = v[k] / bc2;
            next[k] = p.at(j) - lr * (mhat / (std::sqrt(vhat) + eps) + wd * p.at(j));
        }
        p = Tensor::from(p.shape(), std::move(next));
    }
}

double cosine_lr(int64_t step, int64_t total, double lr0, double lr1) {
    require(total >= 1, "cosine_lr: total must be >= 1");
    require(step >= 0, "cosine_lr: negative step");
    if (step >= total) return lr1;
    double c = std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total));
    return lr1 + (lr0 - lr1) * (1.0 + c) / 2.0;
}

}  // namespace flowgen
