#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flowgen/model.hpp"
#include "flowgen/rng.hpp"
#include "flowgen/tensor.hpp"

namespace flowgen {

// ---------------------------------------------------------------------------
// noise schedule
// ---------------------------------------------------------------------------

double cosine_alpha_bar(int t, int T, double s);

struct CosineSchedule {
    int T = 200;
    double s = 0.008;
    std::vector<double> alpha_bar;  // T+1 values, alpha_bar[0] == 1

    static CosineSchedule make(int T = 200, double s = 0.008);
    double at(int t) const;
};

struct TrainingHyper {
    double cfg_dropout = 0.10;  // 0.15 for inpainting fine-tune
    double mask_prob = 0.5;
    double full_weight = 0.7;
    double masked_weight = 0.3;
    double lr = 3e-4;
    double lr_final = 1e-4;
    double weight_decay = 0.01;
    int epochs = 200;
    int batch_size = 128;

    void validate() const;
};

struct RtSample {
    double r = 0.0;
    double t = 0.0;
};

// ---------------------------------------------------------------------------
// networks as functions: x, t[B], y, optional r[B] -> tensor like x
// ---------------------------------------------------------------------------

using ModelFn = std::function<Tensor(const Tensor& x, const Tensor& t, const std::vector<int>& y, const Tensor* r)>;

ModelFn make_model_fn(const ModelSpec& spec, const ParamSet& params);

// Replaces each label with kNullClass at probability p (one draw per sample).
std::vector<int> apply_cfg_dropout(const std::vector<int>& y, double p, Rng& rng);

// ---------------------------------------------------------------------------
// forward processes
// ---------------------------------------------------------------------------

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
Tensor ddpm_forward(const Tensor& x0, int t, const Tensor& eps, const CosineSchedule& sched);

// x_t = (1-t) x0 + t x1, x0 noise, x1 data
Tensor cfm_interpolate(const Tensor& x0, const Tensor& x1, double t);

// constant velocity target x1 - x0 (no t dependence)
Tensor cfm_target(const Tensor& x0, const Tensor& x1);

// with probability 0.25 r == t, otherwise t ~ U(0,1), r ~ U(0,t)
RtSample sample_rt(Rng& rng);

// ---------------------------------------------------------------------------
// losses, deterministic cores
//
// The **_core functions take every random choice as an argument so oracles
// can pin them; the rng wrappers below draw (in this order) per-sample times,
// then the noise batch, then CFG dropout, and call the core.
// ---------------------------------------------------------------------------

Tensor ddpm_loss_core(const ModelFn& eps_model, const Tensor& x0, const std::vector<int>& y,
                      const std::vector<int>& t_steps, const Tensor& eps, const CosineSchedule& sched);

Tensor cfm_loss_core(const ModelFn& v_model, const Tensor& x1, const std::vector<int>& y, const Tensor& x0,
                     const std::vector<double>& t);

// average-velocity target: v - (t-r) * (v . d_z u + d_t u), computed
// with a single jvp and returned as a constant (no gradient flows through it).
Tensor meanflow_target_core(const ModelFn& u_model, const Tensor& z, const Tensor& r, const Tensor& t,
                            const std::vector<int>& y, const Tensor& v);

// z_t = (1-t) x1 + t eps with v = eps - x1 (data sits at t=0 so that
// one-step sampling x = eps - u(eps, 0, 1) is exact)
Tensor meanflow_loss_core(const ModelFn& u_model, const Tensor& x1, const std::vector<int>& y, const Tensor& eps,
                          const std::vector<RtSample>& rt);

// mask: [H,W], 1 = known pixel, 0 = hole; full_weight * L_full +
// masked_weight * L_masked with L_masked averaged over the hole only
Tensor inpaint_loss_core(const ModelFn& v_model, const Tensor& x1, const std::vector<int>& y, const Tensor& x0,
                         const std::vector<double>& t, const Tensor& mask, double full_weight,
                         double masked_weight);

// ---------------------------------------------------------------------------
// losses, rng wrappers
// ---------------------------------------------------------------------------

Tensor ddpm_loss(const ModelSpec& spec, const ParamSet& params, const Tensor& x0, const std::vector<int>& y,
                 const CosineSchedule& sched, double cfg_dropout, Rng& rng);

Tensor cfm_loss(const ModelSpec& spec, const ParamSet& params, const Tensor& x1, const std::vector<int>& y,
                double cfg_dropout, Rng& rng);

Tensor meanflow_loss(const ModelSpec& spec, const ParamSet& params, const Tensor& x1, const std::vector<int>& y,
                     double cfg_dropout, Rng& rng);

Tensor inpaint_finetune_loss(const ModelSpec& spec, const ParamSet& params, const Tensor& x1,
                             const std::vector<int>& y, const Tensor& mask, const TrainingHyper& hyper, Rng& rng);

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    int64_t step = 0;

    static AdamState init(const ParamSet& params);
};

void adamw_step(ParamSet& params, const std::vector<Tensor>& grads, AdamState& state, double lr, double wd,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

double cosine_lr(int64_t step, int64_t total, double lr0, double lr1);

}  // namespace flowgen
