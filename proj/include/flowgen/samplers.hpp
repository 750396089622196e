#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowgen/model.hpp"
#include "flowgen/processes.hpp"
#include "flowgen/tensor.hpp"

namespace flowgen {

struct SamplerConfig {
    std::string method = "cfm_euler";  // ddim | cfm_euler | meanflow_onestep
    int steps = 50;
    double cfg_scale = 0.0;  // w; 0 samples unconditionally
    int label = kNullClass;
    uint64_t seed = 0;
    int count = 1;  // images per call
    void validate() const;
};

struct SampleResult {
    Tensor images;
    int64_t nfe_steps = 0;   // integration steps
    int64_t model_evals = 0; // forward passes (2x per step when both cfg branches run)
};

// v_null + w * (v_label - v_null); single forward pass when w is 0 (returns
// the unconditional branch) or 1 (returns the conditional branch).
// evals, when given, is incremented by the number of forward passes.
Tensor cfg_velocity(const ModelFn& fn, const Tensor& x, const Tensor& t, int label, double w,
                    const Tensor* r = nullptr, int64_t* evals = nullptr);

// round(T*(N-i)/N) for i = 0..N: starts at T, ends at 0, strictly decreasing
std::vector<int> ddim_timesteps(int T, int N);

// x0_hat = (x_t - sqrt(1-ab_t) eps) / sqrt(ab_t), then re-noise to t_to
Tensor ddim_step(const Tensor& x_t, int t_from, int t_to, const Tensor& eps_hat, const CosineSchedule& sched);

SampleResult ddim_sample_core(const ModelFn& eps_model, const CosineSchedule& sched, const SamplerConfig& cfg,
                              const Tensor& x_start);
SampleResult ddim_sample(const ModelSpec& spec, const ParamSet& params, const CosineSchedule& sched,
                         const SamplerConfig& cfg);

// N Euler steps z += (1/N) v from t=0 (noise) to t=1 (data)
SampleResult cfm_euler_sample_core(const ModelFn& v_model, const SamplerConfig& cfg, const Tensor& z0);
SampleResult cfm_euler_sample(const ModelSpec& spec, const ParamSet& params, const SamplerConfig& cfg);

// x = eps - u(eps, r=0, t=1, y)
SampleResult meanflow_onestep_core(const ModelFn& u_model, const SamplerConfig& cfg, const Tensor& eps);
SampleResult meanflow_onestep(const ModelSpec& spec, const ParamSet& params, const SamplerConfig& cfg);

// wall-clock images per second over at least n_images
double throughput(const ModelSpec& spec, const ParamSet& params, const CosineSchedule& sched,
                  const SamplerConfig& cfg, int n_images);

// noise shape for one sampler call under this architecture
Shape sample_shape(const ModelSpec& spec, int count);

}  // namespace flowgen
