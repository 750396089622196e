#include "flowgen/samplers.hpp"

#include <omp.h>

#include <cmath>

#include "flowgen/ops.hpp"
#include "flowgen/rng.hpp"

namespace flowgen {

void SamplerConfig::validate() const {
    require(method == "ddim" || method == "cfm_euler" || method == "meanflow_onestep",
            "sampler: unknown method '" + method + "'");
    require(steps >= 1, "sampler: steps must be >= 1");
    require(method != "meanflow_onestep" || steps == 1, "sampler: meanflow_onestep uses steps == 1");
    require(cfg_scale >= 0.0, "sampler: cfg_scale must be >= 0");
    require(cfg_scale == 0.0 || label != kNullClass, "sampler: guidance needs a class label");
    require(count >= 1, "sampler: count must be >= 1");
}

Shape sample_shape(const ModelSpec& spec, int count) {
    require(count >= 1, "sampler: count must be >= 1");
    if (spec.arch == "mlp2d") return {count, 2};
    return {count, spec.unet.image_channels, spec.unet.image_size, spec.unet.image_size};
}

Tensor cfg_velocity(const ModelFn& fn, const Tensor& x, const Tensor& t, int label, double w, const Tensor* r,
                    int64_t* evals) {
    require(w >= 0.0, "cfg: negative guidance scale");
    int B = x.dim(0);
    auto bump = [&](int64_t n) {
        if (evals) *evals += n;
    };
    if (w == 0.0) {
        bump(1);
        return fn(x, t, std::vector<int>(static_cast<size_t>(B), kNullClass), r);
    }
    require(label != kNullClass, "cfg: guidance needs a class label");
    if (w == 1.0) {
        bump(1);
        return fn(x, t, std::vector<int>(static_cast<size_t>(B), label), r);
    }
    bump(2);
    Tensor vy = fn(x, t, std::vector<int>(static_cast<size_t>(B), label), r);
    Tensor vn = fn(x, t, std::vector<int>(static_cast<size_t>(B), kNullClass), r);
    return add(vn, smul(sub(vy, vn), w));
}

std::vector<int> ddim_timesteps(int T, int N) {
    require(N >= 1, "ddim: steps must be >= 1");
    require(N <= T, "ddim: steps exceed schedule length");
    std::vector<int> ts(static_cast<size_t>(N) + 1);
    for (int i = 0; i <= N; ++i)
        ts[static_cast<size_t>(i)] =
            static_cast<int>(std::lround(static_cast<double>(T) * (N - i) / static_cast<double>(N)));
    return ts;
}

Tensor ddim_step(const Tensor& x_t, int t_from, int t_to, const Tensor& eps_hat, const CosineSchedule& sched) {
    require(same_shape(x_t.shape(), eps_hat.shape()), "ddim_step: shape mismatch");
    require(t_to < t_from, "ddim_step: must move toward t=0");
    double ab_f = sched.at(t_from), ab_t = sched.at(t_to);
    double sf = std::sqrt(ab_f), nf = std::sqrt(1.0 - ab_f);
    double st = std::sqrt(ab_t), nt = std::sqrt(1.0 - ab_t);
    std::vector<double> out(static_cast<size_t>(x_t.size()));
    for (int64_t i = 0; i < x_t.size(); ++i) {
        double x0_hat = (x_t.at(i) - nf * eps_hat.at(i)) / sf;
        out[static_cast<size_t>(i)] = st * x0_hat + nt * eps_hat.at(i);
    }
    Tensor next = Tensor::from(x_t.shape(), std::move(out));
    check_finite(next, "ddim_step");
    return next;
}

SampleResult ddim_sample_core(const ModelFn& eps_model, const CosineSchedule& sched, const SamplerConfig& cfg,
                              const Tensor& x_start) {
    cfg.validate();
    require(cfg.method == "ddim", "ddim_sample: config method is '" + cfg.method + "'");
    std::vector<int> ts = ddim_timesteps(sched.T, cfg.steps);
    int B = x_start.dim(0);
    Tensor x = x_start;
    int64_t evals = 0;
    for (int i = 0; i < cfg.steps; ++i) {
        int t_from = ts[static_cast<size_t>(i)], t_to = ts[static_cast<size_t>(i) + 1];
        Tensor tv = Tensor::full({B}, static_cast<double>(t_from) / sched.T);
        Tensor eps = cfg_velocity(eps_model, x, tv, cfg.label, cfg.cfg_scale, nullptr, &evals);
        x = ddim_step(x, t_from, t_to, eps, sched);
    }
    return {x, cfg.steps, evals};
}

SampleResult ddim_sample(const ModelSpec& spec, const ParamSet& params, const CosineSchedule& sched,
                         const SamplerConfig& cfg) {
    Rng rng(cfg.seed);
    Shape shape = sample_shape(spec, cfg.count);
    Tensor x_start = Tensor::from(shape, rng.normal_vec(shape_numel(shape)));
    return ddim_sample_core(make_model_fn(spec, params), sched, cfg, x_start);
}

SampleResult cfm_euler_sample_core(const ModelFn& v_model, const SamplerConfig& cfg, const Tensor& z0) {
    cfg.validate();
    require(cfg.method == "cfm_euler", "cfm_euler_sample: config method is '" + cfg.method + "'");
    int B = z0.dim(0);
    int N = cfg.steps;
    double h = 1.0 / static_cast<double>(N);
    Tensor z = z0;
    int64_t evals = 0;
    for (int i = 0; i < N; ++i) {
        Tensor tv = Tensor::full({B}, static_cast<double>(i) / static_cast<double>(N));
        Tensor v = cfg_velocity(v_model, z, tv, cfg.label, cfg.cfg_scale, nullptr, &evals);
        std::vector<double> out(static_cast<size_t>(z.size()));
        for (int64_t k = 0; k < z.size(); ++k) out[static_cast<size_t>(k)] = z.at(k) + h * v.at(k);
        z = Tensor::from(z.shape(), std::move(out));
        check_finite(z, "cfm_euler_sample");
    }
    return {z, N, evals};
}

SampleResult cfm_euler_sample(const ModelSpec& spec, const ParamSet& params, const SamplerConfig& cfg) {
    Rng rng(cfg.seed);
    Shape shape = sample_shape(spec, cfg.count);
    Tensor z0 = Tensor::from(shape, rng.normal_vec(shape_numel(shape)));
    return cfm_euler_sample_core(make_model_fn(spec, params), cfg, z0);
}

SampleResult meanflow_onestep_core(const ModelFn& u_model, const SamplerConfig& cfg, const Tensor& eps) {
    cfg.validate();
    require(cfg.method == "meanflow_onestep", "meanflow_onestep: config method is '" + cfg.method + "'");
    int B = eps.dim(0);
    Tensor r = Tensor::zeros({B});
    Tensor t = Tensor::full({B}, 1.0);
    int64_t evals = 0;
    Tensor u = cfg_velocity(u_model, eps, t, cfg.label, cfg.cfg_scale, &r, &evals);
    std::vector<double> out(static_cast<size_t>(eps.size()));
    for (int64_t k = 0; k < eps.size(); ++k) out[static_cast<size_t>(k)] = eps.at(k) - u.at(k);
    Tensor x = Tensor::from(eps.shape(), std::move(out));
    check_finite(x, "meanflow_onestep");
    return {x, 1, evals};
}

SampleResult meanflow_onestep(const ModelSpec& spec, const ParamSet& params, const SamplerConfig& cfg) {
    Rng rng(cfg.seed);
    Shape shape = sample_shape(spec, cfg.count);
    Tensor eps = Tensor::from(shape, rng.normal_vec(shape_numel(shape)));
    return meanflow_onestep_core(make_model_fn(spec, params), cfg, eps);
}

double throughput(const ModelSpec& spec, const ParamSet& params, const CosineSchedule& sched,
                  const SamplerConfig& cfg, int n_images) {
    require(n_images >= 1, "throughput: n_images must be >= 1");
    auto run = [&](uint64_t seed) {
        SamplerConfig c = cfg;
        c.seed = seed;
        if (c.method == "ddim") return ddim_sample(spec, params, sched, c);
        if (c.method == "cfm_euler") return cfm_euler_sample(spec, params, c);
        return meanflow_onestep(spec, params, c);
    };
    run(cfg.seed);  // warm up
    int done = 0;
    double t0 = omp_get_wtime();
    uint64_t seed = cfg.seed;
    while (done < n_images) {
        run(++seed);
        done += cfg.count;
    }
    double elapsed = omp_get_wtime() - t0;
    require(elapsed > 0.0, "throughput: timer resolution too coarse");
    return static_cast<double>(done) / elapsed;
}

}  // namespace flowgen
