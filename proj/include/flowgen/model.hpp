#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flowgen/ops.hpp"
#include "flowgen/record.hpp"
#include "flowgen/rng.hpp"
#include "flowgen/tensor.hpp"

namespace flowgen {

inline constexpr int kNullClass = -1;  // selects the null embedding row (classifier-free guidance)
inline constexpr int64_t kParamBudget = 1'500'000;

// Ordered named parameter tensors. Order is fixed at init and defines the
// checkpoint layout and the gradient/optimizer-state ordering.
struct ParamSet {
    std::vector<std::pair<std::string, Tensor>> items;

    const Tensor& at(const std::string& name) const;
    void set(const std::string& name, Tensor value);
    bool has(const std::string& name) const;
    int64_t size() const { return static_cast<int64_t>(items.size()); }
};

int64_t param_count(const ParamSet& params);

// Every parameter watched on `rec` so grad() can reach it.
ParamSet tracked(const ParamSet& params, Record& rec);

// Image U-Net: conv stem, per-resolution residual blocks conditioned on a
// time/class embedding, strided-conv downsampling, nearest-upsample + conv
// decoding with channel-concat skips, group-norm/SiLU/conv output head.
struct UNetConfig {
    int image_channels = 3;
    int image_size = 32;
    int base_channels = 32;
    std::vector<int> channel_multipliers = {1, 2, 2};
    int blocks_per_resolution = 2;
    int time_embed_dim = 128;
    int num_classes = 10;
    bool meanflow_mode = false;  // adds a second time input r
};

// Small conditioned MLP for B×2 point data; same time/class embedding scheme.
struct Mlp2dConfig {
    int hidden_dim = 64;
    int hidden_layers = 3;
    int time_embed_dim = 64;
    int num_classes = 8;
    bool meanflow_mode = false;
};

struct ModelSpec {
    std::string arch = "unet";  // "unet" | "mlp2d"
    UNetConfig unet;
    Mlp2dConfig mlp2d;

    bool meanflow() const { return arch == "unet" ? unet.meanflow_mode : mlp2d.meanflow_mode; }
    int num_classes() const { return arch == "unet" ? unet.num_classes : mlp2d.num_classes; }
    void validate() const;
};

struct Model {
    ModelSpec spec;
    ParamSet params;
};

// Deterministic init from seed; throws if the parameter count reaches the
// budget, naming the count.
Model init_model(const ModelSpec& spec, uint64_t seed);

// x: [B,C,H,W] (unet) or [B,2] (mlp2d); t: [B] in [0,1]; y: per-sample class
// id or kNullClass; r: [B], present iff meanflow mode. Output shape == x.
Tensor model_forward(const ModelSpec& spec, const ParamSet& params, const Tensor& x, const Tensor& t,
                     const std::vector<int>& y, const Tensor* r = nullptr);

// Scalar-condition convenience: broadcasts t, y, r over the batch.
Tensor model_forward(const Model& model, const Tensor& x, double t, int y,
                     std::optional<double> r = std::nullopt);

}  // namespace flowgen
