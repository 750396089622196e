#include "flowgen/model.hpp"

#include <cmath>
#include <cstdio>

namespace flowgen {

namespace {

std::string idx(const std::string& base, int i) { return base + std::to_string(i); }

int norm_groups(int channels) {
    int g = 8;
    while (channels % g) g /= 2;
    return g;
}

constexpr double kGnEps = 1e-5;

struct Init {
    ParamSet* out;
    Rng* rng;

    void conv(const std::string& name, int co, int ci, int k, double scale = 1.0) {
        double lim = scale * std::sqrt(1.0 / (static_cast<double>(ci) * k * k));
        std::vector<double> w(static_cast<size_t>(co) * ci * k * k);
        for (auto& v : w) v = rng->uniform(-lim, lim);
        out->items.emplace_back(name + ".w", Tensor::from({co, ci, k, k}, std::move(w)));
        out->items.emplace_back(name + ".b", Tensor::zeros({co}));
    }
    void lin(const std::string& name, int in, int o, double scale = 1.0) {
        double lim = scale * std::sqrt(1.0 / static_cast<double>(in));
        std::vector<double> w(static_cast<size_t>(in) * o);
        for (auto& v : w) v = rng->uniform(-lim, lim);
        out->items.emplace_back(name + ".w", Tensor::from({in, o}, std::move(w)));
        out->items.emplace_back(name + ".b", Tensor::zeros({o}));
    }
    void gn(const std::string& name, int c) {
        out->items.emplace_back(name + ".g", Tensor::full({c}, 1.0));
        out->items.emplace_back(name + ".b", Tensor::zeros({c}));
    }
    void table(const std::string& name, int rows, int cols) {
        std::vector<double> w(static_cast<size_t>(rows) * cols);
        for (auto& v : w) v = rng->uniform(-0.1, 0.1);
        out->items.emplace_back(name, Tensor::from({rows, cols}, std::move(w)));
    }
    void resblock(const std::string& pfx, int c, int embed_dim) {
        gn(pfx + ".gn1", c);
        conv(pfx + ".conv1", c, c, 3);
        lin(pfx + ".proj", embed_dim, c);
        gn(pfx + ".gn2", c);
        conv(pfx + ".conv2", c, c, 3);
    }
};

// The output layer starts near zero (scale 1e-3) rather than exactly zero:
// exact zeros would cut every upstream gradient on the first step.
constexpr double kOutScale = 1e-3;

void init_unet(const UNetConfig& c, ParamSet& p, Rng& rng) {
    Init in{&p, &rng};
    int levels = static_cast<int>(c.channel_multipliers.size());
    std::vector<int> ch(static_cast<size_t>(levels));
    for (int i = 0; i < levels; ++i) ch[static_cast<size_t>(i)] = c.base_channels * c.channel_multipliers[static_cast<size_t>(i)];

    in.lin("time.l1", c.time_embed_dim, c.time_embed_dim);
    in.lin("time.l2", c.time_embed_dim, c.time_embed_dim);
    in.table("class.table", c.num_classes + 1, c.time_embed_dim);

    in.conv("stem", ch[0], c.image_channels, 3);
    for (int i = 0; i < levels; ++i) {
        if (i > 0) in.conv(idx("enc", i) + ".down", ch[static_cast<size_t>(i)], ch[static_cast<size_t>(i - 1)], 3);
        for (int b = 0; b < c.blocks_per_resolution; ++b)
            in.resblock(idx("enc", i) + idx(".block", b), ch[static_cast<size_t>(i)], c.time_embed_dim);
    }
    for (int j = levels - 2; j >= 0; --j) {
        in.conv(idx("dec", j) + ".upconv", ch[static_cast<size_t>(j)], ch[static_cast<size_t>(j + 1)], 3);
        in.conv(idx("dec", j) + ".merge", ch[static_cast<size_t>(j)], 2 * ch[static_cast<size_t>(j)], 3);
        for (int b = 0; b < c.blocks_per_resolution; ++b)
            in.resblock(idx("dec", j) + idx(".block", b), ch[static_cast<size_t>(j)], c.time_embed_dim);
    }
    in.gn("tail.gn", ch[0]);
    in.conv("tail.conv", c.image_channels, ch[0], 3, kOutScale);
}

void init_mlp2d(const Mlp2dConfig& c, ParamSet& p, Rng& rng) {
    Init in{&p, &rng};
    in.lin("time.l1", c.time_embed_dim, c.time_embed_dim);
    in.lin("time.l2", c.time_embed_dim, c.time_embed_dim);
    in.table("class.table", c.num_classes + 1, c.time_embed_dim);
    in.lin("in", 2, c.hidden_dim);
    for (int l = 0; l < c.hidden_layers; ++l) {
        in.lin(idx("layer", l) + ".proj", c.time_embed_dim, c.hidden_dim);
        in.lin(idx("layer", l) + ".lin", c.hidden_dim, c.hidden_dim);
    }
    in.lin("out", c.hidden_dim, 2, kOutScale);
}

// time/class conditioning shared by both architectures: sinusoidal features
// of t (plus t-r in meanflow mode), a 2-layer MLP, then the class row.
Tensor embedding(const ModelSpec& spec, const ParamSet& p, const Tensor& t, const std::vector<int>& y,
                 const Tensor* r) {
    int dim = spec.arch == "unet" ? spec.unet.time_embed_dim : spec.mlp2d.time_embed_dim;
    int num_classes = spec.num_classes();
    Tensor e = time_embed(t, dim);
    if (spec.meanflow()) e = add(e, time_embed(sub(t, *r), dim));
    e = linear(silu(linear(e, p.at("time.l1.w"), p.at("time.l1.b"))), p.at("time.l2.w"), p.at("time.l2.b"));

    int B = t.dim(0);
    std::vector<double> onehot(static_cast<size_t>(B) * (num_classes + 1), 0.0);
    for (int i = 0; i < B; ++i) {
        int cls = y[static_cast<size_t>(i)];
        require(cls == kNullClass || (cls >= 0 && cls < num_classes),
                "forward: class id " + std::to_string(cls) + " out of range");
        int row = cls == kNullClass ? num_classes : cls;
        onehot[static_cast<size_t>(i) * (num_classes + 1) + row] = 1.0;
    }
    Tensor rows = matmul(Tensor::from({B, num_classes + 1}, std::move(onehot)), p.at("class.table"));
    return add(e, rows);
}

Tensor resblock(const ParamSet& p, const std::string& pfx, Tensor h, const Tensor& emb_act, int groups) {
    Tensor x = h;
    h = group_norm(h, p.at(pfx + ".gn1.g"), p.at(pfx + ".gn1.b"), groups, kGnEps);
    h = conv2d(silu(h), p.at(pfx + ".conv1.w"), p.at(pfx + ".conv1.b"), 1);
    h = channel_bias(h, linear(emb_act, p.at(pfx + ".proj.w"), p.at(pfx + ".proj.b")));
    h = group_norm(h, p.at(pfx + ".gn2.g"), p.at(pfx + ".gn2.b"), groups, kGnEps);
    h = conv2d(silu(h), p.at(pfx + ".conv2.w"), p.at(pfx + ".conv2.b"), 1);
    return add(x, h);
}

Tensor unet_forward(const UNetConfig& c, const ParamSet& p, const Tensor& x, const Tensor& emb) {
    int levels = static_cast<int>(c.channel_multipliers.size());
    Tensor emb_act = silu(emb);

    Tensor h = conv2d(x, p.at("stem.w"), p.at("stem.b"), 1);
    std::vector<Tensor> skips;
    for (int i = 0; i < levels; ++i) {
        if (i > 0)
            h = conv2d(h, p.at(idx("enc", i) + ".down.w"), p.at(idx("enc", i) + ".down.b"), 2);
        int groups = norm_groups(h.dim(1));
        for (int b = 0; b < c.blocks_per_resolution; ++b)
            h = resblock(p, idx("enc", i) + idx(".block", b), h, emb_act, groups);
        if (i < levels - 1) skips.push_back(h);
    }
    for (int j = levels - 2; j >= 0; --j) {
        h = upsample_nearest2x(h);
        h = conv2d(h, p.at(idx("dec", j) + ".upconv.w"), p.at(idx("dec", j) + ".upconv.b"), 1);
        h = concat_channels(h, skips[static_cast<size_t>(j)]);
        h = conv2d(h, p.at(idx("dec", j) + ".merge.w"), p.at(idx("dec", j) + ".merge.b"), 1);
        int groups = norm_groups(h.dim(1));
        for (int b = 0; b < c.blocks_per_resolution; ++b)
            h = resblock(p, idx("dec", j) + idx(".block", b), h, emb_act, groups);
    }
    h = group_norm(h, p.at("tail.gn.g"), p.at("tail.gn.b"), norm_groups(h.dim(1)), kGnEps);
    return conv2d(silu(h), p.at("tail.conv.w"), p.at("tail.conv.b"), 1);
}

Tensor mlp2d_forward(const Mlp2dConfig& c, const ParamSet& p, const Tensor& x, const Tensor& emb) {
    Tensor emb_act = silu(emb);
    Tensor h = linear(x, p.at("in.w"), p.at("in.b"));
    for (int l = 0; l < c.hidden_layers; ++l) {
        h = add(h, linear(emb_act, p.at(idx("layer", l) + ".proj.w"), p.at(idx("layer", l) + ".proj.b")));
        h = linear(silu(h), p.at(idx("layer", l) + ".lin.w"), p.at(idx("layer", l) + ".lin.b"));
    }
    return linear(silu(h), p.at("out.w"), p.at("out.b"));
}

}  // namespace

const Tensor& ParamSet::at(const std::string& name) const {
    for (const auto& [n, t] : items)
        if (n == name) return t;
    arg_error("params: no tensor named " + name);
}

void ParamSet::set(const std::string& name, Tensor value) {
    for (auto& [n, t] : items) {
        if (n == name) {
            require(same_shape(t.shape(), value.shape()),
                    "params: shape mismatch for " + name + ": " + shape_str(t.shape()) + " vs " +
                        shape_str(value.shape()));
            t = std::move(value);
            return;
        }
    }
    arg_error("params: no tensor named " + name);
}

bool ParamSet::has(const std::string& name) const {
    for (const auto& [n, t] : items)
        if (n == name) return true;
    return false;
}

int64_t param_count(const ParamSet& params) {
    int64_t n = 0;
    for (const auto& [name, t] : params.items) n += t.size();
    return n;
}

ParamSet tracked(const ParamSet& params, Record& rec) {
    ParamSet out;
    out.items.reserve(params.items.size());
    for (const auto& [name, t] : params.items) out.items.emplace_back(name, rec.watch(t));
    return out;
}

void ModelSpec::validate() const {
    require(arch == "unet" || arch == "mlp2d", "model: unknown arch '" + arch + "'");
    if (arch == "unet") {
        const UNetConfig& c = unet;
        require(c.image_channels >= 1 && c.image_size >= 1 && c.base_channels >= 1, "model: bad unet dimensions");
        require(!c.channel_multipliers.empty(), "model: channel_multipliers empty");
        for (int m : c.channel_multipliers) require(m >= 1, "model: bad channel multiplier");
        require(c.blocks_per_resolution >= 1, "model: blocks_per_resolution must be >= 1");
        require(c.time_embed_dim >= 2 && c.time_embed_dim % 2 == 0, "model: time_embed_dim must be even");
        require(c.num_classes >= 1, "model: num_classes must be >= 1");
        int down = 1 << (static_cast<int>(c.channel_multipliers.size()) - 1);
        require(c.image_size % down == 0, "model: image_size " + std::to_string(c.image_size) +
                                              " not divisible by " + std::to_string(down));
    } else {
        const Mlp2dConfig& c = mlp2d;
        require(c.hidden_dim >= 1 && c.hidden_layers >= 1, "model: bad mlp2d dimensions");
        require(c.time_embed_dim >= 2 && c.time_embed_dim % 2 == 0, "model: time_embed_dim must be even");
        require(c.num_classes >= 1, "model: num_classes must be >= 1");
    }
}

Model init_model(const ModelSpec& spec, uint64_t seed) {
    spec.validate();
    Model m;
    m.spec = spec;
    Rng rng(seed);
    if (spec.arch == "unet")
        init_unet(spec.unet, m.params, rng);
    else
        init_mlp2d(spec.mlp2d, m.params, rng);
    int64_t count = param_count(m.params);
    require(count < kParamBudget, "model: parameter budget exceeded: " + std::to_string(count) +
                                      " >= " + std::to_string(kParamBudget));
    return m;
}

Tensor model_forward(const ModelSpec& spec, const ParamSet& params, const Tensor& x, const Tensor& t,
                     const std::vector<int>& y, const Tensor* r) {
    int B = x.dim(0);
    require(t.rank() == 1 && t.dim(0) == B, "forward: t must be [B]");
    require(static_cast<int>(y.size()) == B, "forward: y must have one id per sample");
    for (int64_t i = 0; i < t.size(); ++i)
        require(t.at(i) >= 0.0 && t.at(i) <= 1.0, "forward: t out of [0,1]");
    if (spec.meanflow()) {
        require(r != nullptr, "forward: meanflow mode needs r");
        require(r->rank() == 1 && r->dim(0) == B, "forward: r must be [B]");
    } else {
        require(r == nullptr, "forward: r given but model is not in meanflow mode");
    }

    Tensor emb = embedding(spec, params, t, y, r);
    if (spec.arch == "unet") {
        const UNetConfig& c = spec.unet;
        require(x.rank() == 4 && x.dim(1) == c.image_channels && x.dim(2) == c.image_size &&
                    x.dim(3) == c.image_size,
                "forward: x shape " + shape_str(x.shape()) + " does not match configured image size");
        return unet_forward(c, params, x, emb);
    }
    require(x.rank() == 2 && x.dim(1) == 2, "forward: mlp2d expects x of shape [B,2]");
    return mlp2d_forward(spec.mlp2d, params, x, emb);
}

Tensor model_forward(const Model& model, const Tensor& x, double t, int y, std::optional<double> r) {
    int B = x.dim(0);
    Tensor tv = Tensor::full({B}, t);
    std::vector<int> yv(static_cast<size_t>(B), y);
    if (r.has_value()) {
        Tensor rv = Tensor::full({B}, *r);
        return model_forward(model.spec, model.params, x, tv, yv, &rv);
    }
    return model_forward(model.spec, model.params, x, tv, yv, nullptr);
}

}  // namespace flowgen
