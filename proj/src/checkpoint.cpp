#include "flowgen/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace flowgen {

namespace {

void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u8(std::ostream& os, uint8_t v) { put_bytes(os, &v, 1); }

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    put_bytes(os, b, 4);
}

void put_i32(std::ostream& os, int32_t v) { put_u32(os, static_cast<uint32_t>(v)); }

void put_i64(std::ostream& os, int64_t v) {
    auto u = static_cast<uint64_t>(v);
    put_u32(os, static_cast<uint32_t>(u));
    put_u32(os, static_cast<uint32_t>(u >> 32));
}

void put_f32(std::ostream& os, double v) {
    float f = static_cast<float>(v);
    uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(os, u);
}

void put_f64(std::ostream& os, double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    put_i64(os, static_cast<int64_t>(u));
}

void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<uint32_t>(s.size()));
    put_bytes(os, s.data(), s.size());
}

void take_bytes(std::istream& is, void* p, size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (is.gcount() != static_cast<std::streamsize>(n)) run_error("checkpoint: truncated file");
}

uint8_t take_u8(std::istream& is) {
    uint8_t v;
    take_bytes(is, &v, 1);
    return v;
}

uint32_t take_u32(std::istream& is) {
    unsigned char b[4];
    take_bytes(is, b, 4);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

int32_t take_i32(std::istream& is) { return static_cast<int32_t>(take_u32(is)); }

int64_t take_i64(std::istream& is) {
    uint64_t lo = take_u32(is);
    uint64_t hi = take_u32(is);
    return static_cast<int64_t>(lo | hi << 32);
}

double take_f32(std::istream& is) {
    uint32_t u = take_u32(is);
    float f;
    std::memcpy(&f, &u, 4);
    return static_cast<double>(f);
}

double take_f64(std::istream& is) {
    auto u = static_cast<uint64_t>(take_i64(is));
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

std::string take_str(std::istream& is) {
    uint32_t n = take_u32(is);
    require(n <= (1u << 20), "checkpoint: implausible string length");
    std::string s(n, '\0');
    take_bytes(is, s.data(), n);
    return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "checkpoint: cannot open '" + path + "' for writing");

    put_bytes(f, "FLOW", 4);
    put_u32(f, kCheckpointVersion);
    put_str(f, ck.method);

    put_str(f, ck.spec.arch);
    const UNetConfig& u = ck.spec.unet;
    put_i32(f, u.image_channels);
    put_i32(f, u.image_size);
    put_i32(f, u.base_channels);
    put_u32(f, static_cast<uint32_t>(u.channel_multipliers.size()));
    for (int m : u.channel_multipliers) put_i32(f, m);
    put_i32(f, u.blocks_per_resolution);
    put_i32(f, u.time_embed_dim);
    put_i32(f, u.num_classes);
    put_u8(f, u.meanflow_mode ? 1 : 0);
    const Mlp2dConfig& m = ck.spec.mlp2d;
    put_i32(f, m.hidden_dim);
    put_i32(f, m.hidden_layers);
    put_i32(f, m.time_embed_dim);
    put_i32(f, m.num_classes);
    put_u8(f, m.meanflow_mode ? 1 : 0);

    put_u32(f, static_cast<uint32_t>(ck.params.items.size()));
    for (const auto& [name, t] : ck.params.items) {
        put_str(f, name);
        put_u32(f, static_cast<uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) put_i32(f, t.dim(i));
        for (int64_t k = 0; k < t.size(); ++k) put_f32(f, t.at(k));
    }

    put_u8(f, ck.has_opt ? 1 : 0);
    if (ck.has_opt) {
        require(ck.opt.m.size() == ck.params.items.size() &&
                    ck.opt.v.size() == ck.params.items.size(),
                "checkpoint: optimizer state does not match parameters");
        put_i64(f, ck.opt.step);
        for (const auto* moments : {&ck.opt.m, &ck.opt.v})
            for (const auto& vec : *moments) {
                put_u32(f, static_cast<uint32_t>(vec.size()));
                for (double x : vec) put_f64(f, x);
            }
    }

    put_i64(f, ck.step);
    put_str(f, ck.rng_state);
    require(f.good(), "checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "checkpoint: cannot open '" + path + "'");

    char magic[4];
    take_bytes(f, magic, 4);
    if (std::memcmp(magic, "FLOW", 4) != 0) run_error("checkpoint: '" + path + "' is not a checkpoint");
    uint32_t version = take_u32(f);
    if (version != kCheckpointVersion)
        run_error("checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ck;
    ck.method = take_str(f);

    ck.spec.arch = take_str(f);
    UNetConfig& u = ck.spec.unet;
    u.image_channels = take_i32(f);
    u.image_size = take_i32(f);
    u.base_channels = take_i32(f);
    uint32_t n_mults = take_u32(f);
    require(n_mults <= 16, "checkpoint: implausible multiplier count");
    u.channel_multipliers.assign(n_mults, 0);
    for (uint32_t i = 0; i < n_mults; ++i) u.channel_multipliers[i] = take_i32(f);
    u.blocks_per_resolution = take_i32(f);
    u.time_embed_dim = take_i32(f);
    u.num_classes = take_i32(f);
    u.meanflow_mode = take_u8(f) != 0;
    Mlp2dConfig& m = ck.spec.mlp2d;
    m.hidden_dim = take_i32(f);
    m.hidden_layers = take_i32(f);
    m.time_embed_dim = take_i32(f);
    m.num_classes = take_i32(f);
    m.meanflow_mode = take_u8(f) != 0;
    ck.spec.validate();

    uint32_t n_params = take_u32(f);
    for (uint32_t i = 0; i < n_params; ++i) {
        std::string name = take_str(f);
        uint32_t rank = take_u32(f);
        require(rank <= 8, "checkpoint: implausible tensor rank");
        Shape shape(rank);
        for (uint32_t k = 0; k < rank; ++k) shape[k] = take_i32(f);
        int64_t numel = shape_numel(shape);
        require(numel >= 0 && numel <= kParamBudget, "checkpoint: implausible tensor size");
        std::vector<double> data(static_cast<size_t>(numel));
        for (double& x : data) x = take_f32(f);
        ck.params.items.emplace_back(std::move(name), Tensor::from(shape, std::move(data)));
    }

    ck.has_opt = take_u8(f) != 0;
    if (ck.has_opt) {
        ck.opt.step = take_i64(f);
        for (auto* moments : {&ck.opt.m, &ck.opt.v}) {
            moments->resize(n_params);
            for (uint32_t i = 0; i < n_params; ++i) {
                uint32_t len = take_u32(f);
                require(static_cast<int64_t>(len) == ck.params.items[i].second.size(),
                        "checkpoint: optimizer state does not match parameters");
                (*moments)[i].resize(len);
                for (double& x : (*moments)[i]) x = take_f64(f);
            }
        }
    }

    ck.step = take_i64(f);
    ck.rng_state = take_str(f);
    return ck;
}

}  // namespace flowgen
