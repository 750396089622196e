#pragma once

#include <cstdint>
#include <string>

#include "flowgen/model.hpp"
#include "flowgen/processes.hpp"

namespace flowgen {

// On-disk model snapshot: "FLOW" magic, format version, method tag, model
// config, named parameters as little-endian f32, optional optimizer moments,
// the training step, and the training rng state. Parameters round-trip at
// 32-bit precision.
struct Checkpoint {
    std::string method;  // "ddpm" | "cfm" | "meanflow"
    ModelSpec spec;
    ParamSet params;
    bool has_opt = false;
    AdamState opt;
    int64_t step = 0;
    std::string rng_state;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace flowgen
