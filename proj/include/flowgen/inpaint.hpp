#pragma once

#include <string>
#include <utility>
#include <vector>

#include "flowgen/processes.hpp"
#include "flowgen/samplers.hpp"
#include "flowgen/tensor.hpp"

namespace flowgen {

// values: [H,W], 1 = known pixel, 0 = hole; broadcast over channels
struct Mask {
    Tensor values;
    std::string kind;  // center | random_bbox | irregular | half | custom (imported)
    double coverage = 1.0;
};

Mask make_mask_from(Tensor values, std::string kind);

// hole is the centered size/2 x size/2 square; rng unused, kept for the
// common generator signature
Mask gen_center(int image_size, Rng& rng);

// one solid rectangle, width/height ~ U{8..20}, fully inside the image
Mask gen_random_bbox(int image_size, Rng& rng);

// random-walk polyline strokes stamped with a round brush.
// rng draw order (frozen): n_strokes; per stroke: n_verts, width, x0, y0,
// theta0; per segment: step, dtheta.
struct Stroke {
    std::vector<std::pair<double, double>> pts;
    double radius;  // brush width / 2
};
std::vector<Stroke> sample_strokes(int image_size, Rng& rng);
Mask gen_irregular(int image_size, Rng& rng);

// one of the four image halves zeroed, side ~ U{left,right,top,bottom}
Mask gen_half(int image_size, Rng& rng);

Mask make_mask(const std::string& kind, int image_size, Rng& rng);

// replace strategy: z starts as m*x + (1-m)*eps; after every Euler step the
// known region is reset to x, so the output preserves it exactly
SampleResult inpaint_sample_core(const ModelFn& v_model, const Tensor& x, const Mask& m, const SamplerConfig& cfg,
                                 const Tensor& eps);
SampleResult inpaint_sample(const ModelSpec& spec, const ParamSet& params, const Tensor& x, const Mask& m,
                            const SamplerConfig& cfg);

// binary PGM (P5), 0 = hole, 255 = known; kind kept in a header comment
void write_mask_pgm(const Mask& m, const std::string& path);
Mask read_mask_pgm(const std::string& path);

}  // namespace flowgen
