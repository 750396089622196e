#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "flowgen/rng.hpp"
#include "flowgen/tensor.hpp"

namespace flowgen {

struct Dataset {
    Tensor images;            // [N, C, H, W] images or [N, 2] points
    std::vector<int> labels;  // [N], each in [0, num_classes)
    int num_classes = 0;
};

struct LabeledBatch {
    Tensor images;
    std::vector<int> labels;
};

// u8 pixel <-> model range [-1, 1]
double normalize_u8(uint8_t v);
uint8_t denormalize_u8(double v);

// dir holds the standard binary batches: data_batch_{1..5}.bin for "train",
// test_batch.bin for "test". Records are 1 label byte + 3072 RGB-plane bytes.
Dataset load_cifar10_binary(const std::string& dir, const std::string& split);

// name is "eight_gaussians" (radius-2 circle modes, sigma 0.1, 8 classes) or
// "two_moons" (two arcs, sigma 0.05, 2 classes). Points are [n, 2].
Dataset toy_2d(const std::string& name, int64_t n, Rng& rng);

std::vector<std::pair<double, double>> eight_gaussian_means();

// Grayscale size x size images, classes {filled square, circle, horizontal
// stripes, vertical stripes} with random placement and intensity.
Dataset tiny_shapes(int64_t n, int size, Rng& rng);

// One epoch: shuffled once from rng, split into ceil(n / batch_size) batches,
// short final batch kept.
std::vector<LabeledBatch> batches(const Dataset& ds, int batch_size, Rng& rng);

}  // namespace flowgen
