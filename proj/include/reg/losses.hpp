#pragma once

#include <array>
#include <iosfwd>
#include <utility>

#include "reg/volume.hpp"
#include "reg/warp.hpp"

namespace reg {

// Deep-supervision level weights and the similarity/regularity trade-off.
// Level weight 1.0 belongs to the coarsest head.
struct LossWeights {
    float coarse = 1.0f;
    float mid = 0.6f;
    float fine = 0.3f;
    float lambda = 0.05f;
    bool tv_mean = false;  // normalize TV by voxel count instead of the raw sum

    void validate() const;
};

struct LevelLoss {
    int level = 0;  // halving steps from full resolution
    float ncc = 0.0f;
    float tv = 0.0f;
    float loss = 0.0f;  // -ncc + lambda*tv
    float weight = 1.0f;
};

struct LossReport {
    std::vector<LevelLoss> levels;  // coarse -> fine
    float total = 0.0f;
};

void write_loss_csv_header(std::ostream& os);
void write_loss_csv_rows(std::ostream& os, int64_t iteration, const LossReport& report);

// Zero-normalized cross-correlation, fused forward/backward.
// 5-d inputs are treated as a batch along dim 0 and the result is the mean
// of per-item NCC over the remaining axes; any other rank reduces over all
// elements as a single pair.
Tensor ncc(const Tensor& a, const Tensor& b);

// Plain value-only variant used by evaluation code.
float ncc_value(std::span<const float> a, std::span<const float> b);
float ncc_value(const Volume& a, const Volume& b);

// L1 total variation of a displacement field: sum over voxels and channels
// of |forward difference| along the three spatial axes (last index along an
// axis contributes 0). 5-d inputs average the per-item sums over the batch.
// mean_per_voxel divides each item's sum by its voxel count.
Tensor tv_l1(const Tensor& field, bool mean_per_voxel = false);

// -ncc(fixed, warp(moving, field)) + lambda * tv(field).
// Tensors are [B,1,D,H,W] images and [B,3,D,H,W] fields on the same grid.
Tensor registration_loss(const Tensor& fixed, const Tensor& moving, const Tensor& field,
                         float lambda, LevelLoss* detail = nullptr, bool tv_mean = false);
Tensor registration_loss(const Volume& fixed, const Volume& moving,
                         const DisplacementField& field, float lambda);

// Deep self-supervision objective over a 3-level pyramid. fields are
// (quarter, half, full) resolution; full-resolution dims must be divisible
// by 4 and each field must sit on its level's grid.
std::pair<Tensor, LossReport> multires_loss(const Tensor& fixed, const Tensor& moving,
                                            const std::array<Tensor, 3>& fields,
                                            const LossWeights& weights);
std::pair<Tensor, LossReport> multires_loss(const Volume& fixed, const Volume& moving,
                                            const std::array<DisplacementField, 3>& fields,
                                            const LossWeights& weights);

}  // namespace reg
