#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reg/volume.hpp"

namespace reg {

// Dice = 2|A∩B| / (|A|+|B|) over voxels whose rounded value equals `label`.
// Two empty sets score 1 (perfect trivial agreement).
float dice(const Volume& a, const Volume& b, int label);

// Mean Euclidean distance between two fields, in voxels.
float endpoint_error(const DisplacementField& field, const DisplacementField& truth);

Volume mean_volume(std::span<const Volume> volumes);

struct EvalPair {
    std::string id;
    Volume fixed;
    Volume moving;
    std::optional<Volume> fixed_labels;
    std::optional<Volume> moving_labels;
    std::optional<DisplacementField> truth;
};

struct MetricRow {
    std::string id;
    bool ok = true;
    std::string error;
    float ncc_before = 0.0f;
    float ncc_after = 0.0f;
    std::optional<float> dice_before, dice_after;
    std::optional<float> epe_before, epe_after;
};

using RegisterFn = std::function<DisplacementField(const Volume& fixed, const Volume& moving)>;

// Registers every pair, warps the moving image (labels via nearest
// neighbor), and reports before/after metrics. A failing pair is recorded
// in its row, not fatal. Label overlap uses label code 1.
std::vector<MetricRow> evaluate_pairs(const RegisterFn& registrar,
                                      const std::vector<EvalPair>& pairs);

// Rows in input order, then a `#summary` block with mean and std per column.
std::string metrics_csv(const std::vector<MetricRow>& rows);
void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);

}  // namespace reg
