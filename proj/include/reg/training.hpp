#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "reg/losses.hpp"
#include "reg/network.hpp"
#include "reg/rng.hpp"

namespace reg {

struct AdamParams {
    float learning_rate = 0.001f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct TrainConfig {
    float learning_rate = 0.001f;
    int64_t iterations = 2000;
    int64_t batch_size = 8;
    LossWeights weights;
    uint64_t seed = 0;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float adam_eps = 1e-8f;
    int64_t log_interval = 10;
    bool include_self_pairs = false;

    // Small-volume CPU regime.
    static TrainConfig desk();
    // Published full-scale hyperparameters (lr 0.001, batch 64, 10000 iters).
    static TrainConfig paper();

    AdamParams adam() const { return {learning_rate, beta1, beta2, adam_eps}; }
};

// First/second-moment buffers per parameter, kept in double so the update
// arithmetic rounds only once into the float parameters.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    int64_t t = 0;
};

// Bias-corrected Adam update; reads each tensor's gradient and mutates its
// values in place. Tensors must be leaves with gradients present.
void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamParams& opts);

// Uniform over ordered pairs (i, j), i != j unless include_self.
std::pair<size_t, size_t> sample_pair_indices(size_t n, Rng& rng, bool include_self = false);
std::pair<const Volume*, const Volume*> sample_pair(const std::vector<Volume>& dataset, Rng& rng,
                                                    bool include_self = false);

struct VolumePair {
    Volume fixed;
    Volume moving;
};

struct TrainResult {
    Network net;
    std::vector<LossReport> curve;  // one report per iteration
};

// Unsupervised training: every iteration samples a batch of image pairs,
// runs the variant's forward pass, evaluates the deep-supervision objective
// (or the single full-resolution loss) and applies one Adam step.
TrainResult train_network(const std::vector<Volume>& images, const ArchitectureConfig& arch,
                          const TrainConfig& config);
TrainResult train_network_pairs(const std::vector<VolumePair>& pairs,
                                const ArchitectureConfig& arch, const TrainConfig& config);

// Feedforward registration: eval-mode forward, finest head's field.
DisplacementField register_infer(Network& net, const Volume& fixed, const Volume& moving);

struct DirectOptions {
    float lambda = 0.05f;
    float learning_rate = 0.1f;
    int64_t iterations = 400;
    bool plain_gd = false;  // plain gradient descent instead of Adam
    bool tv_mean = false;
};

// Classical baseline: the full-resolution field itself is the only
// parameter of the registration objective.
std::pair<DisplacementField, std::vector<LossReport>> register_direct(const Volume& fixed,
                                                                      const Volume& moving,
                                                                      const DirectOptions& opts);

void write_loss_curve_csv(const std::string& path, const std::vector<LossReport>& curve);

}  // namespace reg
