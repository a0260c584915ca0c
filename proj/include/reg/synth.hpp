#pragma once

#include "reg/volume.hpp"

namespace reg {

// Ground-truth deformation generator settings.
struct SynthParams {
    int num_blobs = 6;           // K Gaussian bumps
    float max_amplitude = 3.0f;  // voxel cap on |d(v)|
    float sigma_min = 3.0f;
    float sigma_max = 8.0f;
    uint64_t seed = 0;
    int texture_octaves = 3;
};

// Band-limited multi-scale random texture, normalized to [0,1].
Volume make_base_texture(Dims dims, uint64_t seed, int octaves = 3);

// Sum of K Gaussian bumps with random centers, per-axis amplitudes and
// widths, rescaled so max ||d(v)|| <= max_amplitude.
DisplacementField synth_field(Dims dims, const SynthParams& params);

struct SyntheticPair {
    Volume fixed;
    Volume moving;
    DisplacementField truth;
};

// moving = base, fixed = warp(base, truth): the field mapping moving onto
// fixed under this engine's warping convention is exactly `truth`.
SyntheticPair make_synthetic_pair(const Volume& base, const SynthParams& params);

}  // namespace reg
