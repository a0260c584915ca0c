#include "reg/synth.hpp"

#include <algorithm>
#include <cmath>

#include "reg/rng.hpp"
#include "reg/warp.hpp"

namespace reg {

Volume make_base_texture(Dims dims, uint64_t seed, int octaves) {
    if (octaves < 1) throw ShapeError("make_base_texture: octaves must be >= 1");
    Rng rng(seed);
    Volume acc(dims, 0.0f);
    float weight = 1.0f;
    for (int octave = 0; octave < octaves; ++octave) {
        // octave 0 is the coarsest so low-resolution pyramid levels keep signal
        const int64_t cell = int64_t{1} << (octaves - octave);
        Dims grid;
        for (int axis = 0; axis < 3; ++axis) {
            grid[axis] = std::max<int64_t>(2, dims[axis] / cell);
        }
        Volume noise(grid);
        for (auto& v : noise.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        const Volume up = resize_trilinear(noise, dims);
        for (int64_t i = 0; i < acc.numel(); ++i) acc.data[i] += weight * up.data[i];
        weight *= 0.5f;
    }
    const auto [lo, hi] = std::minmax_element(acc.data.begin(), acc.data.end());
    const float span = *hi - *lo;
    if (span > 0.0f) {
        for (auto& v : acc.data) v = (v - *lo) / span;
    }
    return acc;
}

DisplacementField synth_field(Dims dims, const SynthParams& params) {
    for (int64_t e : dims) {
        if (e < 4 || e % 4 != 0) {
            throw ShapeError("synth_field: dims " + dims_str(dims) + " must be divisible by 4");
        }
    }
    if (params.num_blobs < 0 || params.max_amplitude < 0.0f || params.sigma_min <= 0.0f ||
        params.sigma_max < params.sigma_min) {
        throw ShapeError("synth_field: invalid params");
    }

    DisplacementField field(dims);
    Rng rng(params.seed);
    const int64_t V = field.voxels();
    for (int blob = 0; blob < params.num_blobs; ++blob) {
        const double cz = rng.uniform(0.0, static_cast<double>(dims[0]));
        const double cy = rng.uniform(0.0, static_cast<double>(dims[1]));
        const double cx = rng.uniform(0.0, static_cast<double>(dims[2]));
        double amp[3];
        for (double& a : amp) a = rng.uniform(-params.max_amplitude, params.max_amplitude);
        const double sigma = rng.uniform(params.sigma_min, params.sigma_max);
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

        int64_t i = 0;
        for (int64_t z = 0; z < dims[0]; ++z) {
            for (int64_t y = 0; y < dims[1]; ++y) {
                for (int64_t x = 0; x < dims[2]; ++x, ++i) {
                    const double dz = z - cz, dy = y - cy, dx = x - cx;
                    const float g =
                        static_cast<float>(std::exp(-(dz * dz + dy * dy + dx * dx) * inv2s2));
                    field.data[i] += static_cast<float>(amp[0]) * g;
                    field.data[V + i] += static_cast<float>(amp[1]) * g;
                    field.data[2 * V + i] += static_cast<float>(amp[2]) * g;
                }
            }
        }
    }

    float max_mag = 0.0f;
    for (int64_t i = 0; i < V; ++i) {
        const float mz = field.data[i], my = field.data[V + i], mx = field.data[2 * V + i];
        max_mag = std::max(max_mag, std::sqrt(mz * mz + my * my + mx * mx));
    }
    if (max_mag > params.max_amplitude && max_mag > 0.0f) {
        const float s = params.max_amplitude / max_mag;
        for (auto& v : field.data) v *= s;
    }
    return field;
}

SyntheticPair make_synthetic_pair(const Volume& base, const SynthParams& params) {
    SyntheticPair pair;
    pair.truth = synth_field(base.dims, params);
    pair.moving = base;
    pair.fixed = warp_trilinear(base, pair.truth);
    return pair;
}

}  // namespace reg
