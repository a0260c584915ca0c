#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "reg/common.hpp"
#include "reg/tensor.hpp"

namespace reg {

using Dims = std::array<int64_t, 3>;  // (D, H, W)

inline int64_t dims_numel(const Dims& d) { return d[0] * d[1] * d[2]; }
std::string dims_str(const Dims& d);

// Dense scalar 3-d image, row-major with x fastest.
struct Volume {
    Dims dims{0, 0, 0};
    std::vector<float> data;

    Volume() = default;
    Volume(Dims d, float fill = 0.0f) : dims(d), data(dims_numel(d), fill) {}
    Volume(Dims d, std::vector<float> values);

    int64_t numel() const { return dims_numel(dims); }
    float& at(int64_t z, int64_t y, int64_t x) {
        return data[(z * dims[1] + y) * dims[2] + x];
    }
    float at(int64_t z, int64_t y, int64_t x) const {
        return data[(z * dims[1] + y) * dims[2] + x];
    }
};

// Dense displacement field on its own voxel grid; channel-major storage
// (dz plane, then dy, then dx), displacements in voxels of that grid.
struct DisplacementField {
    Dims dims{0, 0, 0};
    std::vector<float> data;  // 3 * D * H * W
    int level = 0;            // pyramid level tag, 0 = full resolution

    DisplacementField() = default;
    explicit DisplacementField(Dims d, int level_tag = 0)
        : dims(d), data(3 * dims_numel(d), 0.0f), level(level_tag) {}
    DisplacementField(Dims d, std::vector<float> values, int level_tag = 0);

    int64_t voxels() const { return dims_numel(dims); }
    float& at(int channel, int64_t z, int64_t y, int64_t x) {
        return data[((channel * dims[0] + z) * dims[1] + y) * dims[2] + x];
    }
    float at(int channel, int64_t z, int64_t y, int64_t x) const {
        return data[((channel * dims[0] + z) * dims[1] + y) * dims[2] + x];
    }
};

// Leaf-tensor views: [1,1,D,H,W] for volumes, [1,3,D,H,W] for fields.
Tensor to_tensor(const Volume& vol, bool requires_grad = false);
Tensor to_tensor(const DisplacementField& field, bool requires_grad = false);
Volume volume_from_tensor(const Tensor& t, int64_t batch_index = 0);
DisplacementField field_from_tensor(const Tensor& t, int64_t batch_index = 0, int level = 0);

}  // namespace reg
