#include "reg/volume.hpp"

#include <string>

namespace reg {

std::string dims_str(const Dims& d) {
    return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

Volume::Volume(Dims d, std::vector<float> values) : dims(d), data(std::move(values)) {
    if (static_cast<int64_t>(data.size()) != dims_numel(dims)) {
        throw ShapeError("volume data length " + std::to_string(data.size()) +
                         " does not match dims " + dims_str(dims));
    }
}

DisplacementField::DisplacementField(Dims d, std::vector<float> values, int level_tag)
    : dims(d), data(std::move(values)), level(level_tag) {
    if (static_cast<int64_t>(data.size()) != 3 * dims_numel(dims)) {
        throw ShapeError("field data length " + std::to_string(data.size()) +
                         " does not match 3 channels of dims " + dims_str(dims));
    }
}

Tensor to_tensor(const Volume& vol, bool requires_grad) {
    return Tensor::from_data({1, 1, vol.dims[0], vol.dims[1], vol.dims[2]}, vol.data,
                             requires_grad);
}

Tensor to_tensor(const DisplacementField& field, bool requires_grad) {
    return Tensor::from_data({1, 3, field.dims[0], field.dims[1], field.dims[2]}, field.data,
                             requires_grad);
}

Volume volume_from_tensor(const Tensor& t, int64_t batch_index) {
    if (t.ndim() != 5 || t.dim(1) != 1) {
        throw ShapeError("volume_from_tensor expects [B,1,D,H,W], got " + shape_str(t.shape()));
    }
    const Dims dims{t.dim(2), t.dim(3), t.dim(4)};
    const int64_t n = dims_numel(dims);
    const auto v = t.values();
    return Volume(dims, std::vector<float>(v.begin() + batch_index * n,
                                           v.begin() + (batch_index + 1) * n));
}

DisplacementField field_from_tensor(const Tensor& t, int64_t batch_index, int level) {
    if (t.ndim() != 5 || t.dim(1) != 3) {
        throw ShapeError("field_from_tensor expects [B,3,D,H,W], got " + shape_str(t.shape()));
    }
    const Dims dims{t.dim(2), t.dim(3), t.dim(4)};
    const int64_t n = 3 * dims_numel(dims);
    const auto v = t.values();
    return DisplacementField(dims,
                             std::vector<float>(v.begin() + batch_index * n,
                                                v.begin() + (batch_index + 1) * n),
                             level);
}

}  // namespace reg
