#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "reg/nn_ops.hpp"
#include "reg/volume.hpp"

namespace reg {

enum class Variant { multires, no_pool, coarse_interp };

Variant variant_from_string(const std::string& name);
std::string variant_to_string(Variant v);

struct ArchitectureConfig {
    Variant variant = Variant::multires;
    Dims input_dims{32, 48, 48};

    void validate() const;
    bool operator==(const ArchitectureConfig&) const = default;
};

struct Parameter {
    std::string name;
    Tensor tensor;  // leaf, requires_grad
};

// Fully convolutional registration network. Three variants share the
// encoder (conv 32/64/128 channels); multires adds the deconv decoder with
// three zero-initialized regression heads, no_pool keeps full resolution
// throughout, coarse_interp upsamples the quarter-resolution head by fixed
// trilinear interpolation.
class Network {
public:
    Network() = default;

    static Network build(const ArchitectureConfig& config, uint64_t seed);

    // Returns displacement-field tensors ordered coarse -> fine (multires)
    // or a single full-resolution field (other variants). Train mode keeps
    // the autodiff graph alive and updates BN running statistics; eval mode
    // uses running statistics and retains no graph.
    std::vector<Tensor> forward(const Tensor& fixed, const Tensor& moving, bool training);

    const ArchitectureConfig& config() const { return config_; }
    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    int64_t parameter_count() const;

    // When `expected` is given, the file's variant and input dims must match
    // it exactly.
    void serialize(std::ostream& os) const;
    static Network deserialize(std::istream& is, const ArchitectureConfig* expected = nullptr);
    void save(const std::string& path) const;
    static Network load(const std::string& path, const ArchitectureConfig* expected = nullptr);

private:
    ArchitectureConfig config_;
    std::vector<Parameter> params_;
    std::vector<std::pair<std::string, BatchNormState>> bn_states_;

    const Tensor& p(const std::string& name) const;
    BatchNormState& bn(const std::string& name);
    Tensor conv_block(const Tensor& x, const std::string& conv_name, const std::string& bn_name,
                      bool training);
    Tensor deconv_block(const Tensor& x, const std::string& deconv_name,
                        const std::string& bn_name, bool training);

    friend struct NetworkBuilder;
};

}  // namespace reg
