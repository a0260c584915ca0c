#include "reg/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "reg/io_util.hpp"
#include "reg/rng.hpp"
#include "reg/warp.hpp"

namespace reg {

namespace {

constexpr char kMagic[4] = {'R', 'N', 'E', 'T'};
constexpr uint8_t kFormatVersion = 1;

std::vector<float> normal_init(Rng& rng, int64_t count, double stddev) {
    std::vector<float> data(count);
    for (auto& v : data) v = static_cast<float>(rng.normal(0.0, stddev));
    return data;
}

}  // namespace

Variant variant_from_string(const std::string& name) {
    if (name == "multires") return Variant::multires;
    if (name == "nopool" || name == "no_pool") return Variant::no_pool;
    if (name == "coarse" || name == "coarse_interp") return Variant::coarse_interp;
    throw ShapeError("unknown architecture variant '" + name +
                     "' (expected multires, nopool, or coarse)");
}

std::string variant_to_string(Variant v) {
    switch (v) {
        case Variant::multires: return "multires";
        case Variant::no_pool: return "no_pool";
        case Variant::coarse_interp: return "coarse_interp";
    }
    return "?";
}

void ArchitectureConfig::validate() const {
    for (int64_t e : input_dims) {
        if (variant == Variant::no_pool) {
            if (e < 3) {
                throw ShapeError("no_pool variant needs dims >= 3, got " + dims_str(input_dims));
            }
        } else if (e % 4 != 0 || e < 4) {
            throw ShapeError(variant_to_string(variant) + " variant needs dims divisible by 4, got " +
                             dims_str(input_dims));
        }
    }
}

struct NetworkBuilder {
    Network& net;
    Rng rng;

    void conv(const std::string& name, int64_t cout, int64_t cin, bool zero_init) {
        const int64_t k3 = 27;
        Shape wshape{cout, cin, 3, 3, 3};
        std::vector<float> w = zero_init ? std::vector<float>(cout * cin * k3, 0.0f)
                                         : normal_init(rng, cout * cin * k3,
                                                       std::sqrt(2.0 / static_cast<double>(cin * k3)));
        net.params_.push_back({name + ".weight", Tensor::from_data(std::move(wshape), std::move(w), true)});
        net.params_.push_back({name + ".bias", Tensor::zeros({cout}, true)});
    }

    void deconv(const std::string& name, int64_t cin, int64_t cout) {
        const int64_t k3 = 27;
        Shape wshape{cin, cout, 3, 3, 3};
        std::vector<float> w =
            normal_init(rng, cin * cout * k3, std::sqrt(2.0 / static_cast<double>(cin * k3)));
        net.params_.push_back({name + ".weight", Tensor::from_data(std::move(wshape), std::move(w), true)});
        net.params_.push_back({name + ".bias", Tensor::zeros({cout}, true)});
    }

    void batchnorm(const std::string& name, int64_t channels) {
        net.params_.push_back({name + ".gamma", Tensor::full({channels}, 1.0f, true)});
        net.params_.push_back({name + ".beta", Tensor::zeros({channels}, true)});
        net.bn_states_.emplace_back(name, BatchNormState(channels));
    }
};

Network Network::build(const ArchitectureConfig& config, uint64_t seed) {
    config.validate();
    Network net;
    net.config_ = config;
    NetworkBuilder builder{net, Rng(seed)};

    // shared encoder: 2 -> 32 -> 64 -> 128
    builder.conv("conv1", 32, 2, false);
    builder.batchnorm("bn1", 32);
    builder.conv("conv2", 64, 32, false);
    builder.batchnorm("bn2", 64);
    builder.conv("conv3", 128, 64, false);
    builder.batchnorm("bn3", 128);
    builder.conv("reg1", 3, 128, true);

    if (config.variant == Variant::multires) {
        builder.deconv("deconv1", 128, 64);
        builder.batchnorm("bn4", 64);
        builder.conv("conv4", 64, 64, false);
        builder.batchnorm("bn5", 64);
        builder.conv("reg2", 3, 64, true);
        builder.deconv("deconv2", 64, 32);
        builder.batchnorm("bn6", 32);
        builder.conv("reg3", 3, 32, true);
    }
    return net;
}

const Tensor& Network::p(const std::string& name) const {
    for (const auto& param : params_) {
        if (param.name == name) return param.tensor;
    }
    throw std::logic_error("network parameter '" + name + "' not found");
}

BatchNormState& Network::bn(const std::string& name) {
    for (auto& [n, state] : bn_states_) {
        if (n == name) return state;
    }
    throw std::logic_error("batchnorm state '" + name + "' not found");
}

Tensor Network::conv_block(const Tensor& x, const std::string& conv_name,
                           const std::string& bn_name, bool training) {
    Tensor y = conv3d(x, p(conv_name + ".weight"), p(conv_name + ".bias"), 1, 1);
    y = batchnorm(y, p(bn_name + ".gamma"), p(bn_name + ".beta"), bn(bn_name), training);
    return relu(y);
}

Tensor Network::deconv_block(const Tensor& x, const std::string& deconv_name,
                             const std::string& bn_name, bool training) {
    Tensor y = transposed_conv3d(x, p(deconv_name + ".weight"), p(deconv_name + ".bias"), 2, 1, 1);
    y = batchnorm(y, p(bn_name + ".gamma"), p(bn_name + ".beta"), bn(bn_name), training);
    return relu(y);
}

std::vector<Tensor> Network::forward(const Tensor& fixed, const Tensor& moving, bool training) {
    if (fixed.ndim() != 5 || moving.ndim() != 5 || fixed.dim(1) != 1 || moving.dim(1) != 1) {
        throw ShapeError("network forward expects [B,1,D,H,W] fixed/moving tensors");
    }
    const Dims in{fixed.dim(2), fixed.dim(3), fixed.dim(4)};
    if (in != config_.input_dims || fixed.shape() != moving.shape()) {
        throw ShapeError("network forward: input dims " + dims_str(in) + " vs configured " +
                         dims_str(config_.input_dims));
    }

    std::unique_ptr<NoGradGuard> guard;
    if (!training) guard = std::make_unique<NoGradGuard>();

    Tensor x = concat_channels(fixed, moving);
    std::vector<Tensor> fields;
    switch (config_.variant) {
        case Variant::multires: {
            Tensor c1 = conv_block(x, "conv1", "bn1", training);
            Tensor p1 = avgpool3d(c1);
            Tensor c2 = conv_block(p1, "conv2", "bn2", training);
            Tensor p2 = avgpool3d(c2);
            Tensor c3 = conv_block(p2, "conv3", "bn3", training);
            fields.push_back(conv3d(c3, p("reg1.weight"), p("reg1.bias"), 1, 1));
            Tensor d1 = deconv_block(c3, "deconv1", "bn4", training);
            Tensor c4 = conv_block(d1, "conv4", "bn5", training);
            fields.push_back(conv3d(c4, p("reg2.weight"), p("reg2.bias"), 1, 1));
            Tensor d2 = deconv_block(c4, "deconv2", "bn6", training);
            fields.push_back(conv3d(d2, p("reg3.weight"), p("reg3.bias"), 1, 1));
            break;
        }
        case Variant::no_pool: {
            Tensor c1 = conv_block(x, "conv1", "bn1", training);
            Tensor c2 = conv_block(c1, "conv2", "bn2", training);
            Tensor c3 = conv_block(c2, "conv3", "bn3", training);
            fields.push_back(conv3d(c3, p("reg1.weight"), p("reg1.bias"), 1, 1));
            break;
        }
        case Variant::coarse_interp: {
            Tensor c1 = conv_block(x, "conv1", "bn1", training);
            Tensor p1 = avgpool3d(c1);
            Tensor c2 = conv_block(p1, "conv2", "bn2", training);
            Tensor p2 = avgpool3d(c2);
            Tensor c3 = conv_block(p2, "conv3", "bn3", training);
            Tensor coarse = conv3d(c3, p("reg1.weight"), p("reg1.bias"), 1, 1);
            // voxel-unit displacements on a 4x finer grid scale by 4
            fields.push_back(upsample_trilinear(coarse, 4, 4.0f));
            break;
        }
    }
    return fields;
}

int64_t Network::parameter_count() const {
    int64_t count = 0;
    for (const auto& param : params_) count += param.tensor.numel();
    return count;
}

void Network::serialize(std::ostream& os) const {
    nlohmann::json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["variant"] = variant_to_string(config_.variant);
    manifest["input_dims"] = config_.input_dims;
    nlohmann::json records = nlohmann::json::array();
    int64_t offset = 0;
    auto add_record = [&](const std::string& name, const Shape& shape, int64_t count) {
        records.push_back({{"name", name}, {"shape", shape}, {"offset", offset}});
        offset += count;
    };
    for (const auto& param : params_) {
        add_record(param.name, param.tensor.shape(), param.tensor.numel());
    }
    for (const auto& [name, state] : bn_states_) {
        const int64_t c = static_cast<int64_t>(state.running_mean.size());
        add_record(name + ".running_mean", {c}, c);
        add_record(name + ".running_var", {c}, c);
    }
    manifest["records"] = std::move(records);
    manifest["total_floats"] = offset;
    const std::string header = manifest.dump();

    os.write(kMagic, 4);
    os.put(static_cast<char>(kFormatVersion));
    const uint32_t len = static_cast<uint32_t>(header.size());
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& param : params_) {
        const auto v = param.tensor.values();
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(float)));
    }
    for (const auto& [name, state] : bn_states_) {
        os.write(reinterpret_cast<const char*>(state.running_mean.data()),
                 static_cast<std::streamsize>(state.running_mean.size() * sizeof(float)));
        os.write(reinterpret_cast<const char*>(state.running_var.data()),
                 static_cast<std::streamsize>(state.running_var.size() * sizeof(float)));
    }
    if (!os) throw IoError("failed writing network stream");
}

Network Network::deserialize(std::istream& is, const ArchitectureConfig* expected) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("not a network file (bad magic)");
    }
    const int version = is.get();
    if (version != kFormatVersion) {
        throw IoError("unsupported network format version " + std::to_string(version));
    }
    uint32_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header(len, '\0');
    is.read(header.data(), len);
    if (!is) throw IoError("truncated network manifest");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed network manifest: ") + e.what());
    }

    ArchitectureConfig config;
    config.variant = variant_from_string(manifest.at("variant").get<std::string>());
    const auto dims = manifest.at("input_dims").get<std::vector<int64_t>>();
    if (dims.size() != 3) throw IoError("network manifest input_dims must have 3 entries");
    config.input_dims = {dims[0], dims[1], dims[2]};
    if (expected && !(config == *expected)) {
        throw IoError("model file is a " + variant_to_string(config.variant) + " network for " +
                      dims_str(config.input_dims) + " volumes, expected " +
                      variant_to_string(expected->variant) + " for " +
                      dims_str(expected->input_dims));
    }

    Network net = build(config, 0);

    // The manifest must describe exactly the records this configuration
    // produces, in order; anything else is a mismatched or tampered file.
    struct Expected {
        std::string name;
        Shape shape;
        float* dst;
        int64_t count;
    };
    std::vector<Expected> records_expected;
    for (auto& param : net.params_) {
        records_expected.push_back({param.name, param.tensor.shape(), param.tensor.values_mut().data(),
                            param.tensor.numel()});
    }
    for (auto& [name, state] : net.bn_states_) {
        const int64_t c = static_cast<int64_t>(state.running_mean.size());
        records_expected.push_back({name + ".running_mean", {c}, state.running_mean.data(), c});
        records_expected.push_back({name + ".running_var", {c}, state.running_var.data(), c});
    }

    const auto& records = manifest.at("records");
    if (records.size() != records_expected.size()) {
        throw IoError("network manifest has " + std::to_string(records.size()) +
                      " records, configuration expects " + std::to_string(records_expected.size()));
    }
    int64_t offset = 0;
    for (size_t i = 0; i < records_expected.size(); ++i) {
        const auto& rec = records[i];
        const auto name = rec.at("name").get<std::string>();
        const auto shape = rec.at("shape").get<Shape>();
        if (name != records_expected[i].name || shape != records_expected[i].shape ||
            rec.at("offset").get<int64_t>() != offset) {
            throw IoError("network manifest record '" + name + "' does not match expected '" +
                          records_expected[i].name + "' " + shape_str(records_expected[i].shape));
        }
        offset += records_expected[i].count;
    }
    if (manifest.at("total_floats").get<int64_t>() != offset) {
        throw IoError("network manifest total_floats mismatch");
    }

    for (auto& exp : records_expected) {
        is.read(reinterpret_cast<char*>(exp.dst),
                static_cast<std::streamsize>(exp.count * sizeof(float)));
        if (!is) throw IoError("truncated network blob at record '" + exp.name + "'");
    }
    is.peek();
    if (!is.eof()) throw IoError("trailing bytes after network blob");
    return net;
}

void Network::save(const std::string& path) const {
    std::ostringstream os(std::ios::binary);
    serialize(os);
    atomic_write_file(path, os.str());
}

Network Network::load(const std::string& path, const ArchitectureConfig* expected) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open network file '" + path + "'");
    return deserialize(is, expected);
}

}  // namespace reg
