#include "reg/training.hpp"

#include <cmath>
#include <sstream>

#include "reg/io_util.hpp"

namespace reg {

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
    TrainConfig config;
    config.learning_rate = 0.001f;
    config.iterations = 10000;
    config.batch_size = 64;
    return config;
}

void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamParams& opts) {
    if (state.m.size() != params.size()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].numel(), 0.0);
            state.v[i].assign(params[i].numel(), 0.0);
        }
    }
    state.t += 1;
    const double bias1 = 1.0 - std::pow(static_cast<double>(opts.beta1), static_cast<double>(state.t));
    const double bias2 = 1.0 - std::pow(static_cast<double>(opts.beta2), static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        auto values = params[i].values_mut();
        const auto grads = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (grads.size() != values.size()) {
            throw ShapeError("adam_step: gradient/parameter size mismatch");
        }
        for (size_t j = 0; j < values.size(); ++j) {
            const double g = grads[j];
            if (debug_checks() && !std::isfinite(g)) {
                throw NumericsError("adam_step: non-finite gradient");
            }
            m[j] = opts.beta1 * m[j] + (1.0 - opts.beta1) * g;
            v[j] = opts.beta2 * v[j] + (1.0 - opts.beta2) * g * g;
            const double m_hat = m[j] / bias1;
            const double v_hat = v[j] / bias2;
            values[j] = static_cast<float>(values[j] -
                                           opts.learning_rate * m_hat / (std::sqrt(v_hat) + opts.eps));
        }
    }
}

std::pair<size_t, size_t> sample_pair_indices(size_t n, Rng& rng, bool include_self) {
    if (n < 2 && !include_self) {
        throw ShapeError("sample_pair: dataset needs at least 2 volumes");
    }
    if (n < 1) throw ShapeError("sample_pair: dataset is empty");
    const size_t i = static_cast<size_t>(rng.uniform_index(n));
    if (include_self) {
        return {i, static_cast<size_t>(rng.uniform_index(n))};
    }
    size_t j = static_cast<size_t>(rng.uniform_index(n - 1));
    if (j >= i) ++j;
    return {i, j};
}

std::pair<const Volume*, const Volume*> sample_pair(const std::vector<Volume>& dataset, Rng& rng,
                                                    bool include_self) {
    const auto [i, j] = sample_pair_indices(dataset.size(), rng, include_self);
    return {&dataset[i], &dataset[j]};
}

namespace {

using DrawFn = std::function<std::pair<const Volume*, const Volume*>(Rng&)>;

Tensor assemble_batch(const std::vector<const Volume*>& items) {
    const Dims dims = items.front()->dims;
    const int64_t voxels = dims_numel(dims);
    std::vector<float> data(static_cast<size_t>(items.size()) * voxels);
    for (size_t b = 0; b < items.size(); ++b) {
        if (items[b]->dims != dims) {
            throw ShapeError("training batch mixes volume dims " + dims_str(dims) + " and " +
                             dims_str(items[b]->dims));
        }
        std::copy(items[b]->data.begin(), items[b]->data.end(), data.begin() + b * voxels);
    }
    return Tensor::from_data({static_cast<int64_t>(items.size()), 1, dims[0], dims[1], dims[2]},
                             std::move(data));
}

std::string nan_diagnostic(int64_t iteration, const LossReport& report) {
    std::ostringstream os;
    os << "non-finite loss at iteration " << iteration << " (";
    for (size_t i = 0; i < report.levels.size(); ++i) {
        if (i) os << "; ";
        os << "level " << report.levels[i].level << " ncc=" << report.levels[i].ncc
           << " tv=" << report.levels[i].tv;
    }
    os << ")";
    return os.str();
}

TrainResult train_core(const DrawFn& draw, const ArchitectureConfig& arch,
                       const TrainConfig& config) {
    config.weights.validate();
    if (config.learning_rate <= 0.0f) throw ShapeError("learning_rate must be positive");
    if (config.batch_size < 1) throw ShapeError("batch_size must be >= 1");

    TrainResult result;
    result.net = Network::build(arch, config.seed);
    Rng rng(config.seed + 0x9e3779b97f4a7c15ull);

    std::vector<Tensor> param_tensors;
    for (auto& param : result.net.parameters()) param_tensors.push_back(param.tensor);
    AdamState adam;

    for (int64_t iteration = 0; iteration < config.iterations; ++iteration) {
        std::vector<const Volume*> fixed_items, moving_items;
        fixed_items.reserve(config.batch_size);
        moving_items.reserve(config.batch_size);
        for (int64_t b = 0; b < config.batch_size; ++b) {
            const auto [fixed, moving] = draw(rng);
            fixed_items.push_back(fixed);
            moving_items.push_back(moving);
        }
        Tensor fixed = assemble_batch(fixed_items);
        Tensor moving = assemble_batch(moving_items);

        std::vector<Tensor> fields = result.net.forward(fixed, moving, true);
        Tensor loss;
        LossReport report;
        if (arch.variant == Variant::multires) {
            auto [total, rep] = multires_loss(fixed, moving, {fields[0], fields[1], fields[2]},
                                              config.weights);
            loss = total;
            report = rep;
        } else {
            LevelLoss detail;
            detail.level = 0;
            detail.weight = 1.0f;
            loss = registration_loss(fixed, moving, fields[0], config.weights.lambda, &detail,
                                     config.weights.tv_mean);
            report.levels.push_back(detail);
            report.total = detail.loss;
        }
        if (!std::isfinite(report.total)) {
            throw NumericsError(nan_diagnostic(iteration, report));
        }

        backward(loss);
        adam_step(param_tensors, adam, config.adam());
        for (auto& t : param_tensors) t.zero_grad();
        result.curve.push_back(std::move(report));
    }
    return result;
}

}  // namespace

TrainResult train_network(const std::vector<Volume>& images, const ArchitectureConfig& arch,
                          const TrainConfig& config) {
    if (images.size() < 2) throw ShapeError("train_network: need at least 2 images");
    const bool self_ok = config.include_self_pairs;
    return train_core(
        [&images, self_ok](Rng& rng) { return sample_pair(images, rng, self_ok); }, arch, config);
}

TrainResult train_network_pairs(const std::vector<VolumePair>& pairs,
                                const ArchitectureConfig& arch, const TrainConfig& config) {
    if (pairs.empty()) throw ShapeError("train_network_pairs: no pairs given");
    return train_core(
        [&pairs](Rng& rng) {
            const auto& pair = pairs[rng.uniform_index(pairs.size())];
            return std::make_pair(&pair.fixed, &pair.moving);
        },
        arch, config);
}

DisplacementField register_infer(Network& net, const Volume& fixed, const Volume& moving) {
    std::vector<Tensor> fields = net.forward(to_tensor(fixed), to_tensor(moving), false);
    return field_from_tensor(fields.back(), 0, 0);
}

std::pair<DisplacementField, std::vector<LossReport>> register_direct(const Volume& fixed,
                                                                      const Volume& moving,
                                                                      const DirectOptions& opts) {
    if (fixed.dims != moving.dims) {
        throw ShapeError("register_direct: fixed dims " + dims_str(fixed.dims) +
                         " vs moving dims " + dims_str(moving.dims));
    }
    if (opts.iterations < 0 || opts.learning_rate <= 0.0f || opts.lambda < 0.0f) {
        throw ShapeError("register_direct: invalid options");
    }
    const Dims dims = fixed.dims;
    Tensor fixed_t = to_tensor(fixed);
    Tensor moving_t = to_tensor(moving);
    Tensor field = Tensor::zeros({1, 3, dims[0], dims[1], dims[2]}, true);

    std::vector<Tensor> params{field};
    AdamState adam;
    std::vector<LossReport> curve;
    for (int64_t iteration = 0; iteration < opts.iterations; ++iteration) {
        LevelLoss detail;
        detail.level = 0;
        detail.weight = 1.0f;
        Tensor loss = registration_loss(fixed_t, moving_t, field, opts.lambda, &detail,
                                        opts.tv_mean);
        LossReport report;
        report.levels.push_back(detail);
        report.total = detail.loss;
        if (!std::isfinite(report.total)) {
            throw NumericsError(nan_diagnostic(iteration, report));
        }
        backward(loss);
        if (opts.plain_gd) {
            auto values = field.values_mut();
            const auto grads = field.grad();
            for (size_t i = 0; i < values.size(); ++i) {
                values[i] -= opts.learning_rate * grads[i];
            }
        } else {
            AdamParams adam_opts;
            adam_opts.learning_rate = opts.learning_rate;
            adam_step(params, adam, adam_opts);
        }
        field.zero_grad();
        curve.push_back(std::move(report));
    }
    return {field_from_tensor(field, 0, 0), std::move(curve)};
}

void write_loss_curve_csv(const std::string& path, const std::vector<LossReport>& curve) {
    std::ostringstream os;
    write_loss_csv_header(os);
    for (size_t i = 0; i < curve.size(); ++i) {
        write_loss_csv_rows(os, static_cast<int64_t>(i), curve[i]);
    }
    atomic_write_file(path, os.str());
}

}  // namespace reg
