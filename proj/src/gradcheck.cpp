#include "reg/gradcheck.hpp"

#include <cmath>

#include "reg/losses.hpp"
#include "reg/nn_ops.hpp"
#include "reg/rng.hpp"
#include "reg/warp.hpp"

namespace reg {

GradCheckResult grad_check(const std::string& name, const LossFn& fn, std::vector<Tensor> inputs,
                           float tol, float h) {
    GradCheckResult result;
    result.name = name;

    for (auto& input : inputs) input.zero_grad();
    Tensor loss = fn(inputs);
    backward(loss);

    std::vector<std::vector<float>> analytic(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad()) continue;
        const auto g = inputs[i].grad();
        analytic[i].assign(g.begin(), g.end());
    }

    for (size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad()) continue;
        auto data = inputs[i].values_mut();
        float worst = 0.0f;
        for (size_t j = 0; j < data.size(); ++j) {
            const float original = data[j];
            double f_plus, f_minus;
            {
                NoGradGuard no_grad;
                data[j] = original + h;
                f_plus = fn(inputs).item_double();
                data[j] = original - h;
                f_minus = fn(inputs).item_double();
            }
            data[j] = original;
            const double numeric = (f_plus - f_minus) / (2.0 * static_cast<double>(h));
            const double a = analytic[i][j];
            const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-8);
            worst = std::max(worst, static_cast<float>(rel));
        }
        result.max_rel_err_per_input.push_back(worst);
        result.max_rel_err = std::max(result.max_rel_err, worst);
    }
    result.pass = result.max_rel_err < tol;
    return result;
}

namespace {

std::vector<float> uniform_vec(Rng& rng, int64_t n, double lo, double hi) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

// magnitudes in [lo, hi], random sign: keeps ReLU inputs off the kink
std::vector<float> signed_vec(Rng& rng, int64_t n, double lo, double hi) {
    std::vector<float> v(n);
    for (auto& x : v) {
        const double mag = rng.uniform(lo, hi);
        x = static_cast<float>(rng.uniform() < 0.5 ? -mag : mag);
    }
    return v;
}

// ramp plus small noise: trilinear corner differences stay bounded away
// from zero so warp field gradients are informative everywhere
std::vector<float> ramp_volume(Rng& rng, int64_t D, int64_t H, int64_t W) {
    std::vector<float> v(D * H * W);
    int64_t i = 0;
    for (int64_t z = 0; z < D; ++z)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x, ++i)
                v[i] = static_cast<float>(0.1 * (z + y + x) + rng.uniform(-0.02, 0.02));
    return v;
}

// sign alternates with voxel parity, magnitude in [0.3, 0.5]: every forward
// difference is at least 0.6 (TV kink avoidance) and every sampled source
// coordinate sits 0.2 from the nearest integer (trilinear knot avoidance)
std::vector<float> parity_field(Rng& rng, int64_t D, int64_t H, int64_t W, double lo, double hi) {
    std::vector<float> v(3 * D * H * W);
    int64_t i = 0;
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t z = 0; z < D; ++z)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x, ++i) {
                    const double mag = rng.uniform(lo, hi);
                    v[i] = static_cast<float>(((z + y + x) & 1) ? mag : -mag);
                }
    return v;
}

GradCheckResult check_conv3d(uint64_t seed, float tol, int rep) {
    Rng rng(seed);
    const int stride = (rep % 2) ? 2 : 1;
    Tensor input = Tensor::from_data({1, 2, 4, 4, 4}, uniform_vec(rng, 128, 0.3, 0.8), true);
    Tensor weight = Tensor::from_data({3, 2, 3, 3, 3}, uniform_vec(rng, 162, 0.05, 0.15), true);
    Tensor bias = Tensor::from_data({3}, uniform_vec(rng, 3, 0.1, 0.3), true);
    const int64_t out_extent = (4 + 2 - 3) / stride + 1;
    auto coeffs = uniform_vec(rng, 3 * out_extent * out_extent * out_extent, 0.5, 1.5);
    return grad_check(
        "conv3d#" + std::to_string(rep),
        [stride, coeffs](std::vector<Tensor>& in) {
            return contract(conv3d(in[0], in[1], in[2], stride, 1), coeffs);
        },
        {input, weight, bias}, tol);
}

GradCheckResult check_transposed_conv3d(uint64_t seed, float tol, int rep) {
    Rng rng(seed);
    Tensor input = Tensor::from_data({1, 2, 3, 3, 3}, uniform_vec(rng, 54, 0.3, 0.8), true);
    Tensor weight = Tensor::from_data({2, 3, 3, 3, 3}, uniform_vec(rng, 162, 0.05, 0.15), true);
    Tensor bias = Tensor::from_data({3}, uniform_vec(rng, 3, 0.1, 0.3), true);
    auto coeffs = uniform_vec(rng, 3 * 6 * 6 * 6, 0.5, 1.5);
    return grad_check(
        "transposed_conv3d#" + std::to_string(rep),
        [coeffs](std::vector<Tensor>& in) {
            return contract(transposed_conv3d(in[0], in[1], in[2], 2, 1, 1), coeffs);
        },
        {input, weight, bias}, tol);
}

GradCheckResult check_avgpool3d(uint64_t seed, float tol, int rep) {
    Rng rng(seed);
    Tensor input = Tensor::from_data({1, 2, 4, 4, 4}, uniform_vec(rng, 128, 0.3, 0.9), true);
    auto coeffs = uniform_vec(rng, 2 * 2 * 2 * 2, 0.5, 1.5);
    return grad_check(
        "avgpool3d#" + std::to_string(rep),
        [coeffs](std::vector<Tensor>& in) { return contract(avgpool3d(in[0]), coeffs); },
        {input}, tol);
}

GradCheckResult check_batchnorm(uint64_t seed, float tol, int rep) {
    Rng rng(seed);
    // parity-signed values keep |xhat| bounded and the input gradients away
    // from zero crossings
    std::vector<float> x(2 * 2 * 27);
    int64_t i = 0;
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t c = 0; c < 2; ++c)
            for (int64_t z = 0; z < 3; ++z)
                for (int64_t y = 0; y < 3; ++y)
                    for (int64_t xx = 0; xx < 3; ++xx, ++i) {
                        const double mag = 1.0 + rng.uniform(0.0, 0.2);
                        x[i] = static_cast<float>(((b + z + y + xx) & 1) ? mag : -mag);
                    }
    Tensor input = Tensor::from_data({2, 2, 3, 3, 3}, std::move(x), true);
    Tensor gamma = Tensor::from_data({2}, uniform_vec(rng, 2, 0.8, 1.2), true);
    Tensor beta = Tensor::from_data({2}, uniform_vec(rng, 2, -0.3, 0.3), true);
    std::vector<float> coeffs(2 * 2 * 27);
    i = 0;
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t c = 0; c < 2; ++c)
            for (int64_t z = 0; z < 3; ++z)
                for (int64_t y = 0; y < 3; ++y)
                    for (int64_t xx = 0; xx < 3; ++xx, ++i)
                        coeffs[i] = static_cast<float>((((b + z + y) & 1) ? 2.0 : 1.0) +
                                                       rng.uniform(0.0, 0.1));
    return grad_check(
        "batchnorm#" + std::to_string(rep),
        [coeffs](std::vector<Tensor>& in) {
            BatchNormState state(2);
            return contract(batchnorm(in[0], in[1], in[2], state, true), coeffs);
        },
        {input, gamma, beta}, tol);
}

GradCheckResult check_relu(uint64_t seed, float tol, int rep) {
    Rng rng(seed);
    Tensor input = Tensor::from_data({2, 3, 4, 4, 4}, signed_vec(rng, 384, 0.1, 1.0), true);
    auto coeffs = uniform_vec(rng, 384, 0.5, 1.5);
    return grad_check(
        "relu#" + std::to_string(rep),
        [coeffs](std::vector<Tensor>& in) { return contract(relu(in[0]), coeffs); }, {input}, tol);
}

GradCheckResult check_warp_field(uint64_t seed, float tol, int rep) {
    Rng rng(seed);
    Tensor moving = Tensor::from_data({1, 1, 5, 5, 5}, ramp_volume(rng, 5, 5, 5), false);
    Tensor field = Tensor::from_data({1, 3, 5, 5, 5}, parity_field(rng, 5, 5, 5, 0.2, 0.45), true);
    auto coeffs = uniform_vec(rng, 125, 0.5, 1.5);
    return grad_check(
        "warp_trilinear_field#" + std::to_string(rep),
        [coeffs](std::vector<Tensor>& in) { return contract(warp3d(in[0], in[1]), coeffs); },
        {moving, field}, tol);
}

GradCheckResult check_warp_moving(uint64_t seed, float tol, int rep) {
    Rng rng(seed);
    Tensor moving = Tensor::from_data({1, 1, 5, 5, 5}, uniform_vec(rng, 125, 0.0, 1.0), true);
    Tensor field = Tensor::from_data({1, 3, 5, 5, 5}, parity_field(rng, 5, 5, 5, 0.2, 0.45), false);
    auto coeffs = uniform_vec(rng, 125, 0.5, 1.5);
    return grad_check(
        "warp_trilinear_moving#" + std::to_string(rep),
        [coeffs](std::vector<Tensor>& in) { return contract(warp3d(in[0], in[1]), coeffs); },
        {moving, field}, tol);
}

GradCheckResult check_ncc(uint64_t seed, float tol, int rep) {
    Rng rng(seed);
    Tensor a = Tensor::from_data({1, 1, 4, 4, 4}, signed_vec(rng, 64, 0.1, 1.0), true);
    Tensor b = Tensor::from_data({1, 1, 4, 4, 4}, signed_vec(rng, 64, 0.1, 1.0), true);
    return grad_check(
        "ncc#" + std::to_string(rep),
        [](std::vector<Tensor>& in) { return ncc(in[0], in[1]); }, {a, b}, tol);
}

GradCheckResult check_tv_l1(uint64_t seed, float tol, int rep) {
    Rng rng(seed);
    Tensor field = Tensor::from_data({1, 3, 4, 4, 4}, parity_field(rng, 4, 4, 4, 0.3, 0.5), true);
    return grad_check(
        "tv_l1#" + std::to_string(rep),
        [](std::vector<Tensor>& in) { return tv_l1(in[0]); }, {field}, tol);
}

GradCheckResult check_registration_loss(uint64_t seed, float tol, int rep) {
    Rng rng(seed);
    Tensor fixed = Tensor::from_data({1, 1, 5, 5, 5}, ramp_volume(rng, 5, 5, 5), false);
    Tensor moving = Tensor::from_data({1, 1, 5, 5, 5}, ramp_volume(rng, 5, 5, 5), false);
    Tensor field = Tensor::from_data({1, 3, 5, 5, 5}, parity_field(rng, 5, 5, 5, 0.2, 0.45), true);
    return grad_check(
        "registration_loss#" + std::to_string(rep),
        [](std::vector<Tensor>& in) {
            return registration_loss(in[0], in[1], in[2], 0.05f);
        },
        {fixed, moving, field}, tol);
}

GradCheckResult check_conv_relu_sum(uint64_t seed, float tol, int rep) {
    Rng rng(seed);
    Tensor input = Tensor::from_data({1, 2, 4, 4, 4}, uniform_vec(rng, 128, 0.3, 0.8), true);
    Tensor weight = Tensor::from_data({3, 2, 3, 3, 3}, uniform_vec(rng, 162, 0.05, 0.15), true);
    Tensor bias = Tensor::from_data({3}, uniform_vec(rng, 3, 0.1, 0.3), true);
    return grad_check(
        "conv_relu_sum#" + std::to_string(rep),
        [](std::vector<Tensor>& in) { return sum(relu(conv3d(in[0], in[1], in[2], 1, 1))); },
        {input, weight, bias}, tol);
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed, float tol, int reps) {
    using CaseFn = GradCheckResult (*)(uint64_t, float, int);
    const CaseFn cases[] = {
        check_conv3d,     check_transposed_conv3d, check_avgpool3d,
        check_batchnorm,  check_relu,              check_warp_field,
        check_warp_moving, check_ncc,              check_tv_l1,
        check_registration_loss, check_conv_relu_sum,
    };
    std::vector<GradCheckResult> results;
    for (size_t op = 0; op < std::size(cases); ++op) {
        for (int rep = 0; rep < reps; ++rep) {
            const uint64_t case_seed = seed + 1000 * (op + 1) + static_cast<uint64_t>(rep);
            results.push_back(cases[op](case_seed, tol, rep));
        }
    }
    return results;
}

}  // namespace reg
