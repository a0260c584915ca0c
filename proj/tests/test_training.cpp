#include <doctest.h>

#include <array>
#include <cmath>

#include "reg/synth.hpp"
#include "reg/training.hpp"

using namespace reg;

namespace {

std::vector<Volume> texture_set(Dims dims, int count, uint64_t seed) {
    std::vector<Volume> images;
    for (int i = 0; i < count; ++i) {
        images.push_back(make_base_texture(dims, seed + static_cast<uint64_t>(i)));
    }
    return images;
}

}  // namespace

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
    Tensor p = Tensor::from_data({3}, {1.0f, -2.0f, 0.5f}, true);
    backward(scale(sum(mul(p, Tensor::zeros({3}))), 1.0f));  // zero gradient path
    std::vector<Tensor> params{p};
    AdamState state;
    adam_step(params, state, AdamParams{});
    CHECK(p.values()[0] == 1.0f);
    CHECK(p.values()[1] == -2.0f);
    CHECK(p.values()[2] == 0.5f);
    for (double m : state.m[0]) CHECK(m == 0.0);
    for (double v : state.v[0]) CHECK(v == 0.0);
}

TEST_CASE("first adam step moves by about -lr*sign(g)") {
    Tensor p = Tensor::from_data({2}, {3.0f, -1.0f}, true);
    Tensor coeffs = Tensor::from_data({2}, {2.0f, -0.5f});
    backward(sum(mul(p, coeffs)));  // gradients 2 and -0.5
    std::vector<Tensor> params{p};
    AdamState state;
    AdamParams opts;
    opts.learning_rate = 0.1f;
    adam_step(params, state, opts);
    CHECK(std::abs(p.values()[0] - (3.0f - 0.1f)) < 0.1f * 1e-3f);
    CHECK(std::abs(p.values()[1] - (-1.0f + 0.1f)) < 0.1f * 1e-3f);
}

TEST_CASE("three adam steps on p^2 match an independently stepped trace") {
    // hand-stepped oracle in double precision
    double p_ref = 1.0, m = 0.0, v = 0.0;
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int t = 1; t <= 3; ++t) {
        const double g = 2.0 * p_ref;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double m_hat = m / (1 - std::pow(b1, t));
        const double v_hat = v / (1 - std::pow(b2, t));
        p_ref -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }

    Tensor p = Tensor::from_data({1}, {1.0f}, true);
    std::vector<Tensor> params{p};
    AdamState state;
    AdamParams opts;
    opts.learning_rate = 0.1f;
    for (int t = 0; t < 3; ++t) {
        p.zero_grad();
        backward(mul(p, p));
        adam_step(params, state, opts);
    }
    CHECK(p.values()[0] == doctest::Approx(p_ref).epsilon(1e-6));
}

TEST_CASE("pair sampling is uniform over ordered pairs and never self") {
    Rng rng(71);
    std::array<int, 9> counts{};
    const int draws = 6000;
    for (int d = 0; d < draws; ++d) {
        const auto [i, j] = sample_pair_indices(3, rng);
        CHECK(i != j);
        counts[i * 3 + j] += 1;
    }
    // chi-square over the 6 ordered pairs, df=5, p=0.01 critical value 15.086
    const double expected = draws / 6.0;
    double chi2 = 0.0;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            if (i == j) {
                CHECK(counts[i * 3 + j] == 0);
            } else {
                const double diff = counts[i * 3 + j] - expected;
                chi2 += diff * diff / expected;
            }
        }
    }
    CHECK(chi2 < 15.086);
}

TEST_CASE("seeded sampling is reproducible and size-checked") {
    Rng a(5), b(5);
    for (int i = 0; i < 50; ++i) {
        CHECK(sample_pair_indices(7, a) == sample_pair_indices(7, b));
    }
    Rng c(6);
    CHECK_THROWS_AS(sample_pair_indices(1, c), ShapeError);
    const auto [i, j] = sample_pair_indices(1, c, true);
    CHECK(i == 0);
    CHECK(j == 0);
}

TEST_CASE("register_direct on identical volumes starts at -1 and stays put") {
    const Volume vol = make_base_texture({8, 8, 8}, 81);
    DirectOptions opts;
    opts.iterations = 40;
    opts.learning_rate = 0.05f;
    auto [field, curve] = register_direct(vol, vol, opts);
    REQUIRE(curve.size() == 40);
    CHECK(curve.front().total == doctest::Approx(-1.0).epsilon(1e-6));
    for (size_t it = 10; it < curve.size(); ++it) {
        CHECK(curve[it].total <= curve.front().total + 0.05f);
    }
    double mean_mag = 0.0;
    const int64_t V = field.voxels();
    for (int64_t i = 0; i < V; ++i) {
        mean_mag += std::sqrt(field.data[i] * field.data[i] +
                              field.data[V + i] * field.data[V + i] +
                              field.data[2 * V + i] * field.data[2 * V + i]);
    }
    CHECK(mean_mag / V < 0.1);
}

TEST_CASE("register_direct with zero iterations returns the zero field") {
    const Volume vol = make_base_texture({8, 8, 8}, 82);
    DirectOptions opts;
    opts.iterations = 0;
    auto [field, curve] = register_direct(vol, vol, opts);
    CHECK(curve.empty());
    for (float v : field.data) CHECK(v == 0.0f);
}

TEST_CASE("register_direct recovers part of a synthetic displacement") {
    SynthParams params;
    params.seed = 83;
    params.max_amplitude = 1.5f;
    params.num_blobs = 4;
    params.sigma_min = 2.0f;
    params.sigma_max = 4.0f;
    const Volume base = make_base_texture({12, 12, 12}, 84);
    const SyntheticPair pair = make_synthetic_pair(base, params);

    DirectOptions opts;
    opts.iterations = 120;
    opts.learning_rate = 0.1f;
    opts.lambda = 0.05f;
    auto [field, curve] = register_direct(pair.fixed, pair.moving, opts);
    CHECK(curve.back().total < curve.front().total);

    const DisplacementField zero(pair.truth.dims);
    const float epe_zero = [&] {
        double total = 0.0;
        const int64_t V = pair.truth.voxels();
        for (int64_t i = 0; i < V; ++i) {
            total += std::sqrt(pair.truth.data[i] * pair.truth.data[i] +
                               pair.truth.data[V + i] * pair.truth.data[V + i] +
                               pair.truth.data[2 * V + i] * pair.truth.data[2 * V + i]);
        }
        return static_cast<float>(total / V);
    }();
    double total = 0.0;
    const int64_t V = pair.truth.voxels();
    for (int64_t i = 0; i < V; ++i) {
        const double dz = field.data[i] - pair.truth.data[i];
        const double dy = field.data[V + i] - pair.truth.data[V + i];
        const double dx = field.data[2 * V + i] - pair.truth.data[2 * V + i];
        total += std::sqrt(dz * dz + dy * dy + dx * dx);
    }
    const float epe_after = static_cast<float>(total / V);
    CHECK(epe_after < 0.6f * epe_zero);  // at least 40% reduction
}

TEST_CASE("training runs are deterministic and leave the dataset untouched") {
    const Dims dims{8, 8, 8};
    std::vector<Volume> images = texture_set(dims, 4, 90);
    const std::vector<Volume> snapshot = images;

    ArchitectureConfig arch;
    arch.variant = Variant::multires;
    arch.input_dims = dims;
    TrainConfig config = TrainConfig::desk();
    config.iterations = 6;
    config.batch_size = 2;
    config.seed = 7;

    TrainResult a = train_network(images, arch, config);
    TrainResult b = train_network(images, arch, config);
    REQUIRE(a.curve.size() == b.curve.size());
    for (size_t i = 0; i < a.curve.size(); ++i) {
        CHECK(a.curve[i].total == b.curve[i].total);
    }
    for (size_t i = 0; i < a.net.parameters().size(); ++i) {
        const auto av = a.net.parameters()[i].tensor.values();
        const auto bv = b.net.parameters()[i].tensor.values();
        for (size_t j = 0; j < av.size(); ++j) CHECK(av[j] == bv[j]);
    }
    for (size_t i = 0; i < images.size(); ++i) {
        CHECK(images[i].data == snapshot[i].data);
    }
}

TEST_CASE("training on identical fixed/moving pairs stays near the optimum") {
    const Dims dims{8, 8, 8};
    std::vector<VolumePair> pairs;
    for (int i = 0; i < 3; ++i) {
        Volume vol = make_base_texture(dims, 95 + static_cast<uint64_t>(i));
        pairs.push_back({vol, vol});
    }
    ArchitectureConfig arch;
    arch.variant = Variant::multires;
    arch.input_dims = dims;
    TrainConfig config = TrainConfig::desk();
    config.iterations = 12;
    config.batch_size = 2;
    config.seed = 3;
    TrainResult result = train_network_pairs(pairs, arch, config);
    const float optimum = -(config.weights.coarse + config.weights.mid + config.weights.fine);
    CHECK(result.curve.front().total == doctest::Approx(optimum).epsilon(1e-5));
    for (const auto& report : result.curve) {
        CHECK(report.total <= optimum + 0.05f);
    }
}

TEST_CASE("register_infer of an untrained network is the zero field, twice") {
    const Dims dims{8, 8, 8};
    ArchitectureConfig arch;
    arch.variant = Variant::multires;
    arch.input_dims = dims;
    Network net = Network::build(arch, 4);
    const Volume fixed = make_base_texture(dims, 96);
    const Volume moving = make_base_texture(dims, 97);
    const DisplacementField f1 = register_infer(net, fixed, moving);
    const DisplacementField f2 = register_infer(net, fixed, moving);
    CHECK(f1.dims == dims);
    for (float v : f1.data) CHECK(v == 0.0f);
    CHECK(f1.data == f2.data);
}

TEST_CASE("paper preset keeps the published hyperparameters") {
    const TrainConfig paper = TrainConfig::paper();
    CHECK(paper.learning_rate == 0.001f);
    CHECK(paper.batch_size == 64);
    CHECK(paper.iterations == 10000);
    CHECK(paper.weights.coarse == 1.0f);
    CHECK(paper.weights.mid == 0.6f);
    CHECK(paper.weights.fine == 0.3f);
}
