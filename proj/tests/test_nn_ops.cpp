#include <doctest.h>

#include <cmath>

#include "reg/nn_ops.hpp"
#include "reg/rng.hpp"

using namespace reg;

namespace {

int64_t conv_extent(int64_t in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

}  // namespace

TEST_CASE("conv3d with a 1x1x1 kernel is a per-voxel affine map") {
    Tensor input = Tensor::from_data({1, 1, 1, 1, 3}, {1, 2, 3});
    Tensor weight = Tensor::from_data({1, 1, 1, 1, 1}, {2.0f});
    Tensor bias = Tensor::from_data({1}, {1.0f});
    Tensor out = conv3d(input, weight, bias, 1, 0);
    CHECK(out.shape() == Shape{1, 1, 1, 1, 3});
    CHECK(out.values()[0] == doctest::Approx(3.0f));
    CHECK(out.values()[1] == doctest::Approx(5.0f));
    CHECK(out.values()[2] == doctest::Approx(7.0f));
}

TEST_CASE("conv3d identity 1x1x1 kernel is the identity map") {
    Rng rng(11);
    std::vector<float> data(2 * 3 * 4 * 5);
    for (auto& v : data) v = static_cast<float>(rng.uniform(-1, 1));
    Tensor input = Tensor::from_data({1, 2, 3, 4, 5}, data);
    // one 1 per (out,in) diagonal entry
    Tensor weight = Tensor::from_data({2, 2, 1, 1, 1}, {1, 0, 0, 1});
    Tensor bias = Tensor::zeros({2});
    Tensor out = conv3d(input, weight, bias, 1, 0);
    REQUIRE(out.shape() == input.shape());
    for (size_t i = 0; i < data.size(); ++i) CHECK(out.values()[i] == data[i]);
}

TEST_CASE("conv3d all-ones 3x3x3 kernel counts in-bounds taps") {
    Tensor input = Tensor::full({1, 1, 3, 3, 3}, 1.0f);
    Tensor weight = Tensor::full({1, 1, 3, 3, 3}, 1.0f);
    Tensor bias = Tensor::zeros({1});
    Tensor out = conv3d(input, weight, bias, 1, 1);
    const auto v = out.values();
    CHECK(v[13] == doctest::Approx(27.0f));  // center
    CHECK(v[0] == doctest::Approx(8.0f));    // corner
    CHECK(v[26] == doctest::Approx(8.0f));
}

TEST_CASE("conv3d validates channels and output extent") {
    Tensor input = Tensor::zeros({1, 2, 3, 3, 3});
    Tensor weight = Tensor::zeros({4, 3, 3, 3, 3});
    Tensor bias = Tensor::zeros({4});
    CHECK_THROWS_AS(conv3d(input, weight, bias, 1, 1), ShapeError);

    Tensor w2 = Tensor::zeros({4, 2, 3, 3, 3});
    Tensor in_small = Tensor::zeros({1, 2, 1, 1, 1});
    CHECK_THROWS_AS(conv3d(in_small, w2, bias, 1, 0), ShapeError);
}

TEST_CASE("conv3d and avgpool3d size formula fuzz") {
    Rng rng(7);
    for (int trial = 0; trial < 60; ++trial) {
        const int k = 2 * static_cast<int>(rng.uniform_index(3)) + 1;  // 1,3,5
        const int s = 1 + static_cast<int>(rng.uniform_index(3));
        const int p = static_cast<int>(rng.uniform_index(3));
        const int64_t D = 1 + static_cast<int64_t>(rng.uniform_index(9));
        const int64_t H = 1 + static_cast<int64_t>(rng.uniform_index(9));
        const int64_t W = 1 + static_cast<int64_t>(rng.uniform_index(9));
        Tensor input = Tensor::full({1, 1, D, H, W}, 0.5f);
        Tensor weight = Tensor::full({2, 1, k, k, k}, 0.1f);
        Tensor bias = Tensor::zeros({2});
        const bool valid = conv_extent(D, k, s, p) >= 1 && conv_extent(H, k, s, p) >= 1 &&
                           conv_extent(W, k, s, p) >= 1 && D + 2 * p >= k && H + 2 * p >= k &&
                           W + 2 * p >= k;
        if (!valid) {
            CHECK_THROWS_AS(conv3d(input, weight, bias, s, p), ShapeError);
            continue;
        }
        Tensor out = conv3d(input, weight, bias, s, p);
        CHECK(out.dim(2) == conv_extent(D, k, s, p));
        CHECK(out.dim(3) == conv_extent(H, k, s, p));
        CHECK(out.dim(4) == conv_extent(W, k, s, p));

        Tensor pooled = avgpool3d(input, k, s, p);
        CHECK(pooled.dim(2) == conv_extent(D, k, s, p));
    }
}

TEST_CASE("transposed_conv3d output extent formula") {
    Tensor input = Tensor::zeros({1, 1, 8, 8, 8});
    Tensor weight = Tensor::full({1, 1, 3, 3, 3}, 0.1f);
    Tensor bias = Tensor::zeros({1});
    Tensor out = transposed_conv3d(input, weight, bias, 2, 1, 1);
    CHECK(out.dim(2) == 16);
    CHECK(out.dim(3) == 16);
    CHECK(out.dim(4) == 16);
}

TEST_CASE("transposed_conv3d scatters a single tap as the scaled kernel") {
    Tensor input = Tensor::from_data({1, 1, 1, 1, 1}, {2.5f});
    std::vector<float> w(27);
    for (int i = 0; i < 27; ++i) w[i] = 0.1f * static_cast<float>(i);
    Tensor weight = Tensor::from_data({1, 1, 3, 3, 3}, w);
    Tensor bias = Tensor::zeros({1});
    Tensor out = transposed_conv3d(input, weight, bias, 2, 0, 0);
    REQUIRE(out.shape() == Shape{1, 1, 3, 3, 3});
    for (int i = 0; i < 27; ++i) CHECK(out.values()[i] == doctest::Approx(2.5f * w[i]));
}

TEST_CASE("transposed_conv3d doubles extents with the decoder settings") {
    Rng rng(3);
    std::vector<float> data(2 * 4 * 6 * 6);
    for (auto& v : data) v = static_cast<float>(rng.uniform(-1, 1));
    Tensor input = Tensor::from_data({1, 2, 4, 6, 6}, data);
    Tensor weight = Tensor::full({2, 3, 3, 3, 3}, 0.05f);
    Tensor bias = Tensor::zeros({3});
    Tensor out = transposed_conv3d(input, weight, bias, 2, 1, 1);
    CHECK(out.shape() == Shape{1, 3, 8, 12, 12});
}

TEST_CASE("avgpool3d averages only in-bounds taps") {
    Tensor input = Tensor::from_data({1, 1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor out = avgpool3d(input, 3, 2, 1);
    REQUIRE(out.numel() == 1);
    CHECK(out.values()[0] == doctest::Approx(4.5f));
}

TEST_CASE("avgpool3d preserves constants at any setting") {
    for (int s : {1, 2}) {
        Tensor input = Tensor::full({1, 2, 4, 6, 4}, 3.25f);
        Tensor out = avgpool3d(input, 3, s, 1);
        for (float v : out.values()) CHECK(v == doctest::Approx(3.25f));
    }
}

TEST_CASE("avgpool3d halves even extents with the encoder settings") {
    Tensor a = Tensor::zeros({1, 1, 4, 4, 4});
    CHECK(avgpool3d(a).dim(2) == 2);
    Tensor b = Tensor::zeros({1, 1, 48, 4, 4});
    CHECK(avgpool3d(b).dim(2) == 24);
}

TEST_CASE("batchnorm is a fixed point on standardized input") {
    // exact zero mean / unit variance per channel
    std::vector<float> data;
    for (int i = 0; i < 8; ++i) data.push_back(i % 2 ? 1.0f : -1.0f);
    Tensor input = Tensor::from_data({1, 1, 2, 2, 2}, data);
    Tensor gamma = Tensor::full({1}, 1.0f);
    Tensor beta = Tensor::zeros({1});
    BatchNormState state(1);
    Tensor out = batchnorm(input, gamma, beta, state, true);
    for (int i = 0; i < 8; ++i) CHECK(out.values()[i] == doctest::Approx(data[i]).epsilon(1e-4));
}

TEST_CASE("batchnorm maps constant input to beta") {
    Tensor input = Tensor::full({1, 2, 2, 2, 2}, 7.0f);
    Tensor gamma = Tensor::full({2}, 2.0f);
    Tensor beta = Tensor::from_data({2}, {0.5f, -1.5f});
    BatchNormState state(2);
    Tensor out = batchnorm(input, gamma, beta, state, true);
    for (int64_t c = 0; c < 2; ++c) {
        for (int64_t i = 0; i < 8; ++i) {
            CHECK(out.values()[c * 8 + i] == doctest::Approx(beta.values()[c]).epsilon(1e-5));
        }
    }
}

TEST_CASE("batchnorm eval before any training update uses initialized stats") {
    Tensor input = Tensor::from_data({1, 1, 1, 1, 2}, {0.5f, -0.25f});
    Tensor gamma = Tensor::full({1}, 1.0f);
    Tensor beta = Tensor::zeros({1});
    BatchNormState state(1);  // mean 0, var 1
    Tensor out = batchnorm(input, gamma, beta, state, false);
    CHECK(out.values()[0] == doctest::Approx(0.5f).epsilon(1e-4));
    CHECK(out.values()[1] == doctest::Approx(-0.25f).epsilon(1e-4));
}

TEST_CASE("batchnorm updates running statistics in train mode only") {
    Tensor input = Tensor::full({1, 1, 2, 2, 2}, 4.0f);
    Tensor gamma = Tensor::full({1}, 1.0f);
    Tensor beta = Tensor::zeros({1});
    BatchNormState state(1);
    batchnorm(input, gamma, beta, state, true);
    CHECK(state.running_mean[0] == doctest::Approx(0.9f * 0.0f + 0.1f * 4.0f));
    CHECK(state.running_var[0] == doctest::Approx(0.9f * 1.0f + 0.1f * 0.0f));
    const float mean_after = state.running_mean[0];
    batchnorm(input, gamma, beta, state, false);
    CHECK(state.running_mean[0] == mean_after);
}

TEST_CASE("batchnorm train mode needs at least two reduction elements") {
    Tensor input = Tensor::full({1, 1, 1, 1, 1}, 1.0f);
    Tensor gamma = Tensor::full({1}, 1.0f);
    Tensor beta = Tensor::zeros({1});
    BatchNormState state(1);
    CHECK_THROWS_AS(batchnorm(input, gamma, beta, state, true), ShapeError);
}
