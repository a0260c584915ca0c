#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "reg/losses.hpp"
#include "reg/rng.hpp"

using namespace reg;

namespace {

Volume random_volume(Dims dims, uint64_t seed) {
    Rng rng(seed);
    Volume vol(dims);
    for (auto& v : vol.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
    return vol;
}

}  // namespace

TEST_CASE("ncc hand-computed oracle") {
    Tensor a = Tensor::from_data({4}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({4}, {4, 1, 3, 2});
    CHECK(ncc(a, b).item() == doctest::Approx(-0.4).epsilon(1e-6));
}

TEST_CASE("ncc is invariant under positive affine rescaling") {
    const Volume vol = random_volume({4, 4, 4}, 31);
    Volume scaled = vol;
    for (auto& v : scaled.data) v = 2.5f * v + 0.75f;
    CHECK(ncc_value(vol, scaled) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("ncc of a volume against its negation is -1") {
    const Volume vol = random_volume({4, 4, 4}, 32);
    Volume negated = vol;
    for (auto& v : negated.data) v = -v;
    CHECK(ncc_value(vol, negated) == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("ncc is symmetric") {
    const Volume a = random_volume({4, 4, 4}, 33);
    const Volume b = random_volume({4, 4, 4}, 34);
    CHECK(ncc_value(a, b) == doctest::Approx(ncc_value(b, a)).epsilon(1e-6));
}

TEST_CASE("ncc rejects shape mismatch") {
    Tensor a = Tensor::from_data({4}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({3}, {1, 2, 3});
    CHECK_THROWS_AS(ncc(a, b), ShapeError);
}

TEST_CASE("tv_l1 of any constant field is zero") {
    Tensor field = Tensor::full({1, 3, 3, 3, 3}, 4.2f);
    CHECK(tv_l1(field).item() == 0.0f);
}

TEST_CASE("tv_l1 counts unit forward differences of a coordinate ramp") {
    // d(z,y,x) = x on a 2x2x2 grid, one channel
    std::vector<float> data(3 * 8, 0.0f);
    for (int64_t z = 0; z < 2; ++z)
        for (int64_t y = 0; y < 2; ++y)
            for (int64_t x = 0; x < 2; ++x) data[(z * 2 + y) * 2 + x] = static_cast<float>(x);
    Tensor field = Tensor::from_data({1, 3, 2, 2, 2}, data);
    CHECK(tv_l1(field).item() == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("tv_l1 of a single interior spike is 6a") {
    const float a = 1.7f;
    std::vector<float> data(3 * 27, 0.0f);
    data[13] = a;  // center of the first channel
    Tensor field = Tensor::from_data({1, 3, 3, 3, 3}, data);
    CHECK(tv_l1(field).item() == doctest::Approx(6.0 * a).epsilon(1e-6));
}

TEST_CASE("tv_l1 is positively homogeneous and translation invariant") {
    Rng rng(35);
    std::vector<float> data(3 * 64);
    for (auto& v : data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    Tensor field = Tensor::from_data({1, 3, 4, 4, 4}, data);
    const double base = tv_l1(field).item_double();

    for (float c : {2.0f, -0.5f}) {
        std::vector<float> scaled(data);
        for (auto& v : scaled) v *= c;
        Tensor sf = Tensor::from_data({1, 3, 4, 4, 4}, scaled);
        CHECK(tv_l1(sf).item_double() == doctest::Approx(std::abs(c) * base).epsilon(1e-5));
    }

    std::vector<float> shifted(data);
    for (size_t i = 0; i < shifted.size(); ++i) shifted[i] += (i < 64 ? 3.0f : i < 128 ? -1.0f : 0.5f);
    Tensor tf = Tensor::from_data({1, 3, 4, 4, 4}, shifted);
    CHECK(tv_l1(tf).item_double() == doctest::Approx(base).epsilon(1e-5));
}

TEST_CASE("tv_l1 requires 3 channels") {
    Tensor field = Tensor::zeros({1, 2, 3, 3, 3});
    CHECK_THROWS_AS(tv_l1(field), ShapeError);
}

TEST_CASE("registration loss of a perfectly aligned pair is -1") {
    const Volume vol = random_volume({4, 4, 4}, 36);
    const DisplacementField zero(vol.dims);
    for (float lambda : {0.0f, 0.05f, 1.0f}) {
        Tensor loss = registration_loss(vol, vol, zero, lambda);
        CHECK(loss.item_double() == doctest::Approx(-1.0).epsilon(1e-6));
    }
}

TEST_CASE("constant fields contribute no smoothness penalty") {
    const Volume vol = random_volume({4, 4, 4}, 37);
    DisplacementField field(vol.dims);
    const int64_t V = field.voxels();
    for (int64_t i = 0; i < V; ++i) field.data[2 * V + i] = 1.0f;  // dx = 1

    const Volume shifted = warp_trilinear(vol, field);
    const double expected = -ncc_value(vol, shifted);
    Tensor loss = registration_loss(vol, vol, field, 123.0f);
    CHECK(loss.item_double() == doctest::Approx(expected).epsilon(1e-5));
}

TEST_CASE("multires loss of identical images under zero fields is the weight sum") {
    const Volume vol = random_volume({8, 8, 8}, 38);
    const std::array<DisplacementField, 3> fields{DisplacementField({2, 2, 2}),
                                                  DisplacementField({4, 4, 4}),
                                                  DisplacementField({8, 8, 8})};
    LossWeights weights;  // 1.0, 0.6, 0.3
    auto [total, report] = multires_loss(vol, vol, fields, weights);
    CHECK(total.item_double() == doctest::Approx(-1.9).epsilon(1e-6));
    REQUIRE(report.levels.size() == 3);
    for (const auto& level : report.levels) {
        CHECK(level.ncc == doctest::Approx(1.0).epsilon(1e-5));
        CHECK(level.tv == 0.0f);
    }
}

TEST_CASE("degenerate level weights reduce to the full-resolution loss") {
    const Volume fixed = random_volume({8, 8, 8}, 39);
    const Volume moving = random_volume({8, 8, 8}, 40);
    std::array<DisplacementField, 3> fields{DisplacementField({2, 2, 2}),
                                            DisplacementField({4, 4, 4}),
                                            DisplacementField({8, 8, 8})};
    Rng rng(41);
    for (auto& v : fields[2].data) v = static_cast<float>(rng.uniform(-0.5, 0.5));

    LossWeights weights;
    weights.coarse = 0.0f;
    weights.mid = 0.0f;
    weights.fine = 1.0f;
    auto [total, report] = multires_loss(fixed, moving, fields, weights);
    Tensor single = registration_loss(fixed, moving, fields[2], weights.lambda);
    CHECK(total.item_double() == doctest::Approx(single.item_double()).epsilon(1e-6));
}

TEST_CASE("multires total is linear in the level weights") {
    const Volume fixed = random_volume({8, 8, 8}, 42);
    const Volume moving = random_volume({8, 8, 8}, 43);
    const std::array<DisplacementField, 3> fields{DisplacementField({2, 2, 2}),
                                                  DisplacementField({4, 4, 4}),
                                                  DisplacementField({8, 8, 8})};
    LossWeights w1;
    w1.coarse = 1.0f; w1.mid = 0.0f; w1.fine = 0.0f;
    LossWeights w2;
    w2.coarse = 0.0f; w2.mid = 1.0f; w2.fine = 2.0f;
    LossWeights combined;
    combined.coarse = 1.0f; combined.mid = 1.0f; combined.fine = 2.0f;
    const double a = multires_loss(fixed, moving, fields, w1).first.item_double();
    const double b = multires_loss(fixed, moving, fields, w2).first.item_double();
    const double c = multires_loss(fixed, moving, fields, combined).first.item_double();
    CHECK(c == doctest::Approx(a + b).epsilon(1e-5));
}

TEST_CASE("multires loss validates dims and weights") {
    const Volume vol = random_volume({6, 6, 6}, 44);  // not divisible by 4
    const std::array<DisplacementField, 3> fields{DisplacementField({2, 2, 2}),
                                                  DisplacementField({3, 3, 3}),
                                                  DisplacementField({6, 6, 6})};
    CHECK_THROWS_AS(multires_loss(vol, vol, fields, LossWeights{}), ShapeError);

    LossWeights zero;
    zero.coarse = zero.mid = zero.fine = 0.0f;
    CHECK_THROWS_AS(zero.validate(), ShapeError);
}

TEST_CASE("loss report serializes one CSV row per level") {
    const Volume vol = random_volume({8, 8, 8}, 45);
    const std::array<DisplacementField, 3> fields{DisplacementField({2, 2, 2}),
                                                  DisplacementField({4, 4, 4}),
                                                  DisplacementField({8, 8, 8})};
    auto [total, report] = multires_loss(vol, vol, fields, LossWeights{});
    std::ostringstream os;
    write_loss_csv_header(os);
    write_loss_csv_rows(os, 17, report);
    const std::string text = os.str();
    CHECK(text.find("iteration,level,ncc,tv,loss,weight,total") == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);  // header + 3 levels
    CHECK(text.find("17,2,") != std::string::npos);
    CHECK(text.find("17,0,") != std::string::npos);
}
