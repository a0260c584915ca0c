#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "reg/losses.hpp"
#include "reg/synth.hpp"
#include "reg/volume_io.hpp"

using namespace reg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("regtest_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("volume files round-trip bit-exactly") {
    TempDir dir;
    const Volume vol = make_base_texture({4, 6, 8}, 50);
    write_volume(dir.file("vol"), vol);
    const Volume back = read_volume(dir.file("vol"));
    CHECK(back.dims == vol.dims);
    CHECK(back.data == vol.data);

    SynthParams params;
    params.seed = 51;
    const DisplacementField field = synth_field({4, 8, 8}, params);
    write_field(dir.file("field"), field);
    const DisplacementField fback = read_field(dir.file("field.vjson"));
    CHECK(fback.dims == field.dims);
    CHECK(fback.data == field.data);
}

TEST_CASE("a short raw file is an explicit length error") {
    TempDir dir;
    const Volume vol({2, 2, 2}, 1.0f);
    write_volume(dir.file("vol"), vol);
    // drop the final byte
    const std::string raw = dir.file("vol.raw");
    fs::resize_file(raw, fs::file_size(raw) - 1);
    CHECK_THROWS_WITH_AS(read_volume(dir.file("vol")),
                         doctest::Contains("bytes"), IoError);
}

TEST_CASE("header validation rejects bad version and channel counts") {
    TempDir dir;
    write_volume(dir.file("vol"), Volume({2, 2, 2}, 1.0f));

    auto rewrite_header = [&](const std::string& key, const std::string& value) {
        std::ifstream is(dir.file("vol.vjson"));
        std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        const auto pos = text.find("\"" + key + "\"");
        REQUIRE(pos != std::string::npos);
        const auto colon = text.find(':', pos);
        const auto end = text.find_first_of(",}\n", colon);
        text.replace(colon + 1, end - colon - 1, " " + value);
        std::ofstream os(dir.file("vol.vjson"));
        os << text;
    };

    rewrite_header("format_version", "9");
    CHECK_THROWS_AS(read_volume_header(dir.file("vol")), IoError);
    rewrite_header("format_version", "1");
    CHECK_NOTHROW(read_volume_header(dir.file("vol")));
    rewrite_header("channels", "2");
    CHECK_THROWS_AS(read_volume_header(dir.file("vol")), IoError);
}

TEST_CASE("channel count dispatches volume versus field") {
    TempDir dir;
    write_volume(dir.file("vol"), Volume({2, 2, 2}, 1.0f));
    write_field(dir.file("field"), DisplacementField({2, 2, 2}));
    CHECK(read_volume_header(dir.file("vol")).channels == 1);
    CHECK(read_volume_header(dir.file("field")).channels == 3);
    CHECK_THROWS_AS(read_field(dir.file("vol")), IoError);
    CHECK_THROWS_AS(read_volume(dir.file("field")), IoError);
}

TEST_CASE("synth_field with no blobs is the zero field") {
    SynthParams params;
    params.num_blobs = 0;
    const DisplacementField field = synth_field({4, 4, 4}, params);
    for (float v : field.data) CHECK(v == 0.0f);
}

TEST_CASE("synth_field respects the amplitude cap") {
    for (uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
        SynthParams params;
        params.seed = seed;
        params.max_amplitude = 2.5f;
        params.sigma_min = 2.0f;
        params.sigma_max = 6.0f;
        const DisplacementField field = synth_field({8, 12, 8}, params);
        const int64_t V = field.voxels();
        for (int64_t i = 0; i < V; ++i) {
            const float mag = std::sqrt(field.data[i] * field.data[i] +
                                        field.data[V + i] * field.data[V + i] +
                                        field.data[2 * V + i] * field.data[2 * V + i]);
            CHECK(mag <= params.max_amplitude + 1e-5f);
        }
    }
}

TEST_CASE("synthetic generators are pure functions of their seeds") {
    SynthParams params;
    params.seed = 52;
    const DisplacementField a = synth_field({4, 4, 8}, params);
    const DisplacementField b = synth_field({4, 4, 8}, params);
    CHECK(a.data == b.data);

    const Volume t1 = make_base_texture({6, 6, 6}, 53);
    const Volume t2 = make_base_texture({6, 6, 6}, 53);
    CHECK(t1.data == t2.data);
    const Volume t3 = make_base_texture({6, 6, 6}, 54);
    CHECK(t1.data != t3.data);
}

TEST_CASE("base texture is normalized and non-trivial") {
    for (uint64_t seed : {60ull, 61ull, 62ull}) {
        const Volume tex = make_base_texture({12, 12, 12}, seed);
        double mean = 0.0, sq = 0.0;
        for (float v : tex.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
            mean += v;
            sq += static_cast<double>(v) * v;
        }
        mean /= tex.numel();
        const double variance = sq / tex.numel() - mean * mean;
        CHECK(variance > 0.005);
    }
}

TEST_CASE("zero-amplitude synthesis returns an identical pair") {
    SynthParams params;
    params.max_amplitude = 0.0f;
    params.seed = 55;
    const Volume base = make_base_texture({4, 4, 4}, 55);
    const SyntheticPair pair = make_synthetic_pair(base, params);
    CHECK(pair.fixed.data == pair.moving.data);
    for (float v : pair.truth.data) CHECK(v == 0.0f);
}

TEST_CASE("the true field registers the synthetic pair almost perfectly") {
    SynthParams params;
    params.seed = 56;
    params.max_amplitude = 3.0f;
    const Volume base = make_base_texture({8, 12, 12}, 57);
    const SyntheticPair pair = make_synthetic_pair(base, params);
    Tensor loss = registration_loss(pair.fixed, pair.moving, pair.truth, 0.0f);
    CHECK(loss.item_double() <= -0.999);

    // the zero field is measurably wrong for nonzero amplitude
    double mean_mag = 0.0;
    const int64_t V = pair.truth.voxels();
    for (int64_t i = 0; i < V; ++i) {
        mean_mag += std::sqrt(pair.truth.data[i] * pair.truth.data[i] +
                              pair.truth.data[V + i] * pair.truth.data[V + i] +
                              pair.truth.data[2 * V + i] * pair.truth.data[2 * V + i]);
    }
    CHECK(mean_mag / V > 0.0);
}

TEST_CASE("synth_field validates dims") {
    SynthParams params;
    CHECK_THROWS_AS(synth_field({6, 8, 8}, params), ShapeError);
}
