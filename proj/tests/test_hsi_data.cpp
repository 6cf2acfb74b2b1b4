#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "pdml/errors.hpp"
#include "pdml/hsi_cube.hpp"
#include "pdml/patches.hpp"
#include "pdml/rng.hpp"
#include "pdml/synth.hpp"

using namespace pdml;

namespace {

std::string tmp_path(const std::string& name) { return "/tmp/pdml_ut_" + name; }

void write_raw(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void push_u32(std::vector<unsigned char>& v, std::uint32_t x) {
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<unsigned char>((x >> (8 * i)) & 0xff));
}

void push_f32(std::vector<unsigned char>& v, float x) {
    std::uint32_t bits;
    std::memcpy(&bits, &x, 4);
    push_u32(v, bits);
}

/// Independent reflect-101 oracle: walk the coordinate back into range by
/// folding at the borders, never duplicating the border sample.
std::size_t fold_index(long long i, std::size_t n) {
    if (n == 1) return 0;
    const long long period = 2 * (static_cast<long long>(n) - 1);
    long long m = ((i % period) + period) % period;
    if (m >= static_cast<long long>(n)) m = period - m;
    return static_cast<std::size_t>(m);
}

}  // namespace

TEST_CASE("cube round trip preserves every value") {
    HsiCube cube;
    cube.height = 3;
    cube.width = 2;
    cube.bands = 4;
    cube.data.resize(3 * 2 * 4);
    Rng rng(1);
    for (auto& x : cube.data) x = rng.uniform() * 10 - 5;

    const std::string path = tmp_path("cube_rt.hsc1");
    save_cube(cube, path);
    const HsiCube back = load_cube(path);
    CHECK(back.height == 3);
    CHECK(back.width == 2);
    CHECK(back.bands == 4);
    // Storage is 32-bit; round trip through float must be exact after the
    // first save/load pair.
    for (std::size_t i = 0; i < cube.data.size(); ++i) {
        CHECK(back.data[i] == doctest::Approx(cube.data[i]).epsilon(1e-7));
        CHECK(back.data[i] == static_cast<double>(static_cast<float>(cube.data[i])));
    }
}

TEST_CASE("cube loader reads a hand-built byte stream") {
    // 1x1 raster, two bands, values 1.5 and -2.0, assembled byte by byte.
    std::vector<unsigned char> bytes{'H', 'S', 'C', '1'};
    push_u32(bytes, 1);
    push_u32(bytes, 1);
    push_u32(bytes, 2);
    push_f32(bytes, 1.5f);
    push_f32(bytes, -2.0f);
    const std::string path = tmp_path("cube_hand.hsc1");
    write_raw(path, bytes);

    const HsiCube cube = load_cube(path);
    CHECK(cube.height == 1);
    CHECK(cube.width == 1);
    CHECK(cube.bands == 2);
    CHECK(cube.at(0, 0, 0) == 1.5);
    CHECK(cube.at(0, 0, 1) == -2.0);
}

TEST_CASE("cube loader errors carry byte offsets") {
    const std::string path = tmp_path("cube_bad.hsc1");

    write_raw(path, {'X', 'S', 'C', '1', 0, 0, 0, 0});
    CHECK_THROWS_WITH_AS(load_cube(path), doctest::Contains("byte offset 0"), IoError);

    std::vector<unsigned char> trunc{'H', 'S', 'C', '1'};
    push_u32(trunc, 1);
    push_u32(trunc, 1);
    push_u32(trunc, 2);
    push_f32(trunc, 1.0f);  // second band sample missing
    write_raw(path, trunc);
    CHECK_THROWS_AS(load_cube(path), IoError);

    std::vector<unsigned char> nonfin{'H', 'S', 'C', '1'};
    push_u32(nonfin, 1);
    push_u32(nonfin, 1);
    push_u32(nonfin, 2);
    push_f32(nonfin, 1.0f);
    push_f32(nonfin, std::numeric_limits<float>::quiet_NaN());
    write_raw(path, nonfin);
    // Second float lives at offset 16 + 1*4 = 20.
    CHECK_THROWS_WITH_AS(load_cube(path), doctest::Contains("byte offset 20"), IoError);
}

TEST_CASE("label map round trip and validation") {
    LabelMap labels;
    labels.height = 2;
    labels.width = 3;
    labels.num_classes = 4;
    labels.labels = {0, 1, 2, 3, 4, 0};

    const std::string path = tmp_path("labels_rt.hsl1");
    save_labels(labels, path);
    const LabelMap back = load_labels(path);
    CHECK(back.num_classes == 4);
    CHECK(back.labels == labels.labels);
    CHECK(back.at(1, 1) == 4);

    labels.labels[2] = 5;  // exceeds num_classes
    save_labels(labels, path);
    CHECK_THROWS_AS(load_labels(path), IoError);
}

TEST_CASE("standardize hits the closed-form example") {
    // One band, four pixels, values 1,1,1,3: mean 1.5, population std
    // sqrt(3)/2, so the standardized values are -1/sqrt(3) and sqrt(3).
    HsiCube cube;
    cube.height = 2;
    cube.width = 2;
    cube.bands = 1;
    cube.data = {1, 1, 1, 3};

    const HsiCube z = standardize(cube);
    CHECK(z.standardized);
    const double lo = -1.0 / std::sqrt(3.0);
    const double hi = std::sqrt(3.0);
    CHECK(z.data[0] == doctest::Approx(lo).epsilon(1e-12));
    CHECK(z.data[1] == doctest::Approx(lo).epsilon(1e-12));
    CHECK(z.data[2] == doctest::Approx(lo).epsilon(1e-12));
    CHECK(z.data[3] == doctest::Approx(hi).epsilon(1e-12));

    CHECK_THROWS_AS(standardize(z), ArgumentError);
}

TEST_CASE("standardize rejects a flat band by index") {
    HsiCube cube;
    cube.height = 1;
    cube.width = 3;
    cube.bands = 2;
    cube.data = {1, 7, 2, 7, 3, 7};  // band 1 constant
    CHECK_THROWS_WITH_AS(standardize(cube), doctest::Contains("band 1"), ArgumentError);
}

TEST_CASE("standardized bands have zero mean and unit variance") {
    HsiCube cube;
    cube.height = 4;
    cube.width = 5;
    cube.bands = 3;
    cube.data.resize(4 * 5 * 3);
    Rng rng(9);
    for (auto& x : cube.data) x = rng.normal() * 3 + 1;

    const HsiCube z = standardize(cube);
    for (std::size_t b = 0; b < 3; ++b) {
        double sum = 0, sq = 0;
        for (std::size_t y = 0; y < 4; ++y) {
            for (std::size_t x = 0; x < 5; ++x) {
                sum += z.at(y, x, b);
                sq += z.at(y, x, b) * z.at(y, x, b);
            }
        }
        CHECK(sum / 20 == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(sq / 20 == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("extract_patch agrees with the fold oracle everywhere") {
    HsiCube cube;
    cube.height = 4;
    cube.width = 3;
    cube.bands = 2;
    cube.data.resize(4 * 3 * 2);
    for (std::size_t i = 0; i < cube.data.size(); ++i) cube.data[i] = static_cast<double>(i);

    for (std::size_t s : {1u, 3u, 5u, 7u}) {
        const long long half = static_cast<long long>(s) / 2;
        for (std::size_t y = 0; y < cube.height; ++y) {
            for (std::size_t x = 0; x < cube.width; ++x) {
                const Tensor patch = extract_patch(cube, y, x, s);
                REQUIRE(patch.same_shape(Tensor({s, s, 2})));
                for (std::size_t py = 0; py < s; ++py) {
                    for (std::size_t px = 0; px < s; ++px) {
                        const std::size_t sy =
                            fold_index(static_cast<long long>(y) + py - half, cube.height);
                        const std::size_t sx =
                            fold_index(static_cast<long long>(x) + px - half, cube.width);
                        for (std::size_t b = 0; b < 2; ++b) {
                            CHECK(patch[(py * s + px) * 2 + b] == cube.at(sy, sx, b));
                        }
                    }
                }
            }
        }
    }

    CHECK_THROWS_AS(extract_patch(cube, 0, 0, 4), ArgumentError);
}

TEST_CASE("lap_index matches Chebyshev-ring enumeration") {
    for (std::size_t s = 1; s <= 15; s += 2) {
        const LapIndex lap = lap_index(s);
        const long long half = static_cast<long long>(s) / 2;
        REQUIRE(lap.lap_of.size() == s * s);
        std::vector<std::size_t> counts((s + 1) / 2, 0);
        for (std::size_t py = 0; py < s; ++py) {
            for (std::size_t px = 0; px < s; ++px) {
                const long long dy = std::llabs(static_cast<long long>(py) - half);
                const long long dx = std::llabs(static_cast<long long>(px) - half);
                const std::size_t ring = static_cast<std::size_t>(std::max(dy, dx));
                CHECK(lap.lap_of[py * s + px] == ring + 1);
                ++counts[ring];
            }
        }
        REQUIRE(lap.counts.size() == counts.size());
        for (std::size_t j = 0; j < counts.size(); ++j) {
            CHECK(lap.counts[j] == counts[j]);
            CHECK(counts[j] == (j == 0 ? 1 : 8 * j));
        }
    }
}

namespace {

LabelMap make_labels(std::size_t h, std::size_t w, std::uint16_t k,
                     const std::vector<std::uint16_t>& values) {
    LabelMap labels;
    labels.height = h;
    labels.width = w;
    labels.num_classes = k;
    labels.labels = values;
    return labels;
}

}  // namespace

TEST_CASE("stratified_split honors the floor-and-remainder rule") {
    // Class 1 has 7 pixels, class 2 has 5, plus 3 unlabeled. With ratios
    // (0.2, 0.1, 0.7): class 1 floors to (1, 0, 4) with remainder 2 going to
    // train then val; class 2 floors to (1, 0, 3) with remainder 1 to train.
    std::vector<std::uint16_t> values(15, 0);
    for (int i = 0; i < 7; ++i) values[i] = 1;
    for (int i = 7; i < 12; ++i) values[i] = 2;
    const LabelMap labels = make_labels(3, 5, 2, values);

    const DatasetSplit split = stratified_split(labels, {0.2, 0.1, 0.7}, 11);
    std::map<std::uint16_t, std::array<std::size_t, 3>> counts;
    auto tally = [&](const std::vector<PixelCoord>& part, std::size_t slot) {
        for (const auto& [y, x] : part) {
            const std::uint16_t c = labels.at(y, x);
            CHECK(c != 0);
            ++counts[c][slot];
        }
    };
    tally(split.train, 0);
    tally(split.val, 1);
    tally(split.test, 2);

    CHECK(counts[1] == std::array<std::size_t, 3>{2, 1, 4});
    CHECK(counts[2] == std::array<std::size_t, 3>{2, 0, 3});

    // Disjoint cover of the labeled pixels.
    std::set<PixelCoord> all;
    for (const auto& part : {split.train, split.val, split.test}) {
        for (const auto& c : part) CHECK(all.insert(c).second);
    }
    CHECK(all.size() == 12);
}

TEST_CASE("stratified_split is deterministic and seed-sensitive") {
    std::vector<std::uint16_t> values(100);
    for (std::size_t i = 0; i < 100; ++i) values[i] = static_cast<std::uint16_t>(i % 4 + 1);
    const LabelMap labels = make_labels(10, 10, 4, values);

    const DatasetSplit a = stratified_split(labels, {0.2, 0.1, 0.7}, 5);
    const DatasetSplit b = stratified_split(labels, {0.2, 0.1, 0.7}, 5);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);

    const DatasetSplit c = stratified_split(labels, {0.2, 0.1, 0.7}, 6);
    CHECK(a.train != c.train);
}

TEST_CASE("stratified_split input validation") {
    const LabelMap tiny = make_labels(1, 4, 2, {1, 1, 1, 2});
    // Class 2 has fewer than three pixels.
    CHECK_THROWS_WITH_AS(stratified_split(tiny, {0.2, 0.1, 0.7}, 1),
                         doctest::Contains("class 2"), ArgumentError);

    const LabelMap ok = make_labels(1, 6, 1, {1, 1, 1, 1, 1, 1});
    CHECK_THROWS_AS(stratified_split(ok, {0.5, 0.1, 0.7}, 1), ArgumentError);
    CHECK_THROWS_AS(stratified_split(ok, {-0.1, 0.4, 0.7}, 1), ArgumentError);
}

TEST_CASE("make_batches covers the split deterministically") {
    HsiCube cube;
    cube.height = 6;
    cube.width = 6;
    cube.bands = 2;
    cube.data.assign(6 * 6 * 2, 0.5);
    std::vector<std::uint16_t> values(36);
    for (std::size_t i = 0; i < 36; ++i) values[i] = static_cast<std::uint16_t>(i % 2 + 1);
    const LabelMap labels = make_labels(6, 6, 2, values);
    std::vector<PixelCoord> part;
    for (std::size_t y = 0; y < 6; ++y) {
        for (std::size_t x = 0; x < 6; ++x) part.emplace_back(y, x);
    }

    const auto batches = make_batches(part, cube, labels, 3, 16, 7, 2);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 16);
    CHECK(batches[1].size() == 16);
    CHECK(batches[2].size() == 4);

    std::set<PixelCoord> seen;
    for (const auto& b : batches) {
        for (std::size_t i = 0; i < b.size(); ++i) {
            CHECK(seen.insert(b.coords[i]).second);
            CHECK(b.center_labels[i] == labels.at(b.coords[i].first, b.coords[i].second));
        }
    }
    CHECK(seen.size() == 36);

    const auto again = make_batches(part, cube, labels, 3, 16, 7, 2);
    CHECK(again[0].coords == batches[0].coords);
    const auto other_epoch = make_batches(part, cube, labels, 3, 16, 7, 3);
    CHECK(other_epoch[0].coords != batches[0].coords);
}

TEST_CASE("synth signatures are smooth deterministic spectra") {
    SynthConfig cfg;
    cfg.classes = 3;
    cfg.bands = 16;
    cfg.seed = 21;
    const auto sigs = synth_signatures(cfg);
    REQUIRE(sigs.size() == 3);
    for (const auto& sig : sigs) {
        REQUIRE(sig.size() == 16);
        for (double x : sig) CHECK(std::isfinite(x));
    }
    CHECK(sigs == synth_signatures(cfg));
    CHECK(sigs[0] != sigs[1]);

    SynthConfig other = cfg;
    other.seed = 22;
    CHECK(synth_signatures(other)[0] != sigs[0]);
}

TEST_CASE("synth pure pixels carry their class signature exactly") {
    SynthConfig cfg;
    cfg.classes = 2;
    cfg.height = 4;
    cfg.width = 8;
    cfg.bands = 6;
    cfg.tiles_y = 1;
    cfg.tiles_x = 2;
    cfg.seed = 3;
    cfg.noise = 0.0;
    cfg.mixing_width = 1;

    const auto [cube, labels] = synth_cube(cfg);
    const auto sigs = synth_signatures(cfg);

    // Column 0 sits deep inside tile 1; column 3 touches the boundary and
    // must be the even blend of both signatures; labels stay pure.
    for (std::size_t b = 0; b < 6; ++b) {
        CHECK(cube.at(1, 0, b) == sigs[0][b]);
        CHECK(cube.at(1, 7, b) == sigs[1][b]);
        CHECK(cube.at(1, 3, b) == doctest::Approx(0.5 * (sigs[0][b] + sigs[1][b])).epsilon(1e-12));
        CHECK(cube.at(1, 4, b) == doctest::Approx(0.5 * (sigs[0][b] + sigs[1][b])).epsilon(1e-12));
    }
    CHECK(labels.at(1, 3) == 1);
    CHECK(labels.at(1, 4) == 2);
    CHECK(labels.num_classes == 2);
}

TEST_CASE("synth rejects mixing that erases all pure pixels") {
    SynthConfig cfg;
    cfg.classes = 2;
    cfg.height = 4;
    cfg.width = 8;
    cfg.bands = 4;
    cfg.tiles_y = 1;
    cfg.tiles_x = 2;
    cfg.mixing_width = 2;  // 2*2 >= min tile extent 4
    CHECK_THROWS_WITH_AS(synth_cube(cfg), doctest::Contains("pure"), ArgumentError);

    SynthConfig few = cfg;
    few.mixing_width = 0;
    few.tiles_y = 1;
    few.tiles_x = 1;  // fewer tiles than classes
    CHECK_THROWS_AS(synth_cube(few), ArgumentError);
}

TEST_CASE("synth noise is additive and seed-stable") {
    SynthConfig cfg;
    cfg.classes = 2;
    cfg.height = 4;
    cfg.width = 8;
    cfg.bands = 4;
    cfg.tiles_y = 1;
    cfg.tiles_x = 2;
    cfg.seed = 17;

    const auto [clean, labels_a] = synth_cube(cfg);
    cfg.noise = 0.1;
    const auto [noisy, labels_b] = synth_cube(cfg);
    const auto [noisy2, labels_c] = synth_cube(cfg);

    CHECK(labels_a.labels == labels_b.labels);
    CHECK(noisy.data == noisy2.data);
    double max_dev = 0.0;
    for (std::size_t i = 0; i < clean.data.size(); ++i) {
        max_dev = std::max(max_dev, std::fabs(noisy.data[i] - clean.data[i]));
        CHECK(noisy.data[i] != clean.data[i]);
    }
    CHECK(max_dev < 1.0);  // 0.1 std keeps deviations small
}
