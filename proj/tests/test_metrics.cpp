#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "pdml/errors.hpp"
#include "pdml/metrics.hpp"
#include "pdml/synth.hpp"

using namespace pdml;

namespace {

ConfusionMatrix table2(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                       std::uint64_t d) {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = a;
    cm.at(0, 1) = b;
    cm.at(1, 0) = c;
    cm.at(1, 1) = d;
    return cm;
}

}  // namespace

TEST_CASE("hand-checked two-class table") {
    const ConfusionMatrix cm = table2(40, 10, 20, 30);
    CHECK(cm.total() == 100);
    CHECK(cm.trace() == 70);

    const Metrics m = compute_metrics(cm);
    // oa = 70/100 and kappa = 2000/5000; both divisions land on the same
    // doubles as the literals, so these comparisons are exact.
    CHECK(m.oa == 0.70);
    CHECK(m.kappa == 0.40);
    CHECK(m.per_class[0] == 0.8);
    CHECK(m.per_class[1] == 0.6);
    CHECK(m.aa == doctest::Approx(0.70).epsilon(1e-15));
}

TEST_CASE("perfect agreement scores one") {
    ConfusionMatrix cm(3);
    cm.at(0, 0) = 12;
    cm.at(1, 1) = 7;
    cm.at(2, 2) = 3;
    const Metrics m = compute_metrics(cm);
    CHECK(m.oa == 1.0);
    CHECK(m.aa == 1.0);
    CHECK(m.kappa == 1.0);
}

TEST_CASE("single occupied diagonal cell has kappa one") {
    // Chance agreement equals observed agreement equals one here; the
    // degenerate denominator resolves to perfect agreement.
    ConfusionMatrix cm(2);
    cm.at(1, 1) = 9;
    const Metrics m = compute_metrics(cm);
    CHECK(m.oa == 1.0);
    CHECK(m.kappa == 1.0);
    CHECK(std::isnan(m.per_class[0]));
    CHECK(m.per_class[1] == 1.0);
    CHECK(m.aa == 1.0);
}

TEST_CASE("constant predictor on balanced truth has kappa zero") {
    const ConfusionMatrix cm = table2(30, 0, 30, 0);
    const Metrics m = compute_metrics(cm);
    CHECK(m.oa == 0.5);
    CHECK(m.kappa == 0.0);
}

TEST_CASE("kappa is invariant under relabeling") {
    const ConfusionMatrix cm = table2(40, 10, 20, 30);
    const ConfusionMatrix swapped = table2(30, 20, 10, 40);
    CHECK(compute_metrics(cm).kappa == compute_metrics(swapped).kappa);
    CHECK(compute_metrics(cm).oa == compute_metrics(swapped).oa);
}

TEST_CASE("classes absent from the truth are excluded from aa") {
    ConfusionMatrix cm(3);
    cm.at(0, 0) = 8;
    cm.at(0, 2) = 2;  // some predictions land in class 2, truth never does
    cm.at(1, 1) = 5;
    const Metrics m = compute_metrics(cm);
    CHECK(m.per_class[0] == 0.8);
    CHECK(m.per_class[1] == 1.0);
    CHECK(std::isnan(m.per_class[2]));
    CHECK(m.aa == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("an empty table is rejected") {
    ConfusionMatrix cm(2);
    CHECK_THROWS_AS(compute_metrics(cm), ArgumentError);
    CHECK_THROWS_AS(compute_metrics(ConfusionMatrix()), ArgumentError);
}

namespace {

struct EvalScene {
    HsiCube cube;
    LabelMap labels;
    ParamStore params;
    BackboneConfig bb;
    std::vector<PixelCoord> all_coords;
};

EvalScene make_eval_scene(std::uint64_t seed, bool random_params) {
    SynthConfig sc;
    sc.classes = 2;
    sc.height = 8;
    sc.width = 8;
    sc.bands = 5;
    sc.tiles_y = 1;
    sc.tiles_x = 2;
    sc.seed = seed;
    sc.noise = 0.05;
    auto [cube, labels] = synth_cube(sc);

    EvalScene scene;
    scene.cube = standardize(cube);
    scene.labels = labels;
    scene.bb.d = 5;
    scene.bb.c1 = 4;
    scene.bb.c2 = 4;
    scene.bb.r = 3;
    scene.bb.k_cls = 2;
    scene.bb.s = 3;
    Rng rng(seed + 1);
    init_params(scene.params, scene.bb, rng);
    if (!random_params) {
        scene.params.for_each([](const std::string&, Param& p) { p.value.fill(0.0); });
    }
    for (std::size_t y = 0; y < 8; ++y) {
        for (std::size_t x = 0; x < 8; ++x) scene.all_coords.push_back({y, x});
    }
    return scene;
}

}  // namespace

TEST_CASE("evaluate with a constant predictor reproduces the chance table") {
    EvalScene scene = make_eval_scene(11, false);
    // Zero parameters mean all logits tie and every pixel gets class 1.
    auto [cm, m] = evaluate(scene.params, scene.bb, scene.cube, scene.labels,
                            scene.all_coords);
    CHECK(cm.total() == 64);
    CHECK(cm.at(0, 0) == 32);
    CHECK(cm.at(0, 1) == 0);
    CHECK(cm.at(1, 0) == 32);
    CHECK(cm.at(1, 1) == 0);
    CHECK(m.oa == 0.5);
    CHECK(m.kappa == 0.0);
}

TEST_CASE("evaluate matches per-patch prediction") {
    EvalScene scene = make_eval_scene(12, true);
    auto [cm, m] = evaluate(scene.params, scene.bb, scene.cube, scene.labels,
                            scene.all_coords);

    ConfusionMatrix want(2);
    for (const auto& [y, x] : scene.all_coords) {
        const Tensor patch = extract_patch(scene.cube, y, x, scene.bb.s);
        const std::uint16_t pred = predict(scene.params, scene.bb, patch);
        want.at(scene.labels.at(y, x) - 1u, pred - 1u) += 1;
    }
    CHECK(cm.counts == want.counts);
    CHECK(m.oa == compute_metrics(want).oa);
}

TEST_CASE("evaluate argument errors") {
    EvalScene scene = make_eval_scene(13, true);
    CHECK_THROWS_AS(
        evaluate(scene.params, scene.bb, scene.cube, scene.labels, {}),
        ArgumentError);

    scene.labels.at(2, 2) = 0;
    CHECK_THROWS_AS(evaluate(scene.params, scene.bb, scene.cube, scene.labels,
                             {{2, 2}}),
                    ArgumentError);
}

TEST_CASE("palette starts black and stays distinct") {
    for (std::size_t n : {1u, 2u, 5u, 17u, 65u}) {
        const std::vector<Rgb> pal = default_palette(n);
        REQUIRE(pal.size() == n);
        CHECK(pal[0] == Rgb{0, 0, 0});
        std::set<std::array<unsigned char, 3>> seen(pal.begin(), pal.end());
        CHECK(seen.size() == n);
    }
}

TEST_CASE("render_map emits the exact binary ppm") {
    const std::vector<Rgb> pal = {{0, 0, 0}, {255, 0, 0}, {0, 128, 255}};
    const std::vector<std::uint16_t> classes = {0, 1, 2, 2, 1, 0};
    const std::vector<unsigned char> ppm = render_map(classes, 2, 3, pal);

    const std::string header = "P6\n3 2\n255\n";
    REQUIRE(ppm.size() == header.size() + 18);
    CHECK(std::string(ppm.begin(), ppm.begin() + header.size()) == header);
    const unsigned char* px = ppm.data() + header.size();
    const unsigned char want[18] = {0, 0, 0, 255, 0,   0, 0, 128, 255,
                                    0, 128, 255, 255, 0, 0, 0, 0,   0};
    for (int i = 0; i < 18; ++i) CHECK(px[i] == want[i]);
}

TEST_CASE("render_map rejects bad input") {
    const std::vector<Rgb> pal = {{0, 0, 0}, {1, 2, 3}};
    CHECK_THROWS_AS(render_map({0, 1, 0}, 2, 2, pal), ArgumentError);
    CHECK_THROWS_AS(render_map({0, 2}, 1, 2, pal), ArgumentError);
}

TEST_CASE("embedding dump re-parses to the forward values") {
    EvalScene scene = make_eval_scene(14, true);
    const std::vector<PixelCoord> coords = {{1, 1}, {3, 6}, {6, 2}};
    const std::string path = "/tmp/pdml_ut_embed.csv";
    dump_embeddings(scene.params, scene.bb, scene.cube, scene.labels, coords, path);

    std::ifstream f(path);
    REQUIRE(f.good());
    std::string header;
    std::getline(f, header);
    CHECK(header == "label,m0,m1,m2,v0,v1,v2");

    const PatchBatch batch = gather_batch(scene.cube, scene.labels, coords, scene.bb.s);
    const GaussianField field = forward(scene.params, scene.bb, batch);
    const std::size_t t = scene.bb.s * scene.bb.s;
    const std::size_t center = t / 2;
    const std::size_t r = scene.bb.r;

    std::string line;
    std::size_t row = 0;
    while (std::getline(f, line)) {
        REQUIRE(row < coords.size());
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        CHECK(std::stoul(cell) == batch.center_labels[row]);
        const std::size_t base = (row * t + center) * r;
        for (std::size_t q = 0; q < 2 * r; ++q) {
            REQUIRE(std::getline(ss, cell, ','));
            const double got = std::stod(cell);
            const double want =
                q < r ? field.m[base + q] : field.v[base + (q - r)];
            // Printed with round-trip precision, so re-parsing is exact.
            CHECK(got == want);
        }
        ++row;
    }
    CHECK(row == coords.size());
    std::remove(path.c_str());

    scene.labels.at(1, 1) = 0;
    CHECK_THROWS_AS(dump_embeddings(scene.params, scene.bb, scene.cube, scene.labels,
                                    coords, path),
                    ArgumentError);
}
