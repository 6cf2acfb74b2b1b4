#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "doctest.h"
#include "pdml/errors.hpp"
#include "pdml/grad_check.hpp"
#include "pdml/param_store.hpp"
#include "pdml/rng.hpp"
#include "pdml/tape.hpp"

using namespace pdml;

namespace {

PatchBatch dummy_batch() {
    PatchBatch batch;
    batch.s = 1;
    batch.patches = Tensor({1, 1, 1, 1});
    batch.center_labels = {1};
    return batch;
}

ParamStore random_store(const std::vector<std::pair<std::string, std::vector<std::size_t>>>& spec,
                        std::uint64_t seed, ParamTag tag = ParamTag::backbone) {
    ParamStore store;
    Rng rng(seed);
    for (const auto& [name, shape] : spec) {
        Tensor t(shape);
        for (auto& x : t.values()) x = rng.normal();
        store.add(name, std::move(t), tag);
    }
    return store;
}

}  // namespace

TEST_CASE("half sum of squares has gradient theta") {
    ParamStore store = random_store({{"theta", {5}}}, 3);
    Tape tape(&store);
    const auto root = tape.half_sum_squares(tape.param("theta"));
    tape.backward(root);
    tape.accumulate_param_grads();

    double expect = 0.0;
    for (double x : store.at("theta").value.values()) expect += 0.5 * x * x;
    CHECK(tape.value(root)[0] == doctest::Approx(expect).epsilon(1e-15));
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(store.at("theta").grad[i] == store.at("theta").value[i]);
    }
}

TEST_CASE("scalar product gradients are the partner values") {
    ParamStore store;
    store.add("a", Tensor::scalar(3.0), ParamTag::metric_scalars);
    store.add("b", Tensor::scalar(-2.0), ParamTag::metric_scalars);
    Tape tape(&store);
    const auto root = tape.mul_scalars(tape.param("a"), tape.param("b"));
    tape.backward(root);
    tape.accumulate_param_grads();

    CHECK(tape.value(root)[0] == -6.0);
    CHECK(store.at("a").grad[0] == -2.0);
    CHECK(store.at("b").grad[0] == 3.0);
}

TEST_CASE("combine scales gradients linearly") {
    for (double c : {0.5, 2.0, -1.0}) {
        ParamStore store = random_store({{"theta", {4}}}, 8);
        Tape tape(&store);
        const auto base = tape.half_sum_squares(tape.param("theta"));
        const auto root = tape.combine({base}, {c});
        tape.backward(root);
        tape.accumulate_param_grads();
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(store.at("theta").grad[i] ==
                  doctest::Approx(c * store.at("theta").value[i]).epsilon(1e-15));
        }
    }
}

TEST_CASE("exp_scalar differentiates to itself") {
    ParamStore store;
    store.add("x", Tensor::scalar(0.7), ParamTag::metric_scalars);
    Tape tape(&store);
    const auto root = tape.exp_scalar(tape.param("x"));
    tape.backward(root);
    tape.accumulate_param_grads();
    CHECK(tape.value(root)[0] == doctest::Approx(std::exp(0.7)).epsilon(1e-15));
    CHECK(store.at("x").grad[0] == doctest::Approx(std::exp(0.7)).epsilon(1e-15));
}

TEST_CASE("ce_mean matches a hand-computed two-row example") {
    ParamStore store;
    store.add("logits", Tensor({2, 3}, {1.0, 2.0, 0.5, 0.0, 0.0, 0.0}),
              ParamTag::classifier);
    Tape tape(&store);
    const auto root = tape.ce_mean(tape.param("logits"), {1, 2});
    // Row 0, label index 1: -log softmax([1,2,.5])[1]; row 1 uniform: ln 3.
    const double z0 = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
    const double expect = 0.5 * (-std::log(std::exp(2.0) / z0) + std::log(3.0));
    CHECK(tape.value(root)[0] == doctest::Approx(expect).epsilon(1e-14));

    tape.backward(root);
    tape.accumulate_param_grads();
    // d/dlogit = (softmax - onehot)/N.
    const double p1 = std::exp(2.0) / z0;
    CHECK(store.at("logits").grad[1] == doctest::Approx(0.5 * (p1 - 1.0)).epsilon(1e-12));
    CHECK(store.at("logits").grad[3] == doctest::Approx(0.5 * (1.0 / 3.0)).epsilon(1e-12));
    CHECK(store.at("logits").grad[5] ==
          doctest::Approx(0.5 * (1.0 / 3.0 - 1.0)).epsilon(1e-12));
}

TEST_CASE("structured ops pass finite differences") {
    // One program exercising conv1x1, relu, conv3x3, softplus, gather and
    // cross-entropy end to end on a 2x(3x3) spatial block.
    ParamStore store;
    Rng rng(5);
    auto randn = [&](std::vector<std::size_t> shape) {
        Tensor t(shape);
        for (auto& x : t.values()) x = rng.normal() * 0.5;
        return t;
    };
    store.add("w1", randn({4, 3}), ParamTag::backbone);
    store.add("b1", randn({4}), ParamTag::backbone);
    store.add("w2", randn({3, 4, 3, 3}), ParamTag::backbone);
    store.add("b2", randn({3}), ParamTag::backbone);
    store.add("wc", randn({2, 3}), ParamTag::classifier);
    store.add("bc", randn({2}), ParamTag::classifier);
    const Tensor input = randn({2 * 9, 3});

    const LossProgram program = [input](Tape& tape, const PatchBatch&, Rng&) {
        const auto x = tape.constant(input);
        const auto h1 = tape.relu(tape.conv1x1(x, tape.param("w1"), tape.param("b1")));
        const auto h2 = tape.softplus_floor(
            tape.conv3x3(h1, tape.param("w2"), tape.param("b2"), 3, 3), 1e-6);
        const auto centers = tape.gather_rows(h2, {4, 13});
        const auto logits = tape.conv1x1(centers, tape.param("wc"), tape.param("bc"));
        return tape.ce_mean(logits, {0, 1});
    };

    const PatchBatch batch = dummy_batch();
    const RngState state = Rng(1).state();
    const FiniteDiffReport report =
        finite_diff_check(program, store, batch, state, 1e-5, 500, 17);
    CHECK(report.max_rel_err < 1e-6);
    CHECK(report.coords_checked == store.value_count());
}

TEST_CASE("gradient evaluation is bit-reproducible") {
    ParamStore store = random_store({{"theta", {6}}}, 12);
    const LossProgram program = [](Tape& tape, const PatchBatch&, Rng& rng) {
        // The noise scales the loss, so both the value and the gradient
        // depend on the generator state.
        const auto base = tape.half_sum_squares(tape.param("theta"));
        const auto jitter = tape.constant(Tensor::scalar(rng.normal()));
        return tape.combine({base, tape.mul_scalars(base, jitter)}, {1.0, 0.25});
    };
    const PatchBatch batch = dummy_batch();
    const RngState state = Rng(9).state();

    const double l1 = eval_loss_and_grads(program, store, batch, state);
    std::vector<double> g1(store.at("theta").grad.values());
    store.zero_grads();
    const double l2 = eval_loss_and_grads(program, store, batch, state);

    CHECK(l1 == l2);
    for (std::size_t i = 0; i < 6; ++i) CHECK(store.at("theta").grad[i] == g1[i]);
}

TEST_CASE("multi-root backward reads each term off a shared graph") {
    // The trainer differentiates several roots that share subexpressions on
    // one tape; each backward pass must see exactly its own root.
    ParamStore store;
    store.add("x", Tensor({2}, {1.5, -0.5}), ParamTag::backbone);
    Tape tape(&store);
    const auto x = tape.param("x");
    const auto shared = tape.half_sum_squares(x);       // f = (x0^2+x1^2)/2
    const auto doubled = tape.combine({shared}, {2.0});  // g = 2f

    tape.backward(shared);
    const Tensor df = tape.adjoint(x);
    CHECK(df[0] == 1.5);
    CHECK(df[1] == -0.5);

    tape.backward(doubled);
    const Tensor dg = tape.adjoint(x);
    CHECK(dg[0] == 3.0);
    CHECK(dg[1] == -1.0);

    // The first root again: adjoints reset cleanly between passes.
    tape.backward(shared);
    CHECK(tape.adjoint(x)[0] == 1.5);
}

TEST_CASE("backward rejects non-scalar roots") {
    ParamStore store = random_store({{"theta", {3}}}, 1);
    Tape tape(&store);
    const auto leaf = tape.param("theta");
    CHECK_THROWS_AS(tape.backward(leaf), ArgumentError);
}

TEST_CASE("finite_diff_check_against localizes an injected fault") {
    ParamStore store;
    Rng rng(31);
    auto randn = [&](std::vector<std::size_t> shape) {
        Tensor t(shape);
        for (auto& x : t.values()) x = rng.normal();
        return t;
    };
    store.add("clean", randn({8}), ParamTag::backbone);
    store.add("broken", randn({8}), ParamTag::var_head);

    const LossProgram program = [](Tape& tape, const PatchBatch&, Rng&) {
        return tape.half_sum_squares(tape.combine(
            {tape.half_sum_squares(tape.param("clean")),
             tape.half_sum_squares(tape.param("broken"))},
            {1.0, 1.0}));
    };
    const PatchBatch batch = dummy_batch();
    const RngState state = Rng(2).state();

    std::unordered_map<std::string, Tensor> analytic;
    store.zero_grads();
    eval_loss_and_grads(program, store, batch, state);
    store.for_each([&](const std::string& name, const Param& p) {
        analytic.emplace(name, p.grad);
    });
    analytic.at("broken")[3] += 0.25;  // corrupt one coordinate

    const FiniteDiffReport report = finite_diff_check_against(
        program, store, batch, state, 1e-5, analytic, 100, 7);
    CHECK(report.per_tag.at("backbone") < 1e-6);
    CHECK(report.per_tag.at("var_head") > 1e-2);
    CHECK(report.worst_param == "broken");
    CHECK(report.worst_coord == 3);
    CHECK(report.worst_tag() == "var_head");
}

TEST_CASE("probes that straddle a slope break are skipped, not misreported") {
    const double eps = 1e-4;
    ParamStore store;
    // Coordinate 0 sits half a step from the break of max(x, 0), so both
    // probe intervals cross it; the other coordinates are far away.
    store.add("theta", Tensor({4}, {0.5 * eps, 1.0, -1.0, 0.25}),
              ParamTag::backbone);

    const LossProgram program = [](Tape& tape, const PatchBatch&, Rng&) {
        const auto th = tape.param("theta");
        const Tensor& x = tape.value(th);
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += std::max(x[i], 0.0);
        return tape.custom(Tensor::scalar(s), {th},
                           [th](Tape& t, Tape::NodeId self) {
                               const double up = t.adjoint(self)[0];
                               const Tensor& v = t.value(th);
                               Tensor& g = t.adjoint_mut(th);
                               for (std::size_t i = 0; i < v.size(); ++i) {
                                   if (v[i] > 0.0) g[i] += up;
                               }
                           });
    };
    const PatchBatch batch = dummy_batch();
    const RngState state = Rng(2).state();

    const FiniteDiffReport report =
        finite_diff_check(program, store, batch, state, eps, 4, 11);
    CHECK(report.coords_skipped == 1);
    CHECK(report.coords_checked == 3);
    CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("non-finite losses and gradients are reported as numeric errors") {
    ParamStore store;
    store.add("x", Tensor::scalar(800.0), ParamTag::backbone);
    const LossProgram explode = [](Tape& tape, const PatchBatch&, Rng&) {
        // exp(800) overflows to infinity.
        return tape.exp_scalar(tape.param("x"));
    };
    const PatchBatch batch = dummy_batch();
    const RngState state = Rng(0).state();
    CHECK_THROWS_AS(eval_loss_and_grads(explode, store, batch, state), NumericError);
}
