#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pdml/param_store.hpp"
#include "pdml/patches.hpp"
#include "pdml/rng.hpp"
#include "pdml/tape.hpp"

namespace pdml {

/// A differentiable scalar program: builds the forward graph on the tape and
/// returns the root node. Any Monte Carlo noise must be drawn from the given
/// generator so that a fixed generator state freezes the draws.
using LossProgram =
    std::function<Tape::NodeId(Tape&, const PatchBatch&, Rng&)>;

using RngState = std::array<std::uint64_t, 4>;

/// Forward-only evaluation of the program at the store's current values.
double eval_loss(const LossProgram& loss_fn, ParamStore& params,
                 const PatchBatch& batch, const RngState& rng_state);

/// Evaluates the program and accumulates analytic gradients into the store.
/// Noise draws are constants under differentiation; gradients flow through
/// the distribution parameters instead (reparameterization). Throws
/// NumericError naming the first offending parameter if anything comes out
/// non-finite.
double eval_loss_and_grads(const LossProgram& loss_fn, ParamStore& params,
                           const PatchBatch& batch, const RngState& rng_state);

struct FiniteDiffReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_coord = 0;
    std::unordered_map<std::string, double> per_param;  // max rel err by name
    std::unordered_map<std::string, double> per_tag;    // max rel err by tag name
    std::size_t coords_checked = 0;
    std::size_t coords_skipped = 0;  // probe interval crossed a slope break

    std::string worst_tag() const;
};

/// Central-difference comparison against caller-supplied analytic gradients,
/// probing a deterministic random subsample of at least min_coords_per_tag
/// coordinates within each routing tag (all coordinates if a tag has fewer).
/// Relative error is |analytic - numeric| / max(1, |analytic|, |numeric|).
///
/// Piecewise-linear activations make the loss nonsmooth on a measure-zero
/// set, and a probe whose interval [theta-eps, theta+eps] happens to contain
/// such a point measures a blend of the two one-sided slopes rather than the
/// derivative. Each coordinate is therefore probed at the full and at half
/// the step; when the two central differences disagree the interval contains
/// a slope break, the coordinate is not a valid probe at this step size, and
/// the next coordinate from the same shuffled stream takes its place (counted
/// in coords_skipped).
FiniteDiffReport finite_diff_check_against(
    const LossProgram& loss_fn, ParamStore& params, const PatchBatch& batch,
    const RngState& rng_state, double eps,
    const std::unordered_map<std::string, Tensor>& analytic,
    std::size_t min_coords_per_tag = 200, std::uint64_t probe_seed = 0);

/// Same, with the analytic gradients computed by eval_loss_and_grads.
FiniteDiffReport finite_diff_check(const LossProgram& loss_fn, ParamStore& params,
                                   const PatchBatch& batch,
                                   const RngState& rng_state, double eps,
                                   std::size_t min_coords_per_tag = 200,
                                   std::uint64_t probe_seed = 0);

}  // namespace pdml
