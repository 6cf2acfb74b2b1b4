#pragma once

#include <cstdint>
#include <vector>

#include "pdml/model.hpp"
#include "pdml/param_store.hpp"
#include "pdml/patches.hpp"
#include "pdml/rng.hpp"
#include "pdml/tape.hpp"
#include "pdml/tensor.hpp"

namespace pdml {

/// Which per-pair objective the pair term uses: the probabilistic loss over
/// Monte Carlo distribution match probabilities, or the conventional
/// margin contrastive loss on the mean embeddings (the deterministic
/// baseline).
enum class PairLossKind { probabilistic, contrastive };

/// Candidate pair pool: every unordered pixel pair in the batch, or only
/// pairs within the same patch.
enum class PairScope { batch, patch };

struct LossConfig {
    double alpha = 0.2;       // lap-margin sensitivity
    std::size_t k = 3;        // Monte Carlo samples per distribution
    double beta = 1.0;        // contrastive margin (baseline only)
    double lambda1 = 1.0;     // variance-ordering weight
    double lambda2 = 1.0;     // pair-loss weight
    double lambda3 = 1.0;     // cross-entropy weight
    bool hinge_var = true;    // clamp the variance term at 0 (see variance_lap_loss)
    std::size_t pair_cap = 4096;
    PairLossKind pair_loss = PairLossKind::probabilistic;
    PairScope pair_scope = PairScope::batch;
};

void validate(const LossConfig& cfg);

// ---------------------------------------------------------------------------
// Value-level operations.

/// K reparameterized draws from N(m, diag(v^2)): row k is m + v*eps_k with
/// eps_k standard normal, drawn sample-major then dimension-major.
Tensor mc_sample(const Tensor& m, const Tensor& v, std::size_t k, Rng& rng);

/// Soft-threshold match probability sigma(-a*|z1-z2| + b), a > 0.
double match_probability(const Tensor& z1, const Tensor& z2, double a, double b);

/// Monte Carlo estimate over two [K, r] sample sets: the mean of
/// match_probability over all K*K cross pairs.
double dist_match_probability(const Tensor& samples1, const Tensor& samples2,
                              double a, double b);

/// -log p for a match, -log(1-p) otherwise, with p clamped to
/// [1e-12, 1-1e-12] so the logs stay finite.
double pcon_loss(double p_hat, bool is_match);

/// Variance-ordering term of one patch. With A_j the mean (over the lap-j
/// pixels, then over the r dimensions) of the standard deviations, each lap
/// j >= 2 contributes -(A_j - (1+alpha)*A_{j-1}); with hinge_var the
/// contribution is floored at 0 so only ordering violations are penalized.
double variance_lap_loss(const Tensor& v, const LapIndex& lap, double alpha,
                         bool hinge_var);

/// Margin contrastive term y*D^2 + (1-y)*max(beta-D, 0)^2.
double contrastive_loss(const Tensor& z1, const Tensor& z2, int y, double beta);

/// -log softmax(logits)[label] with a 1-based label.
double cross_entropy(const Tensor& logits, std::size_t label);

/// Composite objective value for one batch at the given embedding field:
/// lambda1 * mean variance term + lambda2 * pair term + lambda3 * mean
/// cross-entropy on the center logits. The classifier and the metric scalars
/// are read from the store. Consumes rng exactly like the training graph, so
/// equal generator states give equal values.
double total_loss(ParamStore& params, const BackboneConfig& bb,
                  const PatchBatch& batch, const GaussianField& field,
                  const LapIndex& lap, const LossConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Graph building.

/// Node handles for the loss terms of one batch. Terms with a zero weight
/// are skipped entirely (their node ids are absent and they consume no rng
/// draws), which keeps degenerate configurations bit-identical to programs
/// that never mention the term.
struct LossTerms {
    Tape::NodeId total = 0;
    Tape::NodeId ce = 0;
    Tape::NodeId var = 0;
    Tape::NodeId pair = 0;
    bool has_ce = false;
    bool has_var = false;
    bool has_pair = false;
};

/// Builds the loss terms on top of an existing embedding field. Noise is
/// drawn from rng (all of it before pair selection); the draws are constants
/// under differentiation. v_node may be any valid node when lambda2 is zero
/// or the pair kind is contrastive and lambda1 is zero.
LossTerms build_loss_terms(Tape& tape, Tape::NodeId m_node, Tape::NodeId v_node,
                           std::size_t b, std::size_t t, std::size_t r,
                           std::size_t k_cls,
                           const std::vector<std::uint16_t>& center_labels,
                           const LapIndex& lap, const LossConfig& cfg, Rng& rng);

/// Full training graph for a batch: embedding field from the parameters,
/// then the loss terms.
LossTerms build_batch_loss(Tape& tape, const BackboneConfig& bb,
                           const PatchBatch& batch, const LapIndex& lap,
                           const LossConfig& cfg, Rng& rng);

}  // namespace pdml
