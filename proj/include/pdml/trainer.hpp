#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pdml/grad_check.hpp"
#include "pdml/hsi_cube.hpp"
#include "pdml/loss.hpp"
#include "pdml/model.hpp"
#include "pdml/param_store.hpp"
#include "pdml/patches.hpp"

namespace pdml {

enum class SelectionRule { best_val_oa, last };

const char* selection_name(SelectionRule rule);
SelectionRule selection_from_name(const std::string& name);

struct TrainConfig {
    std::size_t epochs = 300;
    std::size_t batch_size = 16;
    double learning_rate = 1e-4;
    double rho = 0.9;   // RMSProp decay
    double eps = 1e-8;  // RMSProp denominator guard
    std::uint64_t seed = 0;
    LossConfig loss;
    BackboneConfig backbone;
    SelectionRule selection = SelectionRule::best_val_oa;
};

void validate(const TrainConfig& cfg);

/// Per-parameter running square accumulators, keyed by parameter name.
struct RmsState {
    std::unordered_map<std::string, Tensor> s;

    /// Zero accumulators shaped like the store's parameters.
    static RmsState zeros_like(const ParamStore& params);
};

/// One RMSProp update from the gradients currently in the store:
/// s <- rho*s + (1-rho)*g^2, theta <- theta - lr*g/(sqrt(s) + eps).
void rmsprop_step(ParamStore& params, RmsState& state, double lr, double rho,
                  double eps);

/// Gradients of the three loss terms evaluated separately (raw, unweighted).
/// Maps hold entries only for parameters the term actually reaches.
struct TermGrads {
    std::unordered_map<std::string, Tensor> ce;
    std::unordered_map<std::string, Tensor> var;
    std::unordered_map<std::string, Tensor> pair;
};

enum class LossTerm { ce, var, pair };

/// Whether a parameter with the given tag is updated by the given term:
/// classifier reads the cross-entropy term only, the variance head reads
/// the lambda1 and lambda2 terms only, the metric scalars read the lambda2
/// term only, backbone and mean head read everything.
bool routing_allows(ParamTag tag, LossTerm term);

/// Writes the lambda-weighted sum of the per-term gradients admitted by
/// routing_allows into the store's grad accumulators (overwriting them).
void apply_routing(ParamStore& params, const TermGrads& grads, const LossConfig& cfg);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_oa = -1.0;  // -1 when no validation pixels were evaluated
    std::int64_t wall_ms = 0;
};

/// Complete optimizer state at the end of some epoch, the unit that the
/// "PDC1" file serializes. Resuming from it reproduces the uninterrupted
/// trajectory bit for bit.
struct Checkpoint {
    ParamStore params;
    RmsState rms;
    RngState noise_state{};
    std::size_t epochs_done = 0;
    std::size_t best_epoch = 0;  // 1-based; 0 when val was never evaluated
    double best_val_oa = -1.0;
    TrainConfig cfg;
};

struct TrainResult {
    Checkpoint selected;  // per the selection rule
    Checkpoint last;      // end-of-training state, resume source
    /// False only on resume when the pre-resume best was never beaten; the
    /// caller's previously saved selected checkpoint then still stands.
    bool selected_is_fresh = true;
    std::vector<EpochRecord> history;  // records produced by this call only
};

/// Full training loop: per epoch, shuffle the train split into batches,
/// build the loss graph, take one backward pass per active loss term, route
/// the per-term gradients, and apply RMSProp. Deterministic for a fixed
/// config. Throws NumericError carrying the epoch and batch index on
/// non-finite values.
TrainResult train(const HsiCube& cube, const LabelMap& labels,
                  const DatasetSplit& split, const TrainConfig& cfg);

/// Continues a run from a checkpoint's end-of-epoch state up to cfg.epochs.
TrainResult resume_train(const HsiCube& cube, const LabelMap& labels,
                         const DatasetSplit& split, const TrainConfig& cfg,
                         const Checkpoint& from);

/// Binary checkpoint ("PDC1" magic, JSON manifest, then for each parameter
/// in manifest order its values and its RMSProp accumulator as 64-bit LE
/// floats). load(save(x)) is bit-identical.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pdml
