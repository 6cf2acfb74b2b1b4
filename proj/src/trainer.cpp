#include "pdml/trainer.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "pdml/errors.hpp"

namespace pdml {

const char* selection_name(SelectionRule rule) {
    return rule == SelectionRule::best_val_oa ? "best_val_oa" : "last";
}

SelectionRule selection_from_name(const std::string& name) {
    if (name == "best_val_oa") return SelectionRule::best_val_oa;
    if (name == "last") return SelectionRule::last;
    throw ArgumentError("unknown selection rule: " + name);
}

void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ArgumentError("train config: epochs must be >= 1");
    if (cfg.batch_size < 2) throw ArgumentError("train config: batch size must be >= 2");
    if (!(cfg.learning_rate > 0.0)) {
        throw ArgumentError("train config: learning rate must be > 0");
    }
    if (!(cfg.rho > 0.0 && cfg.rho < 1.0)) {
        throw ArgumentError("train config: rho must be in (0, 1)");
    }
    if (!(cfg.eps > 0.0)) throw ArgumentError("train config: eps must be > 0");
    validate(cfg.loss);
}

RmsState RmsState::zeros_like(const ParamStore& params) {
    RmsState state;
    params.for_each([&](const std::string& name, const Param& p) {
        state.s.emplace(name, Tensor(p.value.shape()));
    });
    return state;
}

void rmsprop_step(ParamStore& params, RmsState& state, double lr, double rho,
                  double eps) {
    params.for_each([&](const std::string& name, Param& p) {
        auto it = state.s.find(name);
        if (it == state.s.end() || !it->second.same_shape(p.value)) {
            throw ArgumentError("rmsprop_step: state does not match parameter " + name);
        }
        Tensor& s = it->second;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            s[i] = rho * s[i] + (1.0 - rho) * g * g;
            p.value[i] -= lr * g / (std::sqrt(s[i]) + eps);
            if (!std::isfinite(p.value[i])) {
                throw NumericError("non-finite update in parameter " + name +
                                   " at flat index " + std::to_string(i));
            }
        }
    });
}

bool routing_allows(ParamTag tag, LossTerm term) {
    switch (tag) {
        case ParamTag::backbone:
        case ParamTag::mean_head:
            return true;
        case ParamTag::var_head:
            return term == LossTerm::var || term == LossTerm::pair;
        case ParamTag::classifier:
            return term == LossTerm::ce;
        case ParamTag::metric_scalars:
            return term == LossTerm::pair;
    }
    throw ArgumentError("routing: unknown parameter tag");
}

void apply_routing(ParamStore& params, const TermGrads& grads, const LossConfig& cfg) {
    params.zero_grads();
    auto add = [&](const std::unordered_map<std::string, Tensor>& term_grads,
                   LossTerm term, double weight) {
        if (weight == 0.0) return;
        // Iterate the store's order, not the map's, so summation order is
        // fixed and runs are reproducible.
        params.for_each([&](const std::string& name, Param& p) {
            auto it = term_grads.find(name);
            if (it == term_grads.end()) return;
            if (!routing_allows(p.tag, term)) return;
            if (!it->second.same_shape(p.grad)) {
                throw ArgumentError("routing: gradient shape mismatch for " + name);
            }
            for (std::size_t i = 0; i < p.grad.size(); ++i) {
                p.grad[i] += weight * it->second[i];
            }
        });
    };
    add(grads.var, LossTerm::var, cfg.lambda1);
    add(grads.pair, LossTerm::pair, cfg.lambda2);
    add(grads.ce, LossTerm::ce, cfg.lambda3);
}

namespace {

// Mean-path accuracy over an ordered coordinate list, evaluated in chunks.
double ordered_oa(ParamStore& params, const BackboneConfig& bb, const HsiCube& cube,
                  const LabelMap& labels, const std::vector<PixelCoord>& coords,
                  std::size_t chunk) {
    if (coords.empty()) return -1.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < coords.size(); start += chunk) {
        const std::size_t n = std::min(chunk, coords.size() - start);
        std::vector<PixelCoord> part(coords.begin() + static_cast<std::ptrdiff_t>(start),
                                     coords.begin() + static_cast<std::ptrdiff_t>(start + n));
        const PatchBatch batch = gather_batch(cube, labels, part, bb.s);
        const auto preds = predict_batch(params, bb, batch);
        for (std::size_t i = 0; i < n; ++i) {
            if (preds[i] == batch.center_labels[i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(coords.size());
}

TrainResult run_epochs(const HsiCube& cube, const LabelMap& labels,
                       const DatasetSplit& split, const TrainConfig& cfg,
                       ParamStore params, RmsState rms, Rng noise_rng,
                       std::size_t start_epoch, std::size_t best_epoch,
                       double best_val_oa) {
    validate(cfg);
    validate_params(params, cfg.backbone);
    if (split.train.empty()) throw ArgumentError("train: empty train split");
    if (cfg.selection == SelectionRule::best_val_oa && split.val.empty()) {
        throw ArgumentError("train: best_val_oa selection needs a validation split");
    }
    if (start_epoch >= cfg.epochs) {
        throw ArgumentError("train: checkpoint already has " +
                            std::to_string(start_epoch) + " epochs, config asks for " +
                            std::to_string(cfg.epochs));
    }
    const LapIndex lap = lap_index(cfg.backbone.s);

    TrainResult result;
    result.selected_is_fresh = false;
    auto snapshot = [&](std::size_t epochs_done) {
        Checkpoint ck;
        ck.params = params;
        ck.rms = rms;
        ck.noise_state = noise_rng.state();
        ck.epochs_done = epochs_done;
        ck.best_epoch = best_epoch;
        ck.best_val_oa = best_val_oa;
        ck.cfg = cfg;
        return ck;
    };

    for (std::size_t e = start_epoch; e < cfg.epochs; ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto batches = make_batches(split.train, cube, labels, cfg.backbone.s,
                                          cfg.batch_size, cfg.seed, e);
        double loss_sum = 0.0;
        std::size_t loss_batches = 0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const PatchBatch& batch = batches[bi];
            // The loss is pairwise; a trailing singleton batch cannot form a
            // pair and is skipped.
            if (batch.size() < 2) continue;
            try {
                Tape tape(&params);
                const LossTerms terms =
                    build_batch_loss(tape, cfg.backbone, batch, lap, cfg.loss, noise_rng);
                const double loss = tape.value(terms.total)[0];
                if (!std::isfinite(loss)) {
                    throw NumericError("non-finite loss value " + std::to_string(loss));
                }
                TermGrads grads;
                auto harvest = [&](Tape::NodeId root,
                                   std::unordered_map<std::string, Tensor>& into) {
                    tape.backward(root);
                    tape.for_each_param_adjoint(
                        [&](const std::string& name, const Tensor& adj) {
                            into.emplace(name, adj);
                        });
                };
                if (terms.has_var) harvest(terms.var, grads.var);
                if (terms.has_pair) harvest(terms.pair, grads.pair);
                if (terms.has_ce) harvest(terms.ce, grads.ce);
                apply_routing(params, grads, cfg.loss);
                params.for_each([&](const std::string& name, const Param& p) {
                    const std::size_t bad = p.grad.first_non_finite();
                    if (bad != p.grad.size()) {
                        throw NumericError("non-finite gradient in parameter " + name +
                                           " at flat index " + std::to_string(bad));
                    }
                });
                rmsprop_step(params, rms, cfg.learning_rate, cfg.rho, cfg.eps);
                loss_sum += loss;
                ++loss_batches;
            } catch (const NumericError& err) {
                throw NumericError("epoch " + std::to_string(e + 1) + ", batch " +
                                   std::to_string(bi) + ": " + err.what());
            }
        }

        EpochRecord rec;
        rec.epoch = e + 1;
        rec.train_loss = loss_batches ? loss_sum / static_cast<double>(loss_batches) : 0.0;
        rec.val_oa = ordered_oa(params, cfg.backbone, cube, labels, split.val,
                                cfg.batch_size);
        if (rec.val_oa > best_val_oa) {
            best_val_oa = rec.val_oa;
            best_epoch = e + 1;
            result.selected = snapshot(e + 1);
            result.selected_is_fresh = true;
        }
        const auto t1 = std::chrono::steady_clock::now();
        rec.wall_ms =
            std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
        result.history.push_back(rec);
    }

    result.last = snapshot(cfg.epochs);
    if (cfg.selection == SelectionRule::last || !result.selected_is_fresh) {
        // For the last rule the end state is the deliverable; otherwise this
        // is the resume case where the pre-resume best still stands and the
        // caller keeps its previously saved selected checkpoint.
        const bool fresh = cfg.selection == SelectionRule::last;
        result.selected = result.last;
        result.selected_is_fresh = fresh;
    }
    return result;
}

}  // namespace

TrainResult train(const HsiCube& cube, const LabelMap& labels,
                  const DatasetSplit& split, const TrainConfig& cfg) {
    validate(cfg);
    ParamStore params;
    Rng init_rng(mix_seed(cfg.seed, 1));
    init_params(params, cfg.backbone, init_rng);
    RmsState rms = RmsState::zeros_like(params);
    Rng noise_rng(mix_seed(cfg.seed, 2));
    return run_epochs(cube, labels, split, cfg, std::move(params), std::move(rms),
                      noise_rng, 0, 0, -1.0);
}

TrainResult resume_train(const HsiCube& cube, const LabelMap& labels,
                         const DatasetSplit& split, const TrainConfig& cfg,
                         const Checkpoint& from) {
    validate(cfg);
    Rng noise_rng;
    noise_rng.set_state(from.noise_state);
    return run_epochs(cube, labels, split, cfg, from.params, from.rms, noise_rng,
                      from.epochs_done, from.best_epoch, from.best_val_oa);
}

}  // namespace pdml
