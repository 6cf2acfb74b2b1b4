#pragma once

#include <cstdint>
#include <vector>

#include "pdml/param_store.hpp"
#include "pdml/patches.hpp"
#include "pdml/rng.hpp"
#include "pdml/tape.hpp"
#include "pdml/tensor.hpp"

namespace pdml {

/// Network sizing. The backbone is a spectral 1x1 convolution followed by a
/// spatial 3x3 convolution, both ReLU, preserving the s x s patch footprint.
struct BackboneConfig {
    std::size_t d = 0;      // input bands
    std::size_t c1 = 24;    // spectral mixing width
    std::size_t c2 = 24;    // spatial mixing width
    std::size_t r = 16;     // embedding dimension
    std::size_t k_cls = 0;  // class count
    std::size_t s = 5;      // patch side
};

/// Per-pixel Gaussian embeddings of a batch: means and standard deviations,
/// both [B, T, r] with T = s*s. Every entry of v is strictly positive.
struct GaussianField {
    Tensor m{std::vector<std::size_t>{0}};
    Tensor v{std::vector<std::size_t>{0}};
};

/// Tape handles for the embedding field of one batch, kept flat as
/// [B*T, r] for downstream graph building.
struct FieldNodes {
    Tape::NodeId m = 0;
    Tape::NodeId v = 0;
    std::size_t b = 0;
    std::size_t t = 0;
    std::size_t r = 0;
};

/// Creates all parameters: He-initialized weights, zero biases, and the two
/// match-probability scalars (stored as log a, so a starts at 1).
void init_params(ParamStore& store, const BackboneConfig& cfg, Rng& rng);

/// Checks that the store holds every expected parameter with the shape the
/// config demands. Throws ArgumentError otherwise.
void validate_params(const ParamStore& store, const BackboneConfig& cfg);

/// Mean-only graph: backbone plus mean head, [B*T, r]. The variance head is
/// not touched, which is what makes the inference path cheap.
Tape::NodeId mean_path(Tape& tape, const BackboneConfig& cfg, const PatchBatch& batch);

/// Full embedding graph: backbone, mean head, variance head (softplus with a
/// 1e-6 floor keeps every standard deviation positive).
FieldNodes field_path(Tape& tape, const BackboneConfig& cfg, const PatchBatch& batch);

/// Classifier graph: 1x1 convolution over the mean field, logits read at the
/// patch center position, [B, K_cls].
Tape::NodeId classifier_logits_node(Tape& tape, const BackboneConfig& cfg,
                                    Tape::NodeId m_flat, std::size_t b, std::size_t t);

/// Value-level evaluation of the embedding field.
GaussianField forward(ParamStore& store, const BackboneConfig& cfg,
                      const PatchBatch& batch);

/// Value-level center logits from a mean field of shape [B, T, r].
Tensor classify_logits(ParamStore& store, const BackboneConfig& cfg, const Tensor& m);

/// Mean-path classification of one s x s x d patch; returns the 1-based class
/// id, ties broken toward the smaller id. Never evaluates the variance head.
std::uint16_t predict(ParamStore& store, const BackboneConfig& cfg, const Tensor& patch);

/// Batched mean-path classification.
std::vector<std::uint16_t> predict_batch(ParamStore& store, const BackboneConfig& cfg,
                                         const PatchBatch& batch);

}  // namespace pdml
