#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pdml/hsi_cube.hpp"
#include "pdml/model.hpp"
#include "pdml/param_store.hpp"
#include "pdml/patches.hpp"

namespace pdml {

/// Square count table, rows indexed by truth and columns by prediction.
/// Class ids are 0-based here; callers translate from 1-based labels.
struct ConfusionMatrix {
    std::size_t k = 0;
    std::vector<std::uint64_t> counts;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::size_t k_cls) : k(k_cls), counts(k_cls * k_cls, 0) {}

    std::uint64_t& at(std::size_t truth, std::size_t pred) {
        return counts[truth * k + pred];
    }
    std::uint64_t at(std::size_t truth, std::size_t pred) const {
        return counts[truth * k + pred];
    }
    std::uint64_t total() const;
    std::uint64_t trace() const;
};

/// Summary scores. per_class holds each class's recall; classes that never
/// occur in the truth get a quiet NaN there and are left out of aa.
struct Metrics {
    double oa = 0.0;
    double aa = 0.0;
    double kappa = 0.0;
    std::vector<double> per_class;
};

/// Derives oa, aa, kappa and per-class recall from the count table.
/// Cohen's kappa is computed from integer sums so that small hand-checkable
/// tables come out exact. An all-zero table is an argument error.
Metrics compute_metrics(const ConfusionMatrix& cm);

/// Runs mean-path prediction over the given labeled coordinates and
/// accumulates the confusion matrix. Throws ArgumentError on an empty
/// coordinate list or an unlabeled coordinate.
std::pair<ConfusionMatrix, Metrics> evaluate(ParamStore& params,
                                             const BackboneConfig& cfg,
                                             const HsiCube& cube,
                                             const LabelMap& labels,
                                             const std::vector<PixelCoord>& coords);

using Rgb = std::array<unsigned char, 3>;

/// Distinct colors for class ids 0..n_colors-1, with index 0 black for
/// unlabeled pixels. Distinctness is what makes a rendered map invertible.
std::vector<Rgb> default_palette(std::size_t n_colors);

/// Renders per-pixel class ids (row-major, height*width of them) as a binary
/// PPM (P6, maxval 255). A class id with no palette entry is an argument
/// error.
std::vector<unsigned char> render_map(const std::vector<std::uint16_t>& classes,
                                      std::size_t height, std::size_t width,
                                      const std::vector<Rgb>& palette);

/// Writes one CSV row per coordinate: center label, the r embedding means,
/// then the r standard deviations. Values are printed with enough digits to
/// re-parse exactly.
void dump_embeddings(ParamStore& params, const BackboneConfig& cfg,
                     const HsiCube& cube, const LabelMap& labels,
                     const std::vector<PixelCoord>& coords,
                     const std::string& path);

}  // namespace pdml
