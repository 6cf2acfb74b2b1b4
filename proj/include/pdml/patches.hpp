#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "pdml/hsi_cube.hpp"
#include "pdml/tensor.hpp"

namespace pdml {

using PixelCoord = std::pair<std::size_t, std::size_t>;  // (row, col)

/// A batch of s*s*d patches cut around labeled center pixels. Every pixel in
/// a patch inherits the center label for loss purposes.
struct PatchBatch {
    Tensor patches{std::vector<std::size_t>{0}};  // [B, s, s, d]
    std::vector<std::uint16_t> center_labels;     // 1-based class ids
    std::vector<PixelCoord> coords;
    std::size_t s = 0;

    std::size_t size() const { return center_labels.size(); }
};

/// Disjoint train/val/test coordinate lists over the labeled pixels.
struct DatasetSplit {
    std::vector<PixelCoord> train;
    std::vector<PixelCoord> val;
    std::vector<PixelCoord> test;
    std::uint64_t seed = 0;
    std::array<double, 3> ratios{};
};

/// Concentric square rings ("laps") of an s*s patch. Lap numbers are 1-based:
/// the center pixel is lap 1 and lap j holds the pixels at Chebyshev distance
/// j-1 from the center, 8(j-1) of them for j >= 2.
struct LapIndex {
    std::size_t s = 0;
    std::vector<std::size_t> lap_of;   // flat pixel index -> lap number
    std::vector<std::size_t> counts;   // counts[j-1] = pixels in lap j
};

/// Window centered at (row, col); positions outside the raster are filled by
/// mirror reflection about the border (the border pixel is not duplicated).
Tensor extract_patch(const HsiCube& cube, std::size_t row, std::size_t col,
                     std::size_t s);

LapIndex lap_index(std::size_t s);

/// Per-class random assignment honoring the (train, val, test) ratios.
/// Per-class counts are floor(ratio*n) with the remainder going to
/// train, then val, then test. Deterministic for a fixed seed.
DatasetSplit stratified_split(const LabelMap& labels,
                              const std::array<double, 3>& ratios,
                              std::uint64_t seed);

/// Assembles one batch from the coordinates in the order given (no shuffle,
/// no rng); used for evaluation passes where order must be the caller's.
PatchBatch gather_batch(const HsiCube& cube, const LabelMap& labels,
                        const std::vector<PixelCoord>& coords, std::size_t s);

/// Shuffles the coordinates with seed xor epoch and cuts them into batches
/// of size batch_size; the final short batch is emitted as-is.
std::vector<PatchBatch> make_batches(const std::vector<PixelCoord>& part,
                                     const HsiCube& cube, const LabelMap& labels,
                                     std::size_t s, std::size_t batch_size,
                                     std::uint64_t seed, std::uint64_t epoch);

}  // namespace pdml
