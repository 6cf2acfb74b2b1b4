#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "pdml/hsi_cube.hpp"

namespace pdml {

/// Recipe for a synthetic labeled cube: the raster is tiled into class
/// regions, each class gets a random smooth spectral signature, and pixels
/// near region boundaries become convex mixtures of the nearby signatures.
struct SynthConfig {
    std::size_t classes = 4;
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t bands = 16;
    std::size_t tiles_y = 2;       // grid layout of class regions
    std::size_t tiles_x = 2;
    std::uint64_t seed = 0;        // drives signatures and noise
    double noise = 0.0;            // white-noise standard deviation
    std::size_t mixing_width = 0;  // Chebyshev radius of boundary mixing
};

std::pair<HsiCube, LabelMap> synth_cube(const SynthConfig& cfg);

/// The per-class signatures the generator would use, mostly for tests.
std::vector<std::vector<double>> synth_signatures(const SynthConfig& cfg);

}  // namespace pdml
