#include "pdml/synth.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pdml/errors.hpp"
#include "pdml/rng.hpp"

namespace pdml {

namespace {

// Tile index of a pixel along one axis, for T tiles over n pixels.
std::size_t tile_of(std::size_t i, std::size_t n, std::size_t tiles) {
    return i * tiles / n;
}

std::size_t min_tile_extent(std::size_t n, std::size_t tiles) {
    std::size_t best = n;
    for (std::size_t t = 0; t < tiles; ++t) {
        const std::size_t extent = (t + 1) * n / tiles - t * n / tiles;
        best = std::min(best, extent);
    }
    return best;
}

void validate(const SynthConfig& cfg) {
    if (cfg.classes < 2) throw ArgumentError("synth_cube: need at least 2 classes");
    if (cfg.bands < 4) throw ArgumentError("synth_cube: need at least 4 bands");
    if (cfg.tiles_y == 0 || cfg.tiles_x == 0) {
        throw ArgumentError("synth_cube: tile grid must be nonempty");
    }
    if (cfg.height < cfg.tiles_y || cfg.width < cfg.tiles_x) {
        throw ArgumentError("synth_cube: raster smaller than tile grid");
    }
    if (cfg.tiles_y * cfg.tiles_x < cfg.classes) {
        throw ArgumentError("synth_cube: tile grid has fewer cells than classes");
    }
    const std::size_t min_tile = std::min(min_tile_extent(cfg.height, cfg.tiles_y),
                                          min_tile_extent(cfg.width, cfg.tiles_x));
    if (2 * cfg.mixing_width >= min_tile) {
        throw ArgumentError(
            "synth_cube: mixing width " + std::to_string(cfg.mixing_width) +
            " is at least half the smallest tile extent " + std::to_string(min_tile) +
            ", leaving no pure pixels");
    }
}

}  // namespace

std::vector<std::vector<double>> synth_signatures(const SynthConfig& cfg) {
    // Each signature is a low-order sum of sinusoids over the band axis,
    // smooth by construction and distinct across classes with high
    // probability.
    std::vector<std::vector<double>> sigs(cfg.classes);
    for (std::size_t c = 0; c < cfg.classes; ++c) {
        Rng rng(mix_seed(cfg.seed, 100 + c));
        const double a0 = 2.0 * rng.uniform() - 1.0;
        double amp[3], phase[3];
        for (int h = 0; h < 3; ++h) {
            amp[h] = (2.0 * rng.uniform() - 1.0) / static_cast<double>(h + 1);
            phase[h] = 2.0 * M_PI * rng.uniform();
        }
        sigs[c].resize(cfg.bands);
        for (std::size_t b = 0; b < cfg.bands; ++b) {
            const double t = static_cast<double>(b) / static_cast<double>(cfg.bands - 1);
            double v = a0;
            for (int h = 0; h < 3; ++h) {
                v += amp[h] * std::sin(2.0 * M_PI * static_cast<double>(h + 1) * t + phase[h]);
            }
            sigs[c][b] = v;
        }
    }
    return sigs;
}

std::pair<HsiCube, LabelMap> synth_cube(const SynthConfig& cfg) {
    validate(cfg);
    const auto sigs = synth_signatures(cfg);

    // Class of each pixel's own tile, cycling through the grid cells.
    auto class_at = [&](std::size_t y, std::size_t x) -> std::size_t {
        const std::size_t ty = tile_of(y, cfg.height, cfg.tiles_y);
        const std::size_t tx = tile_of(x, cfg.width, cfg.tiles_x);
        return (ty * cfg.tiles_x + tx) % cfg.classes + 1;
    };

    HsiCube cube;
    cube.height = cfg.height;
    cube.width = cfg.width;
    cube.bands = cfg.bands;
    cube.data.assign(cfg.height * cfg.width * cfg.bands, 0.0);

    LabelMap lm;
    lm.height = cfg.height;
    lm.width = cfg.width;
    lm.num_classes = static_cast<std::uint32_t>(cfg.classes);
    lm.labels.resize(cfg.height * cfg.width);

    const long long w = static_cast<long long>(cfg.mixing_width);
    std::vector<std::size_t> present;
    for (std::size_t y = 0; y < cfg.height; ++y) {
        for (std::size_t x = 0; x < cfg.width; ++x) {
            lm.at(y, x) = static_cast<std::uint16_t>(class_at(y, x));

            // Distinct classes within the mixing radius, window clipped at
            // the raster border; the pixel's spectrum is their plain average.
            present.clear();
            for (long long dy = -w; dy <= w; ++dy) {
                const long long ny = static_cast<long long>(y) + dy;
                if (ny < 0 || ny >= static_cast<long long>(cfg.height)) continue;
                for (long long dx = -w; dx <= w; ++dx) {
                    const long long nx = static_cast<long long>(x) + dx;
                    if (nx < 0 || nx >= static_cast<long long>(cfg.width)) continue;
                    const std::size_t c = class_at(static_cast<std::size_t>(ny),
                                                   static_cast<std::size_t>(nx));
                    if (std::find(present.begin(), present.end(), c) == present.end()) {
                        present.push_back(c);
                    }
                }
            }
            double* px = cube.data.data() + (y * cfg.width + x) * cfg.bands;
            const double inv = 1.0 / static_cast<double>(present.size());
            for (std::size_t b = 0; b < cfg.bands; ++b) {
                double v = 0.0;
                for (std::size_t c : present) v += sigs[c - 1][b];
                px[b] = v * inv;
            }
        }
    }

    if (cfg.noise > 0.0) {
        Rng noise_rng(mix_seed(cfg.seed, 7));
        for (double& v : cube.data) v += cfg.noise * noise_rng.normal();
    }
    return {std::move(cube), std::move(lm)};
}

}  // namespace pdml
