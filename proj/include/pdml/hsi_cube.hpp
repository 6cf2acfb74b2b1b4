#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pdml {

/// Hyperspectral raster, pixel-major band-interleaved:
/// data[(y*width + x)*bands + b].
struct HsiCube {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t bands = 0;
    std::vector<double> data;
    bool standardized = false;

    std::size_t pixel_count() const { return height * width; }

    double at(std::size_t y, std::size_t x, std::size_t b) const {
        return data[(y * width + x) * bands + b];
    }
    double& at(std::size_t y, std::size_t x, std::size_t b) {
        return data[(y * width + x) * bands + b];
    }
};

/// Per-pixel class ids, 0 meaning unlabeled, 1..num_classes otherwise.
struct LabelMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::uint32_t num_classes = 0;
    std::vector<std::uint16_t> labels;

    std::uint16_t at(std::size_t y, std::size_t x) const {
        return labels[y * width + x];
    }
    std::uint16_t& at(std::size_t y, std::size_t x) {
        return labels[y * width + x];
    }
};

/// Binary cube file ("HSC1" magic, u32le dims, f32le payload).
HsiCube load_cube(const std::string& path);
void save_cube(const HsiCube& cube, const std::string& path);

/// Binary label file ("HSL1" magic, u32le dims + class count, u16le labels).
LabelMap load_labels(const std::string& path);
void save_labels(const LabelMap& labels, const std::string& path);

/// Per-band z-scoring over all pixels, population statistics.
HsiCube standardize(const HsiCube& cube);

}  // namespace pdml
