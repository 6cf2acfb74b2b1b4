#include "pdml/patches.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

#include "pdml/errors.hpp"
#include "pdml/rng.hpp"

namespace pdml {

namespace {

// Reflect an out-of-range index back into [0, n) without repeating the
// border pixel: -1 -> 1, n -> n-2.
std::size_t mirror_index(long long i, std::size_t n) {
    if (n == 1) return 0;
    const long long period = 2 * (static_cast<long long>(n) - 1);
    long long m = i % period;
    if (m < 0) m += period;
    if (m >= static_cast<long long>(n)) m = period - m;
    return static_cast<std::size_t>(m);
}

void require_odd(std::size_t s, const char* who) {
    if (s == 0 || s % 2 == 0) {
        throw ArgumentError(std::string(who) + ": patch side must be odd, got " +
                            std::to_string(s));
    }
}

}  // namespace

Tensor extract_patch(const HsiCube& cube, std::size_t row, std::size_t col,
                     std::size_t s) {
    require_odd(s, "extract_patch");
    if (row >= cube.height || col >= cube.width) {
        throw ArgumentError("extract_patch: center (" + std::to_string(row) + ", " +
                            std::to_string(col) + ") outside cube");
    }
    const long long half = static_cast<long long>(s / 2);
    Tensor patch({s, s, cube.bands});
    double* out = patch.data();
    for (std::size_t py = 0; py < s; ++py) {
        const std::size_t sy = mirror_index(
            static_cast<long long>(row) - half + static_cast<long long>(py), cube.height);
        for (std::size_t px = 0; px < s; ++px) {
            const std::size_t sx = mirror_index(
                static_cast<long long>(col) - half + static_cast<long long>(px), cube.width);
            const double* src = cube.data.data() + (sy * cube.width + sx) * cube.bands;
            std::copy(src, src + cube.bands, out);
            out += cube.bands;
        }
    }
    return patch;
}

LapIndex lap_index(std::size_t s) {
    require_odd(s, "lap_index");
    LapIndex idx;
    idx.s = s;
    const long long c = static_cast<long long>(s / 2);
    idx.lap_of.resize(s * s);
    idx.counts.assign(s / 2 + 1, 0);
    for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
            const long long dy = std::llabs(static_cast<long long>(y) - c);
            const long long dx = std::llabs(static_cast<long long>(x) - c);
            const std::size_t lap = static_cast<std::size_t>(std::max(dy, dx)) + 1;
            idx.lap_of[y * s + x] = lap;
            ++idx.counts[lap - 1];
        }
    }
    return idx;
}

DatasetSplit stratified_split(const LabelMap& labels,
                              const std::array<double, 3>& ratios,
                              std::uint64_t seed) {
    const double sum = ratios[0] + ratios[1] + ratios[2];
    if (!(ratios[0] > 0 && ratios[1] > 0 && ratios[2] > 0)) {
        throw ArgumentError("stratified_split: ratios must be positive");
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ArgumentError("stratified_split: ratios must sum to 1, got " +
                            std::to_string(sum));
    }

    // Gather coordinates per class in scan order, then shuffle each class
    // with its own substream so the assignment is deterministic.
    std::vector<std::vector<PixelCoord>> per_class(labels.num_classes);
    for (std::size_t y = 0; y < labels.height; ++y) {
        for (std::size_t x = 0; x < labels.width; ++x) {
            const std::uint16_t l = labels.at(y, x);
            if (l >= 1) per_class[l - 1].push_back({y, x});
        }
    }

    DatasetSplit split;
    split.seed = seed;
    split.ratios = ratios;
    for (std::uint32_t c = 0; c < labels.num_classes; ++c) {
        auto& coords = per_class[c];
        if (coords.size() < 3) {
            throw ArgumentError("stratified_split: class " + std::to_string(c + 1) +
                                " has " + std::to_string(coords.size()) +
                                " labeled pixels, need at least 3");
        }
        Rng rng(mix_seed(seed, c + 1));
        rng.shuffle(coords);
        const std::size_t n = coords.size();
        std::array<std::size_t, 3> take = {
            static_cast<std::size_t>(std::floor(ratios[0] * static_cast<double>(n))),
            static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(n))),
            static_cast<std::size_t>(std::floor(ratios[2] * static_cast<double>(n)))};
        std::size_t rem = n - take[0] - take[1] - take[2];
        for (std::size_t i = 0; i < rem && i < 3; ++i) ++take[i];
        std::size_t pos = 0;
        for (std::size_t i = 0; i < take[0]; ++i) split.train.push_back(coords[pos++]);
        for (std::size_t i = 0; i < take[1]; ++i) split.val.push_back(coords[pos++]);
        for (std::size_t i = 0; i < take[2]; ++i) split.test.push_back(coords[pos++]);
    }
    return split;
}

PatchBatch gather_batch(const HsiCube& cube, const LabelMap& labels,
                        const std::vector<PixelCoord>& coords, std::size_t s) {
    require_odd(s, "gather_batch");
    if (coords.empty()) throw ArgumentError("gather_batch: empty coordinate list");
    const std::size_t b = coords.size();
    const std::size_t d = cube.bands;
    PatchBatch batch;
    batch.s = s;
    batch.patches = Tensor({b, s, s, d});
    batch.center_labels.resize(b);
    batch.coords = coords;
    for (std::size_t i = 0; i < b; ++i) {
        const auto [y, x] = coords[i];
        const Tensor patch = extract_patch(cube, y, x, s);
        std::copy(patch.values().begin(), patch.values().end(),
                  batch.patches.data() + i * s * s * d);
        batch.center_labels[i] = labels.at(y, x);
    }
    return batch;
}

std::vector<PatchBatch> make_batches(const std::vector<PixelCoord>& part,
                                     const HsiCube& cube, const LabelMap& labels,
                                     std::size_t s, std::size_t batch_size,
                                     std::uint64_t seed, std::uint64_t epoch) {
    require_odd(s, "make_batches");
    if (part.empty()) throw ArgumentError("make_batches: empty coordinate list");
    if (batch_size == 0) throw ArgumentError("make_batches: batch size must be positive");

    std::vector<PixelCoord> coords = part;
    Rng rng(seed ^ epoch);
    rng.shuffle(coords);

    std::vector<PatchBatch> batches;
    for (std::size_t start = 0; start < coords.size(); start += batch_size) {
        const std::size_t b = std::min(batch_size, coords.size() - start);
        std::vector<PixelCoord> chunk(coords.begin() + static_cast<std::ptrdiff_t>(start),
                                      coords.begin() + static_cast<std::ptrdiff_t>(start + b));
        batches.push_back(gather_batch(cube, labels, chunk, s));
    }
    return batches;
}

}  // namespace pdml
