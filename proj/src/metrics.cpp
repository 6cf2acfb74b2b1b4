#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "pdml/errors.hpp"
#include "pdml/metrics.hpp"
#include "pdml/tape.hpp"

namespace pdml {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (std::uint64_t c : counts) t += c;
    return t;
}

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < k; ++i) t += at(i, i);
    return t;
}

Metrics compute_metrics(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (cm.k == 0 || total == 0) {
        throw ArgumentError("compute_metrics: empty confusion matrix");
    }

    Metrics m;
    m.oa = static_cast<double>(cm.trace()) / static_cast<double>(total);

    m.per_class.assign(cm.k, std::numeric_limits<double>::quiet_NaN());
    double recall_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t i = 0; i < cm.k; ++i) {
        std::uint64_t row = 0;
        for (std::size_t j = 0; j < cm.k; ++j) row += cm.at(i, j);
        if (row == 0) continue;
        m.per_class[i] = static_cast<double>(cm.at(i, i)) / static_cast<double>(row);
        recall_sum += m.per_class[i];
        ++present;
    }
    m.aa = recall_sum / static_cast<double>(present);

    // kappa = (total*trace - sum_k row_k*col_k) / (total^2 - sum_k row_k*col_k),
    // kept in integers until the final division. The denominator vanishes only
    // when all mass sits in a single diagonal cell, where kappa is 1 by the
    // perfect-agreement convention.
    std::uint64_t sum_rc = 0;
    for (std::size_t i = 0; i < cm.k; ++i) {
        std::uint64_t row = 0, col = 0;
        for (std::size_t j = 0; j < cm.k; ++j) {
            row += cm.at(i, j);
            col += cm.at(j, i);
        }
        sum_rc += row * col;
    }
    const std::int64_t num = static_cast<std::int64_t>(total * cm.trace()) -
                             static_cast<std::int64_t>(sum_rc);
    const std::int64_t den = static_cast<std::int64_t>(total * total) -
                             static_cast<std::int64_t>(sum_rc);
    m.kappa = den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
    return m;
}

std::pair<ConfusionMatrix, Metrics> evaluate(ParamStore& params,
                                             const BackboneConfig& cfg,
                                             const HsiCube& cube,
                                             const LabelMap& labels,
                                             const std::vector<PixelCoord>& coords) {
    if (coords.empty()) throw ArgumentError("evaluate: empty coordinate list");
    validate_params(params, cfg);

    ConfusionMatrix cm(cfg.k_cls);
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < coords.size(); start += chunk) {
        const std::size_t stop = std::min(start + chunk, coords.size());
        const std::vector<PixelCoord> part(coords.begin() + start, coords.begin() + stop);
        const PatchBatch batch = gather_batch(cube, labels, part, cfg.s);
        const std::vector<std::uint16_t> pred = predict_batch(params, cfg, batch);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const std::uint16_t truth = batch.center_labels[i];
            if (truth == 0) {
                throw ArgumentError("evaluate: unlabeled coordinate (" +
                                    std::to_string(part[i].first) + ", " +
                                    std::to_string(part[i].second) + ")");
            }
            if (truth > cfg.k_cls) {
                throw ArgumentError("evaluate: label " + std::to_string(truth) +
                                    " exceeds class count " + std::to_string(cfg.k_cls));
            }
            cm.at(truth - 1, pred[i] - 1) += 1;
        }
    }
    return {cm, compute_metrics(cm)};
}

namespace {

Rgb hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = h / 60.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) {
        r = c; g = x;
    } else if (hp < 2) {
        r = x; g = c;
    } else if (hp < 3) {
        g = c; b = x;
    } else if (hp < 4) {
        g = x; b = c;
    } else if (hp < 5) {
        r = x; b = c;
    } else {
        r = c; b = x;
    }
    const double m = v - c;
    auto q = [&](double t) {
        return static_cast<unsigned char>(std::lround(255.0 * (t + m)));
    };
    return {q(r), q(g), q(b)};
}

}  // namespace

std::vector<Rgb> default_palette(std::size_t n_colors) {
    std::vector<Rgb> palette;
    palette.reserve(n_colors);
    if (n_colors > 0) palette.push_back({0, 0, 0});
    // Golden-ratio hue steps spread neighbors far apart on the wheel; the
    // saturation/value cycles separate colors that land on similar hues.
    for (std::size_t i = 1; i < n_colors; ++i) {
        const double hue = std::fmod(0.618033988749895 * static_cast<double>(i - 1), 1.0) * 360.0;
        const double sat = 0.55 + 0.15 * static_cast<double>((i - 1) % 3);
        const double val = 0.95 - 0.25 * static_cast<double>((i - 1) % 2);
        Rgb color = hsv_to_rgb(hue, sat, val);
        while (std::find(palette.begin(), palette.end(), color) != palette.end()) {
            color[2] = static_cast<unsigned char>(color[2] + 1);
            if (color[2] == 0) color[1] = static_cast<unsigned char>(color[1] + 1);
        }
        palette.push_back(color);
    }
    return palette;
}

std::vector<unsigned char> render_map(const std::vector<std::uint16_t>& classes,
                                      std::size_t height, std::size_t width,
                                      const std::vector<Rgb>& palette) {
    if (classes.size() != height * width) {
        throw ArgumentError("render_map: class list has " + std::to_string(classes.size()) +
                            " entries but the raster is " + std::to_string(height) + "x" +
                            std::to_string(width));
    }
    const std::string header =
        "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(out.size() + classes.size() * 3);
    for (std::uint16_t id : classes) {
        if (id >= palette.size()) {
            throw ArgumentError("render_map: class id " + std::to_string(id) +
                                " has no palette entry");
        }
        out.push_back(palette[id][0]);
        out.push_back(palette[id][1]);
        out.push_back(palette[id][2]);
    }
    return out;
}

void dump_embeddings(ParamStore& params, const BackboneConfig& cfg,
                     const HsiCube& cube, const LabelMap& labels,
                     const std::vector<PixelCoord>& coords,
                     const std::string& path) {
    if (coords.empty()) throw ArgumentError("dump_embeddings: empty coordinate list");
    validate_params(params, cfg);

    std::ofstream file(path);
    if (!file) throw IoError("cannot open file for writing: " + path);
    file << "label";
    for (std::size_t i = 0; i < cfg.r; ++i) file << ",m" << i;
    for (std::size_t i = 0; i < cfg.r; ++i) file << ",v" << i;
    file << "\n";

    char buf[40];
    const std::size_t t = cfg.s * cfg.s;
    const std::size_t center = t / 2;
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < coords.size(); start += chunk) {
        const std::size_t stop = std::min(start + chunk, coords.size());
        const std::vector<PixelCoord> part(coords.begin() + start, coords.begin() + stop);
        const PatchBatch batch = gather_batch(cube, labels, part, cfg.s);
        const GaussianField field = forward(params, cfg, batch);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            if (batch.center_labels[i] == 0) {
                throw ArgumentError("dump_embeddings: unlabeled coordinate (" +
                                    std::to_string(part[i].first) + ", " +
                                    std::to_string(part[i].second) + ")");
            }
            file << batch.center_labels[i];
            const std::size_t base = (i * t + center) * cfg.r;
            for (std::size_t j = 0; j < cfg.r; ++j) {
                std::snprintf(buf, sizeof buf, ",%.17g", field.m[base + j]);
                file << buf;
            }
            for (std::size_t j = 0; j < cfg.r; ++j) {
                std::snprintf(buf, sizeof buf, ",%.17g", field.v[base + j]);
                file << buf;
            }
            file << "\n";
        }
    }
    if (!file) throw IoError("write failed: " + path);
}

}  // namespace pdml
