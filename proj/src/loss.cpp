#include "pdml/loss.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "pdml/errors.hpp"

namespace pdml {

namespace {

constexpr double kClampLo = 1e-12;
constexpr double kClampHi = 1.0 - 1e-12;
constexpr double kDistFloor = 1e-12;

double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double euclid(const double* x, const double* y, std::size_t r) {
    double acc = 0.0;
    for (std::size_t q = 0; q < r; ++q) {
        const double d = x[q] - y[q];
        acc += d * d;
    }
    return std::sqrt(acc);
}

struct PairEntry {
    std::uint32_t i = 0;
    std::uint32_t j = 0;
    bool match = false;
    double weight = 1.0;
};

// All candidate pixel pairs, capped by uniform sampling without replacement,
// balanced between match and non-match halves when the pool allows it.
// Sampled pairs carry inverse-probability weights so the capped sum keeps
// the expectation of the full sum. Enumeration order is fixed (i < j
// ascending), which pins the rng consumption and the reduction order.
std::vector<PairEntry> select_pairs(const std::vector<std::uint16_t>& pixel_labels,
                                    std::size_t b, std::size_t t,
                                    const LossConfig& cfg, Rng& rng) {
    const std::size_t n = b * t;
    std::vector<std::uint64_t> match_idx, non_idx;
    std::vector<PairEntry> candidates;
    auto consider = [&](std::size_t i, std::size_t j) {
        PairEntry e;
        e.i = static_cast<std::uint32_t>(i);
        e.j = static_cast<std::uint32_t>(j);
        e.match = pixel_labels[i] == pixel_labels[j];
        (e.match ? match_idx : non_idx).push_back(candidates.size());
        candidates.push_back(e);
    };
    if (cfg.pair_scope == PairScope::batch) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) consider(i, j);
        }
    } else {
        for (std::size_t p = 0; p < b; ++p) {
            for (std::size_t i = p * t; i < (p + 1) * t; ++i) {
                for (std::size_t j = i + 1; j < (p + 1) * t; ++j) consider(i, j);
            }
        }
    }
    if (candidates.size() <= cfg.pair_cap) return candidates;

    const std::size_t n_match = match_idx.size();
    const std::size_t n_non = non_idx.size();
    std::size_t take_match = std::min(cfg.pair_cap / 2, n_match);
    std::size_t take_non = std::min(cfg.pair_cap - take_match, n_non);
    take_match = std::min(n_match, cfg.pair_cap - take_non);

    auto sample_from = [&](std::vector<std::uint64_t>& pool, std::size_t take,
                           std::vector<PairEntry>& out) {
        // Partial Fisher-Yates; the first `take` slots are the sample.
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(
                                          rng.below(static_cast<std::uint64_t>(pool.size() - i)));
            std::swap(pool[i], pool[j]);
            PairEntry e = candidates[pool[i]];
            e.weight = static_cast<double>(pool.size()) / static_cast<double>(take);
            out.push_back(e);
        }
    };
    std::vector<PairEntry> picked;
    picked.reserve(take_match + take_non);
    sample_from(match_idx, take_match, picked);
    sample_from(non_idx, take_non, picked);
    return picked;
}

// Forward/backward state of the Monte Carlo pair term, shared with the
// backward closure.
struct McPairState {
    Tensor eps{std::vector<std::size_t>{0}};   // [N, K, r]
    Tensor z{std::vector<std::size_t>{0}};     // [N, K, r]
    std::vector<PairEntry> pairs;
    std::vector<double> u;       // sigmoid values per (pair, k1, k2)
    std::vector<double> dist;    // distances per (pair, k1, k2)
    std::vector<double> p_hat;   // raw estimate per pair
    std::size_t n = 0, k = 0, r = 0;
    double norm = 0.0;           // 1/(B*T)
};

}  // namespace

void validate(const LossConfig& cfg) {
    if (cfg.alpha < 0.0) throw ArgumentError("loss config: alpha must be >= 0");
    if (cfg.k < 1) throw ArgumentError("loss config: k must be >= 1");
    if (cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0 || cfg.lambda3 < 0.0) {
        throw ArgumentError("loss config: loss weights must be >= 0");
    }
    if (cfg.pair_cap < 1) throw ArgumentError("loss config: pair_cap must be >= 1");
}

Tensor mc_sample(const Tensor& m, const Tensor& v, std::size_t k, Rng& rng) {
    if (!m.same_shape(v) || m.rank() != 1) {
        throw ArgumentError("mc_sample: m and v must be equal-length vectors");
    }
    if (k < 1) throw ArgumentError("mc_sample: k must be >= 1");
    const std::size_t r = m.size();
    Tensor z({k, r});
    for (std::size_t s = 0; s < k; ++s) {
        for (std::size_t q = 0; q < r; ++q) {
            z[s * r + q] = m[q] + v[q] * rng.normal();
        }
    }
    return z;
}

double match_probability(const Tensor& z1, const Tensor& z2, double a, double b) {
    if (!z1.same_shape(z2) || z1.rank() != 1) {
        throw ArgumentError("match_probability: vectors must have equal length");
    }
    if (a <= 0.0) throw ArgumentError("match_probability: a must be > 0");
    return sigmoid(-a * euclid(z1.data(), z2.data(), z1.size()) + b);
}

double dist_match_probability(const Tensor& samples1, const Tensor& samples2,
                              double a, double b) {
    if (samples1.rank() != 2 || !samples1.same_shape(samples2)) {
        throw ArgumentError("dist_match_probability: need two [K, r] sample sets");
    }
    if (a <= 0.0) throw ArgumentError("dist_match_probability: a must be > 0");
    const std::size_t k = samples1.dim(0), r = samples1.dim(1);
    double acc = 0.0;
    for (std::size_t k1 = 0; k1 < k; ++k1) {
        for (std::size_t k2 = 0; k2 < k; ++k2) {
            acc += sigmoid(-a * euclid(samples1.data() + k1 * r,
                                       samples2.data() + k2 * r, r) +
                           b);
        }
    }
    return acc / static_cast<double>(k * k);
}

double pcon_loss(double p_hat, bool is_match) {
    const double p = std::clamp(p_hat, kClampLo, kClampHi);
    return is_match ? -std::log(p) : -std::log(1.0 - p);
}

double variance_lap_loss(const Tensor& v, const LapIndex& lap, double alpha,
                         bool hinge_var) {
    const std::size_t t = lap.s * lap.s;
    if (lap.s < 3) {
        throw ArgumentError("variance_lap_loss: need s >= 3, got s = " +
                            std::to_string(lap.s));
    }
    if (v.rank() != 2 || v.dim(0) != t) {
        throw ArgumentError("variance_lap_loss: v has shape " +
                            Tensor::shape_str(v.shape()) + ", expected [" +
                            std::to_string(t) + ", r]");
    }
    const std::size_t r = v.dim(1);
    const std::size_t n_laps = lap.counts.size();
    std::vector<double> lap_mean(n_laps, 0.0);
    for (std::size_t p = 0; p < t; ++p) {
        double row = 0.0;
        for (std::size_t q = 0; q < r; ++q) row += v[p * r + q];
        lap_mean[lap.lap_of[p] - 1] += row / static_cast<double>(r);
    }
    for (std::size_t j = 0; j < n_laps; ++j) {
        lap_mean[j] /= static_cast<double>(lap.counts[j]);
    }
    double total = 0.0;
    for (std::size_t j = 1; j < n_laps; ++j) {
        const double raw = -(lap_mean[j] - (1.0 + alpha) * lap_mean[j - 1]);
        total += hinge_var ? std::max(raw, 0.0) : raw;
    }
    return total;
}

double contrastive_loss(const Tensor& z1, const Tensor& z2, int y, double beta) {
    if (!z1.same_shape(z2) || z1.rank() != 1) {
        throw ArgumentError("contrastive_loss: vectors must have equal length");
    }
    if (y != 0 && y != 1) throw ArgumentError("contrastive_loss: y must be 0 or 1");
    if (beta <= 0.0) throw ArgumentError("contrastive_loss: beta must be > 0");
    const double d = euclid(z1.data(), z2.data(), z1.size());
    if (y == 1) return d * d;
    const double gap = std::max(beta - d, 0.0);
    return gap * gap;
}

double cross_entropy(const Tensor& logits, std::size_t label) {
    if (logits.rank() != 1 || logits.size() == 0) {
        throw ArgumentError("cross_entropy: logits must be a nonempty vector");
    }
    if (label < 1 || label > logits.size()) {
        throw ArgumentError("cross_entropy: label " + std::to_string(label) +
                            " out of range 1.." + std::to_string(logits.size()));
    }
    double mx = logits[0];
    for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) denom += std::exp(logits[i] - mx);
    return -(logits[label - 1] - mx - std::log(denom));
}

namespace {

Tape::NodeId build_mc_pair_node(Tape& tape, Tape::NodeId m_node, Tape::NodeId v_node,
                                std::size_t b, std::size_t t, std::size_t r,
                                const std::vector<std::uint16_t>& pixel_labels,
                                const LossConfig& cfg, Rng& rng) {
    auto st = std::make_shared<McPairState>();
    st->n = b * t;
    st->k = cfg.k;
    st->r = r;
    st->norm = 1.0 / static_cast<double>(b * t);

    // Noise for every pixel distribution, drawn before pair selection so the
    // draw layout does not depend on the pair cap.
    st->eps = Tensor({st->n, st->k, r});
    for (double& e : st->eps.values()) e = rng.normal();
    st->pairs = select_pairs(pixel_labels, b, t, cfg, rng);

    const Tensor& mv = tape.value(m_node);
    const Tensor& vv = tape.value(v_node);
    st->z = Tensor({st->n, st->k, r});
    for (std::size_t p = 0; p < st->n; ++p) {
        for (std::size_t s = 0; s < st->k; ++s) {
            const std::size_t base = (p * st->k + s) * r;
            for (std::size_t q = 0; q < r; ++q) {
                st->z[base + q] = mv[p * r + q] + vv[p * r + q] * st->eps[base + q];
            }
        }
    }

    const Tape::NodeId a_node = tape.exp_scalar(tape.param("metric.a_hat"));
    const Tape::NodeId b_node = tape.param("metric.b");
    const double a = tape.value(a_node)[0];
    const double b_val = tape.value(b_node)[0];

    const std::size_t kk = st->k * st->k;
    st->u.resize(st->pairs.size() * kk);
    st->dist.resize(st->pairs.size() * kk);
    st->p_hat.resize(st->pairs.size());
    const double inv_kk = 1.0 / static_cast<double>(kk);
    double value = 0.0;
    for (std::size_t pi = 0; pi < st->pairs.size(); ++pi) {
        const PairEntry& e = st->pairs[pi];
        double acc = 0.0;
        for (std::size_t k1 = 0; k1 < st->k; ++k1) {
            const double* zi = st->z.data() + (e.i * st->k + k1) * r;
            for (std::size_t k2 = 0; k2 < st->k; ++k2) {
                const double* zj = st->z.data() + (e.j * st->k + k2) * r;
                const double d = euclid(zi, zj, r);
                const double u = sigmoid(-a * d + b_val);
                st->dist[pi * kk + k1 * st->k + k2] = d;
                st->u[pi * kk + k1 * st->k + k2] = u;
                acc += u;
            }
        }
        const double p_hat = acc * inv_kk;
        st->p_hat[pi] = p_hat;
        value += e.weight * pcon_loss(p_hat, e.match);
    }
    value *= st->norm;

    auto backward = [st, m_node, v_node, a_node, b_node, a](Tape& t2, Tape::NodeId self) {
        const double g = t2.adjoint(self)[0];
        if (g == 0.0) return;
        const std::size_t r2 = st->r;
        const std::size_t kk2 = st->k * st->k;
        const double inv_kk2 = 1.0 / static_cast<double>(kk2);
        Tensor dz({st->n, st->k, r2});
        double da = 0.0, db = 0.0;
        for (std::size_t pi = 0; pi < st->pairs.size(); ++pi) {
            const PairEntry& e = st->pairs[pi];
            const double p_hat = st->p_hat[pi];
            if (p_hat <= kClampLo || p_hat >= kClampHi) continue;  // clamped flat
            const double dldp = e.match ? -1.0 / p_hat : 1.0 / (1.0 - p_hat);
            const double outer = g * st->norm * e.weight * dldp * inv_kk2;
            for (std::size_t k1 = 0; k1 < st->k; ++k1) {
                const double* zi = st->z.data() + (e.i * st->k + k1) * r2;
                double* dzi = dz.data() + (e.i * st->k + k1) * r2;
                for (std::size_t k2 = 0; k2 < st->k; ++k2) {
                    const double u = st->u[pi * kk2 + k1 * st->k + k2];
                    const double d = st->dist[pi * kk2 + k1 * st->k + k2];
                    const double s = outer * u * (1.0 - u);
                    da += s * (-d);
                    db += s;
                    if (d <= kDistFloor) continue;
                    const double* zj = st->z.data() + (e.j * st->k + k2) * r2;
                    double* dzj = dz.data() + (e.j * st->k + k2) * r2;
                    const double coef = s * (-a) / d;
                    for (std::size_t q = 0; q < r2; ++q) {
                        const double diff = (zi[q] - zj[q]) * coef;
                        dzi[q] += diff;
                        dzj[q] -= diff;
                    }
                }
            }
        }
        Tensor& dm = t2.adjoint_mut(m_node);
        Tensor& dv = t2.adjoint_mut(v_node);
        for (std::size_t p = 0; p < st->n; ++p) {
            for (std::size_t s = 0; s < st->k; ++s) {
                const std::size_t base = (p * st->k + s) * r2;
                for (std::size_t q = 0; q < r2; ++q) {
                    const double gz = dz[base + q];
                    dm[p * r2 + q] += gz;
                    dv[p * r2 + q] += gz * st->eps[base + q];
                }
            }
        }
        t2.adjoint_mut(a_node)[0] += da;
        t2.adjoint_mut(b_node)[0] += db;
    };
    return tape.custom(Tensor::scalar(value), {m_node, v_node, a_node, b_node},
                       std::move(backward));
}

Tape::NodeId build_contrastive_pair_node(Tape& tape, Tape::NodeId m_node,
                                         std::size_t b, std::size_t t, std::size_t r,
                                         const std::vector<std::uint16_t>& pixel_labels,
                                         const LossConfig& cfg, Rng& rng) {
    if (cfg.beta <= 0.0) {
        throw ArgumentError("loss config: beta must be > 0 for the contrastive pair loss");
    }
    struct State {
        std::vector<PairEntry> pairs;
        std::vector<double> dist;
        std::size_t r = 0;
        double norm = 0.0;
        double beta = 0.0;
    };
    auto st = std::make_shared<State>();
    st->pairs = select_pairs(pixel_labels, b, t, cfg, rng);
    st->r = r;
    st->norm = 1.0 / static_cast<double>(b * t);
    st->beta = cfg.beta;

    const Tensor& mv = tape.value(m_node);
    st->dist.resize(st->pairs.size());
    double value = 0.0;
    for (std::size_t pi = 0; pi < st->pairs.size(); ++pi) {
        const PairEntry& e = st->pairs[pi];
        const double d = euclid(mv.data() + e.i * r, mv.data() + e.j * r, r);
        st->dist[pi] = d;
        if (e.match) {
            value += e.weight * d * d;
        } else {
            const double gap = std::max(st->beta - d, 0.0);
            value += e.weight * gap * gap;
        }
    }
    value *= st->norm;

    auto backward = [st, m_node](Tape& t2, Tape::NodeId self) {
        const double g = t2.adjoint(self)[0];
        if (g == 0.0) return;
        const Tensor& mv2 = t2.value(m_node);
        Tensor& dm = t2.adjoint_mut(m_node);
        const std::size_t r2 = st->r;
        for (std::size_t pi = 0; pi < st->pairs.size(); ++pi) {
            const PairEntry& e = st->pairs[pi];
            const double d = st->dist[pi];
            double dd;  // d(term)/dD
            if (e.match) {
                dd = 2.0 * d;
            } else {
                const double gap = st->beta - d;
                if (gap <= 0.0) continue;
                dd = -2.0 * gap;
            }
            if (d <= kDistFloor) continue;
            const double coef = g * st->norm * e.weight * dd / d;
            const double* mi = mv2.data() + e.i * r2;
            const double* mj = mv2.data() + e.j * r2;
            for (std::size_t q = 0; q < r2; ++q) {
                const double diff = (mi[q] - mj[q]) * coef;
                dm[e.i * r2 + q] += diff;
                dm[e.j * r2 + q] -= diff;
            }
        }
    };
    return tape.custom(Tensor::scalar(value), {m_node}, std::move(backward));
}

Tape::NodeId build_var_node(Tape& tape, Tape::NodeId v_node, std::size_t b,
                            std::size_t t, std::size_t r, const LapIndex& lap,
                            const LossConfig& cfg) {
    if (lap.s < 3) {
        throw ArgumentError("variance term: need s >= 3, got s = " +
                            std::to_string(lap.s));
    }
    if (lap.s * lap.s != t) {
        throw ArgumentError("variance term: lap index does not match patch size");
    }
    struct State {
        std::vector<std::size_t> lap_of;
        std::vector<std::size_t> counts;
        std::vector<char> active;       // per (patch, lap >= 2) hinge state
        double alpha = 0.0;
        bool hinge = true;
        std::size_t b = 0, t = 0, r = 0;
    };
    auto st = std::make_shared<State>();
    st->lap_of = lap.lap_of;
    st->counts = lap.counts;
    st->alpha = cfg.alpha;
    st->hinge = cfg.hinge_var;
    st->b = b;
    st->t = t;
    st->r = r;

    const Tensor& vv = tape.value(v_node);
    const std::size_t n_laps = st->counts.size();
    st->active.assign(b * (n_laps - 1), 0);
    double total = 0.0;
    std::vector<double> lap_mean(n_laps);
    for (std::size_t i = 0; i < b; ++i) {
        std::fill(lap_mean.begin(), lap_mean.end(), 0.0);
        for (std::size_t p = 0; p < t; ++p) {
            double row = 0.0;
            const double* vr = vv.data() + (i * t + p) * r;
            for (std::size_t q = 0; q < r; ++q) row += vr[q];
            lap_mean[st->lap_of[p] - 1] += row / static_cast<double>(r);
        }
        for (std::size_t j = 0; j < n_laps; ++j) {
            lap_mean[j] /= static_cast<double>(st->counts[j]);
        }
        for (std::size_t j = 1; j < n_laps; ++j) {
            const double raw = -(lap_mean[j] - (1.0 + st->alpha) * lap_mean[j - 1]);
            const bool active = !st->hinge || raw > 0.0;
            st->active[i * (n_laps - 1) + (j - 1)] = active ? 1 : 0;
            total += (st->hinge && raw <= 0.0) ? 0.0 : raw;
        }
    }
    total /= static_cast<double>(b);

    auto backward = [st, v_node](Tape& t2, Tape::NodeId self) {
        const double g = t2.adjoint(self)[0];
        if (g == 0.0) return;
        Tensor& dv = t2.adjoint_mut(v_node);
        const std::size_t n_laps = st->counts.size();
        std::vector<double> d_lap(n_laps);
        const double inv_b = 1.0 / static_cast<double>(st->b);
        for (std::size_t i = 0; i < st->b; ++i) {
            std::fill(d_lap.begin(), d_lap.end(), 0.0);
            for (std::size_t j = 1; j < n_laps; ++j) {
                if (!st->active[i * (n_laps - 1) + (j - 1)]) continue;
                d_lap[j] += -g * inv_b;
                d_lap[j - 1] += (1.0 + st->alpha) * g * inv_b;
            }
            for (std::size_t p = 0; p < st->t; ++p) {
                const std::size_t j = st->lap_of[p] - 1;
                if (d_lap[j] == 0.0) continue;
                const double per_entry =
                    d_lap[j] / (static_cast<double>(st->counts[j]) *
                                static_cast<double>(st->r));
                double* dvr = dv.data() + (i * st->t + p) * st->r;
                for (std::size_t q = 0; q < st->r; ++q) dvr[q] += per_entry;
            }
        }
    };
    return tape.custom(Tensor::scalar(total), {v_node}, std::move(backward));
}

}  // namespace

LossTerms build_loss_terms(Tape& tape, Tape::NodeId m_node, Tape::NodeId v_node,
                           std::size_t b, std::size_t t, std::size_t r,
                           std::size_t k_cls,
                           const std::vector<std::uint16_t>& center_labels,
                           const LapIndex& lap, const LossConfig& cfg, Rng& rng) {
    validate(cfg);
    if (b < 2) {
        throw ArgumentError("loss terms: batch must hold at least 2 patches, got " +
                            std::to_string(b));
    }
    if (center_labels.size() != b) {
        throw ArgumentError("loss terms: label count does not match batch size");
    }

    LossTerms terms;
    std::vector<Tape::NodeId> nodes;
    std::vector<double> coeffs;

    if (cfg.lambda1 > 0.0) {
        terms.var = build_var_node(tape, v_node, b, t, r, lap, cfg);
        terms.has_var = true;
        nodes.push_back(terms.var);
        coeffs.push_back(cfg.lambda1);
    }
    if (cfg.lambda2 > 0.0) {
        // Every pixel of a patch carries the patch's center label.
        std::vector<std::uint16_t> pixel_labels(b * t);
        for (std::size_t i = 0; i < b; ++i) {
            std::fill(pixel_labels.begin() + static_cast<std::ptrdiff_t>(i * t),
                      pixel_labels.begin() + static_cast<std::ptrdiff_t>((i + 1) * t),
                      center_labels[i]);
        }
        terms.pair =
            cfg.pair_loss == PairLossKind::probabilistic
                ? build_mc_pair_node(tape, m_node, v_node, b, t, r, pixel_labels, cfg, rng)
                : build_contrastive_pair_node(tape, m_node, b, t, r, pixel_labels, cfg,
                                              rng);
        terms.has_pair = true;
        nodes.push_back(terms.pair);
        coeffs.push_back(cfg.lambda2);
    }
    if (cfg.lambda3 > 0.0) {
        std::vector<std::size_t> centers(b);
        for (std::size_t i = 0; i < b; ++i) centers[i] = i * t + t / 2;
        const Tape::NodeId logits =
            tape.conv1x1(tape.gather_rows(m_node, std::move(centers)),
                         tape.param("classifier.w"), tape.param("classifier.b"));
        if (tape.value(logits).dim(1) != k_cls) {
            throw ArgumentError("loss terms: classifier width does not match class count");
        }
        std::vector<std::size_t> labels0(b);
        for (std::size_t i = 0; i < b; ++i) {
            if (center_labels[i] < 1) {
                throw ArgumentError("loss terms: unlabeled center in batch");
            }
            labels0[i] = center_labels[i] - 1;
        }
        terms.ce = tape.ce_mean(logits, std::move(labels0));
        terms.has_ce = true;
        nodes.push_back(terms.ce);
        coeffs.push_back(cfg.lambda3);
    }

    terms.total = nodes.empty() ? tape.constant(Tensor::scalar(0.0))
                                : tape.combine(std::move(nodes), std::move(coeffs));
    return terms;
}

LossTerms build_batch_loss(Tape& tape, const BackboneConfig& bb,
                           const PatchBatch& batch, const LapIndex& lap,
                           const LossConfig& cfg, Rng& rng) {
    validate(cfg);
    const std::size_t t = bb.s * bb.s;
    const bool need_v =
        cfg.lambda1 > 0.0 ||
        (cfg.lambda2 > 0.0 && cfg.pair_loss == PairLossKind::probabilistic);
    Tape::NodeId m_node, v_node;
    if (need_v) {
        const FieldNodes f = field_path(tape, bb, batch);
        m_node = f.m;
        v_node = f.v;
    } else {
        m_node = mean_path(tape, bb, batch);
        v_node = m_node;  // placeholder, never read without a variance term
    }
    return build_loss_terms(tape, m_node, v_node, batch.size(), t, bb.r, bb.k_cls,
                            batch.center_labels, lap, cfg, rng);
}

double total_loss(ParamStore& params, const BackboneConfig& bb,
                  const PatchBatch& batch, const GaussianField& field,
                  const LapIndex& lap, const LossConfig& cfg, Rng& rng) {
    const std::size_t b = batch.size();
    const std::size_t t = bb.s * bb.s;
    if (field.m.rank() != 3 || field.m.dim(0) != b || field.m.dim(1) != t ||
        field.m.dim(2) != bb.r || !field.m.same_shape(field.v)) {
        throw ArgumentError("total_loss: field does not match batch and config");
    }
    Tape tape(&params);
    const Tape::NodeId m_node = tape.constant(Tensor({b * t, bb.r}, field.m.values()));
    const Tape::NodeId v_node = tape.constant(Tensor({b * t, bb.r}, field.v.values()));
    const LossTerms terms = build_loss_terms(tape, m_node, v_node, b, t, bb.r,
                                             bb.k_cls, batch.center_labels, lap, cfg, rng);
    return tape.value(terms.total)[0];
}

}  // namespace pdml
