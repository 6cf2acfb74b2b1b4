#include "pdml/model.hpp"

#include <cmath>
#include <string>

#include "pdml/errors.hpp"

namespace pdml {

namespace {

constexpr double kVarFloor = 1e-6;

struct Expected {
    const char* name;
    std::vector<std::size_t> shape;
    ParamTag tag;
};

std::vector<Expected> expected_params(const BackboneConfig& cfg) {
    return {
        {"backbone.conv1.w", {cfg.c1, cfg.d}, ParamTag::backbone},
        {"backbone.conv1.b", {cfg.c1}, ParamTag::backbone},
        {"backbone.conv2.w", {cfg.c2, cfg.c1, 3, 3}, ParamTag::backbone},
        {"backbone.conv2.b", {cfg.c2}, ParamTag::backbone},
        {"mean_head.w", {cfg.r, cfg.c2}, ParamTag::mean_head},
        {"mean_head.b", {cfg.r}, ParamTag::mean_head},
        {"var_head.w", {cfg.r, cfg.c2}, ParamTag::var_head},
        {"var_head.b", {cfg.r}, ParamTag::var_head},
        {"classifier.w", {cfg.k_cls, cfg.r}, ParamTag::classifier},
        {"classifier.b", {cfg.k_cls}, ParamTag::classifier},
        {"metric.a_hat", {1}, ParamTag::metric_scalars},
        {"metric.b", {1}, ParamTag::metric_scalars},
    };
}

void validate_config(const BackboneConfig& cfg) {
    if (cfg.d == 0 || cfg.c1 == 0 || cfg.c2 == 0 || cfg.k_cls == 0 || cfg.s == 0 ||
        cfg.s % 2 == 0 || cfg.r < 2) {
        throw ArgumentError("bad backbone config: d=" + std::to_string(cfg.d) +
                            " c1=" + std::to_string(cfg.c1) + " c2=" +
                            std::to_string(cfg.c2) + " r=" + std::to_string(cfg.r) +
                            " k_cls=" + std::to_string(cfg.k_cls) + " s=" +
                            std::to_string(cfg.s));
    }
}

// Flattens a [B, s, s, d] patch tensor into a [B*s*s, d] constant node; the
// memory layout is already position-major so this is a reshape.
Tape::NodeId batch_input(Tape& tape, const BackboneConfig& cfg, const PatchBatch& batch) {
    const std::size_t b = batch.size();
    const std::size_t t = cfg.s * cfg.s;
    if (batch.s != cfg.s || batch.patches.size() != b * t * cfg.d) {
        throw ArgumentError("batch does not match backbone config: patches " +
                            Tensor::shape_str(batch.patches.shape()));
    }
    return tape.constant(Tensor({b * t, cfg.d}, batch.patches.values()));
}

Tape::NodeId backbone_features(Tape& tape, const BackboneConfig& cfg,
                               const PatchBatch& batch) {
    const Tape::NodeId x = batch_input(tape, cfg, batch);
    const Tape::NodeId h1 = tape.relu(
        tape.conv1x1(x, tape.param("backbone.conv1.w"), tape.param("backbone.conv1.b")));
    const Tape::NodeId h2 = tape.relu(
        tape.conv3x3(h1, tape.param("backbone.conv2.w"), tape.param("backbone.conv2.b"),
                     cfg.s, cfg.s));
    return h2;
}

std::vector<std::size_t> center_rows(std::size_t b, std::size_t t) {
    std::vector<std::size_t> rows(b);
    for (std::size_t i = 0; i < b; ++i) rows[i] = i * t + t / 2;
    return rows;
}

}  // namespace

void init_params(ParamStore& store, const BackboneConfig& cfg, Rng& rng) {
    validate_config(cfg);
    for (const Expected& e : expected_params(cfg)) {
        Tensor value(e.shape);
        const std::string name(e.name);
        const bool is_weight = name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0;
        if (is_weight) {
            // He initialization: the fan-in is everything but the output
            // channel dimension.
            const double fan_in =
                static_cast<double>(value.size() / e.shape[0]);
            const double std_dev = std::sqrt(2.0 / fan_in);
            for (double& v : value.values()) v = std_dev * rng.normal();
        }
        store.add(name, std::move(value), e.tag);
    }
}

void validate_params(const ParamStore& store, const BackboneConfig& cfg) {
    validate_config(cfg);
    for (const Expected& e : expected_params(cfg)) {
        if (!store.has(e.name)) {
            throw ArgumentError("missing parameter " + std::string(e.name));
        }
        const Param& p = store.at(e.name);
        if (p.value.shape() != e.shape) {
            throw ArgumentError("parameter " + std::string(e.name) + " has shape " +
                                Tensor::shape_str(p.value.shape()) + ", expected " +
                                Tensor::shape_str(e.shape));
        }
        if (p.tag != e.tag) {
            throw ArgumentError("parameter " + std::string(e.name) + " has tag " +
                                std::string(tag_name(p.tag)) + ", expected " +
                                std::string(tag_name(e.tag)));
        }
    }
}

Tape::NodeId mean_path(Tape& tape, const BackboneConfig& cfg, const PatchBatch& batch) {
    const Tape::NodeId h = backbone_features(tape, cfg, batch);
    return tape.conv1x1(h, tape.param("mean_head.w"), tape.param("mean_head.b"));
}

FieldNodes field_path(Tape& tape, const BackboneConfig& cfg, const PatchBatch& batch) {
    const Tape::NodeId h = backbone_features(tape, cfg, batch);
    FieldNodes f;
    f.b = batch.size();
    f.t = cfg.s * cfg.s;
    f.r = cfg.r;
    f.m = tape.conv1x1(h, tape.param("mean_head.w"), tape.param("mean_head.b"));
    f.v = tape.softplus_floor(
        tape.conv1x1(h, tape.param("var_head.w"), tape.param("var_head.b")), kVarFloor);
    return f;
}

Tape::NodeId classifier_logits_node(Tape& tape, const BackboneConfig& cfg,
                                    Tape::NodeId m_flat, std::size_t b, std::size_t t) {
    const Tape::NodeId centers = tape.gather_rows(m_flat, center_rows(b, t));
    return tape.conv1x1(centers, tape.param("classifier.w"), tape.param("classifier.b"));
}

GaussianField forward(ParamStore& store, const BackboneConfig& cfg,
                      const PatchBatch& batch) {
    validate_params(store, cfg);
    Tape tape(&store);
    const FieldNodes f = field_path(tape, cfg, batch);
    GaussianField out;
    out.m = Tensor({f.b, f.t, f.r}, tape.value(f.m).values());
    out.v = Tensor({f.b, f.t, f.r}, tape.value(f.v).values());
    return out;
}

Tensor classify_logits(ParamStore& store, const BackboneConfig& cfg, const Tensor& m) {
    if (m.rank() != 3 || m.dim(2) != cfg.r) {
        throw ArgumentError("classify_logits: mean field has shape " +
                            Tensor::shape_str(m.shape()));
    }
    Tape tape(&store);
    const std::size_t b = m.dim(0), t = m.dim(1);
    const Tape::NodeId m_flat = tape.constant(Tensor({b * t, cfg.r}, m.values()));
    const Tape::NodeId logits = classifier_logits_node(tape, cfg, m_flat, b, t);
    return tape.value(logits);
}

std::vector<std::uint16_t> predict_batch(ParamStore& store, const BackboneConfig& cfg,
                                         const PatchBatch& batch) {
    validate_params(store, cfg);
    Tape tape(&store);
    const std::size_t b = batch.size();
    const std::size_t t = cfg.s * cfg.s;
    const Tape::NodeId m = mean_path(tape, cfg, batch);
    const Tape::NodeId logits = classifier_logits_node(tape, cfg, m, b, t);
    const Tensor& lv = tape.value(logits);
    std::vector<std::uint16_t> out(b);
    for (std::size_t i = 0; i < b; ++i) {
        const double* row = lv.data() + i * cfg.k_cls;
        std::size_t best = 0;
        for (std::size_t k = 1; k < cfg.k_cls; ++k) {
            if (row[k] > row[best]) best = k;  // ties keep the smaller id
        }
        out[i] = static_cast<std::uint16_t>(best + 1);
    }
    return out;
}

std::uint16_t predict(ParamStore& store, const BackboneConfig& cfg, const Tensor& patch) {
    if (patch.rank() != 3 || patch.dim(0) != cfg.s || patch.dim(1) != cfg.s ||
        patch.dim(2) != cfg.d) {
        throw ArgumentError("predict: patch has shape " +
                            Tensor::shape_str(patch.shape()));
    }
    PatchBatch batch;
    batch.s = cfg.s;
    batch.patches = Tensor({1, cfg.s, cfg.s, cfg.d}, patch.values());
    batch.center_labels = {1};
    batch.coords = {{0, 0}};
    return predict_batch(store, cfg, batch)[0];
}

}  // namespace pdml
