#include "pdml/run_config.hpp"

#include <set>

#include "pdml/errors.hpp"

namespace pdml {

namespace {

using nlohmann::json;

const char* pair_loss_name(PairLossKind k) {
    return k == PairLossKind::probabilistic ? "probabilistic" : "contrastive";
}

PairLossKind pair_loss_from_name(const std::string& name) {
    if (name == "probabilistic") return PairLossKind::probabilistic;
    if (name == "contrastive") return PairLossKind::contrastive;
    throw ArgumentError("config: unknown pair_loss \"" + name + "\"");
}

const char* pair_scope_name(PairScope s) {
    return s == PairScope::batch ? "batch" : "patch";
}

PairScope pair_scope_from_name(const std::string& name) {
    if (name == "batch") return PairScope::batch;
    if (name == "patch") return PairScope::patch;
    throw ArgumentError("config: unknown pair_scope \"" + name + "\"");
}

double get_num(const json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number()) throw ArgumentError(std::string("config: ") + key + " must be a number");
    return v.get<double>();
}

std::uint64_t get_u64(const json& j, const char* key, std::uint64_t fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw ArgumentError(std::string("config: ") + key +
                            " must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

bool get_bool(const json& j, const char* key, bool fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_boolean()) throw ArgumentError(std::string("config: ") + key + " must be a boolean");
    return v.get<bool>();
}

std::string get_str(const json& j, const char* key, const std::string& fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_string()) throw ArgumentError(std::string("config: ") + key + " must be a string");
    return v.get<std::string>();
}

TrainConfig config_from(const json& j) {
    TrainConfig cfg;
    cfg.epochs = static_cast<std::size_t>(get_u64(j, "epochs", cfg.epochs));
    cfg.batch_size = static_cast<std::size_t>(get_u64(j, "batch_size", cfg.batch_size));
    cfg.learning_rate = get_num(j, "learning_rate", cfg.learning_rate);
    cfg.rho = get_num(j, "rho", cfg.rho);
    cfg.eps = get_num(j, "epsilon", cfg.eps);
    cfg.seed = get_u64(j, "seed", cfg.seed);
    cfg.selection = selection_from_name(
        get_str(j, "selection", selection_name(cfg.selection)));

    cfg.loss.alpha = get_num(j, "alpha", cfg.loss.alpha);
    cfg.loss.k = static_cast<std::size_t>(get_u64(j, "mc_samples", cfg.loss.k));
    cfg.loss.beta = get_num(j, "beta", cfg.loss.beta);
    cfg.loss.lambda1 = get_num(j, "lambda1", cfg.loss.lambda1);
    cfg.loss.lambda2 = get_num(j, "lambda2", cfg.loss.lambda2);
    cfg.loss.lambda3 = get_num(j, "lambda3", cfg.loss.lambda3);
    cfg.loss.hinge_var = get_bool(j, "hinge_var", cfg.loss.hinge_var);
    cfg.loss.pair_cap = static_cast<std::size_t>(get_u64(j, "pair_cap", cfg.loss.pair_cap));
    cfg.loss.pair_loss =
        pair_loss_from_name(get_str(j, "pair_loss", pair_loss_name(cfg.loss.pair_loss)));
    cfg.loss.pair_scope = pair_scope_from_name(
        get_str(j, "pair_scope", pair_scope_name(cfg.loss.pair_scope)));

    cfg.backbone.s = static_cast<std::size_t>(get_u64(j, "patch_size", cfg.backbone.s));
    cfg.backbone.c1 = static_cast<std::size_t>(get_u64(j, "c1", cfg.backbone.c1));
    cfg.backbone.c2 = static_cast<std::size_t>(get_u64(j, "c2", cfg.backbone.c2));
    cfg.backbone.r =
        static_cast<std::size_t>(get_u64(j, "embedding_dim", cfg.backbone.r));
    cfg.backbone.d = static_cast<std::size_t>(get_u64(j, "bands", 0));
    cfg.backbone.k_cls = static_cast<std::size_t>(get_u64(j, "classes", 0));
    return cfg;
}

}  // namespace

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["learning_rate"] = cfg.learning_rate;
    j["rho"] = cfg.rho;
    j["epsilon"] = cfg.eps;
    j["seed"] = cfg.seed;
    j["selection"] = selection_name(cfg.selection);
    j["alpha"] = cfg.loss.alpha;
    j["mc_samples"] = cfg.loss.k;
    j["beta"] = cfg.loss.beta;
    j["lambda1"] = cfg.loss.lambda1;
    j["lambda2"] = cfg.loss.lambda2;
    j["lambda3"] = cfg.loss.lambda3;
    j["hinge_var"] = cfg.loss.hinge_var;
    j["pair_cap"] = cfg.loss.pair_cap;
    j["pair_loss"] = pair_loss_name(cfg.loss.pair_loss);
    j["pair_scope"] = pair_scope_name(cfg.loss.pair_scope);
    j["patch_size"] = cfg.backbone.s;
    j["c1"] = cfg.backbone.c1;
    j["c2"] = cfg.backbone.c2;
    j["embedding_dim"] = cfg.backbone.r;
    j["bands"] = cfg.backbone.d;
    j["classes"] = cfg.backbone.k_cls;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ArgumentError("config: expected a JSON object");
    return config_from(j);
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ArgumentError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ArgumentError("config: expected a JSON object");

    static const std::set<std::string> allowed = {
        "epochs",     "batch_size", "learning_rate", "rho",        "epsilon",
        "seed",       "selection",  "alpha",         "mc_samples", "beta",
        "lambda1",    "lambda2",    "lambda3",       "hinge_var",  "pair_cap",
        "pair_loss",  "pair_scope", "patch_size",    "c1",         "c2",
        "embedding_dim", "ratios"};
    for (const auto& [key, _] : j.items()) {
        if (allowed.find(key) == allowed.end()) {
            throw ArgumentError("config: unknown key \"" + key + "\"");
        }
    }

    RunConfig rc;
    rc.train = config_from(j);
    if (j.contains("ratios")) {
        const json& r = j.at("ratios");
        if (!r.is_array() || r.size() != 3 || !r[0].is_number() || !r[1].is_number() ||
            !r[2].is_number()) {
            throw ArgumentError("config: ratios must be an array of 3 numbers");
        }
        rc.ratios = {r[0].get<double>(), r[1].get<double>(), r[2].get<double>()};
    }
    return rc;
}

}  // namespace pdml
