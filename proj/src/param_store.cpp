#include "pdml/param_store.hpp"

#include "pdml/errors.hpp"

namespace pdml {

const char* tag_name(ParamTag tag) {
    switch (tag) {
        case ParamTag::backbone: return "backbone";
        case ParamTag::mean_head: return "mean_head";
        case ParamTag::var_head: return "var_head";
        case ParamTag::classifier: return "classifier";
        case ParamTag::metric_scalars: return "metric_scalars";
    }
    return "?";
}

ParamTag tag_from_name(const std::string& name) {
    if (name == "backbone") return ParamTag::backbone;
    if (name == "mean_head") return ParamTag::mean_head;
    if (name == "var_head") return ParamTag::var_head;
    if (name == "classifier") return ParamTag::classifier;
    if (name == "metric_scalars") return ParamTag::metric_scalars;
    throw ArgumentError("unknown parameter tag: " + name);
}

void ParamStore::add(const std::string& name, Tensor value, ParamTag tag) {
    if (has(name)) throw ArgumentError("duplicate parameter name: " + name);
    Param p;
    p.grad = Tensor(value.shape());
    p.value = std::move(value);
    p.tag = tag;
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    order_.push_back(name);
}

Param& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
    return params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
    return params_[it->second];
}

void ParamStore::zero_grads() {
    for (auto& p : params_) p.grad.fill(0.0);
}

std::size_t ParamStore::value_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

}  // namespace pdml
