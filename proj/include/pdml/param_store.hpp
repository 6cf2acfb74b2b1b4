#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "pdml/tensor.hpp"

namespace pdml {

/// Routing tag of a parameter. The trainer uses these to decide which loss
/// terms may update which parameter group.
enum class ParamTag { backbone, mean_head, var_head, classifier, metric_scalars };

const char* tag_name(ParamTag tag);
ParamTag tag_from_name(const std::string& name);

struct Param {
    Tensor value{std::vector<std::size_t>{0}};
    Tensor grad{std::vector<std::size_t>{0}};
    ParamTag tag = ParamTag::backbone;
};

/// Named parameters with gradient accumulators. Iteration follows insertion
/// order so manifests and checkpoints are deterministic.
class ParamStore {
public:
    void add(const std::string& name, Tensor value, ParamTag tag);

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;

    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }

    void zero_grads();
    std::size_t value_count() const;

    template <typename Fn>
    void for_each(Fn&& fn) {
        for (const auto& name : order_) fn(name, params_[index_.at(name)]);
    }
    template <typename Fn>
    void for_each(Fn&& fn) const {
        for (const auto& name : order_) fn(name, params_[index_.at(name)]);
    }

private:
    std::vector<std::string> order_;
    std::vector<Param> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace pdml
