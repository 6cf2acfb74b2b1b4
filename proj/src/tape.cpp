#include "pdml/tape.hpp"

#include <algorithm>
#include <cmath>

#include "pdml/errors.hpp"

namespace pdml {

namespace {

double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

Tape::NodeId Tape::push(Node node) {
    node.adj = Tensor(node.value.shape());
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
}

Tape::NodeId Tape::param(const std::string& name) {
    if (!params_) throw ArgumentError("tape has no parameter store");
    for (NodeId id = 0; id < nodes_.size(); ++id) {
        if (nodes_[id].op == Op::leaf_param && nodes_[id].param_name == name) return id;
    }
    Node n;
    n.op = Op::leaf_param;
    n.param_name = name;
    n.value = params_->at(name).value;
    return push(std::move(n));
}

Tape::NodeId Tape::constant(Tensor value) {
    Node n;
    n.op = Op::leaf_const;
    n.value = std::move(value);
    return push(std::move(n));
}

Tape::NodeId Tape::conv1x1(NodeId x, NodeId w, NodeId b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 ||
        xv.dim(1) != wv.dim(1) || wv.dim(0) != bv.dim(0)) {
        throw ArgumentError("conv1x1: shape mismatch, x " + Tensor::shape_str(xv.shape()) +
                            " w " + Tensor::shape_str(wv.shape()) + " b " +
                            Tensor::shape_str(bv.shape()));
    }
    const std::size_t p_count = xv.dim(0), cin = xv.dim(1), cout = wv.dim(0);
    Node n;
    n.op = Op::conv1x1;
    n.inputs = {x, w, b};
    n.value = Tensor({p_count, cout});
    for (std::size_t p = 0; p < p_count; ++p) {
        const double* xr = xv.data() + p * cin;
        double* yr = n.value.data() + p * cout;
        for (std::size_t o = 0; o < cout; ++o) {
            const double* wr = wv.data() + o * cin;
            double acc = bv[o];
            for (std::size_t i = 0; i < cin; ++i) acc += xr[i] * wr[i];
            yr[o] = acc;
        }
    }
    return push(std::move(n));
}

Tape::NodeId Tape::conv3x3(NodeId x, NodeId w, NodeId b, std::size_t rows,
                           std::size_t cols) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    if (xv.rank() != 2 || wv.rank() != 4 || bv.rank() != 1 || wv.dim(1) != xv.dim(1) ||
        wv.dim(2) != 3 || wv.dim(3) != 3 || wv.dim(0) != bv.dim(0) ||
        rows * cols == 0 || xv.dim(0) % (rows * cols) != 0) {
        throw ArgumentError("conv3x3: shape mismatch, x " + Tensor::shape_str(xv.shape()) +
                            " w " + Tensor::shape_str(wv.shape()) + " over " +
                            std::to_string(rows) + "x" + std::to_string(cols));
    }
    const std::size_t cin = xv.dim(1), cout = wv.dim(0);
    const std::size_t images = xv.dim(0) / (rows * cols);

    Node n;
    n.op = Op::conv3x3;
    n.inputs = {x, w, b};
    n.rows = rows;
    n.cols = cols;
    // Kernel repacked as [3, 3, cout, cin] so the inner products below run
    // over contiguous memory.
    n.aux = Tensor({3, 3, cout, cin});
    for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t i = 0; i < cin; ++i) {
            for (std::size_t ky = 0; ky < 3; ++ky) {
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    n.aux[((ky * 3 + kx) * cout + o) * cin + i] =
                        wv[((o * cin + i) * 3 + ky) * 3 + kx];
                }
            }
        }
    }
    n.value = Tensor({xv.dim(0), cout});
    for (std::size_t img = 0; img < images; ++img) {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                double* yr = n.value.data() + ((img * rows + r) * cols + c) * cout;
                for (std::size_t ky = 0; ky < 3; ++ky) {
                    const std::size_t yy = r + ky;
                    if (yy < 1 || yy > rows) continue;
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                        const std::size_t xx = c + kx;
                        if (xx < 1 || xx > cols) continue;
                        const double* xr =
                            xv.data() +
                            ((img * rows + (yy - 1)) * cols + (xx - 1)) * cin;
                        const double* wt = n.aux.data() + (ky * 3 + kx) * cout * cin;
                        for (std::size_t o = 0; o < cout; ++o) {
                            const double* wr = wt + o * cin;
                            double acc = 0.0;
                            for (std::size_t i = 0; i < cin; ++i) acc += xr[i] * wr[i];
                            yr[o] += acc;
                        }
                    }
                }
                for (std::size_t o = 0; o < cout; ++o) yr[o] += bv[o];
            }
        }
    }
    return push(std::move(n));
}

Tape::NodeId Tape::relu(NodeId x) {
    Node n;
    n.op = Op::relu;
    n.inputs = {x};
    n.value = value(x);
    for (double& v : n.value.values()) v = v > 0.0 ? v : 0.0;
    return push(std::move(n));
}

Tape::NodeId Tape::softplus_floor(NodeId x, double floor) {
    Node n;
    n.op = Op::softplus_floor;
    n.inputs = {x};
    n.c0 = floor;
    n.value = value(x);
    for (double& v : n.value.values()) v = softplus(v) + floor;
    return push(std::move(n));
}

Tape::NodeId Tape::gather_rows(NodeId x, std::vector<std::size_t> rows) {
    const Tensor& xv = value(x);
    if (xv.rank() < 1) throw ArgumentError("gather_rows: need at least rank 1");
    const std::size_t row_size = xv.size() / xv.dim(0);
    for (std::size_t r : rows) {
        if (r >= xv.dim(0)) throw ArgumentError("gather_rows: row index out of range");
    }
    std::vector<std::size_t> shape = xv.shape();
    shape[0] = rows.size();
    Node n;
    n.op = Op::gather_rows;
    n.inputs = {x};
    n.value = Tensor(shape);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(xv.data() + rows[i] * row_size, xv.data() + (rows[i] + 1) * row_size,
                  n.value.data() + i * row_size);
    }
    n.index = std::move(rows);
    return push(std::move(n));
}

Tape::NodeId Tape::ce_mean(NodeId logits, std::vector<std::size_t> labels) {
    const Tensor& lv = value(logits);
    if (lv.rank() != 2 || lv.dim(0) != labels.size()) {
        throw ArgumentError("ce_mean: logits " + Tensor::shape_str(lv.shape()) +
                            " vs " + std::to_string(labels.size()) + " labels");
    }
    const std::size_t n_rows = lv.dim(0), k = lv.dim(1);
    Node n;
    n.op = Op::ce_mean;
    n.inputs = {logits};
    n.aux = Tensor({n_rows, k});  // cached softmax
    double total = 0.0;
    for (std::size_t r = 0; r < n_rows; ++r) {
        if (labels[r] >= k) throw ArgumentError("ce_mean: label out of range");
        const double* row = lv.data() + r * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
        const double log_denom = std::log(denom);
        for (std::size_t j = 0; j < k; ++j) {
            n.aux[r * k + j] = std::exp(row[j] - mx) / denom;
        }
        total += -(row[labels[r]] - mx - log_denom);
    }
    n.value = Tensor::scalar(total / static_cast<double>(n_rows));
    n.index = std::move(labels);
    return push(std::move(n));
}

Tape::NodeId Tape::combine(std::vector<NodeId> terms, std::vector<double> coeffs) {
    if (terms.size() != coeffs.size() || terms.empty()) {
        throw ArgumentError("combine: need matching nonempty terms and coefficients");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (value(terms[i]).size() != 1) {
            throw ArgumentError("combine: term " + std::to_string(i) + " is not scalar");
        }
        total += coeffs[i] * value(terms[i])[0];
    }
    Node n;
    n.op = Op::combine;
    n.inputs = std::move(terms);
    n.coeffs = std::move(coeffs);
    n.value = Tensor::scalar(total);
    return push(std::move(n));
}

Tape::NodeId Tape::exp_scalar(NodeId x) {
    if (value(x).size() != 1) throw ArgumentError("exp_scalar: input is not scalar");
    Node n;
    n.op = Op::exp_scalar;
    n.inputs = {x};
    n.value = Tensor::scalar(std::exp(value(x)[0]));
    return push(std::move(n));
}

Tape::NodeId Tape::half_sum_squares(NodeId x) {
    double acc = 0.0;
    for (double v : value(x).values()) acc += v * v;
    Node n;
    n.op = Op::half_sum_squares;
    n.inputs = {x};
    n.value = Tensor::scalar(0.5 * acc);
    return push(std::move(n));
}

Tape::NodeId Tape::mul_scalars(NodeId a, NodeId b) {
    if (value(a).size() != 1 || value(b).size() != 1) {
        throw ArgumentError("mul_scalars: inputs must be scalar");
    }
    Node n;
    n.op = Op::mul_scalars;
    n.inputs = {a, b};
    n.value = Tensor::scalar(value(a)[0] * value(b)[0]);
    return push(std::move(n));
}

Tape::NodeId Tape::custom(Tensor value, std::vector<NodeId> inputs, BackwardFn backward) {
    Node n;
    n.op = Op::custom;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.custom_backward = std::move(backward);
    return push(std::move(n));
}

const Tensor& Tape::adjoint(NodeId id) const { return nodes_[id].adj; }

Tensor& Tape::adjoint_mut(NodeId id) { return nodes_[id].adj; }

void Tape::backward(NodeId root) {
    if (root >= nodes_.size()) throw ArgumentError("backward: bad root id");
    if (value(root).size() != 1) throw ArgumentError("backward: root is not scalar");

    for (auto& n : nodes_) {
        n.live = false;
        n.adj.fill(0.0);
    }
    // Mark the root's ancestors; only they participate in the sweep.
    std::vector<NodeId> stack = {root};
    nodes_[root].live = true;
    while (!stack.empty()) {
        const NodeId id = stack.back();
        stack.pop_back();
        for (NodeId in : nodes_[id].inputs) {
            if (!nodes_[in].live) {
                nodes_[in].live = true;
                stack.push_back(in);
            }
        }
    }
    nodes_[root].adj[0] = 1.0;
    for (NodeId id = root + 1; id-- > 0;) {
        if (nodes_[id].live) backward_node(id);
    }
}

void Tape::backward_node(NodeId id) {
    Node& n = nodes_[id];
    switch (n.op) {
        case Op::leaf_param:
        case Op::leaf_const:
            return;
        case Op::conv1x1: {
            const Tensor& xv = value(n.inputs[0]);
            const Tensor& wv = value(n.inputs[1]);
            Tensor& dx = nodes_[n.inputs[0]].adj;
            Tensor& dw = nodes_[n.inputs[1]].adj;
            Tensor& db = nodes_[n.inputs[2]].adj;
            const std::size_t p_count = xv.dim(0), cin = xv.dim(1), cout = wv.dim(0);
            for (std::size_t p = 0; p < p_count; ++p) {
                const double* dyr = n.adj.data() + p * cout;
                const double* xr = xv.data() + p * cin;
                double* dxr = dx.data() + p * cin;
                for (std::size_t o = 0; o < cout; ++o) {
                    const double g = dyr[o];
                    if (g == 0.0) continue;
                    const double* wr = wv.data() + o * cin;
                    double* dwr = dw.data() + o * cin;
                    for (std::size_t i = 0; i < cin; ++i) {
                        dxr[i] += g * wr[i];
                        dwr[i] += g * xr[i];
                    }
                    db[o] += g;
                }
            }
            return;
        }
        case Op::conv3x3: {
            const Tensor& xv = value(n.inputs[0]);
            Tensor& dx = nodes_[n.inputs[0]].adj;
            Tensor& dw = nodes_[n.inputs[1]].adj;
            Tensor& db = nodes_[n.inputs[2]].adj;
            const std::size_t cin = xv.dim(1);
            const std::size_t cout = value(n.inputs[1]).dim(0);
            const std::size_t rows = n.rows, cols = n.cols;
            const std::size_t images = xv.dim(0) / (rows * cols);
            // Accumulate kernel gradients in the repacked layout, then map
            // back to [cout, cin, 3, 3] at the end.
            Tensor dwt({3, 3, cout, cin});
            for (std::size_t img = 0; img < images; ++img) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                        const double* dyr =
                            n.adj.data() + ((img * rows + r) * cols + c) * cout;
                        for (std::size_t o = 0; o < cout; ++o) db[o] += dyr[o];
                        for (std::size_t ky = 0; ky < 3; ++ky) {
                            const std::size_t yy = r + ky;
                            if (yy < 1 || yy > rows) continue;
                            for (std::size_t kx = 0; kx < 3; ++kx) {
                                const std::size_t xx = c + kx;
                                if (xx < 1 || xx > cols) continue;
                                const std::size_t src =
                                    (img * rows + (yy - 1)) * cols + (xx - 1);
                                const double* xr = xv.data() + src * cin;
                                double* dxr = dx.data() + src * cin;
                                const double* wt =
                                    n.aux.data() + (ky * 3 + kx) * cout * cin;
                                double* dwr = dwt.data() + (ky * 3 + kx) * cout * cin;
                                for (std::size_t o = 0; o < cout; ++o) {
                                    const double g = dyr[o];
                                    if (g == 0.0) continue;
                                    const double* wr = wt + o * cin;
                                    double* dwo = dwr + o * cin;
                                    for (std::size_t i = 0; i < cin; ++i) {
                                        dxr[i] += g * wr[i];
                                        dwo[i] += g * xr[i];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            for (std::size_t o = 0; o < cout; ++o) {
                for (std::size_t i = 0; i < cin; ++i) {
                    for (std::size_t ky = 0; ky < 3; ++ky) {
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                            dw[((o * cin + i) * 3 + ky) * 3 + kx] +=
                                dwt[((ky * 3 + kx) * cout + o) * cin + i];
                        }
                    }
                }
            }
            return;
        }
        case Op::relu: {
            const Tensor& xv = value(n.inputs[0]);
            Tensor& dx = nodes_[n.inputs[0]].adj;
            for (std::size_t i = 0; i < xv.size(); ++i) {
                if (xv[i] > 0.0) dx[i] += n.adj[i];
            }
            return;
        }
        case Op::softplus_floor: {
            const Tensor& xv = value(n.inputs[0]);
            Tensor& dx = nodes_[n.inputs[0]].adj;
            for (std::size_t i = 0; i < xv.size(); ++i) {
                dx[i] += n.adj[i] * sigmoid(xv[i]);
            }
            return;
        }
        case Op::gather_rows: {
            const Tensor& xv = value(n.inputs[0]);
            Tensor& dx = nodes_[n.inputs[0]].adj;
            const std::size_t row_size = xv.size() / xv.dim(0);
            for (std::size_t i = 0; i < n.index.size(); ++i) {
                const double* src = n.adj.data() + i * row_size;
                double* dst = dx.data() + n.index[i] * row_size;
                for (std::size_t j = 0; j < row_size; ++j) dst[j] += src[j];
            }
            return;
        }
        case Op::ce_mean: {
            Tensor& dl = nodes_[n.inputs[0]].adj;
            const std::size_t n_rows = n.aux.dim(0), k = n.aux.dim(1);
            const double g = n.adj[0] / static_cast<double>(n_rows);
            for (std::size_t r = 0; r < n_rows; ++r) {
                const double* p = n.aux.data() + r * k;
                double* d = dl.data() + r * k;
                for (std::size_t j = 0; j < k; ++j) d[j] += g * p[j];
                d[n.index[r]] -= g;
            }
            return;
        }
        case Op::combine: {
            for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                nodes_[n.inputs[i]].adj[0] += n.coeffs[i] * n.adj[0];
            }
            return;
        }
        case Op::exp_scalar: {
            nodes_[n.inputs[0]].adj[0] += n.adj[0] * n.value[0];
            return;
        }
        case Op::half_sum_squares: {
            const Tensor& xv = value(n.inputs[0]);
            Tensor& dx = nodes_[n.inputs[0]].adj;
            for (std::size_t i = 0; i < xv.size(); ++i) dx[i] += n.adj[0] * xv[i];
            return;
        }
        case Op::mul_scalars: {
            nodes_[n.inputs[0]].adj[0] += n.adj[0] * value(n.inputs[1])[0];
            nodes_[n.inputs[1]].adj[0] += n.adj[0] * value(n.inputs[0])[0];
            return;
        }
        case Op::custom: {
            n.custom_backward(*this, id);
            return;
        }
    }
}

void Tape::for_each_param_adjoint(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
    for (const auto& n : nodes_) {
        if (n.op == Op::leaf_param && n.live) fn(n.param_name, n.adj);
    }
}

void Tape::accumulate_param_grads(double scale) {
    if (!params_) throw ArgumentError("tape has no parameter store");
    for (const auto& n : nodes_) {
        if (n.op != Op::leaf_param || !n.live) continue;
        Tensor& g = params_->at(n.param_name).grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * n.adj[i];
    }
}

}  // namespace pdml
