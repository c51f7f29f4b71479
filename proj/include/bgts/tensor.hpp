// Dense-array engine with reverse-mode differentiation.
//
// Design notes:
//  * 64-bit floats throughout; the graph is a dynamic tape rebuilt per forward.
//  * Tensors are immutable after creation. A Tensor is a shared handle to a
//    Node; a Graph records creation order so backward() can walk the tape in
//    reverse topological order exactly once.
//  * Inference runs with no Graph at all: nodes do not retain their inputs,
//    so intermediates are freed as soon as the last handle dies.
//  * No broadcasting beyond trailing-axis affine forms (linear bias,
//    add_tiled); everything else requires explicit shapes.
//  * attention() reduces over keys in ascending-value order on request
//    (sorted_reduce), which makes the forward output invariant to input
//    permutations at the bit level. Used by the context and variable axes.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bgts/common.hpp"

namespace bgts {

class Graph;

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily during backward
    std::vector<double> aux;   // op-specific saved state for backward
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;
    Graph* graph = nullptr;
    bool requires_grad = false;

    int64_t size() const { return numel(shape); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t size() const { return node_->size(); }
    const std::vector<double>& value() const { return node_->value; }
    const std::vector<double>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    const std::shared_ptr<Node>& node() const { return node_; }

    double item() const {
        check<ContractError>(size() == 1, "item(): tensor is not scalar, shape " + shape_str(shape()));
        return node_->value[0];
    }

  private:
    std::shared_ptr<Node> node_;
};

// Records primitive applications in creation order (a topological order by
// construction) and owns the tape for one forward/backward cycle.
class Graph {
  public:
    Tensor leaf(const Shape& shape, std::span<const double> data, bool requires_grad = true) {
        check<ShapeError>(static_cast<int64_t>(data.size()) == numel(shape),
                          "leaf: data length does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = shape;
        n->value.assign(data.begin(), data.end());
        n->requires_grad = requires_grad;
        n->graph = this;
        nodes_.push_back(n);
        return Tensor(n);
    }

    void record(const std::shared_ptr<Node>& n) { nodes_.push_back(n); }

    // Reverse-mode sweep from a scalar loss. Grads are reset first, so the
    // call is idempotent on an intact graph.
    void backward(const Tensor& loss) {
        check<ContractError>(loss.size() == 1, "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
        check<ContractError>(loss.node()->graph == this, "backward: loss does not belong to this graph");
        for (auto& n : nodes_)
            if (n->requires_grad) n->grad.assign(n->value.size(), 0.0);
        loss.node()->ensure_grad();
        loss.node()->grad[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node& n = **it;
            if (n.requires_grad && n.backward_fn && !n.grad.empty()) n.backward_fn(n);
        }
    }

    size_t node_count() const { return nodes_.size(); }

  private:
    std::vector<std::shared_ptr<Node>> nodes_;
};

// ---------------------------------------------------------------------------
// op plumbing

namespace detail {

inline Graph* graph_of(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (t->defined() && t->node()->graph) return t->node()->graph;
    return nullptr;
}

inline std::shared_ptr<Node> new_node(std::initializer_list<const Tensor*> inputs, Shape shape) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.resize(static_cast<size_t>(numel(n->shape)));
    n->graph = graph_of(inputs);
    for (const Tensor* t : inputs) {
        if (t->defined() && t->node()->requires_grad) n->requires_grad = true;
    }
    if (n->graph && n->requires_grad) {
        for (const Tensor* t : inputs) n->inputs.push_back(t->defined() ? t->node() : nullptr);
        n->graph->record(n);
    }
    return n;
}

inline Node& in(Node& n, size_t i) { return *n.inputs[i]; }

// Ascending-value summation: canonical order regardless of the order the
// addends were produced in.
inline double sorted_sum(std::span<double> xs) {
    std::sort(xs.begin(), xs.end());
    double acc = 0.0;
    for (double x : xs) acc += x;
    return acc;
}

}  // namespace detail

inline Tensor constant(const Shape& shape, std::vector<double> data) {
    check<ShapeError>(static_cast<int64_t>(data.size()) == numel(shape),
                      "constant: data length does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = shape;
    n->value = std::move(data);
    return Tensor(n);
}

inline Tensor constant_scalar(double v) { return constant({1}, {v}); }

// ---------------------------------------------------------------------------
// elementwise

namespace detail {
template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, Fwd f, Bwd dfdx_from_xy) {
    auto n = new_node({&x}, x.shape());
    const auto& xv = x.value();
    for (size_t i = 0; i < xv.size(); ++i) n->value[i] = f(xv[i]);
    if (n->requires_grad)
        n->backward_fn = [dfdx_from_xy](Node& self) {
            Node& a = in(self, 0);
            if (!a.requires_grad) return;
            a.ensure_grad();
            for (size_t i = 0; i < self.value.size(); ++i)
                a.grad[i] += self.grad[i] * dfdx_from_xy(a.value[i], self.value[i]);
        };
    return Tensor(n);
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    check<ShapeError>(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                                  " vs " + shape_str(b.shape()));
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    auto n = detail::new_node({&a, &b}, a.shape());
    const auto &av = a.value(), &bv = b.value();
    for (size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] + bv[i];
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            for (int k = 0; k < 2; ++k) {
                Node& x = detail::in(self, k);
                if (!x.requires_grad) continue;
                x.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i];
            }
        };
    return Tensor(n);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    auto n = detail::new_node({&a, &b}, a.shape());
    const auto &av = a.value(), &bv = b.value();
    for (size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] - bv[i];
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& a = detail::in(self, 0);
            Node& b = detail::in(self, 1);
            if (a.requires_grad) {
                a.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) a.grad[i] += self.grad[i];
            }
            if (b.requires_grad) {
                b.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) b.grad[i] -= self.grad[i];
            }
        };
    return Tensor(n);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    auto n = detail::new_node({&a, &b}, a.shape());
    const auto &av = a.value(), &bv = b.value();
    for (size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] * bv[i];
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& a = detail::in(self, 0);
            Node& b = detail::in(self, 1);
            if (a.requires_grad) {
                a.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) a.grad[i] += self.grad[i] * b.value[i];
            }
            if (b.requires_grad) {
                b.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) b.grad[i] += self.grad[i] * a.value[i];
            }
        };
    return Tensor(n);
}

inline Tensor scale(const Tensor& a, double s) {
    return detail::unary_op(
        a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor cos(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

inline Tensor sin(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

// Exact (erf-based) GELU.
inline Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return detail::unary_op(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [](double x, double) {
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            return cdf + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
        });
}

// ---------------------------------------------------------------------------
// matmul / linear

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    check<ShapeError>(a.shape().size() == 2 && b.shape().size() == 2,
                      "matmul: expects 2-D operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], p = b.shape()[1];
    check<ShapeError>(k == k2,
                      "matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    auto n = detail::new_node({&a, &b}, {m, p});
    const double* av = a.value().data();
    const double* bv = b.value().data();
    double* out = n->value.data();
    std::fill(n->value.begin(), n->value.end(), 0.0);
    for (int i = 0; i < m; ++i)
        for (int l = 0; l < k; ++l) {
            const double aa = av[i * k + l];
            const double* brow = bv + l * p;
            double* orow = out + i * p;
            for (int j = 0; j < p; ++j) orow[j] += aa * brow[j];
        }
    if (n->requires_grad)
        n->backward_fn = [m, k, p](Node& self) {
            Node& a = detail::in(self, 0);
            Node& b = detail::in(self, 1);
            const double* g = self.grad.data();
            if (a.requires_grad) {
                a.ensure_grad();
                // dA = dOut * B^T
                for (int i = 0; i < m; ++i)
                    for (int l = 0; l < k; ++l) {
                        double acc = 0.0;
                        const double* grow = g + i * p;
                        const double* brow = b.value.data() + l * p;
                        for (int j = 0; j < p; ++j) acc += grow[j] * brow[j];
                        a.grad[i * k + l] += acc;
                    }
            }
            if (b.requires_grad) {
                b.ensure_grad();
                // dB = A^T * dOut
                for (int i = 0; i < m; ++i)
                    for (int l = 0; l < k; ++l) {
                        const double aa = a.value[i * k + l];
                        const double* grow = g + i * p;
                        double* brow = b.grad.data() + l * p;
                        for (int j = 0; j < p; ++j) brow[j] += aa * grow[j];
                    }
            }
        };
    return Tensor(n);
}

// x: (..., Din), w: (Din, Dout), optional bias (Dout) broadcast over rows.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor()) {
    check<ShapeError>(w.shape().size() == 2, "linear: weight must be 2-D, got " + shape_str(w.shape()));
    check<ShapeError>(!x.shape().empty() && x.shape().back() == w.shape()[0],
                      "linear: trailing dim " + shape_str(x.shape()) + " does not match weight " +
                          shape_str(w.shape()));
    const int din = w.shape()[0], dout = w.shape()[1];
    if (bias.defined())
        check<ShapeError>(bias.shape() == Shape{dout},
                          "linear: bias shape " + shape_str(bias.shape()) + " expected (" + std::to_string(dout) + ")");
    const int64_t rows = x.size() / din;
    Shape out_shape = x.shape();
    out_shape.back() = dout;
    auto n = bias.defined() ? detail::new_node({&x, &w, &bias}, out_shape) : detail::new_node({&x, &w}, out_shape);
    const double* xv = x.value().data();
    const double* wv = w.value().data();
    double* out = n->value.data();
    for (int64_t r = 0; r < rows; ++r) {
        double* orow = out + r * dout;
        if (bias.defined())
            std::memcpy(orow, bias.value().data(), sizeof(double) * dout);
        else
            std::fill(orow, orow + dout, 0.0);
        const double* xrow = xv + r * din;
        for (int l = 0; l < din; ++l) {
            const double xx = xrow[l];
            const double* wrow = wv + l * dout;
            for (int j = 0; j < dout; ++j) orow[j] += xx * wrow[j];
        }
    }
    if (n->requires_grad)
        n->backward_fn = [rows, din, dout](Node& self) {
            Node& x = detail::in(self, 0);
            Node& w = detail::in(self, 1);
            Node* b = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
            const double* g = self.grad.data();
            if (x.requires_grad) {
                x.ensure_grad();
                for (int64_t r = 0; r < rows; ++r) {
                    const double* grow = g + r * dout;
                    double* xg = x.grad.data() + r * din;
                    for (int l = 0; l < din; ++l) {
                        double acc = 0.0;
                        const double* wrow = w.value.data() + l * dout;
                        for (int j = 0; j < dout; ++j) acc += grow[j] * wrow[j];
                        xg[l] += acc;
                    }
                }
            }
            if (w.requires_grad) {
                w.ensure_grad();
                for (int64_t r = 0; r < rows; ++r) {
                    const double* grow = g + r * dout;
                    const double* xrow = x.value.data() + r * din;
                    for (int l = 0; l < din; ++l) {
                        const double xx = xrow[l];
                        double* wg = w.grad.data() + l * dout;
                        for (int j = 0; j < dout; ++j) wg[j] += xx * grow[j];
                    }
                }
            }
            if (b && b->requires_grad) {
                b->ensure_grad();
                for (int64_t r = 0; r < rows; ++r) {
                    const double* grow = g + r * dout;
                    for (int j = 0; j < dout; ++j) b->grad[j] += grow[j];
                }
            }
        };
    return Tensor(n);
}

// x: (B, L, D) plus e: (L, D) added to every leading index.
inline Tensor add_tiled(const Tensor& x, const Tensor& e) {
    check<ShapeError>(x.shape().size() == 3 && e.shape().size() == 2 && x.shape()[1] == e.shape()[0] &&
                          x.shape()[2] == e.shape()[1],
                      "add_tiled: incompatible shapes " + shape_str(x.shape()) + " and " + shape_str(e.shape()));
    auto n = detail::new_node({&x, &e}, x.shape());
    const int64_t bsz = x.shape()[0], tail = e.size();
    for (int64_t b = 0; b < bsz; ++b)
        for (int64_t i = 0; i < tail; ++i) n->value[b * tail + i] = x.value()[b * tail + i] + e.value()[i];
    if (n->requires_grad)
        n->backward_fn = [bsz, tail](Node& self) {
            Node& x = detail::in(self, 0);
            Node& e = detail::in(self, 1);
            if (x.requires_grad) {
                x.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i];
            }
            if (e.requires_grad) {
                e.ensure_grad();
                for (int64_t b = 0; b < bsz; ++b)
                    for (int64_t i = 0; i < tail; ++i) e.grad[i] += self.grad[b * tail + i];
            }
        };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// reductions, softmax, layernorm

namespace detail {
inline void axis_strides(const Shape& s, int axis, int64_t& outer, int64_t& len, int64_t& inner) {
    outer = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    len = s[axis];
    inner = 1;
    for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

inline Tensor softmax(const Tensor& x, int axis = -1) {
    const int rank = static_cast<int>(x.shape().size());
    if (axis < 0) axis += rank;
    check<ShapeError>(axis >= 0 && axis < rank, "softmax: axis out of range for shape " + shape_str(x.shape()));
    int64_t outer, len, inner;
    detail::axis_strides(x.shape(), axis, outer, len, inner);
    auto n = detail::new_node({&x}, x.shape());
    const double* xv = x.value().data();
    double* out = n->value.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            const int64_t base = o * len * inner + i;
            double mx = xv[base];
            for (int64_t l = 1; l < len; ++l) mx = std::max(mx, xv[base + l * inner]);
            double denom = 0.0;
            for (int64_t l = 0; l < len; ++l) {
                double e = std::exp(xv[base + l * inner] - mx);
                out[base + l * inner] = e;
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (int64_t l = 0; l < len; ++l) out[base + l * inner] *= inv;
        }
    if (n->requires_grad)
        n->backward_fn = [outer, len, inner](Node& self) {
            Node& x = detail::in(self, 0);
            if (!x.requires_grad) return;
            x.ensure_grad();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < inner; ++i) {
                    const int64_t base = o * len * inner + i;
                    double dot = 0.0;
                    for (int64_t l = 0; l < len; ++l) dot += self.grad[base + l * inner] * self.value[base + l * inner];
                    for (int64_t l = 0; l < len; ++l) {
                        const int64_t idx = base + l * inner;
                        x.grad[idx] += self.value[idx] * (self.grad[idx] - dot);
                    }
                }
        };
    return Tensor(n);
}

// Normalizes over the last axis; gain/bias have that axis's length.
inline Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    const int d = x.shape().back();
    check<ShapeError>(gain.shape() == Shape{d} && bias.shape() == Shape{d},
                      "layernorm: gain/bias must have shape (" + std::to_string(d) + ")");
    const int64_t rows = x.size() / d;
    auto n = detail::new_node({&x, &gain, &bias}, x.shape());
    n->aux.resize(rows * 2);  // per-row mean, rstd
    const double* xv = x.value().data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = xv + r * d;
        double mean = 0.0;
        for (int i = 0; i < d; ++i) mean += xr[i];
        mean /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) {
            double c = xr[i] - mean;
            var += c * c;
        }
        var /= d;
        const double rstd = 1.0 / std::sqrt(var + eps);
        n->aux[2 * r] = mean;
        n->aux[2 * r + 1] = rstd;
        double* orow = n->value.data() + r * d;
        for (int i = 0; i < d; ++i) orow[i] = (xr[i] - mean) * rstd * gain.value()[i] + bias.value()[i];
    }
    if (n->requires_grad)
        n->backward_fn = [rows, d](Node& self) {
            Node& x = detail::in(self, 0);
            Node& gain = detail::in(self, 1);
            Node& bias = detail::in(self, 2);
            for (int64_t r = 0; r < rows; ++r) {
                const double mean = self.aux[2 * r];
                const double rstd = self.aux[2 * r + 1];
                const double* xr = x.value.data() + r * d;
                const double* gr = self.grad.data() + r * d;
                if (gain.requires_grad) {
                    gain.ensure_grad();
                    for (int i = 0; i < d; ++i) gain.grad[i] += gr[i] * (xr[i] - mean) * rstd;
                }
                if (bias.requires_grad) {
                    bias.ensure_grad();
                    for (int i = 0; i < d; ++i) bias.grad[i] += gr[i];
                }
                if (x.requires_grad) {
                    x.ensure_grad();
                    double sum_gy = 0.0, sum_gyx = 0.0;
                    for (int i = 0; i < d; ++i) {
                        const double gy = gr[i] * gain.value[i];
                        sum_gy += gy;
                        sum_gyx += gy * (xr[i] - mean) * rstd;
                    }
                    double* xg = x.grad.data() + r * d;
                    for (int i = 0; i < d; ++i) {
                        const double gy = gr[i] * gain.value[i];
                        const double xhat = (xr[i] - mean) * rstd;
                        xg[i] += rstd * (gy - sum_gy / d - xhat * sum_gyx / d);
                    }
                }
            }
        };
    return Tensor(n);
}

inline Tensor reduce_sum(const Tensor& x) {
    auto n = detail::new_node({&x}, {1});
    double acc = 0.0;
    for (double v : x.value()) acc += v;
    n->value[0] = acc;
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& x = detail::in(self, 0);
            if (!x.requires_grad) return;
            x.ensure_grad();
            const double g = self.grad[0];
            for (double& v : x.grad) v += g;
        };
    return Tensor(n);
}

inline Tensor reduce_mean(const Tensor& x) {
    Tensor s = reduce_sum(x);
    return scale(s, 1.0 / static_cast<double>(x.size()));
}

inline Tensor reduce_sum(const Tensor& x, int axis) {
    const int rank = static_cast<int>(x.shape().size());
    if (axis < 0) axis += rank;
    check<ShapeError>(axis >= 0 && axis < rank, "reduce_sum: axis out of range for " + shape_str(x.shape()));
    int64_t outer, len, inner;
    detail::axis_strides(x.shape(), axis, outer, len, inner);
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + axis);
    if (out_shape.empty()) out_shape = {1};
    auto n = detail::new_node({&x}, out_shape);
    std::fill(n->value.begin(), n->value.end(), 0.0);
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t l = 0; l < len; ++l)
            for (int64_t i = 0; i < inner; ++i)
                n->value[o * inner + i] += x.value()[(o * len + l) * inner + i];
    if (n->requires_grad)
        n->backward_fn = [outer, len, inner](Node& self) {
            Node& x = detail::in(self, 0);
            if (!x.requires_grad) return;
            x.ensure_grad();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t l = 0; l < len; ++l)
                    for (int64_t i = 0; i < inner; ++i)
                        x.grad[(o * len + l) * inner + i] += self.grad[o * inner + i];
        };
    return Tensor(n);
}

inline Tensor reduce_mean(const Tensor& x, int axis) {
    const int rank = static_cast<int>(x.shape().size());
    int ax = axis < 0 ? axis + rank : axis;
    Tensor s = reduce_sum(x, axis);
    return scale(s, 1.0 / static_cast<double>(x.shape()[ax]));
}

// ---------------------------------------------------------------------------
// layout ops

inline Tensor reshape(const Tensor& x, const Shape& shape) {
    check<ShapeError>(numel(shape) == x.size(),
                      "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    auto n = detail::new_node({&x}, shape);
    n->value = x.value();
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& x = detail::in(self, 0);
            if (!x.requires_grad) return;
            x.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i];
        };
    return Tensor(n);
}

inline Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
    const int rank = static_cast<int>(x.shape().size());
    if (axis < 0) axis += rank;
    check<ShapeError>(axis >= 0 && axis < rank, "slice: axis out of range for " + shape_str(x.shape()));
    check<ShapeError>(start >= 0 && len >= 0 && start + len <= x.shape()[axis],
                      "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                          ") out of bounds for " + shape_str(x.shape()));
    int64_t outer, alen, inner;
    detail::axis_strides(x.shape(), axis, outer, alen, inner);
    Shape out_shape = x.shape();
    out_shape[axis] = static_cast<int>(len);
    auto n = detail::new_node({&x}, out_shape);
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t l = 0; l < len; ++l)
            std::memcpy(n->value.data() + (o * len + l) * inner,
                        x.value().data() + (o * alen + start + l) * inner, sizeof(double) * inner);
    if (n->requires_grad)
        n->backward_fn = [outer, alen, inner, start, len](Node& self) {
            Node& x = detail::in(self, 0);
            if (!x.requires_grad) return;
            x.ensure_grad();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t l = 0; l < len; ++l) {
                    const double* g = self.grad.data() + (o * len + l) * inner;
                    double* xg = x.grad.data() + (o * alen + start + l) * inner;
                    for (int64_t i = 0; i < inner; ++i) xg[i] += g[i];
                }
        };
    return Tensor(n);
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    check<ContractError>(!parts.empty(), "concat: no inputs");
    const int rank = static_cast<int>(parts[0].shape().size());
    if (axis < 0) axis += rank;
    check<ShapeError>(axis >= 0 && axis < rank, "concat: axis out of range");
    Shape out_shape = parts[0].shape();
    int total = 0;
    for (const Tensor& p : parts) {
        Shape s = p.shape();
        check<ShapeError>(static_cast<int>(s.size()) == rank, "concat: rank mismatch");
        for (int i = 0; i < rank; ++i)
            check<ShapeError>(i == axis || s[i] == out_shape[i],
                              "concat: shape mismatch " + shape_str(s) + " vs " + shape_str(out_shape));
        total += s[axis];
    }
    out_shape[axis] = total;
    std::vector<const Tensor*> ptrs;
    for (const Tensor& p : parts) ptrs.push_back(&p);
    auto n = std::make_shared<Node>();
    n->shape = out_shape;
    n->value.resize(static_cast<size_t>(numel(out_shape)));
    for (const Tensor* p : ptrs) {
        if (p->node()->graph) n->graph = p->node()->graph;
        if (p->node()->requires_grad) n->requires_grad = true;
    }
    if (n->graph && n->requires_grad) {
        for (const Tensor* p : ptrs) n->inputs.push_back(p->node());
        n->graph->record(n);
    }
    int64_t outer, olen, inner;
    detail::axis_strides(out_shape, axis, outer, olen, inner);
    int64_t off = 0;
    for (const Tensor* p : ptrs) {
        const int64_t plen = p->shape()[axis];
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(n->value.data() + (o * olen + off) * inner, p->value().data() + o * plen * inner,
                        sizeof(double) * plen * inner);
        off += plen;
    }
    if (n->requires_grad) {
        std::vector<int64_t> lens;
        for (const Tensor* p : ptrs) lens.push_back(p->shape()[axis]);
        n->backward_fn = [outer, olen, inner, lens](Node& self) {
            int64_t off = 0;
            for (size_t k = 0; k < self.inputs.size(); ++k) {
                Node& x = *self.inputs[k];
                const int64_t plen = lens[k];
                if (x.requires_grad) {
                    x.ensure_grad();
                    for (int64_t o = 0; o < outer; ++o) {
                        const double* g = self.grad.data() + (o * olen + off) * inner;
                        double* xg = x.grad.data() + o * plen * inner;
                        for (int64_t i = 0; i < plen * inner; ++i) xg[i] += g[i];
                    }
                }
                off += plen;
            }
        };
    }
    return Tensor(n);
}

// General axis permutation; transpose(x) swaps the two axes of a matrix.
inline Tensor transpose(const Tensor& x, const std::vector<int>& perm) {
    const int rank = static_cast<int>(x.shape().size());
    check<ShapeError>(static_cast<int>(perm.size()) == rank, "transpose: perm rank mismatch");
    std::vector<bool> seen(rank, false);
    Shape out_shape(rank);
    for (int i = 0; i < rank; ++i) {
        check<ShapeError>(perm[i] >= 0 && perm[i] < rank && !seen[perm[i]], "transpose: invalid permutation");
        seen[perm[i]] = true;
        out_shape[i] = x.shape()[perm[i]];
    }
    auto n = detail::new_node({&x}, out_shape);
    std::vector<int64_t> in_strides(rank, 1), out_strides(rank, 1);
    for (int i = rank - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * x.shape()[i + 1];
    for (int i = rank - 2; i >= 0; --i) out_strides[i] = out_strides[i + 1] * out_shape[i + 1];
    const int64_t total = x.size();
    std::vector<int64_t> src_stride_for_out(rank);
    for (int i = 0; i < rank; ++i) src_stride_for_out[i] = in_strides[perm[i]];
    std::vector<int64_t> coord(rank, 0);
    for (int64_t idx = 0; idx < total; ++idx) {
        int64_t src = 0;
        for (int i = 0; i < rank; ++i) src += coord[i] * src_stride_for_out[i];
        n->value[idx] = x.value()[src];
        for (int i = rank - 1; i >= 0; --i) {
            if (++coord[i] < out_shape[i]) break;
            coord[i] = 0;
        }
    }
    if (n->requires_grad)
        n->backward_fn = [out_shape, src_stride_for_out, rank](Node& self) {
            Node& x = detail::in(self, 0);
            if (!x.requires_grad) return;
            x.ensure_grad();
            std::vector<int64_t> coord(rank, 0);
            const int64_t total = static_cast<int64_t>(self.grad.size());
            for (int64_t idx = 0; idx < total; ++idx) {
                int64_t src = 0;
                for (int i = 0; i < rank; ++i) src += coord[i] * src_stride_for_out[i];
                x.grad[src] += self.grad[idx];
                for (int i = rank - 1; i >= 0; --i) {
                    if (++coord[i] < out_shape[i]) break;
                    coord[i] = 0;
                }
            }
        };
    return Tensor(n);
}

inline Tensor transpose(const Tensor& x) {
    check<ShapeError>(x.shape().size() == 2, "transpose: default form expects a matrix");
    return transpose(x, {1, 0});
}

// Row gather along axis 0. Duplicate indices accumulate in backward.
inline Tensor gather(const Tensor& x, const std::vector<int>& indices) {
    check<ShapeError>(!x.shape().empty(), "gather: scalar input");
    const int64_t rows = x.shape()[0];
    const int64_t rowlen = x.size() / std::max<int64_t>(rows, 1);
    for (int i : indices)
        check<ContractError>(i >= 0 && i < rows,
                             "gather: index " + std::to_string(i) + " out of range [0," + std::to_string(rows) + ")");
    Shape out_shape = x.shape();
    out_shape[0] = static_cast<int>(indices.size());
    auto n = detail::new_node({&x}, out_shape);
    for (size_t r = 0; r < indices.size(); ++r)
        std::memcpy(n->value.data() + r * rowlen, x.value().data() + indices[r] * rowlen, sizeof(double) * rowlen);
    if (n->requires_grad)
        n->backward_fn = [indices, rowlen](Node& self) {
            Node& x = detail::in(self, 0);
            if (!x.requires_grad) return;
            x.ensure_grad();
            for (size_t r = 0; r < indices.size(); ++r) {
                const double* g = self.grad.data() + r * rowlen;
                double* xg = x.grad.data() + indices[r] * rowlen;
                for (int64_t i = 0; i < rowlen; ++i) xg[i] += g[i];
            }
        };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// rotary position embedding

// x: (B, L, D); D split into n_heads heads, pairs within each head rotated by
// position-dependent angles. Attention logits between rotated q/k depend only
// on relative position.
inline Tensor rope(const Tensor& x, int n_heads, double base = 10000.0) {
    check<ShapeError>(x.shape().size() == 3, "rope: expects (B,L,D), got " + shape_str(x.shape()));
    const int64_t B = x.shape()[0], L = x.shape()[1], D = x.shape()[2];
    check<ShapeError>(D % n_heads == 0, "rope: D not divisible by n_heads");
    const int dh = static_cast<int>(D) / n_heads;
    check<ShapeError>(dh % 2 == 0, "rope: head dim must be even");
    auto n = detail::new_node({&x}, x.shape());
    std::vector<double> cs(L * dh / 2), sn(L * dh / 2);
    for (int64_t p = 0; p < L; ++p)
        for (int i = 0; i < dh / 2; ++i) {
            const double theta = std::pow(base, -2.0 * i / dh);
            cs[p * (dh / 2) + i] = std::cos(p * theta);
            sn[p * (dh / 2) + i] = std::sin(p * theta);
        }
    for (int64_t b = 0; b < B; ++b)
        for (int64_t p = 0; p < L; ++p)
            for (int h = 0; h < n_heads; ++h)
                for (int i = 0; i < dh / 2; ++i) {
                    const int64_t off = ((b * L + p) * D) + h * dh + 2 * i;
                    const double c = cs[p * (dh / 2) + i], s = sn[p * (dh / 2) + i];
                    const double x0 = x.value()[off], x1 = x.value()[off + 1];
                    n->value[off] = x0 * c - x1 * s;
                    n->value[off + 1] = x0 * s + x1 * c;
                }
    if (n->requires_grad)
        n->backward_fn = [B, L, D, n_heads, dh, cs, sn](Node& self) {
            Node& x = detail::in(self, 0);
            if (!x.requires_grad) return;
            x.ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t p = 0; p < L; ++p)
                    for (int h = 0; h < n_heads; ++h)
                        for (int i = 0; i < dh / 2; ++i) {
                            const int64_t off = ((b * L + p) * D) + h * dh + 2 * i;
                            const double c = cs[p * (dh / 2) + i], s = sn[p * (dh / 2) + i];
                            const double g0 = self.grad[off], g1 = self.grad[off + 1];
                            // inverse rotation
                            x.grad[off] += g0 * c + g1 * s;
                            x.grad[off + 1] += -g0 * s + g1 * c;
                        }
        };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// fused multi-head self-attention over the middle axis of (B, L, D)

struct AttentionOpts {
    // Reduce softmax denominators and value mixes in ascending-value order so
    // the output is invariant to permutations of the L axis at the bit level.
    bool sorted_reduce = false;
    // When non-null, receives the (B, n_heads, L, L) softmax weights.
    std::vector<double>* capture_weights = nullptr;
};

inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads,
                        const AttentionOpts& opts = {}) {
    detail::check_same_shape(q, k, "attention(q,k)");
    detail::check_same_shape(q, v, "attention(q,v)");
    check<ShapeError>(q.shape().size() == 3, "attention: expects (B,L,D), got " + shape_str(q.shape()));
    const int64_t B = q.shape()[0], L = q.shape()[1], D = q.shape()[2];
    check<ContractError>(L >= 1, "attention: empty sequence axis");
    check<ShapeError>(D % n_heads == 0, "attention: D not divisible by n_heads");
    const int dh = static_cast<int>(D) / n_heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    auto n = detail::new_node({&q, &k, &v}, q.shape());
    const bool keep_weights = n->requires_grad || opts.capture_weights != nullptr;
    if (keep_weights) n->aux.assign(static_cast<size_t>(B) * n_heads * L * L, 0.0);

    std::vector<double> logits(L), addends(L);
    const double* qv = q.value().data();
    const double* kv = k.value().data();
    const double* vv = v.value().data();
    double* out = n->value.data();
    for (int64_t b = 0; b < B; ++b)
        for (int h = 0; h < n_heads; ++h) {
            const int64_t head_off = b * L * D + h * dh;
            for (int64_t i = 0; i < L; ++i) {
                const double* qi = qv + head_off + i * D;
                double mx = -std::numeric_limits<double>::infinity();
                for (int64_t j = 0; j < L; ++j) {
                    const double* kj = kv + head_off + j * D;
                    double dot = 0.0;
                    for (int d = 0; d < dh; ++d) dot += qi[d] * kj[d];
                    logits[j] = dot * inv_scale;
                    mx = std::max(mx, logits[j]);
                }
                double denom;
                for (int64_t j = 0; j < L; ++j) addends[j] = std::exp(logits[j] - mx);
                if (opts.sorted_reduce) {
                    std::vector<double> tmp(addends);
                    denom = detail::sorted_sum(tmp);
                } else {
                    denom = 0.0;
                    for (int64_t j = 0; j < L; ++j) denom += addends[j];
                }
                const double inv_denom = 1.0 / denom;
                for (int64_t j = 0; j < L; ++j) addends[j] *= inv_denom;  // weights
                if (keep_weights)
                    std::memcpy(n->aux.data() + ((b * n_heads + h) * L + i) * L, addends.data(),
                                sizeof(double) * L);
                double* oi = out + head_off + i * D;
                if (opts.sorted_reduce) {
                    std::vector<double> terms(L);
                    for (int d = 0; d < dh; ++d) {
                        for (int64_t j = 0; j < L; ++j) terms[j] = addends[j] * vv[head_off + j * D + d];
                        oi[d] = detail::sorted_sum(terms);
                    }
                } else {
                    for (int d = 0; d < dh; ++d) oi[d] = 0.0;
                    for (int64_t j = 0; j < L; ++j) {
                        const double w = addends[j];
                        const double* vj = vv + head_off + j * D;
                        for (int d = 0; d < dh; ++d) oi[d] += w * vj[d];
                    }
                }
            }
        }
    if (opts.capture_weights) *opts.capture_weights = n->aux;
    if (n->requires_grad)
        n->backward_fn = [B, L, D, n_heads, dh, inv_scale](Node& self) {
            Node& q = detail::in(self, 0);
            Node& k = detail::in(self, 1);
            Node& v = detail::in(self, 2);
            q.ensure_grad();
            k.ensure_grad();
            v.ensure_grad();
            std::vector<double> dw(L), ds(L);
            for (int64_t b = 0; b < B; ++b)
                for (int h = 0; h < n_heads; ++h) {
                    const int64_t head_off = b * L * D + h * dh;
                    for (int64_t i = 0; i < L; ++i) {
                        const double* w = self.aux.data() + ((b * n_heads + h) * L + i) * L;
                        const double* go = self.grad.data() + head_off + i * D;
                        // dV and dW
                        double dot = 0.0;
                        for (int64_t j = 0; j < L; ++j) {
                            const double* vj = v.value.data() + head_off + j * D;
                            double acc = 0.0;
                            for (int d = 0; d < dh; ++d) acc += go[d] * vj[d];
                            dw[j] = acc;
                            dot += acc * w[j];
                            double* vg = v.grad.data() + head_off + j * D;
                            for (int d = 0; d < dh; ++d) vg[d] += w[j] * go[d];
                        }
                        // softmax backward, then into q/k
                        const double* qi = q.value.data() + head_off + i * D;
                        double* qg = q.grad.data() + head_off + i * D;
                        for (int64_t j = 0; j < L; ++j) {
                            ds[j] = w[j] * (dw[j] - dot) * inv_scale;
                            const double* kj = k.value.data() + head_off + j * D;
                            double* kg = k.grad.data() + head_off + j * D;
                            for (int d = 0; d < dh; ++d) {
                                qg[d] += ds[j] * kj[d];
                                kg[d] += ds[j] * qi[d];
                            }
                        }
                    }
                }
        };
    return Tensor(n);
}

// Generic hook for building custom primitives (used by the loss module).
inline Tensor custom_op(const std::vector<Tensor>& inputs, Shape out_shape, std::vector<double> value,
                        std::function<void(Node&)> backward, std::vector<double> aux = {}) {
    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : inputs) ptrs.push_back(&t);
    auto n = std::make_shared<Node>();
    n->shape = std::move(out_shape);
    check<ShapeError>(static_cast<int64_t>(value.size()) == numel(n->shape), "custom_op: value/shape mismatch");
    n->value = std::move(value);
    n->aux = std::move(aux);
    for (const Tensor* t : ptrs) {
        if (t->node()->graph) n->graph = t->node()->graph;
        if (t->node()->requires_grad) n->requires_grad = true;
    }
    if (n->graph && n->requires_grad) {
        for (const Tensor* t : ptrs) n->inputs.push_back(t->node());
        n->backward_fn = std::move(backward);
        n->graph->record(n);
    }
    return Tensor(n);
}

}  // namespace bgts
