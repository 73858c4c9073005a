#pragma once

// Minimal reverse-mode automatic differentiation over row-major 2-D
// tensors: just the primitive set the models need. Values are computed
// eagerly; a tape of backward closures is recorded while grad mode is on.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <vector>

#include "listsynth/common.hpp"

namespace listsynth::ag {

inline bool& grad_mode() {
    thread_local bool on = true;
    return on;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

template <class F>
struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<F> val;
    std::vector<F> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    size_t size() const { return static_cast<size_t>(rows) * static_cast<size_t>(cols); }

    void ensure_grad() {
        if (grad.size() != size()) grad.assign(size(), F(0));
    }
};

template <class F>
class Var {
public:
    std::shared_ptr<Node<F>> n;

    Var() = default;
    explicit Var(std::shared_ptr<Node<F>> node) : n(std::move(node)) {}

    bool defined() const { return n != nullptr; }
    int rows() const { return n->rows; }
    int cols() const { return n->cols; }
    size_t size() const { return n->size(); }
    F* data() { return n->val.data(); }
    const F* data() const { return n->val.data(); }
    std::vector<F>& values() { return n->val; }
    const std::vector<F>& values() const { return n->val; }
    F item() const {
        if (n->size() != 1) throw ShapeError("item() on non-scalar");
        return n->val[0];
    }
    bool requires_grad() const { return n->requires_grad; }
    std::vector<F>& grad() { return n->grad; }
};

namespace detail {

template <class F>
using EMat = Eigen::Matrix<F, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class F>
using Map = Eigen::Map<EMat<F>>;
template <class F>
using CMap = Eigen::Map<const EMat<F>>;

template <class F>
CMap<F> cmap(const Node<F>& node) {
    return CMap<F>(node.val.data(), node.rows, node.cols);
}

template <class F>
Map<F> gmap(Node<F>& node) {
    node.ensure_grad();
    return Map<F>(node.grad.data(), node.rows, node.cols);
}

template <class F>
std::shared_ptr<Node<F>> make_node(int rows, int cols) {
    auto node = std::make_shared<Node<F>>();
    node->rows = rows;
    node->cols = cols;
    node->val.assign(static_cast<size_t>(rows) * static_cast<size_t>(cols), F(0));
    return node;
}

template <class F, class... Parents>
void wire(std::shared_ptr<Node<F>>& node, std::function<void(Node<F>&)> fn, Parents... parents) {
    bool need = grad_mode() && (... || parents->requires_grad);
    if (!need) return;
    node->requires_grad = true;
    (node->parents.push_back(parents), ...);
    node->backward = std::move(fn);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

template <class F>
Var<F> constant(int rows, int cols, std::span<const F> data) {
    if (static_cast<size_t>(rows) * static_cast<size_t>(cols) != data.size())
        throw ShapeError("constant: data length mismatch");
    auto node = detail::make_node<F>(rows, cols);
    std::copy(data.begin(), data.end(), node->val.begin());
    return Var<F>(node);
}

template <class F>
Var<F> zeros(int rows, int cols) {
    return Var<F>(detail::make_node<F>(rows, cols));
}

// A trainable leaf.
template <class F>
Var<F> leaf(int rows, int cols) {
    auto node = detail::make_node<F>(rows, cols);
    node->requires_grad = true;
    return Var<F>(node);
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

template <class F>
void backward(const Var<F>& root) {
    if (!root.n->requires_grad) return;
    if (root.n->size() != 1) throw ShapeError("backward: root must be scalar");

    std::vector<Node<F>*> order;
    std::unordered_set<Node<F>*> seen;
    std::vector<std::pair<Node<F>*, size_t>> stack;
    stack.emplace_back(root.n.get(), 0);
    seen.insert(root.n.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<F>* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.n->ensure_grad();
    root.n->grad[0] = F(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<F>* node = *it;
        if (node->backward) {
            node->ensure_grad();
            node->backward(*node);
        }
    }
}

template <class F>
void zero_grad(Var<F>& v) {
    v.n->grad.clear();
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

template <class F>
Var<F> matmul(const Var<F>& a, const Var<F>& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner extents differ");
    auto node = detail::make_node<F>(a.rows(), b.cols());
    detail::Map<F>(node->val.data(), node->rows, node->cols).noalias() =
        detail::cmap(*a.n) * detail::cmap(*b.n);
    detail::wire<F>(
        node,
        [pa = a.n, pb = b.n](Node<F>& self) {
            detail::CMap<F> g(self.grad.data(), self.rows, self.cols);
            if (pa->requires_grad) detail::gmap(*pa).noalias() += g * detail::cmap(*pb).transpose();
            if (pb->requires_grad) detail::gmap(*pb).noalias() += detail::cmap(*pa).transpose() * g;
        },
        a.n, b.n);
    return Var<F>(node);
}

// a [m x k] times b-transposed, b given as [n x k].
template <class F>
Var<F> matmul_nt(const Var<F>& a, const Var<F>& b) {
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner extents differ");
    auto node = detail::make_node<F>(a.rows(), b.rows());
    detail::Map<F>(node->val.data(), node->rows, node->cols).noalias() =
        detail::cmap(*a.n) * detail::cmap(*b.n).transpose();
    detail::wire<F>(
        node,
        [pa = a.n, pb = b.n](Node<F>& self) {
            detail::CMap<F> g(self.grad.data(), self.rows, self.cols);
            if (pa->requires_grad) detail::gmap(*pa).noalias() += g * detail::cmap(*pb);
            if (pb->requires_grad) detail::gmap(*pb).noalias() += g.transpose() * detail::cmap(*pa);
        },
        a.n, b.n);
    return Var<F>(node);
}

template <class F>
Var<F> add(const Var<F>& a, const Var<F>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("add: shape mismatch");
    auto node = detail::make_node<F>(a.rows(), a.cols());
    for (size_t i = 0; i < node->size(); ++i) node->val[i] = a.n->val[i] + b.n->val[i];
    detail::wire<F>(
        node,
        [pa = a.n, pb = b.n](Node<F>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.size(); ++i) pb->grad[i] += self.grad[i];
            }
        },
        a.n, b.n);
    return Var<F>(node);
}

template <class F>
Var<F> sub(const Var<F>& a, const Var<F>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("sub: shape mismatch");
    auto node = detail::make_node<F>(a.rows(), a.cols());
    for (size_t i = 0; i < node->size(); ++i) node->val[i] = a.n->val[i] - b.n->val[i];
    detail::wire<F>(
        node,
        [pa = a.n, pb = b.n](Node<F>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.size(); ++i) pb->grad[i] -= self.grad[i];
            }
        },
        a.n, b.n);
    return Var<F>(node);
}

template <class F>
Var<F> mul(const Var<F>& a, const Var<F>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("mul: shape mismatch");
    auto node = detail::make_node<F>(a.rows(), a.cols());
    for (size_t i = 0; i < node->size(); ++i) node->val[i] = a.n->val[i] * b.n->val[i];
    detail::wire<F>(
        node,
        [pa = a.n, pb = b.n](Node<F>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.size(); ++i) pa->grad[i] += self.grad[i] * pb->val[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.size(); ++i) pb->grad[i] += self.grad[i] * pa->val[i];
            }
        },
        a.n, b.n);
    return Var<F>(node);
}

template <class F>
Var<F> scale(const Var<F>& a, F c) {
    auto node = detail::make_node<F>(a.rows(), a.cols());
    for (size_t i = 0; i < node->size(); ++i) node->val[i] = a.n->val[i] * c;
    detail::wire<F>(
        node,
        [pa = a.n, c](Node<F>& self) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.size(); ++i) pa->grad[i] += self.grad[i] * c;
        },
        a.n);
    return Var<F>(node);
}

// Adds a [1 x n] vector to every row of a [m x n] matrix.
template <class F>
Var<F> add_rowvec(const Var<F>& a, const Var<F>& v) {
    if (v.rows() != 1 || v.cols() != a.cols()) throw ShapeError("add_rowvec: shape mismatch");
    auto node = detail::make_node<F>(a.rows(), a.cols());
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c)
            node->val[static_cast<size_t>(r * a.cols() + c)] =
                a.n->val[static_cast<size_t>(r * a.cols() + c)] + v.n->val[static_cast<size_t>(c)];
    detail::wire<F>(
        node,
        [pa = a.n, pv = v.n](Node<F>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pv->requires_grad) {
                pv->ensure_grad();
                for (int r = 0; r < self.rows; ++r)
                    for (int c = 0; c < self.cols; ++c)
                        pv->grad[static_cast<size_t>(c)] +=
                            self.grad[static_cast<size_t>(r * self.cols + c)];
            }
        },
        a.n, v.n);
    return Var<F>(node);
}

template <class F>
Var<F> concat_cols(std::span<const Var<F>> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    int rows = parts[0].rows();
    int cols = 0;
    for (const Var<F>& p : parts) {
        if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
        cols += p.cols();
    }
    auto node = detail::make_node<F>(rows, cols);
    int off = 0;
    for (const Var<F>& p : parts) {
        for (int r = 0; r < rows; ++r)
            std::copy(p.data() + static_cast<size_t>(r) * static_cast<size_t>(p.cols()),
                      p.data() + static_cast<size_t>(r + 1) * static_cast<size_t>(p.cols()),
                      node->val.begin() + static_cast<size_t>(r) * static_cast<size_t>(cols) + off);
        off += p.cols();
    }
    bool need = grad_mode();
    if (need) {
        bool any = false;
        for (const Var<F>& p : parts) any = any || p.n->requires_grad;
        need = any;
    }
    if (need) {
        std::vector<std::shared_ptr<Node<F>>> ps;
        for (const Var<F>& p : parts) ps.push_back(p.n);
        node->requires_grad = true;
        node->parents = ps;
        node->backward = [ps](Node<F>& self) {
            int off2 = 0;
            for (const auto& p : ps) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int r = 0; r < self.rows; ++r)
                        for (int c = 0; c < p->cols; ++c)
                            p->grad[static_cast<size_t>(r * p->cols + c)] +=
                                self.grad[static_cast<size_t>(r * self.cols + off2 + c)];
                }
                off2 += p->cols;
            }
        };
    }
    return Var<F>(node);
}

template <class F>
Var<F> concat_cols(std::initializer_list<Var<F>> parts) {
    std::vector<Var<F>> v(parts);
    return concat_cols(std::span<const Var<F>>(v.data(), v.size()));
}

template <class F>
Var<F> reshape(const Var<F>& a, int rows, int cols) {
    if (static_cast<size_t>(rows) * static_cast<size_t>(cols) != a.size())
        throw ShapeError("reshape: element count mismatch");
    auto node = detail::make_node<F>(rows, cols);
    node->val = a.n->val;
    detail::wire<F>(
        node,
        [pa = a.n](Node<F>& self) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.size(); ++i) pa->grad[i] += self.grad[i];
        },
        a.n);
    return Var<F>(node);
}

// Gathers rows of `table` [V x e] by index; out[i] = table[indices[i]].
template <class F>
Var<F> embedding(const Var<F>& table, std::span<const int32_t> indices) {
    const int e = table.cols();
    auto node = detail::make_node<F>(static_cast<int>(indices.size()), e);
    for (size_t i = 0; i < indices.size(); ++i) {
        int32_t idx = indices[i];
        if (idx < 0 || idx >= table.rows()) throw ShapeError("embedding: index out of range");
        std::copy(table.data() + static_cast<size_t>(idx) * static_cast<size_t>(e),
                  table.data() + static_cast<size_t>(idx + 1) * static_cast<size_t>(e),
                  node->val.begin() + i * static_cast<size_t>(e));
    }
    detail::wire<F>(
        node,
        [pt = table.n, idxs = std::vector<int32_t>(indices.begin(), indices.end())](Node<F>& self) {
            pt->ensure_grad();
            const int e2 = pt->cols;
            for (size_t i = 0; i < idxs.size(); ++i)
                for (int c = 0; c < e2; ++c)
                    pt->grad[static_cast<size_t>(idxs[i]) * static_cast<size_t>(e2) +
                             static_cast<size_t>(c)] +=
                        self.grad[i * static_cast<size_t>(e2) + static_cast<size_t>(c)];
        },
        table.n);
    return Var<F>(node);
}

template <class F>
Var<F> relu(const Var<F>& a) {
    auto node = detail::make_node<F>(a.rows(), a.cols());
    for (size_t i = 0; i < node->size(); ++i) node->val[i] = a.n->val[i] > F(0) ? a.n->val[i] : F(0);
    detail::wire<F>(
        node,
        [pa = a.n](Node<F>& self) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.size(); ++i)
                if (pa->val[i] > F(0)) pa->grad[i] += self.grad[i];
        },
        a.n);
    return Var<F>(node);
}

template <class F>
Var<F> selu(const Var<F>& a) {
    constexpr double kAlpha = 1.6732632423543772;
    constexpr double kLambda = 1.0507009873554805;
    auto node = detail::make_node<F>(a.rows(), a.cols());
    for (size_t i = 0; i < node->size(); ++i) {
        double x = static_cast<double>(a.n->val[i]);
        node->val[i] =
            static_cast<F>(x > 0 ? kLambda * x : kLambda * kAlpha * (std::exp(x) - 1.0));
    }
    detail::wire<F>(
        node,
        [pa = a.n](Node<F>& self) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.size(); ++i) {
                double x = static_cast<double>(pa->val[i]);
                double d = x > 0 ? kLambda : kLambda * kAlpha * std::exp(x);
                pa->grad[i] += self.grad[i] * static_cast<F>(d);
            }
        },
        a.n);
    return Var<F>(node);
}

template <class F>
Var<F> sigmoid(const Var<F>& a) {
    auto node = detail::make_node<F>(a.rows(), a.cols());
    for (size_t i = 0; i < node->size(); ++i) {
        double x = static_cast<double>(a.n->val[i]);
        double y = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        node->val[i] = static_cast<F>(y);
    }
    detail::wire<F>(
        node,
        [pa = a.n](Node<F>& self) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.size(); ++i) {
                double y = static_cast<double>(self.val[i]);
                pa->grad[i] += self.grad[i] * static_cast<F>(y * (1.0 - y));
            }
        },
        a.n);
    return Var<F>(node);
}

template <class F>
Var<F> row_softmax(const Var<F>& a) {
    auto node = detail::make_node<F>(a.rows(), a.cols());
    const int n = a.cols();
    for (int r = 0; r < a.rows(); ++r) {
        const F* in = a.data() + static_cast<size_t>(r) * static_cast<size_t>(n);
        F* out = node->val.data() + static_cast<size_t>(r) * static_cast<size_t>(n);
        double mx = static_cast<double>(in[0]);
        for (int c = 1; c < n; ++c) mx = std::max(mx, static_cast<double>(in[c]));
        double denom = 0;
        for (int c = 0; c < n; ++c) denom += std::exp(static_cast<double>(in[c]) - mx);
        for (int c = 0; c < n; ++c)
            out[c] = static_cast<F>(std::exp(static_cast<double>(in[c]) - mx) / denom);
    }
    detail::wire<F>(
        node,
        [pa = a.n](Node<F>& self) {
            pa->ensure_grad();
            const int n2 = self.cols;
            for (int r = 0; r < self.rows; ++r) {
                const F* y = self.val.data() + static_cast<size_t>(r) * static_cast<size_t>(n2);
                const F* gy = self.grad.data() + static_cast<size_t>(r) * static_cast<size_t>(n2);
                F dot = F(0);
                for (int c = 0; c < n2; ++c) dot += y[c] * gy[c];
                F* gx = pa->grad.data() + static_cast<size_t>(r) * static_cast<size_t>(n2);
                for (int c = 0; c < n2; ++c) gx[c] += y[c] * (gy[c] - dot);
            }
        },
        a.n);
    return Var<F>(node);
}

// Layer normalization over the last dimension with affine gain/bias [1 x n].
template <class F>
Var<F> layernorm_rows(const Var<F>& a, const Var<F>& gain, const Var<F>& bias, F eps = F(1e-5)) {
    if (gain.cols() != a.cols() || bias.cols() != a.cols())
        throw ShapeError("layernorm: affine shape mismatch");
    auto node = detail::make_node<F>(a.rows(), a.cols());
    const int n = a.cols();
    std::vector<F> xhat(node->size());
    std::vector<F> inv_std(static_cast<size_t>(a.rows()));
    for (int r = 0; r < a.rows(); ++r) {
        const F* in = a.data() + static_cast<size_t>(r) * static_cast<size_t>(n);
        double mean = 0;
        for (int c = 0; c < n; ++c) mean += static_cast<double>(in[c]);
        mean /= n;
        double var = 0;
        for (int c = 0; c < n; ++c) {
            double d = static_cast<double>(in[c]) - mean;
            var += d * d;
        }
        var /= n;
        double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
        inv_std[static_cast<size_t>(r)] = static_cast<F>(is);
        for (int c = 0; c < n; ++c) {
            F xh = static_cast<F>((static_cast<double>(in[c]) - mean) * is);
            xhat[static_cast<size_t>(r * n + c)] = xh;
            node->val[static_cast<size_t>(r * n + c)] =
                xh * gain.data()[c] + bias.data()[c];
        }
    }
    detail::wire<F>(
        node,
        [pa = a.n, pg = gain.n, pb = bias.n, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](Node<F>& self) {
            const int n2 = self.cols;
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            if (pa->requires_grad) pa->ensure_grad();
            for (int r = 0; r < self.rows; ++r) {
                const F* gy = self.grad.data() + static_cast<size_t>(r * n2);
                const F* xh = xhat.data() + static_cast<size_t>(r * n2);
                if (pg->requires_grad)
                    for (int c = 0; c < n2; ++c) pg->grad[static_cast<size_t>(c)] += gy[c] * xh[c];
                if (pb->requires_grad)
                    for (int c = 0; c < n2; ++c) pb->grad[static_cast<size_t>(c)] += gy[c];
                if (pa->requires_grad) {
                    // dx = (1/std) * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                    double sum_dxh = 0, sum_dxh_xh = 0;
                    std::vector<F> dxh(static_cast<size_t>(n2));
                    for (int c = 0; c < n2; ++c) {
                        dxh[static_cast<size_t>(c)] = gy[c] * pg->val[static_cast<size_t>(c)];
                        sum_dxh += static_cast<double>(dxh[static_cast<size_t>(c)]);
                        sum_dxh_xh += static_cast<double>(dxh[static_cast<size_t>(c)]) *
                                      static_cast<double>(xh[c]);
                    }
                    sum_dxh /= n2;
                    sum_dxh_xh /= n2;
                    F* gx = pa->grad.data() + static_cast<size_t>(r * n2);
                    double is = static_cast<double>(inv_std[static_cast<size_t>(r)]);
                    for (int c = 0; c < n2; ++c)
                        gx[c] += static_cast<F>(
                            is * (static_cast<double>(dxh[static_cast<size_t>(c)]) - sum_dxh -
                                  static_cast<double>(xh[c]) * sum_dxh_xh));
                }
            }
        },
        a.n, gain.n, bias.n);
    return Var<F>(node);
}

// Per-row cross-entropy from logits against integer targets; returns [m x 1].
template <class F>
Var<F> ce_rows(const Var<F>& logits, std::span<const int32_t> targets) {
    if (static_cast<int>(targets.size()) != logits.rows())
        throw ShapeError("ce_rows: target count mismatch");
    const int n = logits.cols();
    auto node = detail::make_node<F>(logits.rows(), 1);
    std::vector<F> probs(logits.size());
    for (int r = 0; r < logits.rows(); ++r) {
        const F* in = logits.data() + static_cast<size_t>(r) * static_cast<size_t>(n);
        int32_t tgt = targets[static_cast<size_t>(r)];
        if (tgt < 0 || tgt >= n) throw ShapeError("ce_rows: target out of range");
        double mx = static_cast<double>(in[0]);
        for (int c = 1; c < n; ++c) mx = std::max(mx, static_cast<double>(in[c]));
        double denom = 0;
        for (int c = 0; c < n; ++c) denom += std::exp(static_cast<double>(in[c]) - mx);
        for (int c = 0; c < n; ++c)
            probs[static_cast<size_t>(r * n + c)] =
                static_cast<F>(std::exp(static_cast<double>(in[c]) - mx) / denom);
        node->val[static_cast<size_t>(r)] =
            static_cast<F>(std::log(denom) + mx - static_cast<double>(in[tgt]));
    }
    detail::wire<F>(
        node,
        [pa = logits.n, probs = std::move(probs),
         tgts = std::vector<int32_t>(targets.begin(), targets.end())](Node<F>& self) {
            pa->ensure_grad();
            const int n2 = pa->cols;
            for (int r = 0; r < pa->rows; ++r) {
                F g = self.grad[static_cast<size_t>(r)];
                F* gx = pa->grad.data() + static_cast<size_t>(r * n2);
                const F* p = probs.data() + static_cast<size_t>(r * n2);
                for (int c = 0; c < n2; ++c) gx[c] += g * p[c];
                gx[tgts[static_cast<size_t>(r)]] -= g;
            }
        },
        logits.n);
    return Var<F>(node);
}

// Per-row sum of binary cross-entropies from logits; targets in {0,1}.
template <class F>
Var<F> bce_rows(const Var<F>& logits, const Var<F>& targets) {
    if (logits.rows() != targets.rows() || logits.cols() != targets.cols())
        throw ShapeError("bce_rows: shape mismatch");
    const int n = logits.cols();
    auto node = detail::make_node<F>(logits.rows(), 1);
    for (int r = 0; r < logits.rows(); ++r) {
        double acc = 0;
        for (int c = 0; c < n; ++c) {
            double z = static_cast<double>(logits.data()[static_cast<size_t>(r * n + c)]);
            double y = static_cast<double>(targets.data()[static_cast<size_t>(r * n + c)]);
            acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        }
        node->val[static_cast<size_t>(r)] = static_cast<F>(acc);
    }
    detail::wire<F>(
        node,
        [pa = logits.n, pt = targets.n](Node<F>& self) {
            pa->ensure_grad();
            const int n2 = pa->cols;
            for (int r = 0; r < pa->rows; ++r) {
                F g = self.grad[static_cast<size_t>(r)];
                for (int c = 0; c < n2; ++c) {
                    double z = static_cast<double>(pa->val[static_cast<size_t>(r * n2 + c)]);
                    double y = static_cast<double>(pt->val[static_cast<size_t>(r * n2 + c)]);
                    double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                    pa->grad[static_cast<size_t>(r * n2 + c)] += g * static_cast<F>(s - y);
                }
            }
        },
        logits.n, targets.n);
    return Var<F>(node);
}

template <class F>
Var<F> sum_all(const Var<F>& a) {
    auto node = detail::make_node<F>(1, 1);
    double acc = 0;
    for (F v : a.n->val) acc += static_cast<double>(v);
    node->val[0] = static_cast<F>(acc);
    detail::wire<F>(
        node,
        [pa = a.n](Node<F>& self) {
            pa->ensure_grad();
            for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += self.grad[0];
        },
        a.n);
    return Var<F>(node);
}

template <class F>
Var<F> mean_all(const Var<F>& a) {
    return scale(sum_all(a), F(1) / static_cast<F>(a.size()));
}

// Means over consecutive row groups: [G*g x n] -> [G x n]. Accumulation is
// order-independent (sorted, double precision) so pooling is exactly
// invariant to permuting the rows within a group.
template <class F>
Var<F> mean_rows_grouped(const Var<F>& a, int group) {
    if (group <= 0 || a.rows() % group != 0) throw ShapeError("mean_rows_grouped: bad group");
    const int out_rows = a.rows() / group;
    const int n = a.cols();
    auto node = detail::make_node<F>(out_rows, n);
    std::vector<double> column(static_cast<size_t>(group));
    for (int r = 0; r < out_rows; ++r) {
        for (int c = 0; c < n; ++c) {
            for (int k = 0; k < group; ++k)
                column[static_cast<size_t>(k)] = static_cast<double>(
                    a.data()[static_cast<size_t>(((r * group) + k) * n + c)]);
            std::sort(column.begin(), column.end());
            double acc = 0;
            for (double v : column) acc += v;
            node->val[static_cast<size_t>(r * n + c)] = static_cast<F>(acc / group);
        }
    }
    detail::wire<F>(
        node,
        [pa = a.n, group](Node<F>& self) {
            pa->ensure_grad();
            const int n2 = self.cols;
            for (int r = 0; r < self.rows; ++r)
                for (int k = 0; k < group; ++k)
                    for (int c = 0; c < n2; ++c)
                        pa->grad[static_cast<size_t>(((r * group) + k) * n2 + c)] +=
                            self.grad[static_cast<size_t>(r * n2 + c)] / static_cast<F>(group);
        },
        a.n);
    return Var<F>(node);
}

// Inverted dropout; active only when `training` is set.
template <class F>
Var<F> dropout(const Var<F>& a, double p, Rng& rng, bool training) {
    if (!training || p <= 0.0) return a;
    auto node = detail::make_node<F>(a.rows(), a.cols());
    std::vector<F> mask(a.size());
    const F keep_scale = static_cast<F>(1.0 / (1.0 - p));
    for (size_t i = 0; i < a.size(); ++i) {
        mask[i] = rng.next_double() < p ? F(0) : keep_scale;
        node->val[i] = a.n->val[i] * mask[i];
    }
    detail::wire<F>(
        node,
        [pa = a.n, mask = std::move(mask)](Node<F>& self) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.size(); ++i) pa->grad[i] += self.grad[i] * mask[i];
        },
        a.n);
    return Var<F>(node);
}

}  // namespace listsynth::ag
