// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Dense N-d tensor with reverse-mode automatic differentiation.
// Dynamic graph: ops record a backprop closure on execution, backward()
// consumes the graph. Scalar type is a template parameter; float is the
// training default, double is used for finite-difference checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "voxseg/common.hpp"

namespace voxseg {

// Thread-local switch: with grad mode off, ops produce plain values and no
// graph is recorded (inference path).
struct GradMode {
    static bool& flag() {
        thread_local bool on = true;
        return on;
    }
    static bool enabled() { return flag(); }
};

struct NoGradGuard {
    NoGradGuard() : prev_(GradMode::flag()) { GradMode::flag() = false; }
    ~NoGradGuard() { GradMode::flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename S>
struct TensorNode {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool consumed = false;
    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    std::function<void(TensorNode<S>&)> backprop;

    bool participates() const { return requires_grad || static_cast<bool>(backprop); }

    std::vector<S>& grad_buf() {
        if (grad.empty()) grad.assign(data.size(), S(0));
        return grad;
    }
};

template <typename S>
using NodePtr = std::shared_ptr<TensorNode<S>>;

template <typename S>
class Tensor {
public:
    using Scalar = S;

    Tensor() = default;
    explicit Tensor(NodePtr<S> n) : n_(std::move(n)) {}

    static Tensor zeros(const Shape& shape) {
        return from_data(shape, std::vector<S>(std::size_t(checked_numel(shape)), S(0)));
    }

    static Tensor full(const Shape& shape, S value) {
        return from_data(shape, std::vector<S>(std::size_t(checked_numel(shape)), value));
    }

    static Tensor scalar(S value) { return from_data({1}, {value}); }

    static Tensor from_data(const Shape& shape, std::vector<S> data) {
        const std::int64_t n = checked_numel(shape);
        require(std::int64_t(data.size()) == n,
                "tensor: data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_str(shape));
        auto node = std::make_shared<TensorNode<S>>();
        node->shape = shape;
        node->data = std::move(data);
        return Tensor(std::move(node));
    }

    bool valid() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return node().shape; }
    std::int64_t rank() const { return std::int64_t(node().shape.size()); }
    std::int64_t numel() const { return std::int64_t(node().data.size()); }

    std::span<S> values() { return {node().data.data(), node().data.size()}; }
    std::span<const S> values() const { return {node().data.data(), node().data.size()}; }

    S item() const {
        require(numel() == 1, "item: tensor has shape " + shape_str(shape()));
        return node().data[0];
    }

    Tensor& set_requires_grad(bool on = true) {
        require(!node().backprop, "requires_grad can only be toggled on leaf tensors");
        node().requires_grad = on;
        return *this;
    }
    bool requires_grad() const { return node().requires_grad; }

    bool has_grad() const { return !node().grad.empty(); }
    std::span<const S> grad() const {
        require(has_grad(), "tensor has no gradient; call backward first");
        return {node().grad.data(), node().grad.size()};
    }
    void zero_grad() { node().grad.clear(); }

    // A fresh leaf sharing no buffers with this tensor.
    Tensor detached() const { return from_data(shape(), node().data); }

    template <typename T>
    Tensor<T> cast() const {
        std::vector<T> out(node().data.begin(), node().data.end());
        return Tensor<T>::from_data(shape(), std::move(out));
    }

    TensorNode<S>& node() const {
        require(static_cast<bool>(n_), "operation on empty tensor");
        return *n_;
    }
    const NodePtr<S>& ptr() const { return n_; }

private:
    static std::int64_t checked_numel(const Shape& shape) {
        for (auto e : shape)
            require(e > 0, "tensor: non-positive extent in shape " + shape_str(shape));
        return shape_numel(shape);
    }

    NodePtr<S> n_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

// Builds the result tensor of an op and records the graph edge when grad
// mode is on and any input participates.
template <typename S>
Tensor<S> make_result(Shape shape, std::vector<S> data,
                      std::vector<Tensor<S>> inputs,
                      std::function<void(TensorNode<S>&)> backprop) {
    Tensor<S> out = Tensor<S>::from_data(std::move(shape), std::move(data));
    if (GradMode::enabled()) {
        bool any = false;
        for (const auto& t : inputs) any = any || t.node().participates();
        if (any) {
            auto& n = out.node();
            for (const auto& t : inputs) n.parents.push_back(t.ptr());
            n.backprop = std::move(backprop);
        }
    }
    return out;
}

}  // namespace detail

// Reverse pass from a scalar loss. Visits each recorded node exactly once in
// reverse execution order, accumulates leaf gradients, and frees the graph.
template <typename S>
void backward(const Tensor<S>& loss) {
    TensorNode<S>& root = loss.node();
    require(root.data.size() == 1,
            "backward: loss must be scalar, got shape " + shape_str(root.shape));
    if (root.consumed)
        throw Error("backward: graph already consumed; re-run the forward pass");
    if (!root.participates())
        throw Error("backward: loss is detached, no graph was recorded");

    // keep_alive pins every visited node for the whole pass: releasing a
    // node's parents below must not destroy nodes still awaiting their call.
    std::vector<NodePtr<S>> keep_alive{loss.ptr()};
    std::vector<TensorNode<S>*> order;
    std::unordered_set<TensorNode<S>*> seen;
    struct Frame {
        TensorNode<S>* node;
        std::size_t next;
    };
    std::vector<Frame> stack{{&root, 0}};
    seen.insert(&root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->parents.size()) {
            const NodePtr<S>& p = f.node->parents[f.next++];
            if (p && p->backprop && !seen.count(p.get())) {
                seen.insert(p.get());
                keep_alive.push_back(p);
                stack.push_back({p.get(), 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    root.grad_buf()[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<S>* nd = *it;
        if (nd->backprop) nd->backprop(*nd);
        nd->consumed = true;
        nd->backprop = nullptr;
        nd->parents.clear();
        if (!nd->requires_grad) {
            nd->grad.clear();
            nd->grad.shrink_to_fit();
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

enum class EltwiseKind { Add, Sub, Mul, Div, Scale, Clamp, Relu, Sigmoid, Tanh, Ln, Pow };

namespace detail {

// vjp(g, x, y) -> contribution to dx
template <typename S, typename Fwd, typename Vjp>
Tensor<S> unary(const Tensor<S>& a, Fwd f, Vjp vjp) {
    const auto& x = a.node().data;
    std::vector<S> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return make_result<S>(
        a.shape(), std::move(y), {a}, [a, vjp](TensorNode<S>& self) {
            if (!a.node().participates()) return;
            auto& g = a.node().grad_buf();
            const auto& x = a.node().data;
            for (std::size_t i = 0; i < x.size(); ++i)
                g[i] += vjp(self.grad[i], x[i], self.data[i]);
        });
}

}  // namespace detail

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
    return detail::unary(
        a, [](S x) { return x > S(0) ? x : S(0); },
        [](S g, S x, S) { return x > S(0) ? g : S(0); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    return detail::unary(
        a, [](S x) { return S(1) / (S(1) + std::exp(-x)); },
        [](S g, S, S y) { return g * y * (S(1) - y); });
}

template <typename S>
Tensor<S> tanh_(const Tensor<S>& a) {
    return detail::unary(
        a, [](S x) { return std::tanh(x); },
        [](S g, S, S y) { return g * (S(1) - y * y); });
}

template <typename S>
Tensor<S> ln(const Tensor<S>& a) {
    return detail::unary(
        a, [](S x) { return std::log(x); }, [](S g, S x, S) { return g / x; });
}

template <typename S>
Tensor<S> pow_(const Tensor<S>& a, S p) {
    return detail::unary(
        a, [p](S x) { return std::pow(x, p); },
        [p](S g, S x, S) { return g * p * std::pow(x, p - S(1)); });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
    return detail::unary(
        a, [c](S x) { return x * c; }, [c](S g, S, S) { return g * c; });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
    return detail::unary(
        a, [c](S x) { return x + c; }, [](S g, S, S) { return g; });
}

// Gradient passes through where lo <= x <= hi.
template <typename S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
    require(lo <= hi, "clamp: lo > hi");
    return detail::unary(
        a, [lo, hi](S x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](S g, S x, S) { return (x >= lo && x <= hi) ? g : S(0); });
}

namespace detail {

enum class BinKind { Add, Sub, Mul, Div };

template <typename S>
S bin_fwd(BinKind k, S a, S b) {
    switch (k) {
        case BinKind::Add: return a + b;
        case BinKind::Sub: return a - b;
        case BinKind::Mul: return a * b;
        default: return a / b;  // IEEE semantics; b == 0 yields inf/nan
    }
}

// Partial derivatives of bin_fwd per coordinate.
template <typename S>
S bin_da(BinKind k, S, S b) {
    switch (k) {
        case BinKind::Add:
        case BinKind::Sub: return S(1);
        case BinKind::Mul: return b;
        default: return S(1) / b;
    }
}

template <typename S>
S bin_db(BinKind k, S a, S b) {
    switch (k) {
        case BinKind::Add: return S(1);
        case BinKind::Sub: return S(-1);
        case BinKind::Mul: return a;
        default: return -a / (b * b);
    }
}

// Supported broadcasting: identical shapes, or one operand with a single
// element acting as a scalar.
template <typename S>
Tensor<S> binary(const Tensor<S>& a, const Tensor<S>& b, BinKind k, const char* name) {
    const auto& av = a.node().data;
    const auto& bv = b.node().data;
    const bool same = a.shape() == b.shape();
    const bool a_scalar = av.size() == 1;
    const bool b_scalar = bv.size() == 1;
    require(same || a_scalar || b_scalar,
            std::string(name) + ": incompatible shapes " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));

    const Shape& out_shape = (same || b_scalar) ? a.shape() : b.shape();
    const std::size_t n = std::size_t(shape_numel(out_shape));
    std::vector<S> y(n);
    const bool a_full = same || b_scalar;
    for (std::size_t i = 0; i < n; ++i)
        y[i] = bin_fwd(k, av[a_full ? i : 0], bv[a_full && !same ? 0 : i]);

    return make_result<S>(
        out_shape, std::move(y), {a, b},
        [a, b, k, same, a_scalar, b_scalar](TensorNode<S>& self) {
            const auto& av = a.node().data;
            const auto& bv = b.node().data;
            const auto& g = self.grad;
            const bool a_full = same || b_scalar;
            const auto ai = [&](std::size_t i) { return a_full ? i : 0; };
            const auto bi = [&](std::size_t i) { return (a_full && !same) ? 0 : i; };
            if (a.node().participates()) {
                auto& ga = a.node().grad_buf();
                if (a_full) {
                    for (std::size_t i = 0; i < g.size(); ++i)
                        ga[i] += g[i] * bin_da(k, av[i], bv[bi(i)]);
                } else {  // a is the scalar
                    S acc = 0;
                    for (std::size_t i = 0; i < g.size(); ++i)
                        acc += g[i] * bin_da(k, av[0], bv[i]);
                    ga[0] += acc;
                }
            }
            if (b.node().participates()) {
                auto& gb = b.node().grad_buf();
                if (same || a_scalar) {
                    for (std::size_t i = 0; i < g.size(); ++i)
                        gb[i] += g[i] * bin_db(k, av[ai(i)], bv[i]);
                } else {  // b is the scalar
                    S acc = 0;
                    for (std::size_t i = 0; i < g.size(); ++i)
                        acc += g[i] * bin_db(k, av[i], bv[0]);
                    gb[0] += acc;
                }
            }
        });
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary(a, b, detail::BinKind::Add, "add");
}
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary(a, b, detail::BinKind::Sub, "sub");
}
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary(a, b, detail::BinKind::Mul, "mul");
}
// True elementwise division (single rounding), so ratios of equal values are
// exactly 1. The caller guarantees a nonzero denominator.
template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary(a, b, detail::BinKind::Div, "div");
}

// Dispatch form of the elementwise family. Scalar operands ride along as
// 1-element tensors; Scale/Clamp/Pow take their constants via the dedicated
// functions above.
template <typename S>
Tensor<S> eltwise(EltwiseKind kind, const Tensor<S>& a, const Tensor<S>& b) {
    switch (kind) {
        case EltwiseKind::Add: return add(a, b);
        case EltwiseKind::Sub: return sub(a, b);
        case EltwiseKind::Mul: return mul(a, b);
        case EltwiseKind::Div: return div(a, b);
        default: throw Error("eltwise: kind takes no second tensor operand");
    }
}

template <typename S>
Tensor<S> eltwise(EltwiseKind kind, const Tensor<S>& a, S c = S(0)) {
    switch (kind) {
        case EltwiseKind::Add: return add_scalar(a, c);
        case EltwiseKind::Sub: return add_scalar(a, -c);
        case EltwiseKind::Scale: return scale(a, c);
        case EltwiseKind::Mul: return scale(a, c);
        case EltwiseKind::Div: return scale(a, S(1) / c);
        case EltwiseKind::Relu: return relu(a);
        case EltwiseKind::Sigmoid: return sigmoid(a);
        case EltwiseKind::Tanh: return tanh_(a);
        case EltwiseKind::Ln: return ln(a);
        case EltwiseKind::Pow: return pow_(a, c);
        case EltwiseKind::Clamp: throw Error("eltwise: clamp needs lo and hi, use clamp()");
    }
    throw Error("eltwise: unknown kind");
}

// ---------------------------------------------------------------------------
// Reductions and shape ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
    const auto& x = a.node().data;
    S acc = 0;
    for (S v : x) acc += v;
    return detail::make_result<S>(
        {1}, {acc}, {a}, [a](TensorNode<S>& self) {
            if (!a.node().participates()) return;
            auto& g = a.node().grad_buf();
            const S go = self.grad[0];
            for (auto& v : g) v += go;
        });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
    return scale(sum(a), S(1) / S(a.numel()));
}

// Sample slice along dim 0, keeping rank (extent 1).
template <typename S>
Tensor<S> slice0(const Tensor<S>& a, std::int64_t i) {
    require(a.rank() >= 1, "slice0: rank-0 tensor");
    const Shape& s = a.shape();
    require(i >= 0 && i < s[0], "slice0: index " + std::to_string(i) +
                                    " out of range for shape " + shape_str(s));
    Shape out_shape = s;
    out_shape[0] = 1;
    const std::int64_t stride = shape_numel(s) / s[0];
    const auto& x = a.node().data;
    std::vector<S> y(x.begin() + i * stride, x.begin() + (i + 1) * stride);
    return detail::make_result<S>(
        out_shape, std::move(y), {a}, [a, i, stride](TensorNode<S>& self) {
            if (!a.node().participates()) return;
            auto& g = a.node().grad_buf();
            for (std::int64_t j = 0; j < stride; ++j)
                g[std::size_t(i * stride + j)] += self.grad[std::size_t(j)];
        });
}

// Concatenate along the channel axis of [N,C,D,H,W] tensors.
template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
    require(a.rank() == 5 && b.rank() == 5, "concat_channels: rank-5 tensors required");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    require(sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3] && sa[4] == sb[4],
            "concat_channels: incompatible shapes " + shape_str(sa) + " vs " + shape_str(sb));
    const std::int64_t n = sa[0], ca = sa[1], cb = sb[1];
    const std::int64_t m = sa[2] * sa[3] * sa[4];
    Shape out_shape = {n, ca + cb, sa[2], sa[3], sa[4]};
    std::vector<S> y(static_cast<std::size_t>(n * (ca + cb) * m));
    const auto& av = a.node().data;
    const auto& bv = b.node().data;
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy_n(av.begin() + i * ca * m, ca * m, y.begin() + i * (ca + cb) * m);
        std::copy_n(bv.begin() + i * cb * m, cb * m, y.begin() + i * (ca + cb) * m + ca * m);
    }
    return detail::make_result<S>(
        out_shape, std::move(y), {a, b}, [a, b, n, ca, cb, m](TensorNode<S>& self) {
            const auto& g = self.grad;
            if (a.node().participates()) {
                auto& ga = a.node().grad_buf();
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < ca * m; ++j)
                        ga[std::size_t(i * ca * m + j)] += g[std::size_t(i * (ca + cb) * m + j)];
            }
            if (b.node().participates()) {
                auto& gb = b.node().grad_buf();
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < cb * m; ++j)
                        gb[std::size_t(i * cb * m + j)] +=
                            g[std::size_t(i * (ca + cb) * m + ca * m + j)];
            }
        });
}

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 tensors required, got " +
                                                shape_str(a.shape()) + " and " +
                                                shape_str(b.shape()));
    const std::int64_t m = a.shape()[0], k = a.shape()[1];
    const std::int64_t k2 = b.shape()[0], n = b.shape()[1];
    require(k == k2, "matmul: inner dimensions differ, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    std::vector<S> y(static_cast<std::size_t>(m * n));
    {
        ConstMatMap<S> A(a.node().data.data(), m, k);
        ConstMatMap<S> B(b.node().data.data(), k, n);
        MatMap<S> Y(y.data(), m, n);
        Y.noalias() = A * B;
    }
    return detail::make_result<S>(
        {m, n}, std::move(y), {a, b}, [a, b, m, k, n](TensorNode<S>& self) {
            ConstMatMap<S> G(self.grad.data(), m, n);
            if (a.node().participates()) {
                ConstMatMap<S> B(b.node().data.data(), k, n);
                MatMap<S> GA(a.node().grad_buf().data(), m, k);
                GA.noalias() += G * B.transpose();
            }
            if (b.node().participates()) {
                ConstMatMap<S> A(a.node().data.data(), m, k);
                MatMap<S> GB(b.node().grad_buf().data(), k, n);
                GB.noalias() += A.transpose() * G;
            }
        });
}

// ---------------------------------------------------------------------------
// Per-(sample, channel) statistics over rank-5 activations
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void check_rank5(const Tensor<S>& x, const char* name) {
    require(x.rank() == 5,
            std::string(name) + ": rank-5 [N,C,D,H,W] tensor required, got " +
                shape_str(x.shape()));
}

}  // namespace detail

template <typename S>
Tensor<S> channel_mean(const Tensor<S>& x) {
    detail::check_rank5(x, "channel_mean");
    const Shape& s = x.shape();
    const std::int64_t nc = s[0] * s[1], m = s[2] * s[3] * s[4];
    const auto& xv = x.node().data;
    std::vector<S> y(static_cast<std::size_t>(nc));
    for (std::int64_t c = 0; c < nc; ++c) {
        S acc = 0;
        const S* p = xv.data() + c * m;
        for (std::int64_t i = 0; i < m; ++i) acc += p[i];
        y[std::size_t(c)] = acc / S(m);
    }
    return detail::make_result<S>(
        {s[0], s[1]}, std::move(y), {x}, [x, nc, m](TensorNode<S>& self) {
            if (!x.node().participates()) return;
            auto& g = x.node().grad_buf();
            for (std::int64_t c = 0; c < nc; ++c) {
                const S go = self.grad[std::size_t(c)] / S(m);
                S* p = g.data() + c * m;
                for (std::int64_t i = 0; i < m; ++i) p[i] += go;
            }
        });
}

// Population variance (divide by the voxel count).
template <typename S>
Tensor<S> channel_var(const Tensor<S>& x) {
    detail::check_rank5(x, "channel_var");
    const Shape& s = x.shape();
    const std::int64_t nc = s[0] * s[1], m = s[2] * s[3] * s[4];
    const auto& xv = x.node().data;
    std::vector<S> y(static_cast<std::size_t>(nc));
    auto means = std::make_shared<std::vector<S>>(static_cast<std::size_t>(nc));
    for (std::int64_t c = 0; c < nc; ++c) {
        const S* p = xv.data() + c * m;
        S acc = 0;
        for (std::int64_t i = 0; i < m; ++i) acc += p[i];
        const S mu = acc / S(m);
        (*means)[std::size_t(c)] = mu;
        S var = 0;
        for (std::int64_t i = 0; i < m; ++i) {
            const S d = p[i] - mu;
            var += d * d;
        }
        y[std::size_t(c)] = var / S(m);
    }
    return detail::make_result<S>(
        {s[0], s[1]}, std::move(y), {x}, [x, nc, m, means](TensorNode<S>& self) {
            if (!x.node().participates()) return;
            auto& g = x.node().grad_buf();
            const auto& xv = x.node().data;
            for (std::int64_t c = 0; c < nc; ++c) {
                const S go = self.grad[std::size_t(c)] * S(2) / S(m);
                const S mu = (*means)[std::size_t(c)];
                const S* p = xv.data() + c * m;
                S* gp = g.data() + c * m;
                for (std::int64_t i = 0; i < m; ++i) gp[i] += go * (p[i] - mu);
            }
        });
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> channel_stats(const Tensor<S>& x) {
    return {channel_mean(x), channel_var(x)};
}

// Broadcast a [N,C] tensor over the spatial axes of a [N,C,D,H,W] tensor.
namespace detail {

template <typename S>
Tensor<S> channel_broadcast(const Tensor<S>& x, const Tensor<S>& s, BinKind k,
                            const char* name) {
    check_rank5(x, name);
    require(s.rank() == 2 && s.shape()[0] == x.shape()[0] && s.shape()[1] == x.shape()[1],
            std::string(name) + ": per-channel operand must be [N,C]=" +
                shape_str({x.shape()[0], x.shape()[1]}) + ", got " + shape_str(s.shape()));
    const std::int64_t nc = x.shape()[0] * x.shape()[1];
    const std::int64_t m = x.shape()[2] * x.shape()[3] * x.shape()[4];
    const auto& xv = x.node().data;
    const auto& sv = s.node().data;
    std::vector<S> y(xv.size());
    for (std::int64_t c = 0; c < nc; ++c) {
        const S b = sv[std::size_t(c)];
        const S* p = xv.data() + c * m;
        S* q = y.data() + c * m;
        for (std::int64_t i = 0; i < m; ++i) q[i] = bin_fwd(k, p[i], b);
    }
    return make_result<S>(
        x.shape(), std::move(y), {x, s}, [x, s, k, nc, m](TensorNode<S>& self) {
            const auto& g = self.grad;
            const auto& sv = s.node().data;
            const auto& xv = x.node().data;
            if (x.node().participates()) {
                auto& gx = x.node().grad_buf();
                for (std::int64_t c = 0; c < nc; ++c) {
                    const S w = (k == BinKind::Mul) ? sv[std::size_t(c)] : S(1);
                    const S* gp = g.data() + c * m;
                    S* q = gx.data() + c * m;
                    for (std::int64_t i = 0; i < m; ++i) q[i] += gp[i] * w;
                }
            }
            if (s.node().participates()) {
                auto& gs = s.node().grad_buf();
                for (std::int64_t c = 0; c < nc; ++c) {
                    const S* gp = g.data() + c * m;
                    const S* xp = xv.data() + c * m;
                    S acc = 0;
                    for (std::int64_t i = 0; i < m; ++i)
                        acc += (k == BinKind::Mul) ? gp[i] * xp[i] : gp[i];
                    gs[std::size_t(c)] += (k == BinKind::Sub) ? -acc : acc;
                }
            }
        });
}

}  // namespace detail

template <typename S>
Tensor<S> channel_add(const Tensor<S>& x, const Tensor<S>& s) {
    return detail::channel_broadcast(x, s, detail::BinKind::Add, "channel_add");
}
template <typename S>
Tensor<S> channel_sub(const Tensor<S>& x, const Tensor<S>& s) {
    return detail::channel_broadcast(x, s, detail::BinKind::Sub, "channel_sub");
}
template <typename S>
Tensor<S> channel_mul(const Tensor<S>& x, const Tensor<S>& s) {
    return detail::channel_broadcast(x, s, detail::BinKind::Mul, "channel_mul");
}

}  // namespace voxseg
