#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is an immutable value. When any input of an op lives on a Tape the
// result is recorded on that tape together with a closure that maps the
// output gradient back onto the inputs. Tape::backward walks the nodes in
// strict reverse creation order, so accumulation is additive and the order is
// a valid topological order by construction.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dashfusion/errors.hpp"

namespace dashfusion {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

template <std::floating_point T>
class Tape;

template <std::floating_point T>
class Tensor {
public:
    using value_type = T;

    /// Scalar zero.
    Tensor() : Tensor(Shape{}, std::vector<T>{T(0)}) {}

    Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
        for (auto e : shape_) {
            if (e == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape_));
        }
        if (numel(shape_) != values.size()) {
            throw DimensionError("shape " + to_string(shape_) + " does not match " +
                                 std::to_string(values.size()) + " values");
        }
        data_ = std::make_shared<const std::vector<T>>(std::move(values));
    }

    static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
    static Tensor full(Shape shape, T value) {
        const auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value));
    }
    static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values) {
        return Tensor(Shape{rows, cols}, std::move(values));
    }
    static Tensor vector(std::vector<T> values) {
        const auto n = values.size();
        return Tensor(Shape{n}, std::move(values));
    }
    static Tensor identity(std::size_t n) {
        std::vector<T> v(n * n, T(0));
        for (std::size_t i = 0; i < n; ++i) v[i * n + i] = T(1);
        return matrix(n, n, std::move(v));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_->size(); }
    std::size_t rows() const { return rank() == 2 ? shape_[0] : throw DimensionError("rows() on " + to_string(shape_)); }
    std::size_t cols() const { return rank() == 2 ? shape_[1] : throw DimensionError("cols() on " + to_string(shape_)); }

    std::span<const T> values() const noexcept { return {data_->data(), data_->size()}; }
    const std::shared_ptr<const std::vector<T>>& storage() const noexcept { return data_; }
    T operator[](std::size_t i) const { return (*data_)[i]; }
    T at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }
    T item() const {
        if (size() != 1) throw DimensionError("item() on non-scalar " + to_string(shape_));
        return (*data_)[0];
    }

    bool requires_grad() const noexcept { return node_ >= 0; }
    Tape<T>* tape() const noexcept { return tape_; }
    int node() const noexcept { return node_; }

    /// Same values, no tape link.
    Tensor detach() const {
        Tensor out = *this;
        out.tape_ = nullptr;
        out.node_ = -1;
        return out;
    }

    /// Reinterpret with a new shape of equal element count; no copy, not recorded.
    Tensor with_shape(Shape shape) const {
        if (numel(shape) != size()) {
            throw DimensionError("cannot view " + to_string(shape_) + " as " + to_string(shape));
        }
        Tensor out = *this;
        out.shape_ = std::move(shape);
        return out;
    }

    template <std::floating_point U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_->begin(), data_->end()));
    }

private:
    friend class Tape<T>;

    Shape shape_;
    std::shared_ptr<const std::vector<T>> data_;
    Tape<T>* tape_ = nullptr;
    int node_ = -1;
};

template <std::floating_point T>
using Gradients = std::map<std::string, Tensor<T>>;

template <std::floating_point T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const std::vector<T>&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Registers a named leaf. Names are unique per tape.
    Tensor<T> variable(const std::string& name, const Tensor<T>& value) {
        for (const auto& [n, id] : variables_) {
            if (n == name) throw std::invalid_argument("duplicate tape variable '" + name + "'");
        }
        Tensor<T> out = value.detach();
        attach(out, "leaf", {}, nullptr);
        variables_.emplace_back(name, out.node_);
        return out;
    }

    Tensor<T> record(std::string_view op, Tensor<T> out, std::vector<int> inputs, BackwardFn fn) {
        attach(out, op, std::move(inputs), std::move(fn));
        return out;
    }

    /// Gradient buffer of a node, zero-initialised on first touch. Only valid inside backward.
    std::vector<T>& grad(int node) {
        auto& g = grads_.at(static_cast<std::size_t>(node));
        if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(node)].size, T(0));
        return g;
    }

    /// Reverse sweep from a scalar loss. Every registered variable appears in the
    /// result; variables the loss does not depend on get zeros.
    Gradients<T> backward(const Tensor<T>& loss) {
        if (loss.size() != 1) throw DimensionError("backward needs a scalar loss, got " + to_string(loss.shape()));
        if (loss.tape() != this || loss.node() < 0) {
            throw std::invalid_argument("loss was not produced on this tape");
        }
        grads_.assign(nodes_.size(), {});
        grad(loss.node())[0] = T(1);
        for (int id = loss.node(); id >= 0; --id) {
            auto& node = nodes_[static_cast<std::size_t>(id)];
            if (grads_[static_cast<std::size_t>(id)].empty() || !node.backward) continue;
            const std::vector<T> g = std::move(grads_[static_cast<std::size_t>(id)]);
            node.backward(*this, g);
        }
        Gradients<T> out;
        for (const auto& [name, id] : variables_) {
            auto g = grads_[static_cast<std::size_t>(id)];
            if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(id)].size, T(0));
            out.emplace(name, Tensor<T>(nodes_[static_cast<std::size_t>(id)].shape, std::move(g)));
        }
        return out;
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    std::string_view op(int node) const { return nodes_.at(static_cast<std::size_t>(node)).op; }
    const std::vector<int>& inputs(int node) const { return nodes_.at(static_cast<std::size_t>(node)).inputs; }

private:
    struct Node {
        std::string_view op;
        std::vector<int> inputs;
        BackwardFn backward;
        Shape shape;
        std::size_t size;
    };

    void attach(Tensor<T>& t, std::string_view op, std::vector<int> inputs, BackwardFn fn) {
        t.tape_ = this;
        t.node_ = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{op, std::move(inputs), std::move(fn), t.shape(), t.size()});
    }

    std::vector<Node> nodes_;
    std::vector<std::vector<T>> grads_;
    std::vector<std::pair<std::string, int>> variables_;
};

// ---------------------------------------------------------------------------
// Matmul instrumentation: every forward matmul (m x k)(k x n) adds m*k*n.

struct MaddsCounter {
    std::uint64_t total = 0;
    std::uint64_t calls = 0;
};

namespace detail {
inline thread_local MaddsCounter* active_madds_counter = nullptr;
}

/// Routes matmul MAdds on this thread into `counter` for the scope's lifetime.
class ScopedMaddsCount {
public:
    explicit ScopedMaddsCount(MaddsCounter& counter) : prev_(detail::active_madds_counter) {
        detail::active_madds_counter = &counter;
    }
    ~ScopedMaddsCount() { detail::active_madds_counter = prev_; }
    ScopedMaddsCount(const ScopedMaddsCount&) = delete;
    ScopedMaddsCount& operator=(const ScopedMaddsCount&) = delete;

private:
    MaddsCounter* prev_;
};

// ---------------------------------------------------------------------------

namespace detail {

template <std::floating_point T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <std::floating_point T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <std::floating_point T>
using MutMap = Eigen::Map<RowMat<T>>;

/// Copy into an Eigen-owned (maximally aligned) matrix. Eigen peels its
/// vectorised loops by pointer alignment, so products over arbitrary heap
/// buffers could sum in a different order from one call to the next.
template <std::floating_point T>
RowMat<T> owned(const T* data, std::size_t rows, std::size_t cols) {
    return ConstMap<T>(data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <std::floating_point T>
Tape<T>* tape_of(std::initializer_list<const Tensor<T>*> inputs) {
    Tape<T>* tape = nullptr;
    for (const auto* t : inputs) {
        if (!t->requires_grad()) continue;
        if (tape && tape != t->tape()) throw std::invalid_argument("inputs live on different tapes");
        tape = t->tape();
    }
    return tape;
}

template <std::floating_point T>
Tape<T>* tape_of(const std::vector<Tensor<T>>& inputs) {
    Tape<T>* tape = nullptr;
    for (const auto& t : inputs) {
        if (!t.requires_grad()) continue;
        if (tape && tape != t.tape()) throw std::invalid_argument("inputs live on different tapes");
        tape = t.tape();
    }
    return tape;
}

inline void require(bool ok, const char* what) {
    if (!ok) throw DimensionError(what);
}

/// `message` is only evaluated on failure.
template <std::invocable F>
void require(bool ok, F&& message) {
    if (!ok) throw DimensionError(message());
}

template <std::floating_point T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, std::string_view op) {
    require(a.shape() == b.shape(),
            [&] { return std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()); });
}

template <std::floating_point T>
void require_matrix(const Tensor<T>& a, std::string_view op) {
    require(a.rank() == 2, [&] { return std::string(op) + ": expected a matrix, got " + to_string(a.shape()); });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    detail::require(b.rows() == k,
                    [&] { return "matmul: inner extents differ, " + to_string(a.shape()) + " x " + to_string(b.shape()); });
    if (auto* c = detail::active_madds_counter) {
        c->total += static_cast<std::uint64_t>(m) * k * n;
        ++c->calls;
    }
    using namespace detail;
    std::vector<T> out(m * n);
    MutMap<T>(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)) =
        owned(a.values().data(), m, k) * owned(b.values().data(), k, n);
    Tensor<T> result = Tensor<T>::matrix(m, n, std::move(out));
    auto* tape = tape_of({&a, &b});
    if (!tape) return result;
    return tape->record("matmul", std::move(result), {a.node(), b.node()},
                        [ad = a.storage(), bd = b.storage(), na = a.node(), nb = b.node(), m, k, n](
                            Tape<T>& t, const std::vector<T>& g) {
                            const auto eg = detail::owned(g.data(), m, n);
                            if (na >= 0) {
                                auto& ga = t.grad(na);
                                const detail::RowMat<T> prod = eg * detail::owned(bd->data(), k, n).transpose();
                                detail::MutMap<T>(ga.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) += prod;
                            }
                            if (nb >= 0) {
                                auto& gb = t.grad(nb);
                                const detail::RowMat<T> prod = detail::owned(ad->data(), m, k).transpose() * eg;
                                detail::MutMap<T>(gb.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)) += prod;
                            }
                        });
}

template <std::floating_point T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail::require_matrix(a, "transpose");
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<T> out(r * c);
    const auto v = a.values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
    Tensor<T> result = Tensor<T>::matrix(c, r, std::move(out));
    auto* tape = detail::tape_of({&a});
    if (!tape) return result;
    return tape->record("transpose", std::move(result), {a.node()}, [na = a.node(), r, c](Tape<T>& t, const std::vector<T>& g) {
        auto& ga = t.grad(na);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
}

/// Same element count, new shape; gradient passes straight through.
template <std::floating_point T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    Tensor<T> result = a.detach().with_shape(std::move(shape));
    auto* tape = detail::tape_of({&a});
    if (!tape) return result;
    return tape->record("reshape", std::move(result), {a.node()}, [na = a.node()](Tape<T>& t, const std::vector<T>& g) {
        auto& ga = t.grad(na);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    const auto va = a.values(), vb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    Tensor<T> result(a.shape(), std::move(out));
    auto* tape = detail::tape_of({&a, &b});
    if (!tape) return result;
    return tape->record("add", std::move(result), {a.node(), b.node()},
                        [na = a.node(), nb = b.node()](Tape<T>& t, const std::vector<T>& g) {
                            for (int id : {na, nb}) {
                                if (id < 0) continue;
                                auto& gi = t.grad(id);
                                for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                            }
                        });
}

template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> out(a.size());
    const auto va = a.values(), vb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    Tensor<T> result(a.shape(), std::move(out));
    auto* tape = detail::tape_of({&a, &b});
    if (!tape) return result;
    return tape->record("sub", std::move(result), {a.node(), b.node()},
                        [na = a.node(), nb = b.node()](Tape<T>& t, const std::vector<T>& g) {
                            if (na >= 0) {
                                auto& ga = t.grad(na);
                                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                            }
                            if (nb >= 0) {
                                auto& gb = t.grad(nb);
                                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                            }
                        });
}

/// Elementwise product.
template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    const auto va = a.values(), vb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    Tensor<T> result(a.shape(), std::move(out));
    auto* tape = detail::tape_of({&a, &b});
    if (!tape) return result;
    return tape->record("mul", std::move(result), {a.node(), b.node()},
                        [ad = a.storage(), bd = b.storage(), na = a.node(), nb = b.node()](Tape<T>& t, const std::vector<T>& g) {
                            if (na >= 0) {
                                auto& ga = t.grad(na);
                                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*bd)[i];
                            }
                            if (nb >= 0) {
                                auto& gb = t.grad(nb);
                                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*ad)[i];
                            }
                        });
}

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.values().begin(), a.values().end());
    for (auto& v : out) v *= factor;
    Tensor<T> result(a.shape(), std::move(out));
    auto* tape = detail::tape_of({&a});
    if (!tape) return result;
    return tape->record("scale", std::move(result), {a.node()}, [na = a.node(), factor](Tape<T>& t, const std::vector<T>& g) {
        auto& ga = t.grad(na);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    });
}

/// x[..., n] + bias[n], broadcast over every leading index.
template <std::floating_point T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    detail::require(bias.rank() == 1 && x.rank() >= 1 && x.shape().back() == bias.dim(0),
                    [&] { return "add_bias: " + to_string(x.shape()) + " + " + to_string(bias.shape()); });
    const std::size_t n = bias.dim(0), rows = x.size() / n;
    std::vector<T> out(x.values().begin(), x.values().end());
    const auto vb = bias.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] += vb[j];
    Tensor<T> result(x.shape(), std::move(out));
    auto* tape = detail::tape_of({&x, &bias});
    if (!tape) return result;
    return tape->record("add_bias", std::move(result), {x.node(), bias.node()},
                        [nx = x.node(), nb = bias.node(), n, rows](Tape<T>& t, const std::vector<T>& g) {
                            if (nx >= 0) {
                                auto& gx = t.grad(nx);
                                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                            }
                            if (nb >= 0) {
                                auto& gb = t.grad(nb);
                                for (std::size_t r = 0; r < rows; ++r)
                                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
                            }
                        });
}

/// max(x, 0); the derivative at exactly 0 is taken to be 0.
template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.values().begin(), a.values().end());
    for (auto& v : out) v = v > T(0) ? v : T(0);
    Tensor<T> result(a.shape(), std::move(out));
    auto* tape = detail::tape_of({&a});
    if (!tape) return result;
    return tape->record("relu", std::move(result), {a.node()}, [ad = a.storage(), na = a.node()](Tape<T>& t, const std::vector<T>& g) {
        auto& ga = t.grad(na);
        for (std::size_t i = 0; i < g.size(); ++i)
            if ((*ad)[i] > T(0)) ga[i] += g[i];
    });
}

/// Row-wise softmax over the last axis, max-shifted.
template <std::floating_point T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    detail::require(x.rank() >= 1, "softmax_rows: scalar input");
    const std::size_t n = x.shape().back(), rows = x.size() / n;
    const auto v = x.values();
    std::vector<T> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = v.data() + r * n;
        T* o = out.data() + r * n;
        T mx = in[0];
        for (std::size_t j = 0; j < n; ++j) {
            if (!std::isfinite(in[j])) throw NumericError("softmax_rows: non-finite input");
            mx = std::max(mx, in[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j < n; ++j) total += (o[j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < n; ++j) o[j] /= total;
    }
    Tensor<T> result(x.shape(), std::move(out));
    auto* tape = detail::tape_of({&x});
    if (!tape) return result;
    return tape->record("softmax_rows", result, {x.node()}, [yd = result.storage(), nx = x.node(), n, rows](Tape<T>& t, const std::vector<T>& g) {
        auto& gx = t.grad(nx);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = yd->data() + r * n;
            const T* gr = g.data() + r * n;
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) dot += gr[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (gr[j] - dot);
        }
    });
}

/// Normalise over the last axis (biased variance), then gamma * xhat + beta.
template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    detail::require(x.rank() >= 1, "layer_norm: scalar input");
    const std::size_t d = x.shape().back(), rows = x.size() / d;
    detail::require(gamma.shape() == Shape{d} && beta.shape() == Shape{d},
                    [&] { return "layer_norm: affine params must be [" + std::to_string(d) + "]"; });
    if (!(eps > T(0))) throw std::invalid_argument("layer_norm: eps must be positive");
    const auto v = x.values(), vg = gamma.values(), vb = beta.values();
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    std::vector<T> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = v.data() + r * d;
        T mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += in[j];
        mean /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (in[j] - mean) * is;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = h * vg[j] + vb[j];
        }
    }
    Tensor<T> result(x.shape(), std::move(out));
    auto* tape = detail::tape_of({&x, &gamma, &beta});
    if (!tape) return result;
    return tape->record("layer_norm", std::move(result), {x.node(), gamma.node(), beta.node()},
                        [xhat, inv_std, gd = gamma.storage(), nx = x.node(), ng = gamma.node(), nb = beta.node(), d, rows](
                            Tape<T>& t, const std::vector<T>& g) {
                            if (ng >= 0) {
                                auto& gg = t.grad(ng);
                                for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * (*xhat)[i];
                            }
                            if (nb >= 0) {
                                auto& gb = t.grad(nb);
                                for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
                            }
                            if (nx >= 0) {
                                auto& gx = t.grad(nx);
                                for (std::size_t r = 0; r < rows; ++r) {
                                    T mean_dh = 0, mean_dh_h = 0;
                                    for (std::size_t j = 0; j < d; ++j) {
                                        const T dh = g[r * d + j] * (*gd)[j];
                                        mean_dh += dh;
                                        mean_dh_h += dh * (*xhat)[r * d + j];
                                    }
                                    mean_dh /= static_cast<T>(d);
                                    mean_dh_h /= static_cast<T>(d);
                                    for (std::size_t j = 0; j < d; ++j) {
                                        const T dh = g[r * d + j] * (*gd)[j];
                                        gx[r * d + j] += (*inv_std)[r] * (dh - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
                                    }
                                }
                            }
                        });
}

/// Concatenate along the last axis; all leading extents must agree.
template <std::floating_point T>
Tensor<T> concat_last_dim(const std::vector<Tensor<T>>& parts) {
    detail::require(!parts.empty(), "concat_last_dim: no inputs");
    const Shape& first = parts.front().shape();
    detail::require(!first.empty(), "concat_last_dim: scalar input");
    const Shape lead(first.begin(), first.end() - 1);
    const std::size_t rows = numel(lead);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        detail::require(s.size() == first.size() && Shape(s.begin(), s.end() - 1) == lead,
                        [&] { return "concat_last_dim: " + to_string(first) + " vs " + to_string(s); });
        widths.push_back(s.back());
        total += s.back();
    }
    std::vector<T> out(rows * total);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto v = parts[i].values();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(v.data() + r * widths[i], widths[i], out.data() + r * total + offset);
        offset += widths[i];
    }
    Shape shape = lead;
    shape.push_back(total);
    Tensor<T> result(std::move(shape), std::move(out));
    auto* tape = detail::tape_of(parts);
    if (!tape) return result;
    std::vector<int> ids;
    for (const auto& p : parts) ids.push_back(p.node());
    return tape->record("concat_last_dim", std::move(result), ids, [ids, widths, rows, total](Tape<T>& t, const std::vector<T>& g) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] >= 0) {
                auto& gi = t.grad(ids[i]);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < widths[i]; ++j) gi[r * widths[i] + j] += g[r * total + offset + j];
            }
            offset += widths[i];
        }
    });
}

/// Concatenate matrices along the token (row) axis.
template <std::floating_point T>
Tensor<T> concat_tokens(const std::vector<Tensor<T>>& parts) {
    detail::require(!parts.empty(), "concat_tokens: no inputs");
    const std::size_t d = parts.front().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        detail::require_matrix(p, "concat_tokens");
        detail::require(p.cols() == d, "concat_tokens: width mismatch");
        rows += p.rows();
    }
    std::vector<T> out;
    out.reserve(rows * d);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    Tensor<T> result = Tensor<T>::matrix(rows, d, std::move(out));
    auto* tape = detail::tape_of(parts);
    if (!tape) return result;
    std::vector<int> ids;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        ids.push_back(p.node());
        sizes.push_back(p.size());
    }
    return tape->record("concat_tokens", std::move(result), ids, [ids, sizes](Tape<T>& t, const std::vector<T>& g) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] >= 0) {
                auto& gi = t.grad(ids[i]);
                for (std::size_t j = 0; j < sizes[i]; ++j) gi[j] += g[offset + j];
            }
            offset += sizes[i];
        }
    });
}

/// Stack equal-shaped tensors along a new leading axis.
template <std::floating_point T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
    detail::require(!parts.empty(), "stack: no inputs");
    std::vector<T> out;
    for (const auto& p : parts) {
        detail::require_same_shape(parts.front(), p, "stack");
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    Shape shape{parts.size()};
    shape.insert(shape.end(), parts.front().shape().begin(), parts.front().shape().end());
    Tensor<T> result(std::move(shape), std::move(out));
    auto* tape = detail::tape_of(parts);
    if (!tape) return result;
    std::vector<int> ids;
    for (const auto& p : parts) ids.push_back(p.node());
    const std::size_t each = parts.front().size();
    return tape->record("stack", std::move(result), ids, [ids, each](Tape<T>& t, const std::vector<T>& g) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0) continue;
            auto& gi = t.grad(ids[i]);
            for (std::size_t j = 0; j < each; ++j) gi[j] += g[i * each + j];
        }
    });
}

/// Average over the sequence axis: [T x d] -> [d].
template <std::floating_point T>
Tensor<T> mean_pool_time(const Tensor<T>& x) {
    detail::require_matrix(x, "mean_pool_time");
    const std::size_t steps = x.rows(), d = x.cols();
    std::vector<T> out(d, T(0));
    const auto v = x.values();
    for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t j = 0; j < d; ++j) out[j] += v[t * d + j];
    for (auto& o : out) o /= static_cast<T>(steps);
    Tensor<T> result = Tensor<T>::vector(std::move(out));
    auto* tape = detail::tape_of({&x});
    if (!tape) return result;
    return tape->record("mean_pool_time", std::move(result), {x.node()}, [nx = x.node(), steps, d](Tape<T>& t, const std::vector<T>& g) {
        auto& gx = t.grad(nx);
        const T w = T(1) / static_cast<T>(steps);
        for (std::size_t s = 0; s < steps; ++s)
            for (std::size_t j = 0; j < d; ++j) gx[s * d + j] += w * g[j];
    });
}

/// Tokens [0, k) of a [T x d] sequence.
template <std::floating_point T>
Tensor<T> slice_tokens(const Tensor<T>& x, std::size_t k) {
    detail::require_matrix(x, "slice_tokens");
    if (k < 1 || k > x.rows()) {
        throw DimensionError("slice_tokens: k=" + std::to_string(k) + " outside [1, " + std::to_string(x.rows()) + "]");
    }
    const std::size_t d = x.cols();
    std::vector<T> out(x.values().begin(), x.values().begin() + static_cast<std::ptrdiff_t>(k * d));
    Tensor<T> result = Tensor<T>::matrix(k, d, std::move(out));
    auto* tape = detail::tape_of({&x});
    if (!tape) return result;
    return tape->record("slice_tokens", std::move(result), {x.node()}, [nx = x.node()](Tape<T>& t, const std::vector<T>& g) {
        auto& gx = t.grad(nx);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

/// Columns [start, start+len) of a matrix.
template <std::floating_point T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t len) {
    detail::require_matrix(x, "slice_cols");
    const std::size_t r = x.rows(), c = x.cols();
    if (len < 1 || start + len > c) throw DimensionError("slice_cols: range outside matrix width");
    std::vector<T> out(r * len);
    const auto v = x.values();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(v.data() + i * c + start, len, out.data() + i * len);
    Tensor<T> result = Tensor<T>::matrix(r, len, std::move(out));
    auto* tape = detail::tape_of({&x});
    if (!tape) return result;
    return tape->record("slice_cols", std::move(result), {x.node()}, [nx = x.node(), r, c, start, len](Tape<T>& t, const std::vector<T>& g) {
        auto& gx = t.grad(nx);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < len; ++j) gx[i * c + start + j] += g[i * len + j];
    });
}

/// Row lookup: table[V x d], ids in [0, V) -> [len(ids) x d].
template <std::floating_point T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::uint32_t> ids) {
    detail::require_matrix(table, "embedding");
    detail::require(!ids.empty(), "embedding: empty id sequence");
    const std::size_t vocab = table.rows(), d = table.cols();
    std::vector<T> out(ids.size() * d);
    const auto v = table.values();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= vocab) {
            throw DimensionError("embedding: token id " + std::to_string(ids[i]) + " out of vocabulary of size " +
                                 std::to_string(vocab));
        }
        std::copy_n(v.data() + ids[i] * d, d, out.data() + i * d);
    }
    Tensor<T> result = Tensor<T>::matrix(ids.size(), d, std::move(out));
    auto* tape = detail::tape_of({&table});
    if (!tape) return result;
    return tape->record("embedding", std::move(result), {table.node()},
                        [nt = table.node(), idv = std::vector<std::uint32_t>(ids.begin(), ids.end()), d](Tape<T>& t, const std::vector<T>& g) {
                            auto& gt = t.grad(nt);
                            for (std::size_t i = 0; i < idv.size(); ++i)
                                for (std::size_t j = 0; j < d; ++j) gt[idv[i] * d + j] += g[i * d + j];
                        });
}

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& x) {
    T total = 0;
    for (T v : x.values()) total += v;
    Tensor<T> result = Tensor<T>::scalar(total);
    auto* tape = detail::tape_of({&x});
    if (!tape) return result;
    return tape->record("sum", std::move(result), {x.node()}, [nx = x.node()](Tape<T>& t, const std::vector<T>& g) {
        auto& gx = t.grad(nx);
        for (auto& v : gx) v += g[0];
    });
}

template <std::floating_point T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// log(sum(exp(x))) over every element, max-shifted.
template <std::floating_point T>
Tensor<T> logsumexp(const Tensor<T>& x) {
    const auto v = x.values();
    const T mx = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(mx)) throw NumericError("logsumexp: non-finite input");
    T total = 0;
    for (T e : v) total += std::exp(e - mx);
    const T lse = mx + std::log(total);
    Tensor<T> result = Tensor<T>::scalar(lse);
    auto* tape = detail::tape_of({&x});
    if (!tape) return result;
    return tape->record("logsumexp", std::move(result), {x.node()}, [xd = x.storage(), nx = x.node(), lse](Tape<T>& t, const std::vector<T>& g) {
        auto& gx = t.grad(nx);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * std::exp((*xd)[i] - lse);
    });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

struct GradCheckEntry {
    std::string name;
    std::size_t index = 0;
    double autodiff = 0;
    double numeric = 0;
    double relative_error = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_relative_error = 0;

    bool passed(double tolerance) const { return !entries.empty() && max_relative_error < tolerance; }

    const GradCheckEntry& worst() const {
        if (entries.empty()) throw std::logic_error("grad check report is empty");
        return *std::max_element(entries.begin(), entries.end(),
                                 [](const auto& a, const auto& b) { return a.relative_error < b.relative_error; });
    }

    void add(GradCheckEntry e) {
        e.relative_error = std::abs(e.autodiff - e.numeric) / (std::abs(e.autodiff) + std::abs(e.numeric) + 1e-12);
        max_relative_error = std::max(max_relative_error, e.relative_error);
        entries.push_back(std::move(e));
    }
};

/// Central differences of a scalar function of one tensor, every coordinate.
template <std::floating_point T>
GradCheckReport grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, T h = T(1e-5)) {
    Tape<T> tape;
    const auto xv = tape.variable("x", x);
    const auto grads = tape.backward(f(xv));
    const auto& g = grads.at("x");
    GradCheckReport report;
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::vector<T> plus(x.values().begin(), x.values().end()), minus = plus;
        plus[i] += h;
        minus[i] -= h;
        const T fp = f(Tensor<T>(x.shape(), std::move(plus))).item();
        const T fm = f(Tensor<T>(x.shape(), std::move(minus))).item();
        report.add({"x", i, static_cast<double>(g[i]), static_cast<double>((fp - fm) / (T(2) * h)), 0});
    }
    return report;
}

}  // namespace dashfusion
