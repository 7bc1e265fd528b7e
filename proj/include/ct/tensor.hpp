#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ct/errors.hpp"
#include "ct/kernels.hpp"

// Dense n-d tensors with reverse-mode autodiff over a dynamic tape. Tensors
// are immutable values (shared, copy-on-create); the tape is rebuilt per
// forward pass. Layout is row-major with a fixed left-to-right evaluation
// order, which makes outputs and gradients bitwise reproducible.
//
// Broadcasting is deliberately one-sided and minimal: the second operand may
// have lower rank (padded with leading 1s) and size-1 axes that stretch to
// match the first operand. That covers bias adds and per-bin affine terms.

namespace ct {

// Tensor storage skips value-initialization: every op fully overwrites its
// output buffer, so the default zero-fill would double-touch all memory.
template <typename T>
struct default_init_allocator : std::allocator<T> {
    using std::allocator<T>::allocator;
    template <typename U>
    struct rebind {
        using other = default_init_allocator<U>;
    };
    template <typename U>
    void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
        ::new (static_cast<void*>(p)) U;
    }
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

template <typename T>
using Vec = std::vector<T, default_init_allocator<T>>;

using Shape = std::vector<int>;

inline std::int64_t shape_size(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

template <typename T>
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, Vec<T> values) : shape_(std::move(shape)) {
        if (shape_.empty()) throw ShapeError("tensor must have rank >= 1");
        for (int d : shape_)
            if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
        if (shape_size(shape_) != static_cast<std::int64_t>(values.size()))
            throw ShapeError("shape " + shape_str(shape_) + " does not match " +
                             std::to_string(values.size()) + " values");
        data_ = std::make_shared<const Vec<T>>(std::move(values));
    }

    static Tensor zeros(Shape shape) {
        auto n = shape_size(shape);
        return Tensor(std::move(shape), Vec<T>(static_cast<std::size_t>(n), T(0)));
    }
    static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
    static Tensor full(Shape shape, T v) {
        auto n = shape_size(shape);
        return Tensor(std::move(shape), Vec<T>(static_cast<std::size_t>(n), v));
    }
    static Tensor scalar(T v) { return Tensor(Shape{1}, Vec<T>{v}); }

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::int64_t size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
    const T* data() const { return data_->data(); }
    const Vec<T>& values() const { return *data_; }
    std::vector<T> to_vector() const { return std::vector<T>(data_->begin(), data_->end()); }

    T item() const {
        if (size() != 1) throw ShapeError("item() requires a scalar tensor, got " + shape_str(shape_));
        return (*data_)[0];
    }

    T at(const std::vector<int>& idx) const {
        auto st = row_major_strides(shape_);
        std::int64_t off = 0;
        for (std::size_t i = 0; i < idx.size(); ++i) off += idx[i] * st[i];
        return (*data_)[static_cast<std::size_t>(off)];
    }

    bool all_finite() const {
        for (T v : *data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    // Same shape and bit pattern.
    bool bit_equal(const Tensor& other) const {
        if (shape_ != other.shape_) return false;
        return std::memcmp(data(), other.data(), sizeof(T) * static_cast<std::size_t>(size())) == 0;
    }

    template <typename U>
    Tensor<U> cast() const {
        Vec<U> v(static_cast<std::size_t>(size()));
        for (std::int64_t i = 0; i < size(); ++i) v[static_cast<std::size_t>(i)] = static_cast<U>((*data_)[i]);
        return Tensor<U>(shape_, std::move(v));
    }

    // Same data, different shape (element counts must agree).
    static Tensor reshaped_view(const Tensor& t, Shape new_shape) {
        if (shape_size(new_shape) != t.size())
            throw ShapeError("reshape: element count mismatch: " + shape_str(t.shape()) + " -> " +
                             shape_str(new_shape));
        Tensor out;
        out.shape_ = std::move(new_shape);
        out.data_ = t.data_;
        return out;
    }

    // Handle into the active tape; -1 when the value is not being tracked.
    int node = -1;

private:
    Shape shape_;
    std::shared_ptr<const Vec<T>> data_;
};

template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(const Vec<T>&, Tape<T>&)>;

    // Registers t as a tracked leaf and returns a tracked copy of it.
    Tensor<T> leaf(const Tensor<T>& t) {
        Tensor<T> out = t;
        out.node = record(t.shape(), {}, nullptr);
        return out;
    }

    int record(Shape shape, std::vector<int> inputs, BackwardFn back) {
        for (int in : inputs)
            if (in >= static_cast<int>(nodes_.size()))
                throw TapeError("tape nodes must reference earlier nodes");
        nodes_.push_back(NodeRec{std::move(inputs), std::move(shape), std::move(back)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::size_t size() const { return nodes_.size(); }

    void backward(const Tensor<T>& root) {
        if (root.node < 0 || root.node >= static_cast<int>(nodes_.size()))
            throw TapeError("backward: root is not attached to this tape");
        if (root.size() != 1)
            throw ShapeError("backward: root must be a scalar, got " + shape_str(root.shape()));
        grads_.assign(nodes_.size(), {});
        add_grad(root.node, Vec<T>{T(1)});
        for (int i = root.node; i >= 0; --i) {
            if (grads_[static_cast<std::size_t>(i)].empty()) continue;
            if (nodes_[static_cast<std::size_t>(i)].back)
                nodes_[static_cast<std::size_t>(i)].back(grads_[static_cast<std::size_t>(i)], *this);
        }
    }

    void add_grad(int node, Vec<T>&& contribution) {
        if (node < 0) return;
        auto& slot = grads_[static_cast<std::size_t>(node)];
        const auto expect = shape_size(nodes_[static_cast<std::size_t>(node)].shape);
        if (static_cast<std::int64_t>(contribution.size()) != expect)
            throw ShapeError("gradient contribution size mismatch");
        if (slot.empty())
            slot = std::move(contribution);
        else
            kernels::accumulate(slot.data(), contribution.data(), expect);
    }

    // Copies only when this is the node's first contribution.
    void add_grad(int node, const Vec<T>& contribution) {
        if (node < 0) return;
        auto& slot = grads_[static_cast<std::size_t>(node)];
        const auto expect = shape_size(nodes_[static_cast<std::size_t>(node)].shape);
        if (static_cast<std::int64_t>(contribution.size()) != expect)
            throw ShapeError("gradient contribution size mismatch");
        if (slot.empty())
            slot = contribution;
        else
            kernels::accumulate(slot.data(), contribution.data(), expect);
    }

    bool has_grad(int node) const {
        return node >= 0 && node < static_cast<int>(grads_.size()) &&
               !grads_[static_cast<std::size_t>(node)].empty();
    }

    const Vec<T>& grad_values(int node) const {
        if (!has_grad(node)) throw TapeError("no gradient recorded for node " + std::to_string(node));
        return grads_[static_cast<std::size_t>(node)];
    }

    // Gradient for a tracked tensor, shaped like it. Leaves reachable from
    // the root always have one after backward(); unreachable leaves get zeros.
    Tensor<T> grad(const Tensor<T>& t) const {
        if (t.node < 0) throw TapeError("grad: tensor is not tracked on this tape");
        if (!has_grad(t.node)) return Tensor<T>::zeros(t.shape());
        return Tensor<T>(t.shape(), grads_[static_cast<std::size_t>(t.node)]);
    }

private:
    struct NodeRec {
        std::vector<int> inputs;
        Shape shape;
        BackwardFn back;
    };
    std::vector<NodeRec> nodes_;
    std::vector<Vec<T>> grads_;
};

// ---------------------------------------------------------------------------
// Broadcast helpers (one-sided: `small` stretches into `big`).

inline Shape pad_leading(const Shape& s, int rank) {
    Shape out(static_cast<std::size_t>(rank), 1);
    std::copy(s.begin(), s.end(), out.end() - static_cast<std::ptrdiff_t>(s.size()));
    return out;
}

inline bool broadcastable_into(const Shape& big, const Shape& small) {
    if (small.size() > big.size()) return false;
    Shape p = pad_leading(small, static_cast<int>(big.size()));
    for (std::size_t i = 0; i < big.size(); ++i)
        if (p[i] != big[i] && p[i] != 1) return false;
    return true;
}

namespace detail {

// Strides of `small` viewed inside `big`'s index space; 0 on stretched axes.
inline std::vector<std::int64_t> bcast_strides(const Shape& big, const Shape& small) {
    Shape p = pad_leading(small, static_cast<int>(big.size()));
    auto st = row_major_strides(p);
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] == 1 && big[i] != 1) st[i] = 0;
    return st;
}

// Offset of `small` for row r of `big` (rows = all axes except the last).
inline std::int64_t bcast_row_offset(std::int64_t row, const Shape& big,
                                     const std::vector<std::int64_t>& bst) {
    std::int64_t off = 0;
    for (int a = static_cast<int>(big.size()) - 2; a >= 0; --a) {
        std::int64_t digit = row % big[static_cast<std::size_t>(a)];
        row /= big[static_cast<std::size_t>(a)];
        off += digit * bst[static_cast<std::size_t>(a)];
    }
    return off;
}

enum class BinKind { add, sub, mul };

template <typename T>
Vec<T> binary_bcast_raw(BinKind kind, const T* a_data, const Shape& a_shape,
                        const Tensor<T>& b) {
    const std::int64_t n = shape_size(a_shape);
    Vec<T> out(static_cast<std::size_t>(n));
    if (a_shape == b.shape()) {
        switch (kind) {
            case BinKind::add: kernels::add(a_data, b.data(), out.data(), n); break;
            case BinKind::sub: kernels::sub(a_data, b.data(), out.data(), n); break;
            case BinKind::mul: kernels::mul(a_data, b.data(), out.data(), n); break;
        }
        return out;
    }
    const auto& big = a_shape;
    auto bst = bcast_strides(big, b.shape());
    const int last = static_cast<int>(big.size()) - 1;
    const std::int64_t inner = big[static_cast<std::size_t>(last)];
    const std::int64_t rows = n / inner;
    const bool b_contig = bst[static_cast<std::size_t>(last)] == 1;
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* arow = a_data + r * inner;
        T* orow = out.data() + r * inner;
        std::int64_t boff = bcast_row_offset(r, big, bst);
        if (b_contig) {
            const T* brow = b.data() + boff;
            switch (kind) {
                case BinKind::add: kernels::add(arow, brow, orow, inner); break;
                case BinKind::sub: kernels::sub(arow, brow, orow, inner); break;
                case BinKind::mul: kernels::mul(arow, brow, orow, inner); break;
            }
        } else {
            const T s = b.data()[boff];
            switch (kind) {
                case BinKind::add: kernels::add_scalar(arow, s, orow, inner); break;
                case BinKind::sub: kernels::add_scalar(arow, -s, orow, inner); break;
                case BinKind::mul: kernels::affine(arow, s, T(0), orow, inner); break;
            }
        }
    }
    return out;
}

template <typename T>
Vec<T> binary_bcast(BinKind kind, const Tensor<T>& a, const Tensor<T>& b) {
    const std::int64_t n = a.size();
    Vec<T> out(static_cast<std::size_t>(n));
    if (a.shape() == b.shape()) {
        switch (kind) {
            case BinKind::add: kernels::add(a.data(), b.data(), out.data(), n); break;
            case BinKind::sub: kernels::sub(a.data(), b.data(), out.data(), n); break;
            case BinKind::mul: kernels::mul(a.data(), b.data(), out.data(), n); break;
        }
        return out;
    }
    const auto& big = a.shape();
    auto bst = bcast_strides(big, b.shape());
    const int last = static_cast<int>(big.size()) - 1;
    const std::int64_t inner = big[static_cast<std::size_t>(last)];
    const std::int64_t rows = n / inner;
    const bool b_contig = bst[static_cast<std::size_t>(last)] == 1;
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* arow = a.data() + r * inner;
        T* orow = out.data() + r * inner;
        std::int64_t boff = bcast_row_offset(r, big, bst);
        if (b_contig) {
            const T* brow = b.data() + boff;
            switch (kind) {
                case BinKind::add: kernels::add(arow, brow, orow, inner); break;
                case BinKind::sub: kernels::sub(arow, brow, orow, inner); break;
                case BinKind::mul: kernels::mul(arow, brow, orow, inner); break;
            }
        } else {
            const T s = b.data()[boff];
            switch (kind) {
                case BinKind::add: kernels::add_scalar(arow, s, orow, inner); break;
                case BinKind::sub: kernels::add_scalar(arow, -s, orow, inner); break;
                case BinKind::mul: kernels::affine(arow, s, T(0), orow, inner); break;
            }
        }
    }
    return out;
}

// Sums `g` (laid out as `full`) down to `small`'s shape.
template <typename T>
Vec<T> sum_to_shape(const Vec<T>& g, const Shape& full, const Shape& small) {
    Vec<T> out(static_cast<std::size_t>(shape_size(small)), T(0));
    if (full == small) {
        std::copy(g.begin(), g.end(), out.begin());
        return out;
    }
    auto bst = bcast_strides(full, small);
    const int last = static_cast<int>(full.size()) - 1;
    const std::int64_t inner = full[static_cast<std::size_t>(last)];
    const std::int64_t rows = static_cast<std::int64_t>(g.size()) / inner;
    const bool contig = bst[static_cast<std::size_t>(last)] == 1;
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* grow = g.data() + r * inner;
        std::int64_t boff = bcast_row_offset(r, full, bst);
        if (contig) {
            kernels::accumulate(out.data() + boff, grow, inner);
        } else {
            T acc = T(0);
            for (std::int64_t i = 0; i < inner; ++i) acc += grow[i];
            out[static_cast<std::size_t>(boff)] += acc;
        }
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations.

namespace ops {

template <typename T>
Tensor<T> make_op_result(Tape<T>* tape, Shape shape, Vec<T> values,
                         std::vector<int> inputs, typename Tape<T>::BackwardFn back) {
    Tensor<T> out(std::move(shape), std::move(values));
    if (tape) {
        bool tracked = false;
        for (int n : inputs) tracked = tracked || (n >= 0);
        if (tracked) out.node = tape->record(out.shape(), std::move(inputs), std::move(back));
    }
    return out;
}

template <typename T>
void require_bcast(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!broadcastable_into(a.shape(), b.shape()))
        throw ShapeError(std::string(what) + ": shape " + shape_str(b.shape()) +
                         " does not broadcast into " + shape_str(a.shape()));
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape() && !broadcastable_into(a.shape(), b.shape())) {
        if (broadcastable_into(b.shape(), a.shape())) return add(tape, b, a);
        throw ShapeError("add: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    auto out = detail::binary_bcast(detail::BinKind::add, a, b);
    Shape ash = a.shape(), bsh = b.shape();
    int an = a.node, bn = b.node;
    return make_op_result<T>(
        tape, a.shape(), std::move(out), {an, bn},
        [ash, bsh, an, bn](const Vec<T>& g, Tape<T>& tp) {
            if (an >= 0) tp.add_grad(an, g);
            if (bn >= 0) tp.add_grad(bn, detail::sum_to_shape(g, ash, bsh));
        });
}

template <typename T>
Tensor<T> sub(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    require_bcast(a, b, "sub");
    auto out = detail::binary_bcast(detail::BinKind::sub, a, b);
    Shape ash = a.shape(), bsh = b.shape();
    int an = a.node, bn = b.node;
    return make_op_result<T>(
        tape, a.shape(), std::move(out), {an, bn},
        [ash, bsh, an, bn](const Vec<T>& g, Tape<T>& tp) {
            if (an >= 0) tp.add_grad(an, g);
            if (bn >= 0) {
                auto gb = detail::sum_to_shape(g, ash, bsh);
                kernels::affine(gb.data(), T(-1), T(0), gb.data(), static_cast<std::int64_t>(gb.size()));
                tp.add_grad(bn, std::move(gb));
            }
        });
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape() && !broadcastable_into(a.shape(), b.shape())) {
        if (broadcastable_into(b.shape(), a.shape())) return mul(tape, b, a);
        throw ShapeError("mul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    auto out = detail::binary_bcast(detail::BinKind::mul, a, b);
    Tensor<T> asav = a, bsav = b;
    int an = a.node, bn = b.node;
    return make_op_result<T>(
        tape, a.shape(), std::move(out), {an, bn},
        [asav, bsav, an, bn](const Vec<T>& g, Tape<T>& tp) {
            if (an >= 0)
                tp.add_grad(an, detail::binary_bcast_raw(detail::BinKind::mul, g.data(),
                                                         asav.shape(), bsav));
            if (bn >= 0) {
                auto ga = detail::binary_bcast_raw(detail::BinKind::mul, g.data(), asav.shape(),
                                                   asav);
                tp.add_grad(bn, detail::sum_to_shape(ga, asav.shape(), bsav.shape()));
            }
        });
}

// out = scale * x + shift (elementwise with constants).
template <typename T>
Tensor<T> affine(Tape<T>* tape, const Tensor<T>& x, T scale, T shift) {
    Vec<T> out(static_cast<std::size_t>(x.size()));
    kernels::affine(x.data(), scale, shift, out.data(), x.size());
    int xn = x.node;
    return make_op_result<T>(tape, x.shape(), std::move(out), {xn},
                             [xn, scale](const Vec<T>& g, Tape<T>& tp) {
                                 Vec<T> gx(g.size());
                                 kernels::affine(g.data(), scale, T(0), gx.data(),
                                                 static_cast<std::int64_t>(g.size()));
                                 tp.add_grad(xn, std::move(gx));
                             });
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T c) {
    return affine(tape, x, c, T(0));
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
    Vec<T> out(static_cast<std::size_t>(x.size()));
    kernels::relu(x.data(), out.data(), x.size());
    Tensor<T> xsav = x;
    int xn = x.node;
    return make_op_result<T>(tape, x.shape(), std::move(out), {xn},
                             [xsav, xn](const Vec<T>& g, Tape<T>& tp) {
                                 Vec<T> gx(g.size());
                                 kernels::relu_mask(xsav.data(), g.data(), gx.data(),
                                                    static_cast<std::int64_t>(g.size()));
                                 tp.add_grad(xn, std::move(gx));
                             });
}

template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x) {
    Vec<T> out(static_cast<std::size_t>(x.size()));
    for (std::int64_t i = 0; i < x.size(); ++i) {
        T v = x.data()[i];
        if (v >= T(0)) {
            T e = std::exp(-v);
            out[static_cast<std::size_t>(i)] = T(1) / (T(1) + e);
        } else {
            T e = std::exp(v);
            out[static_cast<std::size_t>(i)] = e / (T(1) + e);
        }
    }
    auto ysav = std::make_shared<Vec<T>>(out);
    int xn = x.node;
    return make_op_result<T>(tape, x.shape(), std::move(out), {xn},
                             [ysav, xn](const Vec<T>& g, Tape<T>& tp) {
                                 Vec<T> gx(g.size());
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                     T y = (*ysav)[i];
                                     gx[i] = g[i] * y * (T(1) - y);
                                 }
                                 tp.add_grad(xn, std::move(gx));
                             });
}

template <typename T>
Tensor<T> exp(Tape<T>* tape, const Tensor<T>& x) {
    Vec<T> out(static_cast<std::size_t>(x.size()));
    for (std::int64_t i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(i)] = std::exp(x.data()[i]);
    auto ysav = std::make_shared<Vec<T>>(out);
    int xn = x.node;
    return make_op_result<T>(tape, x.shape(), std::move(out), {xn},
                             [ysav, xn](const Vec<T>& g, Tape<T>& tp) {
                                 Vec<T> gx(g.size());
                                 kernels::mul(g.data(), ysav->data(), gx.data(),
                                              static_cast<std::int64_t>(g.size()));
                                 tp.add_grad(xn, std::move(gx));
                             });
}

template <typename T>
Tensor<T> log(Tape<T>* tape, const Tensor<T>& x) {
    Vec<T> out(static_cast<std::size_t>(x.size()));
    for (std::int64_t i = 0; i < x.size(); ++i) {
        T v = x.data()[i];
        if (!(v > T(0)))
            throw DomainError("log: non-positive value " + std::to_string(static_cast<double>(v)) +
                              " at index " + std::to_string(i));
        out[static_cast<std::size_t>(i)] = std::log(v);
    }
    Tensor<T> xsav = x;
    int xn = x.node;
    return make_op_result<T>(tape, x.shape(), std::move(out), {xn},
                             [xsav, xn](const Vec<T>& g, Tape<T>& tp) {
                                 Vec<T> gx(g.size());
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                     gx[i] = g[i] / xsav.data()[i];
                                 tp.add_grad(xn, std::move(gx));
                             });
}

// y = 1/sqrt(x + eps); used by normalization layers.
template <typename T>
Tensor<T> rsqrt_eps(Tape<T>* tape, const Tensor<T>& x, T eps) {
    Vec<T> out(static_cast<std::size_t>(x.size()));
    for (std::int64_t i = 0; i < x.size(); ++i) {
        T v = x.data()[i] + eps;
        if (!(v > T(0))) throw DomainError("rsqrt_eps: non-positive argument");
        out[static_cast<std::size_t>(i)] = T(1) / std::sqrt(v);
    }
    auto ysav = std::make_shared<Vec<T>>(out);
    int xn = x.node;
    return make_op_result<T>(tape, x.shape(), std::move(out), {xn},
                             [ysav, xn](const Vec<T>& g, Tape<T>& tp) {
                                 Vec<T> gx(g.size());
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                     T y = (*ysav)[i];
                                     gx[i] = g[i] * T(-0.5) * y * y * y;
                                 }
                                 tp.add_grad(xn, std::move(gx));
                             });
}

template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    Vec<T> out(static_cast<std::size_t>(m) * n);
    kernels::gemm(a.data(), b.data(), out.data(), m, k, n);
    Tensor<T> asav = a, bsav = b;
    int an = a.node, bn = b.node;
    return make_op_result<T>(
        tape, Shape{m, n}, std::move(out), {an, bn},
        [asav, bsav, an, bn, m, k, n](const Vec<T>& g, Tape<T>& tp) {
            if (an >= 0) {
                // dA = g . B^T
                Vec<T> bt(static_cast<std::size_t>(k) * n);
                kernels::transpose(bsav.data(), bt.data(), k, n);
                Vec<T> ga(static_cast<std::size_t>(m) * k);
                kernels::gemm(g.data(), bt.data(), ga.data(), m, n, k);
                tp.add_grad(an, std::move(ga));
            }
            if (bn >= 0) {
                // dB = A^T . g
                Vec<T> at(static_cast<std::size_t>(m) * k);
                kernels::transpose(asav.data(), at.data(), m, k);
                Vec<T> gb(static_cast<std::size_t>(k) * n);
                kernels::gemm(at.data(), g.data(), gb.data(), k, m, n);
                tp.add_grad(bn, std::move(gb));
            }
        });
}

enum class ReduceKind { sum, mean, max };

namespace rdetail {

inline void axis_extents(const Shape& s, int axis, std::int64_t& outer, std::int64_t& red,
                         std::int64_t& inner) {
    outer = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
    red = s[static_cast<std::size_t>(axis)];
    inner = 1;
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}

inline Shape reduced_shape(const Shape& s, int axis, bool keepdims) {
    Shape out = s;
    if (keepdims) {
        out[static_cast<std::size_t>(axis)] = 1;
    } else {
        out.erase(out.begin() + axis);
        if (out.empty()) out = Shape{1};
    }
    return out;
}

}  // namespace rdetail

// Single-axis reduce; multi-axis reduce composes these.
template <typename T>
Tensor<T> reduce_axis(Tape<T>* tape, ReduceKind kind, const Tensor<T>& x, int axis, bool keepdims) {
    if (axis < 0 || axis >= x.rank())
        throw ShapeError("reduce: axis " + std::to_string(axis) + " invalid for " +
                         shape_str(x.shape()));
    std::int64_t outer, red, inner;
    rdetail::axis_extents(x.shape(), axis, outer, red, inner);
    Shape oshape = rdetail::reduced_shape(x.shape(), axis, keepdims);
    Vec<T> out(static_cast<std::size_t>(outer * inner), T(0));
    std::shared_ptr<std::vector<std::int64_t>> argmax;
    if (kind == ReduceKind::max) {
        argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(outer * inner));
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < inner; ++i) {
                std::int64_t base = o * red * inner + i;
                T best = x.data()[base];
                std::int64_t bestr = 0;
                for (std::int64_t r = 1; r < red; ++r) {
                    T v = x.data()[base + r * inner];
                    if (v > best) {
                        best = v;
                        bestr = r;
                    }
                }
                out[static_cast<std::size_t>(o * inner + i)] = best;
                (*argmax)[static_cast<std::size_t>(o * inner + i)] = base + bestr * inner;
            }
    } else {
        for (std::int64_t o = 0; o < outer; ++o) {
            const T* xb = x.data() + o * red * inner;
            T* ob = out.data() + o * inner;
            for (std::int64_t r = 0; r < red; ++r) kernels::accumulate(ob, xb + r * inner, inner);
        }
        if (kind == ReduceKind::mean)
            kernels::affine(out.data(), T(1) / static_cast<T>(red), T(0), out.data(),
                            static_cast<std::int64_t>(out.size()));
    }
    Shape xshape = x.shape();
    int xn = x.node;
    std::int64_t xsize = x.size();
    return make_op_result<T>(
        tape, std::move(oshape), std::move(out), {xn},
        [kind, xn, xshape, xsize, outer, red, inner, argmax](const Vec<T>& g, Tape<T>& tp) {
            if (kind == ReduceKind::max) {
                Vec<T> gx(static_cast<std::size_t>(xsize), T(0));
                for (std::size_t j = 0; j < g.size(); ++j)
                    gx[static_cast<std::size_t>((*argmax)[j])] += g[j];
                tp.add_grad(xn, std::move(gx));
                return;
            }
            // every input element is covered exactly once: assign, no zero fill
            Vec<T> gx(static_cast<std::size_t>(xsize));
            const T w = kind == ReduceKind::mean ? T(1) / static_cast<T>(red) : T(1);
            for (std::int64_t o = 0; o < outer; ++o) {
                const T* src = g.data() + o * inner;
                for (std::int64_t r = 0; r < red; ++r) {
                    T* dst = gx.data() + (o * red + r) * inner;
                    kernels::affine(src, w, T(0), dst, inner);
                }
            }
            tp.add_grad(xn, std::move(gx));
        });
}

template <typename T>
Tensor<T> reduce(Tape<T>* tape, ReduceKind kind, const Tensor<T>& x, std::vector<int> axes,
                 bool keepdims = false) {
    if (axes.empty()) throw ShapeError("reduce: no axes given");
    std::sort(axes.begin(), axes.end());
    for (std::size_t i = 1; i < axes.size(); ++i)
        if (axes[i] == axes[i - 1]) throw ShapeError("reduce: duplicate axis");
    Tensor<T> cur = x;
    // Descending order keeps remaining axis numbers valid without keepdims.
    for (auto it = axes.rbegin(); it != axes.rend(); ++it)
        cur = reduce_axis(tape, kind, cur, *it, keepdims);
    return cur;
}

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x, std::vector<int> axes, bool keepdims = false) {
    return reduce(tape, ReduceKind::sum, x, std::move(axes), keepdims);
}
template <typename T>
Tensor<T> mean(Tape<T>* tape, const Tensor<T>& x, std::vector<int> axes, bool keepdims = false) {
    return reduce(tape, ReduceKind::mean, x, std::move(axes), keepdims);
}
template <typename T>
Tensor<T> reduce_max(Tape<T>* tape, const Tensor<T>& x, std::vector<int> axes, bool keepdims = false) {
    return reduce(tape, ReduceKind::max, x, std::move(axes), keepdims);
}

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x) {
    std::vector<int> axes(static_cast<std::size_t>(x.rank()));
    for (int i = 0; i < x.rank(); ++i) axes[static_cast<std::size_t>(i)] = i;
    return sum(tape, x, std::move(axes));
}

template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& x, Shape new_shape) {
    Tensor<T> out = Tensor<T>::reshaped_view(x, std::move(new_shape));
    const int xn = x.node;
    if (tape && xn >= 0)
        out.node = tape->record(out.shape(), {xn},
                                [xn](const Vec<T>& g, Tape<T>& tp) { tp.add_grad(xn, g); });
    return out;
}

template <typename T>
Tensor<T> concat(Tape<T>* tape, const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const int rank = parts[0].rank();
    if (axis < 0 || axis >= rank) throw ShapeError("concat: axis out of range");
    Shape oshape = parts[0].shape();
    std::int64_t axis_total = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
        for (int d = 0; d < rank; ++d)
            if (d != axis && p.dim(d) != parts[0].dim(d))
                throw ShapeError("concat: inputs disagree on non-concat axis " + std::to_string(d));
        axis_total += p.dim(axis);
    }
    oshape[static_cast<std::size_t>(axis)] = static_cast<int>(axis_total);

    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= parts[0].dim(i);
    for (int i = axis + 1; i < rank; ++i) inner *= parts[0].dim(i);

    Vec<T> out(static_cast<std::size_t>(shape_size(oshape)));
    std::int64_t axis_off = 0;
    for (const auto& p : parts) {
        const std::int64_t block = p.dim(axis) * inner;
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * axis_total + axis_off) * inner, p.data() + o * block,
                        sizeof(T) * static_cast<std::size_t>(block));
        axis_off += p.dim(axis);
    }

    std::vector<int> input_nodes;
    std::vector<std::int64_t> blocks;
    for (const auto& p : parts) {
        input_nodes.push_back(p.node);
        blocks.push_back(p.dim(axis) * inner);
    }
    return make_op_result<T>(
        tape, std::move(oshape), std::move(out), std::vector<int>(input_nodes),
        [input_nodes, blocks, outer, inner, axis_total](const Vec<T>& g, Tape<T>& tp) {
            const std::int64_t row = axis_total * inner;
            std::int64_t pos = 0;  // element offset within a row
            for (std::size_t pi = 0; pi < input_nodes.size(); ++pi) {
                const std::int64_t block = blocks[pi];
                if (input_nodes[pi] >= 0) {
                    Vec<T> gp(static_cast<std::size_t>(outer * block));
                    for (std::int64_t o = 0; o < outer; ++o)
                        std::memcpy(gp.data() + o * block, g.data() + o * row + pos,
                                    sizeof(T) * static_cast<std::size_t>(block));
                    tp.add_grad(input_nodes[pi], std::move(gp));
                }
                pos += block;
            }
        });
}

template <typename T>
Tensor<T> slice(Tape<T>* tape, const Tensor<T>& x, int axis, int start, int len) {
    if (axis < 0 || axis >= x.rank()) throw ShapeError("slice: axis out of range");
    if (start < 0 || len <= 0 || start + len > x.dim(axis))
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for axis size " +
                         std::to_string(x.dim(axis)));
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::int64_t ax = x.dim(axis);

    Shape oshape = x.shape();
    oshape[static_cast<std::size_t>(axis)] = len;
    Vec<T> out(static_cast<std::size_t>(outer * len * inner));
    for (std::int64_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * len * inner, x.data() + (o * ax + start) * inner,
                    sizeof(T) * static_cast<std::size_t>(len * inner));

    int xn = x.node;
    std::int64_t xsize = x.size();
    return make_op_result<T>(
        tape, std::move(oshape), std::move(out), {xn},
        [xn, xsize, outer, inner, ax, start, len](const Vec<T>& g, Tape<T>& tp) {
            Vec<T> gx(static_cast<std::size_t>(xsize), T(0));
            for (std::int64_t o = 0; o < outer; ++o)
                std::memcpy(gx.data() + (o * ax + start) * inner, g.data() + o * len * inner,
                            sizeof(T) * static_cast<std::size_t>(len * inner));
            tp.add_grad(xn, std::move(gx));
        });
}

// Softmax along one axis with temperature; probabilities saved for backward.
template <typename T>
Tensor<T> softmax_axis(Tape<T>* tape, const Tensor<T>& x, int axis, T temperature = T(1)) {
    if (axis < 0 || axis >= x.rank()) throw ShapeError("softmax_axis: axis out of range");
    if (!(temperature > T(0))) throw DomainError("softmax_axis: temperature must be positive");
    std::int64_t outer, red, inner;
    rdetail::axis_extents(x.shape(), axis, outer, red, inner);
    Vec<T> out(static_cast<std::size_t>(x.size()));
    const T invt = T(1) / temperature;
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * red * inner + i;
            T m = x.data()[base] * invt;
            for (std::int64_t r = 1; r < red; ++r) m = std::max(m, x.data()[base + r * inner] * invt);
            T s = T(0);
            for (std::int64_t r = 0; r < red; ++r) {
                T e = std::exp(x.data()[base + r * inner] * invt - m);
                out[static_cast<std::size_t>(base + r * inner)] = e;
                s += e;
            }
            const T inv = T(1) / s;
            for (std::int64_t r = 0; r < red; ++r)
                out[static_cast<std::size_t>(base + r * inner)] *= inv;
        }
    auto ysav = std::make_shared<Vec<T>>(out);
    int xn = x.node;
    return make_op_result<T>(
        tape, x.shape(), std::move(out), {xn},
        [ysav, xn, outer, red, inner, invt](const Vec<T>& g, Tape<T>& tp) {
            Vec<T> gx(g.size());
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < inner; ++i) {
                    const std::int64_t base = o * red * inner + i;
                    T dot = T(0);
                    for (std::int64_t r = 0; r < red; ++r) {
                        const auto idx = static_cast<std::size_t>(base + r * inner);
                        dot += g[idx] * (*ysav)[idx];
                    }
                    for (std::int64_t r = 0; r < red; ++r) {
                        const auto idx = static_cast<std::size_t>(base + r * inner);
                        gx[idx] = invt * (*ysav)[idx] * (g[idx] - dot);
                    }
                }
            tp.add_grad(xn, std::move(gx));
        });
}

// Spec-facing dispatchers over the primitive set.
enum class EwKind { add, sub, mul, relu, sigmoid, exp, log, scale };

template <typename T>
Tensor<T> elementwise(Tape<T>* tape, EwKind kind, const Tensor<T>& a, const Tensor<T>* b = nullptr,
                      T constant = T(1)) {
    switch (kind) {
        case EwKind::add:
            if (!b) throw ShapeError("elementwise add: missing second operand");
            return add(tape, a, *b);
        case EwKind::sub:
            if (!b) throw ShapeError("elementwise sub: missing second operand");
            return sub(tape, a, *b);
        case EwKind::mul:
            if (!b) throw ShapeError("elementwise mul: missing second operand");
            return mul(tape, a, *b);
        case EwKind::relu: return relu(tape, a);
        case EwKind::sigmoid: return sigmoid(tape, a);
        case EwKind::exp: return exp(tape, a);
        case EwKind::log: return log(tape, a);
        case EwKind::scale: return scale(tape, a, constant);
    }
    throw ShapeError("elementwise: unknown op kind");
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
    if (!t.all_finite()) throw DomainError(std::string(what) + ": non-finite values encountered");
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Gradient checking (central differences). Runs at 64-bit only; the numeric
// side never touches the tape, so it is independent of the backward pass it
// verifies.

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::int64_t elements_checked = 0;
    std::string worst_location;
    bool passed(double tol) const { return max_rel_err < tol; }
};

using GradCheckFn =
    std::function<Tensor<double>(Tape<double>*, const std::vector<Tensor<double>>&)>;

inline GradCheckReport grad_check_multi(const GradCheckFn& f, const std::vector<Tensor<double>>& xs,
                                        double step = 1e-5, double tol = 1e-5) {
    Tape<double> tape;
    std::vector<Tensor<double>> tracked;
    tracked.reserve(xs.size());
    for (const auto& x : xs) tracked.push_back(tape.leaf(x));
    Tensor<double> y = f(&tape, tracked);
    if (y.size() != 1) throw ShapeError("grad_check: function must be scalar-valued");
    if (!y.all_finite()) throw DomainError("grad_check: non-finite function value");
    tape.backward(y);

    GradCheckReport report;
    for (std::size_t xi = 0; xi < xs.size(); ++xi) {
        Tensor<double> analytic = tape.grad(tracked[xi]);
        for (std::int64_t e = 0; e < xs[xi].size(); ++e) {
            auto evaluate = [&](double delta) {
                std::vector<Tensor<double>> mod = xs;
                auto vals = xs[xi].values();
                vals[static_cast<std::size_t>(e)] += delta;
                mod[xi] = Tensor<double>(xs[xi].shape(), std::move(vals));
                Tensor<double> out = f(nullptr, mod);
                double v = out.item();
                if (!std::isfinite(v)) throw DomainError("grad_check: non-finite perturbed value");
                return v;
            };
            const double numeric = (evaluate(step) - evaluate(-step)) / (2.0 * step);
            const double a = analytic.data()[e];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1.0});
            const double rel = std::fabs(a - numeric) / denom;
            ++report.elements_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_location =
                    "input " + std::to_string(xi) + " element " + std::to_string(e) + " analytic " +
                    std::to_string(a) + " numeric " + std::to_string(numeric);
            }
        }
    }
    (void)tol;
    return report;
}

inline GradCheckReport grad_check(
    const std::function<Tensor<double>(Tape<double>*, const Tensor<double>&)>& f,
    const Tensor<double>& x, double step = 1e-5, double tol = 1e-5) {
    return grad_check_multi(
        [&f](Tape<double>* tp, const std::vector<Tensor<double>>& xs) { return f(tp, xs[0]); }, {x},
        step, tol);
}

}  // namespace ct
