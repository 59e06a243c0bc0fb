#pragma once

/// \file autograd.hpp
/// \brief Tape-free reverse-mode differentiation: every op records its inputs and a
/// backward closure on the result node; `backward(loss)` walks the graph in reverse
/// topological order. Matrix products go through Eigen.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "posekit/error.hpp"
#include "posekit/tensor.hpp"

namespace posekit::nn {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    bool has_grad() const { return grad.size() == value.size() && !value.empty(); }

    Tensor<T>& ensure_grad()
    {
        if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor<T>::zeros(value.shape());
        return grad;
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>())
    {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    bool defined() const { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& grad() const { return node_->ensure_grad(); }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
    std::size_t rank() const { return node_->value.rank(); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const std::shared_ptr<Node<T>>& node() const { return node_; }

    T item() const
    {
        detail::require(size() == 1, "item() on a non-scalar of shape " + shape_str(shape()));
        return node_->value[0];
    }

private:
    std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Tensor<T> t)
{
    return Var<T>(std::move(t), false);
}

namespace detail {

using posekit::detail::require;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using CVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
CMatMap<T> cmat(const Tensor<T>& t, std::size_t rows, std::size_t cols, std::size_t offset = 0)
{
    return CMatMap<T>(t.data() + offset, Eigen::Index(rows), Eigen::Index(cols));
}

template <typename T>
MatMap<T> mat(Tensor<T>& t, std::size_t rows, std::size_t cols, std::size_t offset = 0)
{
    return MatMap<T>(t.data() + offset, Eigen::Index(rows), Eigen::Index(cols));
}

/// Builds the result node; the backward closure is attached only when some input needs gradients.
template <typename T, typename Backward>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs, Backward&& bw)
{
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node());
        node->backward = std::forward<Backward>(bw);
    }
    return Var<T>(std::move(node));
}

template <typename T>
bool wants(const Node<T>& n, std::size_t i)
{
    return n.inputs[i] && n.inputs[i]->requires_grad;
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src)
{
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

} // namespace detail

/// Accumulates d(root)/d(node) into every node that requires gradients. `root` must be a scalar.
template <typename T>
void backward(const Var<T>& root)
{
    detail::require(root.defined() && root.size() == 1, "backward() needs a scalar root");
    if (!root.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->inputs.size()) {
            Node<T>* child = n->inputs[next++].get();
            if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    root.node()->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward && n->has_grad()) n->backward(*n);
    }
}

// --- dense ------------------------------------------------------------------------

/// y = x W + b over the last dimension. x: [..., in], W: [in, out], b: [out] (optional).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = Var<T>())
{
    using namespace detail;
    require(w.rank() == 2, "linear: weight must be [in, out]");
    require(x.rank() >= 1 && x.shape().back() == w.dim(0),
            "linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
    const std::size_t in = w.dim(0), out = w.dim(1), rows = x.size() / in;
    require(!b.defined() || (b.rank() == 1 && b.dim(0) == out), "linear: bias must be [out]");

    Shape oshape = x.shape();
    oshape.back() = out;
    Tensor<T> y(oshape);
    auto Y = mat(y, rows, out);
    Y.noalias() = cmat(x.value(), rows, in) * cmat(w.value(), in, out);
    if (b.defined()) Y.rowwise() += cmat(b.value(), 1, out).row(0);

    std::vector<Var<T>> ins{x, w};
    if (b.defined()) ins.push_back(b);
    return make_op<T>(std::move(y), std::move(ins), [rows, in, out](Node<T>& n) {
        auto dY = cmat(n.grad, rows, out);
        if (wants(n, 0)) mat(n.inputs[0]->ensure_grad(), rows, in).noalias() += dY * cmat(n.inputs[1]->value, in, out).transpose();
        if (wants(n, 1)) mat(n.inputs[1]->ensure_grad(), in, out).noalias() += cmat(n.inputs[0]->value, rows, in).transpose() * dY;
        if (n.inputs.size() > 2 && wants(n, 2)) mat(n.inputs[2]->ensure_grad(), 1, out) += dY.colwise().sum();
    });
}

/// Batched product: a [B, m, k] x b [B, k, n] (or b [B, n, k] when transpose_b).
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b = false)
{
    using namespace detail;
    require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0), "bmm: expected [B,m,k] and [B,k,n] operands");
    const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2);
    const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
    require((transpose_b ? b.dim(2) : b.dim(1)) == k, "bmm: inner dimensions differ");
    Tensor<T> y({B, m, n});
    for (std::size_t i = 0; i < B; ++i) {
        auto A = cmat(a.value(), m, k, i * m * k);
        auto Y = mat(y, m, n, i * m * n);
        if (transpose_b) Y.noalias() = A * cmat(b.value(), n, k, i * n * k).transpose();
        else Y.noalias() = A * cmat(b.value(), k, n, i * k * n);
    }
    return make_op<T>(std::move(y), {a, b}, [B, m, k, n, transpose_b](Node<T>& nd) {
        for (std::size_t i = 0; i < B; ++i) {
            auto dY = cmat(nd.grad, m, n, i * m * n);
            const auto& av = nd.inputs[0]->value;
            const auto& bv = nd.inputs[1]->value;
            if (transpose_b) {
                auto Bm = cmat(bv, n, k, i * n * k);
                if (wants(nd, 0)) mat(nd.inputs[0]->ensure_grad(), m, k, i * m * k).noalias() += dY * Bm;
                if (wants(nd, 1)) mat(nd.inputs[1]->ensure_grad(), n, k, i * n * k).noalias() += dY.transpose() * cmat(av, m, k, i * m * k);
            } else {
                auto Bm = cmat(bv, k, n, i * k * n);
                if (wants(nd, 0)) mat(nd.inputs[0]->ensure_grad(), m, k, i * m * k).noalias() += dY * Bm.transpose();
                if (wants(nd, 1)) mat(nd.inputs[1]->ensure_grad(), k, n, i * k * n).noalias() += cmat(av, m, k, i * m * k).transpose() * dY;
            }
        }
    });
}

// --- convolution ------------------------------------------------------------------

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t pad = 0;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad)
{
    const long span = long(in) + 2 * long(pad) - long(kernel);
    posekit::detail::require(stride >= 1, "conv2d: stride must be >= 1");
    posekit::detail::require(span >= 0, "conv2d: kernel " + std::to_string(kernel) + " larger than padded extent " +
                                            std::to_string(in + 2 * pad));
    return std::size_t(span) / stride + 1;
}

namespace detail {

/// Output columns [x0, x1) whose input column ox * stride + j - pad lies inside [0, W).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t Wo, std::size_t W, std::size_t j, Conv2dOptions opt)
{
    std::size_t x0 = 0;
    if (opt.pad > j) x0 = (opt.pad - j + opt.stride - 1) / opt.stride;
    const std::size_t limit = W + opt.pad - j; // ox * stride < limit
    std::size_t x1 = (limit + opt.stride - 1) / opt.stride;
    x1 = std::min(x1, Wo);
    return {std::min(x0, x1), x1};
}

} // namespace detail

/// Cross-correlation. x: [N, C, H, W] or [C, H, W]; w: [O, C, kh, kw]; b: [O] (optional).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, Conv2dOptions opt)
{
    using namespace detail;
    require(x.rank() == 3 || x.rank() == 4, "conv2d: input must be [C,H,W] or [N,C,H,W]");
    require(w.rank() == 4, "conv2d: weight must be [O,C,kh,kw]");
    const bool batched = x.rank() == 4;
    const std::size_t N = batched ? x.dim(0) : 1;
    const std::size_t C = x.dim(batched ? 1 : 0), H = x.dim(batched ? 2 : 1), W = x.dim(batched ? 3 : 2);
    const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    require(w.dim(1) == C, "conv2d: input has " + std::to_string(C) + " channels, weight expects " + std::to_string(w.dim(1)));
    require(!b.defined() || (b.rank() == 1 && b.dim(0) == O), "conv2d: bias must be [O]");
    const std::size_t Ho = conv_out_extent(H, kh, opt.stride, opt.pad);
    const std::size_t Wo = conv_out_extent(W, kw, opt.stride, opt.pad);
    const std::size_t ckk = C * kh * kw, hw = Ho * Wo;
    const bool pointwise = kh == 1 && kw == 1 && opt.stride == 1 && opt.pad == 0;

    // im2col buffers are kept for the backward pass.
    auto cols = std::make_shared<std::vector<T>>(pointwise ? 0 : N * ckk * hw, T(0));
    const T* xd = x.value().data();
    if (!pointwise) {
        for (std::size_t n = 0; n < N; ++n) {
            T* cn = cols->data() + n * ckk * hw;
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < kh; ++i)
                    for (std::size_t j = 0; j < kw; ++j) {
                        T* crow = cn + ((c * kh + i) * kw + j) * hw;
                        const auto [x0, x1] = valid_range(Wo, W, j, opt);
                        for (std::size_t oy = 0; oy < Ho; ++oy) {
                            const long iy = long(oy * opt.stride + i) - long(opt.pad);
                            if (iy < 0 || iy >= long(H)) continue;
                            const T* xrow = xd + ((n * C + c) * H + std::size_t(iy)) * W;
                            const long off = long(j) - long(opt.pad);
                            T* out = crow + oy * Wo;
                            if (opt.stride == 1) {
                                std::copy(xrow + (long(x0) + off), xrow + (long(x1) + off), out + x0);
                            } else {
                                for (std::size_t ox = x0; ox < x1; ++ox) out[ox] = xrow[long(ox * opt.stride) + off];
                            }
                        }
                    }
        }
    }

    Shape oshape = batched ? Shape{N, O, Ho, Wo} : Shape{O, Ho, Wo};
    Tensor<T> y(oshape);
    auto Wm = cmat(w.value(), O, ckk);
    for (std::size_t n = 0; n < N; ++n) {
        auto Y = mat(y, O, hw, n * O * hw);
        if (pointwise) Y.noalias() = Wm * cmat(x.value(), C, hw, n * C * hw);
        else Y.noalias() = Wm * CMatMap<T>(cols->data() + n * ckk * hw, Eigen::Index(ckk), Eigen::Index(hw));
        if (b.defined()) Y.colwise() += cmat(b.value(), O, 1).col(0);
    }

    std::vector<Var<T>> ins{x, w};
    if (b.defined()) ins.push_back(b);
    return make_op<T>(std::move(y), std::move(ins), [=](Node<T>& nd) {
        auto Wm = cmat(nd.inputs[1]->value, O, ckk);
        std::vector<T> dcols(pointwise ? 0 : ckk * hw);
        for (std::size_t n = 0; n < N; ++n) {
            auto dY = cmat(nd.grad, O, hw, n * O * hw);
            auto Xc = pointwise ? cmat(nd.inputs[0]->value, C, hw, n * C * hw)
                                : CMatMap<T>(cols->data() + n * ckk * hw, Eigen::Index(ckk), Eigen::Index(hw));
            if (wants(nd, 1)) mat(nd.inputs[1]->ensure_grad(), O, ckk).noalias() += dY * Xc.transpose();
            if (nd.inputs.size() > 2 && wants(nd, 2)) mat(nd.inputs[2]->ensure_grad(), O, 1) += dY.rowwise().sum();
            if (!wants(nd, 0)) continue;
            auto& gx = nd.inputs[0]->ensure_grad();
            if (pointwise) {
                mat(gx, C, hw, n * C * hw).noalias() += Wm.transpose() * dY;
                continue;
            }
            MatMap<T>(dcols.data(), Eigen::Index(ckk), Eigen::Index(hw)).noalias() = Wm.transpose() * dY;
            T* gxd = gx.data();
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < kh; ++i)
                    for (std::size_t j = 0; j < kw; ++j) {
                        const T* crow = dcols.data() + ((c * kh + i) * kw + j) * hw;
                        const auto [x0, x1] = valid_range(Wo, W, j, opt);
                        for (std::size_t oy = 0; oy < Ho; ++oy) {
                            const long iy = long(oy * opt.stride + i) - long(opt.pad);
                            if (iy < 0 || iy >= long(H)) continue;
                            T* grow = gxd + ((n * C + c) * H + std::size_t(iy)) * W;
                            const long off = long(j) - long(opt.pad);
                            const T* in = crow + oy * Wo;
                            for (std::size_t ox = x0; ox < x1; ++ox) grow[long(ox * opt.stride) + off] += in[ox];
                        }
                    }
        }
    });
}

// --- resampling -----------------------------------------------------------------------

namespace detail {

struct Spatial {
    std::size_t planes, h, w;
};

inline Spatial spatial_of(const Shape& s, const char* op)
{
    posekit::detail::require(s.size() == 3 || s.size() == 4, std::string(op) + ": expected [C,H,W] or [N,C,H,W]");
    std::size_t planes = s.size() == 4 ? s[0] * s[1] : s[0];
    return {planes, s[s.size() - 2], s[s.size() - 1]};
}

} // namespace detail

/// Nearest-neighbour 2x upsampling of the two trailing dims.
template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x)
{
    const auto sp = detail::spatial_of(x.shape(), "upsample_nearest2x");
    Shape os = x.shape();
    os[os.size() - 2] *= 2;
    os[os.size() - 1] *= 2;
    Tensor<T> y(os);
    const std::size_t H = sp.h, W = sp.w;
    for (std::size_t p = 0; p < sp.planes; ++p)
        for (std::size_t i = 0; i < 2 * H; ++i)
            for (std::size_t j = 0; j < 2 * W; ++j) y[(p * 2 * H + i) * 2 * W + j] = x.value()[(p * H + i / 2) * W + j / 2];
    return detail::make_op<T>(std::move(y), {x}, [sp](Node<T>& n) {
        auto& g = n.inputs[0]->ensure_grad();
        const std::size_t H = sp.h, W = sp.w;
        for (std::size_t p = 0; p < sp.planes; ++p)
            for (std::size_t i = 0; i < 2 * H; ++i)
                for (std::size_t j = 0; j < 2 * W; ++j) g[(p * H + i / 2) * W + j / 2] += n.grad[(p * 2 * H + i) * 2 * W + j];
    });
}

/// 2x2 average pooling with stride 2; both spatial extents must be even.
template <typename T>
Var<T> avg_pool2x(const Var<T>& x)
{
    const auto sp = detail::spatial_of(x.shape(), "avg_pool2x");
    posekit::detail::require(sp.h % 2 == 0 && sp.w % 2 == 0,
                             "avg_pool2x: odd spatial extent " + shape_str(x.shape()));
    Shape os = x.shape();
    os[os.size() - 2] /= 2;
    os[os.size() - 1] /= 2;
    Tensor<T> y(os);
    const std::size_t Ho = sp.h / 2, Wo = sp.w / 2;
    for (std::size_t p = 0; p < sp.planes; ++p)
        for (std::size_t i = 0; i < sp.h; ++i)
            for (std::size_t j = 0; j < sp.w; ++j) y[(p * Ho + i / 2) * Wo + j / 2] += T(0.25) * x.value()[(p * sp.h + i) * sp.w + j];
    return detail::make_op<T>(std::move(y), {x}, [sp, Ho, Wo](Node<T>& n) {
        auto& g = n.inputs[0]->ensure_grad();
        for (std::size_t p = 0; p < sp.planes; ++p)
            for (std::size_t i = 0; i < sp.h; ++i)
                for (std::size_t j = 0; j < sp.w; ++j) g[(p * sp.h + i) * sp.w + j] += T(0.25) * n.grad[(p * Ho + i / 2) * Wo + j / 2];
    });
}

// --- shape ops ------------------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape)
{
    Tensor<T> y = x.value().reshaped(std::move(shape));
    return detail::make_op<T>(std::move(y), {x}, [](Node<T>& n) { detail::add_into(n.inputs[0]->ensure_grad(), n.grad); });
}

/// Concatenation along `axis`; all other extents must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis)
{
    using posekit::detail::require;
    require(!xs.empty(), "concat: no inputs");
    const Shape& s0 = xs[0].shape();
    require(axis < s0.size(), "concat: axis out of range");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
    std::vector<std::size_t> extents;
    std::size_t total = 0;
    for (const auto& x : xs) {
        require(x.rank() == s0.size(), "concat: rank mismatch");
        for (std::size_t i = 0; i < s0.size(); ++i)
            require(i == axis || x.dim(i) == s0[i], "concat: shape " + shape_str(x.shape()) + " vs " + shape_str(s0));
        extents.push_back(x.dim(axis));
        total += x.dim(axis);
    }
    Shape os = s0;
    os[axis] = total;
    Tensor<T> y(os);
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            const std::size_t len = extents[k] * inner;
            std::copy_n(xs[k].value().data() + o * len, len, y.data() + o * total * inner + off);
            off += len;
        }
    }
    return detail::make_op<T>(std::move(y), xs, [outer, inner, total, extents](Node<T>& n) {
        for (std::size_t o = 0; o < outer; ++o) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < extents.size(); ++k) {
                const std::size_t len = extents[k] * inner;
                if (detail::wants(n, k)) {
                    T* g = n.inputs[k]->ensure_grad().data() + o * len;
                    const T* src = n.grad.data() + o * total * inner + off;
                    for (std::size_t i = 0; i < len; ++i) g[i] += src[i];
                }
                off += len;
            }
        }
    });
}

// --- elementwise ----------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b)
{
    posekit::detail::require(a.shape() == b.shape(), "add: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> y = a.value();
    detail::add_into(y, b.value());
    return detail::make_op<T>(std::move(y), {a, b}, [](Node<T>& n) {
        for (std::size_t k = 0; k < 2; ++k)
            if (detail::wants(n, k)) detail::add_into(n.inputs[k]->ensure_grad(), n.grad);
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b)
{
    posekit::detail::require(a.shape() == b.shape(), "mul: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
    return detail::make_op<T>(std::move(y), {a, b}, [](Node<T>& n) {
        const auto& av = n.inputs[0]->value;
        const auto& bv = n.inputs[1]->value;
        if (detail::wants(n, 0)) {
            auto& g = n.inputs[0]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
        }
        if (detail::wants(n, 1)) {
            auto& g = n.inputs[1]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s)
{
    Tensor<T> y = a.value();
    for (auto& v : y.vec()) v *= s;
    return detail::make_op<T>(std::move(y), {a}, [s](Node<T>& n) {
        auto& g = n.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
    });
}

namespace detail {

template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, F f, DF df)
{
    Tensor<T> y = x.value();
    for (auto& v : y.vec()) v = f(v);
    return make_op<T>(std::move(y), {x}, [df](Node<T>& n) {
        auto& g = n.inputs[0]->ensure_grad();
        const auto& xv = n.inputs[0]->value;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * df(xv[i]);
    });
}

template <typename T>
T sigmoid(T v)
{
    return T(1) / (T(1) + std::exp(-v));
}

} // namespace detail

template <typename T>
Var<T> relu(const Var<T>& x)
{
    return detail::unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v) { return v > T(0) ? T(1) : T(0); });
}

/// relu(x)^2, the attention nonlinearity of the gated attention unit.
template <typename T>
Var<T> relu_sq(const Var<T>& x)
{
    return detail::unary(x, [](T v) { return v > T(0) ? v * v : T(0); }, [](T v) { return v > T(0) ? T(2) * v : T(0); });
}

template <typename T>
Var<T> silu(const Var<T>& x)
{
    return detail::unary(
        x, [](T v) { return v * detail::sigmoid(v); },
        [](T v) {
            const T s = detail::sigmoid(v);
            return s * (T(1) + v * (T(1) - s));
        });
}

/// x * gamma + beta along the last dimension.
template <typename T>
Var<T> affine_last(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta)
{
    const std::size_t d = x.shape().back();
    posekit::detail::require(gamma.size() == d && beta.size() == d, "affine_last: gamma/beta must match the last dim");
    Tensor<T> y = x.value();
    const std::size_t rows = y.size() / d;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) y[r * d + j] = y[r * d + j] * gamma.value()[j] + beta.value()[j];
    return detail::make_op<T>(std::move(y), {x, gamma, beta}, [rows, d](Node<T>& n) {
        const auto& xv = n.inputs[0]->value;
        const auto& gv = n.inputs[1]->value;
        Tensor<T>* gx = detail::wants(n, 0) ? &n.inputs[0]->ensure_grad() : nullptr;
        Tensor<T>* gg = detail::wants(n, 1) ? &n.inputs[1]->ensure_grad() : nullptr;
        Tensor<T>* gb = detail::wants(n, 2) ? &n.inputs[2]->ensure_grad() : nullptr;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) {
                const T g = n.grad[r * d + j];
                if (gx) (*gx)[r * d + j] += g * gv[j];
                if (gg) (*gg)[j] += g * xv[r * d + j];
                if (gb) (*gb)[j] += g;
            }
    });
}

// --- reductions ----------------------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& x)
{
    T s = T(0);
    for (T v : x.value().vec()) s += v;
    return detail::make_op<T>(Tensor<T>({1}, std::vector<T>{s}), {x}, [](Node<T>& n) {
        auto& g = n.inputs[0]->ensure_grad();
        for (auto& v : g.vec()) v += n.grad[0];
    });
}

template <typename T>
Var<T> mean(const Var<T>& x)
{
    return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// Sum of x * r for a constant tensor r; a convenient scalar probe for gradient checks.
template <typename T>
Var<T> dot_const(const Var<T>& x, const Tensor<T>& r)
{
    posekit::detail::require(x.size() == r.size(), "dot_const: size mismatch");
    T s = T(0);
    for (std::size_t i = 0; i < r.size(); ++i) s += x.value()[i] * r[i];
    return detail::make_op<T>(Tensor<T>({1}, std::vector<T>{s}), {x}, [r](Node<T>& n) {
        auto& g = n.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0] * r[i];
    });
}

/// Scalar sum of a list of scalars.
template <typename T>
Var<T> add_all(const std::vector<Var<T>>& xs)
{
    posekit::detail::require(!xs.empty(), "add_all: no terms");
    Var<T> acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return acc;
}

} // namespace posekit::nn
