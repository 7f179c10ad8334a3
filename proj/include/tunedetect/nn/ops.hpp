#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "tunedetect/nn/autograd.hpp"

namespace tunedetect::nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

namespace detail {

struct ConvGeometry {
    std::size_t c, h, w, k, stride, pad, ho, wo;
};

inline ConvGeometry conv_geometry(const Shape& x, std::size_t k, std::size_t stride, std::size_t pad) {
    if (x.size() != 3) throw DomainError("conv2d: expected input [C,H,W], got " + shape_str(x));
    ConvGeometry g{x[0], x[1], x[2], k, stride, pad, 0, 0};
    if (g.h + 2 * pad < k || g.w + 2 * pad < k) throw DomainError("conv2d: input smaller than kernel");
    g.ho = (g.h + 2 * pad - k) / stride + 1;
    g.wo = (g.w + 2 * pad - k) / stride + 1;
    return g;
}

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const std::size_t plane = g.ho * g.wo;
    for (std::size_t c = 0; c < g.c; ++c)
        for (std::size_t ki = 0; ki < g.k; ++ki)
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                T* row = cols + ((c * g.k + ki) * g.k + kj) * plane;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
                    T* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(dst, dst + g.wo, T{0});
                        continue;
                    }
                    const T* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T{0} : src[ix];
                    }
                }
            }
}

template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
    const std::size_t plane = g.ho * g.wo;
    for (std::size_t c = 0; c < g.c; ++c)
        for (std::size_t ki = 0; ki < g.k; ++ki)
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                const T* row = cols + ((c * g.k + ki) * g.k + kj) * plane;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    T* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    const T* src = row + oy * g.wo;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
                    }
                }
            }
}

}  // namespace detail

/// Single-sample 2-D convolution. x: [C,H,W], weight: [O,C,K,K], bias: [O].
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t pad) {
    const auto& ws = weight.shape();
    if (ws.size() != 4 || ws[2] != ws[3]) throw DomainError("conv2d: weight must be [O,C,K,K]");
    const auto g = detail::conv_geometry(x.shape(), ws[2], stride, pad);
    if (ws[1] != g.c) throw DomainError("conv2d: channel mismatch");
    const std::size_t o = ws[0], ckk = g.c * g.k * g.k, plane = g.ho * g.wo;

    Buffer<T> cols(ckk * plane);
    detail::im2col(x.value().data.data(), g, cols.data());
    Tensor<T> out({o, g.ho, g.wo});
    MapMat<T> om(out.data.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(plane));
    CMapMat<T> wm(weight.value().data.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(ckk));
    CMapMat<T> cm(cols.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(plane));
    om.noalias() = wm * cm;
    for (std::size_t i = 0; i < o; ++i) om.row(static_cast<Eigen::Index>(i)).array() += bias.value()[i];

    return Var<T>::from_op(std::move(out), {x, weight, bias}, [g, o, ckk, plane](Node<T>& n) {
        CMapMat<T> dout(n.grad.data.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(plane));
        const auto& xv = n.parents[0]->value;
        const auto& wv = n.parents[1]->value;
        Buffer<T> cols(ckk * plane);
        detail::im2col(xv.data.data(), g, cols.data());
        CMapMat<T> cm(cols.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(plane));
        if (parent_wants_grad(n, 1)) {
            auto& dw = parent_grad(n, 1);
            MapMat<T>(dw.data.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(ckk)).noalias() +=
                dout * cm.transpose();
        }
        if (parent_wants_grad(n, 2)) {
            auto& db = parent_grad(n, 2);
            for (std::size_t i = 0; i < o; ++i) db[i] += dout.row(static_cast<Eigen::Index>(i)).sum();
        }
        if (parent_wants_grad(n, 0)) {
            CMapMat<T> wm(wv.data.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(ckk));
            RowMat<T> dcols = wm.transpose() * dout;
            detail::col2im_add(dcols.data(), g, parent_grad(n, 0).data.data());
        }
    });
}

template <class T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out(x.shape());
    const auto& xv = x.value().data;
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T{0} ? xv[i] : T{0};
    return Var<T>::from_op(std::move(out), {x}, [](Node<T>& n) {
        const auto& xv = n.parents[0]->value.data;
        auto& dx = parent_grad(n, 0);
        for (std::size_t i = 0; i < xv.size(); ++i)
            if (xv[i] > T{0}) dx[i] += n.grad[i];
    });
}

/// 2x2 max pooling with stride 2 over [C,H,W]; odd trailing rows/columns dropped.
template <class T>
Var<T> maxpool2x2(const Var<T>& x) {
    const auto& s = x.shape();
    if (s.size() != 3) throw DomainError("maxpool2x2: expected [C,H,W]");
    const std::size_t c = s[0], h = s[1], w = s[2], ho = h / 2, wo = w / 2;
    if (ho == 0 || wo == 0) throw DomainError("maxpool2x2: input too small");
    Tensor<T> out({c, ho, wo});
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(c * ho * wo);
    const auto& xv = x.value().data;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                std::size_t best = (ch * h + 2 * i) * w + 2 * j;
                for (std::size_t di = 0; di < 2; ++di)
                    for (std::size_t dj = 0; dj < 2; ++dj) {
                        std::size_t idx = (ch * h + 2 * i + di) * w + 2 * j + dj;
                        if (xv[idx] > xv[best]) best = idx;
                    }
                const std::size_t o = (ch * ho + i) * wo + j;
                out[o] = xv[best];
                (*argmax)[o] = static_cast<std::uint32_t>(best);
            }
    return Var<T>::from_op(std::move(out), {x}, [argmax](Node<T>& n) {
        auto& dx = parent_grad(n, 0);
        for (std::size_t o = 0; o < argmax->size(); ++o) dx[(*argmax)[o]] += n.grad[o];
    });
}

/// Mean over the H (time) axis of [C,H,W], giving [C,W].
template <class T>
Var<T> mean_over_time(const Var<T>& x) {
    const auto& s = x.shape();
    if (s.size() != 3) throw DomainError("mean_over_time: expected [C,H,W]");
    const std::size_t c = s[0], h = s[1], w = s[2];
    Tensor<T> out({c, w});
    const auto& xv = x.value().data;
    const T inv = T{1} / static_cast<T>(h);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) out[ch * w + j] += xv[(ch * h + i) * w + j] * inv;
    return Var<T>::from_op(std::move(out), {x}, [c, h, w, inv](Node<T>& n) {
        auto& dx = parent_grad(n, 0);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) dx[(ch * h + i) * w + j] += n.grad[ch * w + j] * inv;
    });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    if (numel(shape) != x.value().size()) throw DomainError("reshape: element count mismatch");
    Tensor<T> out(std::move(shape), x.value().data);
    return Var<T>::from_op(std::move(out), {x}, [](Node<T>& n) {
        auto& dx = parent_grad(n, 0);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += n.grad[i];
    });
}

/// Fully connected layer. x: [N,in], weight: [out,in], bias: [out] -> [N,out].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    const auto& xs = x.shape();
    const auto& ws = weight.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1] || bias.value().size() != ws[0])
        throw DomainError("linear: shape mismatch " + shape_str(xs) + " x " + shape_str(ws));
    const auto n = static_cast<Eigen::Index>(xs[0]), in = static_cast<Eigen::Index>(xs[1]),
               outd = static_cast<Eigen::Index>(ws[0]);
    Tensor<T> out({xs[0], ws[0]});
    MapMat<T> om(out.data.data(), n, outd);
    om.noalias() = CMapMat<T>(x.value().data.data(), n, in) *
                   CMapMat<T>(weight.value().data.data(), outd, in).transpose();
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < outd; ++c) om(r, c) += bias.value()[static_cast<std::size_t>(c)];
    return Var<T>::from_op(std::move(out), {x, weight, bias}, [n, in, outd](Node<T>& node) {
        CMapMat<T> dout(node.grad.data.data(), n, outd);
        if (parent_wants_grad(node, 0))
            MapMat<T>(parent_grad(node, 0).data.data(), n, in).noalias() +=
                dout * CMapMat<T>(node.parents[1]->value.data.data(), outd, in);
        if (parent_wants_grad(node, 1))
            MapMat<T>(parent_grad(node, 1).data.data(), outd, in).noalias() +=
                dout.transpose() * CMapMat<T>(node.parents[0]->value.data.data(), n, in);
        if (parent_wants_grad(node, 2)) {
            auto& db = parent_grad(node, 2);
            for (Eigen::Index c = 0; c < outd; ++c) db[static_cast<std::size_t>(c)] += dout.col(c).sum();
        }
    });
}

/// Row-wise L2 normalization of [N,D].
template <class T>
Var<T> l2_normalize(const Var<T>& x) {
    const auto& s = x.shape();
    if (s.size() != 2) throw DomainError("l2_normalize: expected [N,D]");
    const std::size_t n = s[0], d = s[1];
    Tensor<T> out(s);
    auto norms = std::make_shared<std::vector<T>>(n);
    const auto& xv = x.value().data;
    for (std::size_t r = 0; r < n; ++r) {
        T ss = 0;
        for (std::size_t c = 0; c < d; ++c) ss += xv[r * d + c] * xv[r * d + c];
        T norm = std::sqrt(ss + static_cast<T>(1e-24));
        (*norms)[r] = norm;
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] / norm;
    }
    return Var<T>::from_op(std::move(out), {x}, [n, d, norms](Node<T>& node) {
        auto& dx = parent_grad(node, 0);
        const auto& xv = node.parents[0]->value.data;
        for (std::size_t r = 0; r < n; ++r) {
            const T norm = (*norms)[r];
            T dot = 0;
            for (std::size_t c = 0; c < d; ++c) dot += node.grad[r * d + c] * xv[r * d + c];
            dot /= norm;
            for (std::size_t c = 0; c < d; ++c) {
                const T y = xv[r * d + c] / norm;
                dx[r * d + c] += (node.grad[r * d + c] - y * dot) / norm;
            }
        }
    });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x.value()[i];
        out[i] = v >= 0 ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
    }
    auto y = std::make_shared<Buffer<T>>(out.data);
    return Var<T>::from_op(std::move(out), {x}, [y](Node<T>& n) {
        auto& dx = parent_grad(n, 0);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += n.grad[i] * (*y)[i] * (T{1} - (*y)[i]);
    });
}

/// Concatenate rows: each input is [1,D] or [D]; result [N,D].
template <class T>
Var<T> stack_rows(const std::vector<Var<T>>& rows) {
    if (rows.empty()) throw DomainError("stack_rows: no rows");
    const std::size_t d = rows.front().value().size();
    Tensor<T> out({rows.size(), d});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].value().size() != d) throw DomainError("stack_rows: ragged rows");
        std::copy(rows[r].value().data.begin(), rows[r].value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    return Var<T>::from_op(std::move(out), rows, [d](Node<T>& n) {
        for (std::size_t r = 0; r < n.parents.size(); ++r) {
            if (!parent_wants_grad(n, r)) continue;
            auto& g = parent_grad(n, r);
            for (std::size_t c = 0; c < d; ++c) g[c] += n.grad[r * d + c];
        }
    });
}

template <class T>
Var<T> sum_all(const Var<T>& x) {
    T s = 0;
    for (T v : x.value().data) s += v;
    return Var<T>::from_op(Tensor<T>({1}, std::vector<T>{s}), {x}, [](Node<T>& n) {
        auto& dx = parent_grad(n, 0);
        for (auto& v : dx.data) v += n.grad[0];
    });
}

template <class T>
Var<T> scale(const Var<T>& x, T k) {
    Tensor<T> out = x.value();
    for (auto& v : out.data) v *= k;
    return Var<T>::from_op(std::move(out), {x}, [k](Node<T>& n) {
        auto& dx = parent_grad(n, 0);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += n.grad[i] * k;
    });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline constexpr double kBceClamp = 1e-7;

/// -t ln(y) - (1-t) ln(1-y) with y clamped to [1e-7, 1 - 1e-7].
inline double bce_loss(double y, double t) {
    const double yc = std::clamp(y, kBceClamp, 1.0 - kBceClamp);
    return -t * std::log(yc) - (1.0 - t) * std::log(1.0 - yc);
}

/// Mean binary cross-entropy over predictions y: [N,1] (or [N]).
template <class T>
Var<T> bce_mean(const Var<T>& y, std::span<const T> targets) {
    const std::size_t n = y.value().size();
    if (targets.size() != n) throw DomainError("bce_mean: target count mismatch");
    auto t = std::make_shared<std::vector<T>>(targets.begin(), targets.end());
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) total += static_cast<T>(bce_loss(y.value()[i], (*t)[i]));
    return Var<T>::from_op(Tensor<T>({1}, std::vector<T>{total / static_cast<T>(n)}), {y}, [t, n](Node<T>& node) {
        auto& dy = parent_grad(node, 0);
        const auto& yv = node.parents[0]->value.data;
        const T lo = static_cast<T>(kBceClamp), hi = T{1} - static_cast<T>(kBceClamp);
        for (std::size_t i = 0; i < n; ++i) {
            const T v = yv[i];
            if (v < lo || v > hi) continue;
            const T g = -(*t)[i] / v + (T{1} - (*t)[i]) / (T{1} - v);
            dy[i] += node.grad[0] * g / static_cast<T>(n);
        }
    });
}

template <class T>
T squared_distance(std::span<const T> a, std::span<const T> b) {
    T s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

/// max(0, d(a,p) - d(a,n) + margin) with d the squared Euclidean distance.
template <class T>
T triplet_loss(std::span<const T> anchor, std::span<const T> positive, std::span<const T> negative,
               T margin) {
    if (anchor.size() != positive.size() || anchor.size() != negative.size())
        throw DomainError("triplet_loss: dimension mismatch");
    return std::max(T{0}, squared_distance(anchor, positive) - squared_distance(anchor, negative) + margin);
}

struct Triplet {
    std::size_t anchor, positive, negative;
    bool operator==(const Triplet&) const = default;
};

/// Mean hinge triplet loss over rows of embeddings [N,D].
template <class T>
Var<T> triplet_loss_mean(const Var<T>& embeddings, const std::vector<Triplet>& triplets, T margin) {
    const auto& s = embeddings.shape();
    if (s.size() != 2) throw DomainError("triplet_loss_mean: expected [N,D]");
    const std::size_t d = s[1];
    const auto& e = embeddings.value().data;
    auto row = [&](std::size_t i) { return std::span<const T>(e.data() + i * d, d); };
    T total = 0;
    auto active = std::make_shared<std::vector<Triplet>>();
    for (const auto& t : triplets) {
        T l = triplet_loss(row(t.anchor), row(t.positive), row(t.negative), margin);
        total += l;
        if (l > T{0}) active->push_back(t);
    }
    const T count = triplets.empty() ? T{1} : static_cast<T>(triplets.size());
    return Var<T>::from_op(Tensor<T>({1}, std::vector<T>{total / count}), {embeddings},
                           [active, d, count](Node<T>& node) {
                               auto& de = parent_grad(node, 0);
                               const auto& e = node.parents[0]->value.data;
                               const T g = node.grad[0] * T{2} / count;
                               for (const auto& t : *active) {
                                   const T* a = e.data() + t.anchor * d;
                                   const T* p = e.data() + t.positive * d;
                                   const T* ng = e.data() + t.negative * d;
                                   for (std::size_t c = 0; c < d; ++c) {
                                       de[t.anchor * d + c] += g * (ng[c] - p[c]);
                                       de[t.positive * d + c] += g * (p[c] - a[c]);
                                       de[t.negative * d + c] += g * (a[c] - ng[c]);
                                   }
                               }
                           });
}

/// Semi-hard negative selection. For every ordered same-class pair (a, p):
/// the negative with the smallest d(a,n) inside (d(a,p), d(a,p) + margin);
/// otherwise the negative with the largest d(a,n) below d(a,p) + margin;
/// otherwise the pair is skipped. Ties resolve to the lowest index.
template <class T>
std::vector<Triplet> mine_semi_hard(const Tensor<T>& embeddings, std::span<const int> labels, T margin) {
    const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
    if (labels.size() != n) throw DomainError("mine_semi_hard: label count mismatch");
    std::vector<T> dist(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            dist[i * n + j] = squared_distance(std::span<const T>(embeddings.data.data() + i * d, d),
                                               std::span<const T>(embeddings.data.data() + j * d, d));
    std::vector<Triplet> out;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t p = 0; p < n; ++p) {
            if (p == a || labels[p] != labels[a]) continue;
            const T dap = dist[a * n + p];
            std::size_t semi = n, fallback = n;
            for (std::size_t k = 0; k < n; ++k) {
                if (labels[k] == labels[a]) continue;
                const T dan = dist[a * n + k];
                if (dan > dap && dan < dap + margin) {
                    if (semi == n || dan < dist[a * n + semi]) semi = k;
                } else if (dan < dap + margin) {
                    if (fallback == n || dan > dist[a * n + fallback]) fallback = k;
                }
            }
            if (semi != n) {
                out.push_back({a, p, semi});
            } else if (fallback != n) {
                out.push_back({a, p, fallback});
            }
        }
    return out;
}

}  // namespace tunedetect::nn
