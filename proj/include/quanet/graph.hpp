#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <tuple>
#include <vector>

#include "quanet/grid.hpp"

namespace quanet {

// Reverse-mode autodiff tape. Define-by-run: each op computes its value
// eagerly and, when recording, pushes a backward closure. Templated on the
// scalar so the float32 training path and the float64 shadow path used by
// finite-difference checks run the exact same code.
//
// Shapes are explicit: most ops work on rank-2 [rows x cols] grids; image
// ops work on rank-3 [h x w x c] channels-last grids. No implicit
// broadcasting beyond the dedicated *_rows / *_columns ops.

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

template <typename T>
class Graph {
public:
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapM = Eigen::Map<Mat>;
    using CMapM = Eigen::Map<const Mat>;

    bool recording = true;

    // When set, relu ops append one byte per element:
    // bit0 = input > 0, bit1 = |input| < kink_eps. Used by gradient checks
    // to discard finite-difference probes that straddle a hinge kink.
    std::vector<uint8_t>* relu_trace = nullptr;
    double kink_eps = 1e-4;

    void clear() {
        nodes_.clear();
        tape_.clear();
    }

    size_t size() const { return nodes_.size(); }

    Var input(Grid<T> v, bool needs_grad = false) {
        return make(std::move(v), needs_grad);
    }

    Var constant(Grid<T> v) { return make(std::move(v), false); }

    const Grid<T>& val(Var a) const { return nodes_[a.id].value; }
    Grid<T>& mutable_val(Var a) { return nodes_[a.id].value; }
    const Shape& shape(Var a) const { return nodes_[a.id].value.shape; }
    bool needs_grad(Var a) const { return nodes_[a.id].needs_grad; }

    // Gradient of the last backward() pass; zero grid if untouched.
    const Grid<T>& grad(Var a) {
        ensure_grad(a.id);
        return nodes_[a.id].grad;
    }

    T scalar(Var a) const {
        require_shape(nodes_[a.id].value.numel() == 1, "scalar() on non-scalar var");
        return nodes_[a.id].value.data[0];
    }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        check_same(a, b, "add");
        Grid<T> out = val(a);
        const auto& bv = val(b).data;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv[i];
        Var o = make(std::move(out), needs(a, b));
        if (rec(o)) {
            push([this, a, b, o] {
                const auto& g = grad_of(o);
                if (needs_grad(a)) axpy(a, T(1), g);
                if (needs_grad(b)) axpy(b, T(1), g);
            });
        }
        return o;
    }

    Var sub(Var a, Var b) {
        check_same(a, b, "sub");
        Grid<T> out = val(a);
        const auto& bv = val(b).data;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv[i];
        Var o = make(std::move(out), needs(a, b));
        if (rec(o)) {
            push([this, a, b, o] {
                const auto& g = grad_of(o);
                if (needs_grad(a)) axpy(a, T(1), g);
                if (needs_grad(b)) axpy(b, T(-1), g);
            });
        }
        return o;
    }

    Var mul(Var a, Var b) {
        check_same(a, b, "mul");
        Grid<T> out = val(a);
        const auto& bv = val(b).data;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv[i];
        Var o = make(std::move(out), needs(a, b));
        if (rec(o)) {
            push([this, a, b, o] {
                const auto& g = grad_of(o).data;
                if (needs_grad(a)) {
                    auto& ga = ensure_grad(a.id).data;
                    const auto& bv2 = val(b).data;
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
                }
                if (needs_grad(b)) {
                    auto& gb = ensure_grad(b.id).data;
                    const auto& av = val(a).data;
                    for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                }
            });
        }
        return o;
    }

    Var div(Var a, Var b) {
        check_same(a, b, "div");
        Grid<T> out = val(a);
        const auto& bv = val(b).data;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] /= bv[i];
        Var o = make(std::move(out), needs(a, b));
        if (rec(o)) {
            push([this, a, b, o] {
                const auto& g = grad_of(o).data;
                const auto& av = val(a).data;
                const auto& bv2 = val(b).data;
                if (needs_grad(a)) {
                    auto& ga = ensure_grad(a.id).data;
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv2[i];
                }
                if (needs_grad(b)) {
                    auto& gb = ensure_grad(b.id).data;
                    for (size_t i = 0; i < g.size(); ++i)
                        gb[i] -= g[i] * av[i] / (bv2[i] * bv2[i]);
                }
            });
        }
        return o;
    }

    Var scale(Var a, T c) {
        Grid<T> out = val(a);
        for (T& v : out.data) v *= c;
        Var o = make(std::move(out), needs(a));
        if (rec(o)) {
            push([this, a, c, o] {
                if (needs_grad(a)) axpy(a, c, grad_of(o));
            });
        }
        return o;
    }

    Var add_const(Var a, T c) {
        Grid<T> out = val(a);
        for (T& v : out.data) v += c;
        Var o = make(std::move(out), needs(a));
        if (rec(o)) {
            push([this, a, o] {
                if (needs_grad(a)) axpy(a, T(1), grad_of(o));
            });
        }
        return o;
    }

    Var relu(Var a) {
        const auto& av = val(a).data;
        Grid<T> out = val(a);
        for (T& v : out.data) v = v > T(0) ? v : T(0);
        if (relu_trace) {
            for (T v : av) {
                uint8_t m = (v > T(0)) ? 1 : 0;
                if (std::abs(static_cast<double>(v)) < kink_eps) m |= 2;
                relu_trace->push_back(m);
            }
        }
        Var o = make(std::move(out), needs(a));
        if (rec(o)) {
            push([this, a, o] {
                if (!needs_grad(a)) return;
                const auto& g = grad_of(o).data;
                const auto& av2 = val(a).data;
                auto& ga = ensure_grad(a.id).data;
                // subgradient 0 at exactly 0
                for (size_t i = 0; i < g.size(); ++i)
                    if (av2[i] > T(0)) ga[i] += g[i];
            });
        }
        return o;
    }

    Var gelu(Var a) {
        static const T inv_sqrt2 = T(0.7071067811865475244);
        static const T inv_sqrt2pi = T(0.3989422804014326779);
        Grid<T> out = val(a);
        for (T& v : out.data) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
        Var o = make(std::move(out), needs(a));
        if (rec(o)) {
            push([this, a, o] {
                if (!needs_grad(a)) return;
                const auto& g = grad_of(o).data;
                const auto& x = val(a).data;
                auto& ga = ensure_grad(a.id).data;
                for (size_t i = 0; i < g.size(); ++i) {
                    T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
                    T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
                    ga[i] += g[i] * (cdf + x[i] * pdf);
                }
            });
        }
        return o;
    }

    Var sigmoid(Var a) {
        Grid<T> out = val(a);
        for (T& v : out.data) v = T(1) / (T(1) + std::exp(-v));
        Var o = make(std::move(out), needs(a));
        if (rec(o)) {
            push([this, a, o] {
                if (!needs_grad(a)) return;
                const auto& g = grad_of(o).data;
                const auto& y = val(o).data;
                auto& ga = ensure_grad(a.id).data;
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
            });
        }
        return o;
    }

    // softplus(x) = log(1 + e^x): smooth, strictly positive, gradient sigmoid(x).
    Var softplus(Var a) {
        Grid<T> out = val(a);
        for (T& v : out.data)
            v = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
        Var o = make(std::move(out), needs(a));
        if (rec(o)) {
            push([this, a, o] {
                if (!needs_grad(a)) return;
                const auto& g = grad_of(o).data;
                const auto& x = val(a).data;
                auto& ga = ensure_grad(a.id).data;
                for (size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] / (T(1) + std::exp(-x[i]));
            });
        }
        return o;
    }

    Var exp_op(Var a) {
        Grid<T> out = val(a);
        for (T& v : out.data) v = std::exp(v);
        Var o = make(std::move(out), needs(a));
        if (rec(o)) {
            push([this, a, o] {
                if (!needs_grad(a)) return;
                const auto& g = grad_of(o).data;
                const auto& y = val(o).data;
                auto& ga = ensure_grad(a.id).data;
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
            });
        }
        return o;
    }

    Var log_op(Var a) {
        Grid<T> out = val(a);
        for (T& v : out.data) v = std::log(v);
        Var o = make(std::move(out), needs(a));
        if (rec(o)) {
            push([this, a, o] {
                if (!needs_grad(a)) return;
                const auto& g = grad_of(o).data;
                const auto& x = val(a).data;
                auto& ga = ensure_grad(a.id).data;
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
            });
        }
        return o;
    }

    Var sqrt_op(Var a) {
        Grid<T> out = val(a);
        for (T& v : out.data) v = std::sqrt(v);
        Var o = make(std::move(out), needs(a));
        if (rec(o)) {
            push([this, a, o] {
                if (!needs_grad(a)) return;
                const auto& g = grad_of(o).data;
                const auto& y = val(o).data;
                auto& ga = ensure_grad(a.id).data;
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (T(2) * y[i]);
            });
        }
        return o;
    }

    // ---- matrix ops ----

    Var matmul(Var a, Var b) {
        const auto& A = val(a);
        const auto& B = val(b);
        require_shape(A.shape.rank() == 2 && B.shape.rank() == 2 && A.shape[1] == B.shape[0],
                      "matmul shape mismatch " + A.shape.str() + " x " + B.shape.str());
        int m = A.shape[0], k = A.shape[1], n = B.shape[1];
        Grid<T> out(Shape{m, n});
        MapM(out.data.data(), m, n).noalias() =
            CMapM(A.data.data(), m, k) * CMapM(B.data.data(), k, n);
        Var o = make(std::move(out), needs(a, b));
        if (rec(o)) {
            push([this, a, b, o, m, k, n] {
                CMapM G(grad_of(o).data.data(), m, n);
                if (needs_grad(a)) {
                    MapM GA(ensure_grad(a.id).data.data(), m, k);
                    GA.noalias() += G * CMapM(val(b).data.data(), k, n).transpose();
                }
                if (needs_grad(b)) {
                    MapM GB(ensure_grad(b.id).data.data(), k, n);
                    GB.noalias() += CMapM(val(a).data.data(), m, k).transpose() * G;
                }
            });
        }
        return o;
    }

    // A [m x k] * B^T where B is [n x k]  ->  [m x n]
    Var matmul_nt(Var a, Var b) {
        const auto& A = val(a);
        const auto& B = val(b);
        require_shape(A.shape.rank() == 2 && B.shape.rank() == 2 && A.shape[1] == B.shape[1],
                      "matmul_nt shape mismatch " + A.shape.str() + " x " + B.shape.str());
        int m = A.shape[0], k = A.shape[1], n = B.shape[0];
        Grid<T> out(Shape{m, n});
        MapM(out.data.data(), m, n).noalias() =
            CMapM(A.data.data(), m, k) * CMapM(B.data.data(), n, k).transpose();
        Var o = make(std::move(out), needs(a, b));
        if (rec(o)) {
            push([this, a, b, o, m, k, n] {
                CMapM G(grad_of(o).data.data(), m, n);
                if (needs_grad(a)) {
                    MapM GA(ensure_grad(a.id).data.data(), m, k);
                    GA.noalias() += G * CMapM(val(b).data.data(), n, k);
                }
                if (needs_grad(b)) {
                    MapM GB(ensure_grad(b.id).data.data(), n, k);
                    GB.noalias() += G.transpose() * CMapM(val(a).data.data(), m, k);
                }
            });
        }
        return o;
    }

    Var add_row_bias(Var x, Var b) {
        const auto& X = val(x);
        const auto& B = val(b);
        require_shape(X.shape.rank() == 2 && B.shape.numel() == X.shape[1],
                      "add_row_bias: bias length must equal columns");
        int n = X.shape[0], d = X.shape[1];
        Grid<T> out = X;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) out.data[static_cast<size_t>(i) * d + j] += B.data[j];
        Var o = make(std::move(out), needs(x, b));
        if (rec(o)) {
            push([this, x, b, o, n, d] {
                const auto& g = grad_of(o).data;
                if (needs_grad(x)) axpy(x, T(1), grad_of(o));
                if (needs_grad(b)) {
                    auto& gb = ensure_grad(b.id).data;
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < d; ++j) gb[j] += g[static_cast<size_t>(i) * d + j];
                }
            });
        }
        return o;
    }

    // out[i][j] = X[i][j] * v[j]
    Var mul_columns(Var x, Var v) {
        const auto& X = val(x);
        const auto& V = val(v);
        require_shape(X.shape.rank() == 2 && V.shape.numel() == X.shape[1],
                      "mul_columns: vector length must equal columns");
        int n = X.shape[0], d = X.shape[1];
        Grid<T> out = X;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) out.data[static_cast<size_t>(i) * d + j] *= V.data[j];
        Var o = make(std::move(out), needs(x, v));
        if (rec(o)) {
            push([this, x, v, o, n, d] {
                const auto& g = grad_of(o).data;
                const auto& Xv = val(x).data;
                const auto& Vv = val(v).data;
                if (needs_grad(x)) {
                    auto& gx = ensure_grad(x.id).data;
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < d; ++j) {
                            size_t k = static_cast<size_t>(i) * d + j;
                            gx[k] += g[k] * Vv[j];
                        }
                }
                if (needs_grad(v)) {
                    auto& gv = ensure_grad(v.id).data;
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < d; ++j) {
                            size_t k = static_cast<size_t>(i) * d + j;
                            gv[j] += g[k] * Xv[k];
                        }
                }
            });
        }
        return o;
    }

    // out = s * X, s a scalar var
    Var scale_by(Var x, Var s) {
        require_shape(val(s).numel() == 1, "scale_by: s must be scalar");
        T sv = val(s).data[0];
        Grid<T> out = val(x);
        for (T& v : out.data) v *= sv;
        Var o = make(std::move(out), needs(x, s));
        if (rec(o)) {
            push([this, x, s, o] {
                const auto& g = grad_of(o).data;
                if (needs_grad(x)) axpy(x, val(s).data[0], grad_of(o));
                if (needs_grad(s)) {
                    const auto& Xv = val(x).data;
                    T acc = T(0);
                    for (size_t i = 0; i < g.size(); ++i) acc += g[i] * Xv[i];
                    ensure_grad(s.id).data[0] += acc;
                }
            });
        }
        return o;
    }

    // out = X - s (s scalar var, broadcast)
    Var sub_scalar(Var x, Var s) {
        require_shape(val(s).numel() == 1, "sub_scalar: s must be scalar");
        T sv = val(s).data[0];
        Grid<T> out = val(x);
        for (T& v : out.data) v -= sv;
        Var o = make(std::move(out), needs(x, s));
        if (rec(o)) {
            push([this, x, s, o] {
                const auto& g = grad_of(o).data;
                if (needs_grad(x)) axpy(x, T(1), grad_of(o));
                if (needs_grad(s)) {
                    T acc = T(0);
                    for (T v : g) acc += v;
                    ensure_grad(s.id).data[0] -= acc;
                }
            });
        }
        return o;
    }

    // ---- normalization / reductions ----

    Var softmax_rows(Var x) {
        const auto& X = val(x);
        require_shape(X.shape.rank() == 2, "softmax_rows expects rank-2");
        int n = X.shape[0], m = X.shape[1];
        Grid<T> out(X.shape);
        for (int i = 0; i < n; ++i) {
            const T* xi = &X.data[static_cast<size_t>(i) * m];
            T* yi = &out.data[static_cast<size_t>(i) * m];
            T mx = xi[0];
            for (int j = 1; j < m; ++j) mx = std::max(mx, xi[j]);
            T sum = T(0);
            for (int j = 0; j < m; ++j) {
                yi[j] = std::exp(xi[j] - mx);
                sum += yi[j];
            }
            for (int j = 0; j < m; ++j) yi[j] /= sum;
        }
        Var o = make(std::move(out), needs(x));
        if (rec(o)) {
            push([this, x, o, n, m] {
                if (!needs_grad(x)) return;
                const auto& g = grad_of(o).data;
                const auto& y = val(o).data;
                auto& gx = ensure_grad(x.id).data;
                for (int i = 0; i < n; ++i) {
                    size_t off = static_cast<size_t>(i) * m;
                    T dot = T(0);
                    for (int j = 0; j < m; ++j) dot += g[off + j] * y[off + j];
                    for (int j = 0; j < m; ++j) gx[off + j] += (g[off + j] - dot) * y[off + j];
                }
            });
        }
        return o;
    }

    Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
        const auto& X = val(x);
        require_shape(X.shape.rank() == 2, "layer_norm expects rank-2");
        int n = X.shape[0], d = X.shape[1];
        require_shape(val(gamma).numel() == d && val(beta).numel() == d,
                      "layer_norm: gamma/beta length mismatch");
        Grid<T> out(X.shape);
        Grid<T> xhat(X.shape);
        Grid<T> inv_std(Shape{n});
        const auto& gm = val(gamma).data;
        const auto& bt = val(beta).data;
        for (int i = 0; i < n; ++i) {
            size_t off = static_cast<size_t>(i) * d;
            T mean = T(0);
            for (int j = 0; j < d; ++j) mean += X.data[off + j];
            mean /= T(d);
            T var = T(0);
            for (int j = 0; j < d; ++j) {
                T c = X.data[off + j] - mean;
                var += c * c;
            }
            var /= T(d);
            T is = T(1) / std::sqrt(var + eps);
            inv_std.data[i] = is;
            for (int j = 0; j < d; ++j) {
                T xh = (X.data[off + j] - mean) * is;
                xhat.data[off + j] = xh;
                out.data[off + j] = gm[j] * xh + bt[j];
            }
        }
        Var o = make(std::move(out), needs(x, gamma, beta));
        if (rec(o)) {
            stash(o, std::move(xhat));
            stash(o, std::move(inv_std));
            push([this, x, gamma, beta, o, n, d] {
                const auto& g = grad_of(o).data;
                const auto& xh = aux(o, 0).data;
                const auto& is = aux(o, 1).data;
                const auto& gm = val(gamma).data;
                if (needs_grad(beta)) {
                    auto& gb = ensure_grad(beta.id).data;
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < d; ++j) gb[j] += g[static_cast<size_t>(i) * d + j];
                }
                if (needs_grad(gamma)) {
                    auto& gg = ensure_grad(gamma.id).data;
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < d; ++j) {
                            size_t k = static_cast<size_t>(i) * d + j;
                            gg[j] += g[k] * xh[k];
                        }
                }
                if (needs_grad(x)) {
                    auto& gx = ensure_grad(x.id).data;
                    for (int i = 0; i < n; ++i) {
                        size_t off = static_cast<size_t>(i) * d;
                        T mean_dxh = T(0), mean_dxh_xh = T(0);
                        for (int j = 0; j < d; ++j) {
                            T dxh = g[off + j] * gm[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[off + j];
                        }
                        mean_dxh /= T(d);
                        mean_dxh_xh /= T(d);
                        for (int j = 0; j < d; ++j) {
                            T dxh = g[off + j] * gm[j];
                            gx[off + j] +=
                                (dxh - mean_dxh - xh[off + j] * mean_dxh_xh) * is[i];
                        }
                    }
                }
            });
        }
        return o;
    }

    Var sum_all(Var x) {
        T s = T(0);
        for (T v : val(x).data) s += v;
        Grid<T> out(Shape{1});
        out.data[0] = s;
        Var o = make(std::move(out), needs(x));
        if (rec(o)) {
            push([this, x, o] {
                if (!needs_grad(x)) return;
                T g = grad_of(o).data[0];
                auto& gx = ensure_grad(x.id).data;
                for (T& v : gx) v += g;
            });
        }
        return o;
    }

    Var mean_all(Var x) {
        int64_t n = val(x).numel();
        return scale(sum_all(x), T(1) / T(n));
    }

    // [n x d] -> [d], mean over rows
    Var mean_rows(Var x) {
        const auto& X = val(x);
        require_shape(X.shape.rank() == 2, "mean_rows expects rank-2");
        int n = X.shape[0], d = X.shape[1];
        Grid<T> out(Shape{d});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) out.data[j] += X.data[static_cast<size_t>(i) * d + j];
        for (int j = 0; j < d; ++j) out.data[j] /= T(n);
        Var o = make(std::move(out), needs(x));
        if (rec(o)) {
            push([this, x, o, n, d] {
                if (!needs_grad(x)) return;
                const auto& g = grad_of(o).data;
                auto& gx = ensure_grad(x.id).data;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) gx[static_cast<size_t>(i) * d + j] += g[j] / T(n);
            });
        }
        return o;
    }

    // ---- indexing / structure ----

    Var reshape(Var x, Shape s) {
        require_shape(s.numel() == val(x).numel(), "reshape numel mismatch");
        Grid<T> out;
        out.shape = std::move(s);
        out.data = val(x).data;
        Var o = make(std::move(out), needs(x));
        if (rec(o)) {
            push([this, x, o] {
                if (!needs_grad(x)) return;
                const auto& g = grad_of(o).data;
                auto& gx = ensure_grad(x.id).data;
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            });
        }
        return o;
    }

    Var gather_rows(Var e, std::vector<int> ids) {
        const auto& E = val(e);
        require_shape(E.shape.rank() == 2, "gather_rows expects rank-2 table");
        int d = E.shape[1];
        int k = static_cast<int>(ids.size());
        Grid<T> out(Shape{k, d});
        for (int i = 0; i < k; ++i) {
            require_shape(ids[i] >= 0 && ids[i] < E.shape[0], "gather_rows: id out of range");
            std::copy_n(&E.data[static_cast<size_t>(ids[i]) * d], d,
                        &out.data[static_cast<size_t>(i) * d]);
        }
        Var o = make(std::move(out), needs(e));
        if (rec(o)) {
            push([this, e, o, ids = std::move(ids), d] {
                if (!needs_grad(e)) return;
                const auto& g = grad_of(o).data;
                auto& ge = ensure_grad(e.id).data;
                for (size_t i = 0; i < ids.size(); ++i)
                    for (int j = 0; j < d; ++j)
                        ge[static_cast<size_t>(ids[i]) * d + j] += g[i * d + j];
            });
        }
        return o;
    }

    Var drop_row(Var x, int r) {
        const auto& X = val(x);
        require_shape(X.shape.rank() == 2 && r >= 0 && r < X.shape[0],
                      "drop_row: index out of range");
        int n = X.shape[0], d = X.shape[1];
        Grid<T> out(Shape{n - 1, d});
        for (int i = 0, oi = 0; i < n; ++i) {
            if (i == r) continue;
            std::copy_n(&X.data[static_cast<size_t>(i) * d], d,
                        &out.data[static_cast<size_t>(oi++) * d]);
        }
        Var o = make(std::move(out), needs(x));
        if (rec(o)) {
            push([this, x, o, r, n, d] {
                if (!needs_grad(x)) return;
                const auto& g = grad_of(o).data;
                auto& gx = ensure_grad(x.id).data;
                for (int i = 0, oi = 0; i < n; ++i) {
                    if (i == r) continue;
                    for (int j = 0; j < d; ++j)
                        gx[static_cast<size_t>(i) * d + j] += g[static_cast<size_t>(oi) * d + j];
                    ++oi;
                }
            });
        }
        return o;
    }

    // contiguous slice along dim 0 of a rank-1 or rank-2 grid
    Var slice_rows(Var x, int start, int len) {
        const auto& X = val(x);
        int n = X.shape[0];
        require_shape(start >= 0 && len >= 0 && start + len <= n, "slice_rows out of range");
        int d = X.shape.rank() == 2 ? X.shape[1] : 1;
        Shape os = X.shape.rank() == 2 ? Shape{len, d} : Shape{len};
        Grid<T> out(os);
        std::copy_n(&X.data[static_cast<size_t>(start) * d], static_cast<size_t>(len) * d,
                    out.data.begin());
        Var o = make(std::move(out), needs(x));
        if (rec(o)) {
            push([this, x, o, start, len, d] {
                if (!needs_grad(x)) return;
                const auto& g = grad_of(o).data;
                auto& gx = ensure_grad(x.id).data;
                for (size_t i = 0; i < static_cast<size_t>(len) * d; ++i)
                    gx[static_cast<size_t>(start) * d + i] += g[i];
            });
        }
        return o;
    }

    Var stack_scalars(const std::vector<Var>& xs) {
        int k = static_cast<int>(xs.size());
        Grid<T> out(Shape{k});
        bool ng = false;
        for (int i = 0; i < k; ++i) {
            require_shape(val(xs[i]).numel() == 1, "stack_scalars: non-scalar element");
            out.data[i] = val(xs[i]).data[0];
            ng = ng || needs_grad(xs[i]);
        }
        Var o = make(std::move(out), ng);
        if (rec(o)) {
            push([this, xs, o] {
                const auto& g = grad_of(o).data;
                for (size_t i = 0; i < xs.size(); ++i)
                    if (needs_grad(xs[i])) ensure_grad(xs[i].id).data[0] += g[i];
            });
        }
        return o;
    }

    Var pick(Var x, int i) {
        const auto& X = val(x);
        require_shape(i >= 0 && i < X.numel(), "pick: index out of range");
        Grid<T> out(Shape{1});
        out.data[0] = X.data[i];
        Var o = make(std::move(out), needs(x));
        if (rec(o)) {
            push([this, x, o, i] {
                if (needs_grad(x)) ensure_grad(x.id).data[i] += grad_of(o).data[0];
            });
        }
        return o;
    }

    // out[i] = x[perm[i]]
    Var permute(Var x, std::vector<int> perm) {
        const auto& X = val(x);
        require_shape(X.shape.rank() == 1 && static_cast<int64_t>(perm.size()) == X.numel(),
                      "permute: rank-1 with matching permutation required");
        Grid<T> out(X.shape);
        for (size_t i = 0; i < perm.size(); ++i) out.data[i] = X.data[perm[i]];
        Var o = make(std::move(out), needs(x));
        if (rec(o)) {
            push([this, x, o, perm = std::move(perm)] {
                if (!needs_grad(x)) return;
                const auto& g = grad_of(o).data;
                auto& gx = ensure_grad(x.id).data;
                for (size_t i = 0; i < perm.size(); ++i) gx[perm[i]] += g[i];
            });
        }
        return o;
    }

    // [H x W] -> [g*g] sums over non-overlapping (H/g x W/g) patches,
    // row-major patch order.
    Var patch_sums(Var x, int g_side) {
        const auto& X = val(x);
        require_shape(X.shape.rank() == 2, "patch_sums expects rank-2 map");
        int H = X.shape[0], W = X.shape[1];
        require_shape(H % g_side == 0 && W % g_side == 0,
                      "patch_sums: map " + X.shape.str() + " not divisible into " +
                          std::to_string(g_side) + "x" + std::to_string(g_side) + " patches");
        int ph = H / g_side, pw = W / g_side;
        Grid<T> out(Shape{g_side * g_side});
        for (int y = 0; y < H; ++y)
            for (int x2 = 0; x2 < W; ++x2)
                out.data[(y / ph) * g_side + (x2 / pw)] += X.data[static_cast<size_t>(y) * W + x2];
        Var o = make(std::move(out), needs(x));
        if (rec(o)) {
            push([this, x, o, H, W, ph, pw, g_side] {
                if (!needs_grad(x)) return;
                const auto& g = grad_of(o).data;
                auto& gx = ensure_grad(x.id).data;
                for (int y = 0; y < H; ++y)
                    for (int x2 = 0; x2 < W; ++x2)
                        gx[static_cast<size_t>(y) * W + x2] +=
                            g[(y / ph) * g_side + (x2 / pw)];
            });
        }
        return o;
    }

    // ---- attention ----

    // Q [n x d], K [m x d], V [m x d]; d split into `heads` groups.
    Var attention(Var q, Var k, Var v, int heads) {
        const auto& Q = val(q);
        const auto& K = val(k);
        const auto& V = val(v);
        require_shape(Q.shape.rank() == 2 && K.shape.rank() == 2 && V.shape.rank() == 2,
                      "attention expects rank-2 inputs");
        int n = Q.shape[0], d = Q.shape[1], m = K.shape[0];
        require_shape(K.shape[1] == d && V.shape[0] == m && V.shape[1] == d,
                      "attention shape mismatch");
        require_shape(d % heads == 0, "attention: dim not divisible by heads");
        int dh = d / heads;
        T scale_f = T(1) / std::sqrt(T(dh));

        Grid<T> out(Shape{n, d});
        Grid<T> probs(Shape{heads, n, m});
        CMapM Qm(Q.data.data(), n, d), Km(K.data.data(), m, d), Vm(V.data.data(), m, d);
        MapM Om(out.data.data(), n, d);
        for (int h = 0; h < heads; ++h) {
            Mat S = scale_f * (Qm.block(0, h * dh, n, dh) *
                               Km.block(0, h * dh, m, dh).transpose());
            // rowwise softmax
            MapM P(&probs.data[static_cast<size_t>(h) * n * m], n, m);
            for (int i = 0; i < n; ++i) {
                T mx = S.row(i).maxCoeff();
                P.row(i) = (S.row(i).array() - mx).exp();
                P.row(i) /= P.row(i).sum();
            }
            Om.block(0, h * dh, n, dh).noalias() = P * Vm.block(0, h * dh, m, dh);
        }
        Var o = make(std::move(out), needs(q, k, v));
        if (rec(o)) {
            stash(o, std::move(probs));
            push([this, q, k, v, o, n, m, d, dh, heads, scale_f] {
                CMapM G(grad_of(o).data.data(), n, d);
                const auto& probs2 = aux(o, 0);
                CMapM Qm2(val(q).data.data(), n, d);
                CMapM Km2(val(k).data.data(), m, d);
                CMapM Vm2(val(v).data.data(), m, d);
                bool nq = needs_grad(q), nk = needs_grad(k), nv = needs_grad(v);
                for (int h = 0; h < heads; ++h) {
                    CMapM P(&probs2.data[static_cast<size_t>(h) * n * m], n, m);
                    auto Gh = G.block(0, h * dh, n, dh);
                    if (nv) {
                        MapM GV(ensure_grad(v.id).data.data(), m, d);
                        GV.block(0, h * dh, m, dh).noalias() += P.transpose() * Gh;
                    }
                    if (nq || nk) {
                        Mat dP = Gh * Vm2.block(0, h * dh, m, dh).transpose();
                        Mat dS(n, m);
                        for (int i = 0; i < n; ++i) {
                            T dot = dP.row(i).cwiseProduct(P.row(i)).sum();
                            dS.row(i) = (dP.row(i).array() - dot) * P.row(i).array();
                        }
                        dS *= scale_f;
                        if (nq) {
                            MapM GQ(ensure_grad(q.id).data.data(), n, d);
                            GQ.block(0, h * dh, n, dh).noalias() +=
                                dS * Km2.block(0, h * dh, m, dh);
                        }
                        if (nk) {
                            MapM GK(ensure_grad(k.id).data.data(), m, d);
                            GK.block(0, h * dh, m, dh).noalias() +=
                                dS.transpose() * Qm2.block(0, h * dh, n, dh);
                        }
                    }
                }
            });
        }
        return o;
    }

    // ---- image ops (channels-last [h x w x c]) ----

    // 3x3 same-padding convolution. W is [(9*cin) x cout], column layout
    // ((ky*3+kx)*cin + c).
    Var conv3x3(Var x, Var w, Var b) {
        const auto& X = val(x);
        const auto& W = val(w);
        require_shape(X.shape.rank() == 3, "conv3x3 expects [h x w x c] input");
        int h = X.shape[0], wd = X.shape[1], cin = X.shape[2];
        require_shape(W.shape.rank() == 2 && W.shape[0] == 9 * cin,
                      "conv3x3 kernel rows must be 9*cin");
        int cout = W.shape[1];
        require_shape(val(b).numel() == cout, "conv3x3 bias size mismatch");

        Grid<T> cols = im2col3x3(X, h, wd, cin);
        Grid<T> out(Shape{h, wd, cout});
        MapM(out.data.data(), h * wd, cout).noalias() =
            CMapM(cols.data.data(), h * wd, 9 * cin) * CMapM(W.data.data(), 9 * cin, cout);
        const auto& bv = val(b).data;
        for (int p = 0; p < h * wd; ++p)
            for (int c = 0; c < cout; ++c) out.data[static_cast<size_t>(p) * cout + c] += bv[c];

        Var o = make(std::move(out), needs(x, w, b));
        if (rec(o)) {
            push([this, x, w, b, o, h, wd, cin, cout] {
                const auto& G = grad_of(o);
                CMapM Gm(G.data.data(), h * wd, cout);
                if (needs_grad(b)) {
                    auto& gb = ensure_grad(b.id).data;
                    for (int p = 0; p < h * wd; ++p)
                        for (int c = 0; c < cout; ++c)
                            gb[c] += G.data[static_cast<size_t>(p) * cout + c];
                }
                if (needs_grad(w)) {
                    Grid<T> cols = im2col3x3(val(x), h, wd, cin);
                    MapM GW(ensure_grad(w.id).data.data(), 9 * cin, cout);
                    GW.noalias() += CMapM(cols.data.data(), h * wd, 9 * cin).transpose() * Gm;
                }
                if (needs_grad(x)) {
                    Mat gcols = Gm * CMapM(val(w).data.data(), 9 * cin, cout).transpose();
                    auto& gx = ensure_grad(x.id).data;
                    for (int y = 0; y < h; ++y)
                        for (int x2 = 0; x2 < wd; ++x2) {
                            int p = y * wd + x2;
                            for (int ky = -1; ky <= 1; ++ky)
                                for (int kx = -1; kx <= 1; ++kx) {
                                    int yy = y + ky, xx = x2 + kx;
                                    if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                                    int colbase = ((ky + 1) * 3 + (kx + 1)) * cin;
                                    size_t xbase =
                                        (static_cast<size_t>(yy) * wd + xx) * cin;
                                    for (int c = 0; c < cin; ++c)
                                        gx[xbase + c] += gcols(p, colbase + c);
                                }
                        }
                }
            });
        }
        return o;
    }

    // x2 bilinear upsampling (align_corners = false)
    Var upsample2x(Var x) {
        const auto& X = val(x);
        require_shape(X.shape.rank() == 3, "upsample2x expects [h x w x c]");
        int h = X.shape[0], w = X.shape[1], c = X.shape[2];
        int oh = 2 * h, ow = 2 * w;
        auto taps = [](int oi, int n) {
            double src = (oi + 0.5) / 2.0 - 0.5;
            int i0 = static_cast<int>(std::floor(src));
            double f = src - i0;
            int a = std::clamp(i0, 0, n - 1);
            int b = std::clamp(i0 + 1, 0, n - 1);
            return std::tuple<int, int, double>(a, b, f);
        };
        Grid<T> out(Shape{oh, ow, c});
        for (int y = 0; y < oh; ++y) {
            auto [y0, y1, fy] = taps(y, h);
            for (int x2 = 0; x2 < ow; ++x2) {
                auto [x0, x1, fx] = taps(x2, w);
                for (int ch = 0; ch < c; ++ch) {
                    double v = (1 - fy) * (1 - fx) * X.at(y0, x0, ch) +
                               (1 - fy) * fx * X.at(y0, x1, ch) +
                               fy * (1 - fx) * X.at(y1, x0, ch) + fy * fx * X.at(y1, x1, ch);
                    out.at(y, x2, ch) = static_cast<T>(v);
                }
            }
        }
        Var o = make(std::move(out), needs(x));
        if (rec(o)) {
            push([this, x, o, h, w, c, oh, ow, taps] {
                if (!needs_grad(x)) return;
                const auto& g = grad_of(o);
                auto& gx = ensure_grad(x.id);
                for (int y = 0; y < oh; ++y) {
                    auto [y0, y1, fy] = taps(y, h);
                    for (int x2 = 0; x2 < ow; ++x2) {
                        auto [x0, x1, fx] = taps(x2, w);
                        for (int ch = 0; ch < c; ++ch) {
                            T gv = g.at(y, x2, ch);
                            gx.at(y0, x0, ch) += static_cast<T>((1 - fy) * (1 - fx)) * gv;
                            gx.at(y0, x1, ch) += static_cast<T>((1 - fy) * fx) * gv;
                            gx.at(y1, x0, ch) += static_cast<T>(fy * (1 - fx)) * gv;
                            gx.at(y1, x1, ch) += static_cast<T>(fy * fx) * gv;
                        }
                    }
                }
            });
        }
        return o;
    }

    // ---- backward ----

    void backward(Var root, T seed = T(1)) {
        require_shape(val(root).numel() == 1, "backward root must be scalar");
        ensure_grad(root.id).data[0] = seed;
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    }

private:
    struct Node {
        Grid<T> value;
        Grid<T> grad;
        bool needs_grad = false;
        std::vector<Grid<T>> aux;
    };

    std::vector<Node> nodes_;
    std::vector<std::function<void()>> tape_;

    Var make(Grid<T> v, bool needs_grad) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = needs_grad && recording;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    bool needs(Var a) const { return nodes_[a.id].needs_grad; }
    bool needs(Var a, Var b) const { return needs(a) || needs(b); }
    bool needs(Var a, Var b, Var c) const { return needs(a) || needs(b) || needs(c); }

    bool rec(Var o) const { return recording && nodes_[o.id].needs_grad; }

    void push(std::function<void()> f) { tape_.push_back(std::move(f)); }

    Grid<T>& ensure_grad(int id) {
        Node& n = nodes_[id];
        if (n.grad.data.empty()) n.grad = Grid<T>(n.value.shape);
        return n.grad;
    }

    const Grid<T>& grad_of(Var a) { return ensure_grad(a.id); }

    void stash(Var o, Grid<T> g) { nodes_[o.id].aux.push_back(std::move(g)); }
    const Grid<T>& aux(Var o, int i) const { return nodes_[o.id].aux[i]; }

    void axpy(Var dst, T a, const Grid<T>& g) {
        auto& d = ensure_grad(dst.id).data;
        for (size_t i = 0; i < d.size(); ++i) d[i] += a * g.data[i];
    }

    void check_same(Var a, Var b, const char* op) const {
        require_shape(val(a).shape == val(b).shape,
                      std::string(op) + ": shape mismatch " + val(a).shape.str() + " vs " +
                          val(b).shape.str());
    }

    static Grid<T> im2col3x3(const Grid<T>& X, int h, int w, int cin) {
        Grid<T> cols(Shape{h * w, 9 * cin});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                size_t row = (static_cast<size_t>(y) * w + x) * 9 * cin;
                for (int ky = -1; ky <= 1; ++ky)
                    for (int kx = -1; kx <= 1; ++kx) {
                        int yy = y + ky, xx = x + kx;
                        size_t col = row + ((ky + 1) * 3 + (kx + 1)) * cin;
                        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;  // zero pad
                        std::copy_n(&X.data[(static_cast<size_t>(yy) * w + xx) * cin], cin,
                                    &cols.data[col]);
                    }
            }
        return cols;
    }
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace quanet
