#pragma once

// Independent reference implementations used to cross-check the production
// code. Deliberately naive: plain scalar loops, no shared helpers with the
// library, so a bug would have to be made twice to slip through.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "quanet/grid.hpp"
#include "quanet/nn.hpp"

namespace oracle {

using quanet::GridD;

inline double sq_err_sum(const GridD& pred, const GridD& gt) {
    double s = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        double d = pred.data[i] - gt.data[i];
        s += d * d;
    }
    return s;
}

inline double counting(const GridD& d_final, const GridD* d_cnn, const GridD* d_trans,
                       const GridD& gt) {
    double s = sq_err_sum(d_final, gt);
    if (d_cnn) s += sq_err_sum(*d_cnn, gt);
    if (d_trans) s += sq_err_sum(*d_trans, gt);
    return s;
}

inline double hinge(double x) { return x > 0.0 ? x : 0.0; }

inline double alignment(double sp, const std::vector<double>& sn, bool first = true,
                        bool second = true) {
    const int n = static_cast<int>(sn.size());
    double total = 0.0;
    if (first) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += hinge(sn[i] - sp);
        total += s / n;
    }
    if (second) {
        const int half = n / 2;
        double s = 0.0;
        for (int i = 0; i + 1 < half; ++i) {
            s += hinge(sn[i] - sn[i + 1]);
            s += hinge(sn[half + i] - sn[half + i + 1]);
        }
        total += s / (n - 2);
    }
    return total;
}

inline double ranking(const std::vector<double>& vc, const std::vector<double>& vt, int l,
                      bool within = true, bool cross = true) {
    const int n = static_cast<int>(vc.size());
    double s = 0.0;
    for (int m = 0; m + l < n; ++m) {
        if (cross) {
            s += hinge(vc[m + l] - vt[m]);
            s += hinge(vt[m + l] - vc[m]);
        }
        if (within) {
            s += hinge(vt[m + l] - vt[m]);
            s += hinge(vc[m + l] - vc[m]);
        }
    }
    return s / (n - l);
}

inline double ranking_single(const std::vector<double>& v, int l) {
    const int n = static_cast<int>(v.size());
    double s = 0.0;
    for (int m = 0; m + l < n; ++m) s += hinge(v[m + l] - v[m]);
    return s / (n - l);
}

// per-image GAME contribution with floor-boundary regions
inline double game_image(const GridD& pred, const GridD& gt, int level) {
    const int H = pred.shape[0], W = pred.shape[1];
    const int side = 1 << level;
    double err = 0.0;
    for (int ry = 0; ry < side; ++ry)
        for (int rx = 0; rx < side; ++rx) {
            int y0 = static_cast<int>(static_cast<int64_t>(ry) * H / side);
            int y1 = static_cast<int>(static_cast<int64_t>(ry + 1) * H / side);
            int x0 = static_cast<int>(static_cast<int64_t>(rx) * W / side);
            int x1 = static_cast<int>(static_cast<int64_t>(rx + 1) * W / side);
            double ps = 0.0, gs = 0.0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    ps += pred.at(y, x);
                    gs += gt.at(y, x);
                }
            err += std::abs(ps - gs);
        }
    return err;
}

inline std::vector<double> patch_sums(const GridD& map, int r) {
    const int H = map.shape[0], W = map.shape[1];
    const int ph = H / r, pw = W / r;
    std::vector<double> sums(static_cast<size_t>(r) * r, 0.0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) sums[(y / ph) * r + (x / pw)] += map.at(y, x);
    return sums;
}

inline std::vector<int> descending_order(const std::vector<double>& v) {
    std::vector<int> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] > v[b]; });
    return idx;
}

// ---- scalar-loop network pieces (for adapter/attention cross-checks) ----

struct Mat {
    int rows = 0, cols = 0;
    std::vector<double> v;
    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
};

inline Mat from_grid(const GridD& g, int rows, int cols) {
    Mat m(rows, cols);
    m.v = g.data;
    return m;
}

// y = x * W + b with W [in x out]
inline Mat linear_ref(const Mat& x, const GridD& w, const GridD& b) {
    const int in = w.shape[0], out = w.shape[1];
    Mat y(x.rows, out);
    for (int i = 0; i < x.rows; ++i)
        for (int o = 0; o < out; ++o) {
            double s = b.data[o];
            for (int k = 0; k < in; ++k) s += x.at(i, k) * w.data[static_cast<size_t>(k) * out + o];
            y.at(i, o) = s;
        }
    return y;
}

inline Mat attention_ref(const Mat& q, const Mat& k, const Mat& v, int heads) {
    const int n = q.rows, m = k.rows, d = q.cols, dh = d / heads;
    Mat out(n, d);
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < n; ++i) {
            std::vector<double> s(m, 0.0);
            double mx = -1e300;
            for (int j = 0; j < m; ++j) {
                for (int c = 0; c < dh; ++c) s[j] += q.at(i, h * dh + c) * k.at(j, h * dh + c);
                s[j] /= std::sqrt(static_cast<double>(dh));
                mx = std::max(mx, s[j]);
            }
            double z = 0.0;
            for (int j = 0; j < m; ++j) z += std::exp(s[j] - mx);
            for (int c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (int j = 0; j < m; ++j)
                    acc += std::exp(s[j] - mx) / z * v.at(j, h * dh + c);
                out.at(i, h * dh + c) = acc;
            }
        }
    return out;
}

inline Mat layer_norm_ref(const Mat& x, const GridD& gamma, const GridD& beta,
                          double eps = 1e-5) {
    Mat y(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        double mean = 0.0;
        for (int j = 0; j < x.cols; ++j) mean += x.at(i, j);
        mean /= x.cols;
        double var = 0.0;
        for (int j = 0; j < x.cols; ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
        var /= x.cols;
        for (int j = 0; j < x.cols; ++j)
            y.at(i, j) = gamma.data[j] * (x.at(i, j) - mean) / std::sqrt(var + eps) +
                         beta.data[j];
    }
    return y;
}

inline double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Transformer->CNN adapter reference: CE channel weights from pooled tokens,
// CA cross-attention with CNN pixels as queries, summed. Parameter names
// mirror the production layout for stage `stage`.
inline GridD t2c_reference(quanet::ParamStore<double>& ps, int stage, const GridD& f_cnn,
                           const GridD& f_trans, int heads, bool ce_on = true,
                           bool ca_on = true) {
    const int h = f_cnn.shape[0], w = f_cnn.shape[1], ch = f_cnn.shape[2];
    const int hw = h * w;
    const int P = f_trans.shape[0], d = f_trans.shape[1];
    const std::string p = "t2c.stage" + std::to_string(stage);
    Mat flat = from_grid(f_cnn, hw, ch);
    Mat tok = from_grid(f_trans, P, d);

    Mat total(hw, ch);
    if (ca_on) {
        Mat q = linear_ref(flat, ps.entry(p + ".ca.q.w").value, ps.entry(p + ".ca.q.b").value);
        Mat k = linear_ref(tok, ps.entry(p + ".ca.k.w").value, ps.entry(p + ".ca.k.b").value);
        Mat v = linear_ref(tok, ps.entry(p + ".ca.v.w").value, ps.entry(p + ".ca.v.b").value);
        Mat a = attention_ref(q, k, v, heads);
        a = linear_ref(a, ps.entry(p + ".ca.o.w").value, ps.entry(p + ".ca.o.b").value);
        Mat m = layer_norm_ref(a, ps.entry(p + ".ca.ln.gamma").value,
                               ps.entry(p + ".ca.ln.beta").value);
        m = linear_ref(m, ps.entry(p + ".ca.mlp.fc1.w").value,
                       ps.entry(p + ".ca.mlp.fc1.b").value);
        for (double& x : m.v) x = gelu_ref(x);
        m = linear_ref(m, ps.entry(p + ".ca.mlp.fc2.w").value,
                       ps.entry(p + ".ca.mlp.fc2.b").value);
        for (int i = 0; i < hw; ++i)
            for (int c = 0; c < ch; ++c) total.at(i, c) += a.at(i, c) + m.at(i, c);
    }
    if (ce_on) {
        Mat pooled(1, d);
        for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int i = 0; i < P; ++i) s += tok.at(i, j);
            pooled.at(0, j) = s / P;
        }
        Mat e = linear_ref(pooled, ps.entry(p + ".ce.fc1.w").value,
                           ps.entry(p + ".ce.fc1.b").value);
        for (double& x : e.v) x = std::max(0.0, x);
        e = linear_ref(e, ps.entry(p + ".ce.fc2.w").value, ps.entry(p + ".ce.fc2.b").value);
        for (int c = 0; c < ch; ++c) {
            double wgt = 1.0 / (1.0 + std::exp(-e.at(0, c)));
            for (int i = 0; i < hw; ++i) total.at(i, c) += flat.at(i, c) * wgt;
        }
    }
    GridD out(f_cnn.shape);
    out.data = total.v;
    return out;
}

}  // namespace oracle
