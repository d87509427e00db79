#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <vector>

#include "quanet/graph.hpp"

namespace quanet {

struct LossConfig {
    double mu = 0.1;        // weight on alignment + ranking
    int patch_grid = 256;   // patches for the ranking loss (perfect square)
    int rank_interval = 5;  // l: gap between compared ranks

    void validate() const {
        require(mu >= 0, "loss weight mu must be >= 0");
        int r = static_cast<int>(std::lround(std::sqrt(double(patch_grid))));
        require(r * r == patch_grid, "patch_grid must be a perfect square");
        require(rank_interval >= 1 && rank_interval < patch_grid,
                "rank_interval must satisfy 1 <= l < patch_grid");
    }
};

// Squared error summed over pixels for each provided map. Absent streams
// simply contribute no term, so single-stream variants reduce to two terms.
template <typename T>
Var counting_loss(Graph<T>& g, Var d_final, std::optional<Var> d_cnn,
                  std::optional<Var> d_trans, Var d_gt) {
    auto term = [&](Var pred) {
        Var diff = g.sub(pred, d_gt);
        return g.sum_all(g.mul(diff, diff));
    };
    Var total = term(d_final);
    if (d_cnn) total = g.add(total, term(*d_cnn));
    if (d_trans) total = g.add(total, term(*d_trans));
    return total;
}

struct AlignTerms {
    bool first = true;   // factual above every counterfactual
    bool second = true;  // within each half, similarity rises toward the factual count
};

// Margin alignment over the similarity set. s_n follows the prompt-set
// order: lower half then upper half, each by descending distance from the
// factual count.
template <typename T>
Var alignment_loss(Graph<T>& g, Var s_p, const std::vector<Var>& s_n,
                   AlignTerms terms = {}) {
    const int n = static_cast<int>(s_n.size());
    require(n >= 4 && n % 2 == 0,
            "alignment loss needs an even number (>= 4) of counterfactual similarities, got " +
                std::to_string(n));
    Var sn = g.stack_scalars(s_n);  // [n], prompt-set order
    std::optional<Var> total;
    auto accumulate = [&](Var t) { total = total ? g.add(*total, t) : t; };

    if (terms.first) {
        Var viol = g.sum_all(g.relu(g.sub_scalar(sn, s_p)));
        accumulate(g.scale(viol, T(1) / T(n)));
    }
    if (terms.second) {
        const int half = n / 2;
        // within each half, s must be non-decreasing toward the closer count
        auto half_viol = [&](int off) {
            Var prev = g.slice_rows(sn, off, half - 1);
            Var next = g.slice_rows(sn, off + 1, half - 1);
            return g.sum_all(g.relu(g.sub(prev, next)));
        };
        accumulate(g.scale(g.add(half_viol(0), half_viol(half)), T(1) / T(n - 2)));
    }
    if (!total) {
        Grid<T> zero(Shape{1});
        return g.constant(std::move(zero));
    }
    return *total;
}

// InfoNCE over the factual similarity against the counterfactuals
// (comparison variant for the margin alignment).
template <typename T>
Var vtc_loss(Graph<T>& g, Var s_p, const std::vector<Var>& s_n, double tau = 0.1) {
    require(!s_n.empty(), "vtc loss needs at least one negative");
    std::vector<Var> all{s_p};
    all.insert(all.end(), s_n.begin(), s_n.end());
    Var x = g.scale(g.stack_scalars(all), T(1.0 / tau));
    T mx = *std::max_element(g.val(x).data.begin(), g.val(x).data.end());
    Var lse = g.add_const(g.log_op(g.sum_all(g.exp_op(g.add_const(x, -mx)))), mx);
    return g.sub(lse, g.pick(x, 0));
}

// Per-patch sums of both streams, both permuted by descending ground-truth
// patch count (stable tie-break on row-major patch index).
template <typename T>
struct PatchVectors {
    std::optional<Var> v_cnn;
    std::optional<Var> v_trans;
    std::vector<int> gt_order;
};

template <typename T>
std::vector<int> gt_patch_order(const Grid<T>& d_gt, int patch_grid) {
    int r = static_cast<int>(std::lround(std::sqrt(double(patch_grid))));
    require(r * r == patch_grid, "patch_grid must be a perfect square");
    require_shape(d_gt.shape.rank() == 2 && d_gt.shape[0] % r == 0 && d_gt.shape[1] % r == 0,
                  "density map " + d_gt.shape.str() + " not divisible into " +
                      std::to_string(patch_grid) + " patches");
    int ph = d_gt.shape[0] / r, pw = d_gt.shape[1] / r;
    std::vector<T> sums(patch_grid, T(0));
    for (int y = 0; y < d_gt.shape[0]; ++y)
        for (int x = 0; x < d_gt.shape[1]; ++x)
            sums[(y / ph) * r + (x / pw)] += d_gt.at(y, x);
    std::vector<int> order(patch_grid);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return sums[a] > sums[b]; });
    return order;
}

template <typename T>
PatchVectors<T> build_patch_vectors(Graph<T>& g, std::optional<Var> d_cnn,
                                    std::optional<Var> d_trans, const Grid<T>& d_gt,
                                    const LossConfig& cfg) {
    PatchVectors<T> out;
    out.gt_order = gt_patch_order(d_gt, cfg.patch_grid);
    int r = static_cast<int>(std::lround(std::sqrt(double(cfg.patch_grid))));
    if (d_cnn) out.v_cnn = g.permute(g.patch_sums(*d_cnn, r), out.gt_order);
    if (d_trans) out.v_trans = g.permute(g.patch_sums(*d_trans, r), out.gt_order);
    return out;
}

struct RankTerms {
    bool within = true;
    bool cross = true;
};

// Hinge ranking over GT-ordered patch vectors: entries l apart must not
// invert, within each stream and across streams.
template <typename T>
Var ranking_loss(Graph<T>& g, const PatchVectors<T>& v, const LossConfig& cfg,
                 RankTerms terms = {}) {
    require(v.v_cnn || v.v_trans, "ranking loss needs at least one stream vector");
    const int n = cfg.patch_grid, l = cfg.rank_interval;
    require(n > l, "ranking loss requires patch_grid > rank_interval");
    const bool dual = v.v_cnn && v.v_trans;
    // sum over m of relu(hi[m+l] - lo[m]), vectorized over m
    auto hinge_sum = [&](Var hi, Var lo) {
        Var later = g.slice_rows(hi, l, n - l);
        Var earlier = g.slice_rows(lo, 0, n - l);
        return g.sum_all(g.relu(g.sub(later, earlier)));
    };
    std::optional<Var> sum;
    auto accumulate = [&](Var t) { sum = sum ? g.add(*sum, t) : t; };
    if (dual && terms.cross) {
        accumulate(hinge_sum(*v.v_cnn, *v.v_trans));
        accumulate(hinge_sum(*v.v_trans, *v.v_cnn));
    }
    if (terms.within) {
        if (v.v_trans) accumulate(hinge_sum(*v.v_trans, *v.v_trans));
        if (v.v_cnn) accumulate(hinge_sum(*v.v_cnn, *v.v_cnn));
    }
    if (!sum) {
        Grid<T> zero(Shape{1});
        return g.constant(std::move(zero));
    }
    return g.scale(*sum, T(1) / T(n - l));
}

// L = L_count + mu * (L_align + L_rank); absent parts contribute zero.
template <typename T>
Var total_loss(Graph<T>& g, Var l_count, std::optional<Var> l_align,
               std::optional<Var> l_rank, double mu) {
    Var total = l_count;
    std::optional<Var> extra;
    if (l_align) extra = *l_align;
    if (l_rank) extra = extra ? g.add(*extra, *l_rank) : *l_rank;
    if (extra && mu != 0.0) total = g.add(total, g.scale(*extra, T(mu)));
    return total;
}

}  // namespace quanet
