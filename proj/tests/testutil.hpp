#pragma once

// Shared helpers for the test binaries: randomized grids and a central
// finite-difference gradient checker with relu-kink exclusion.

#include <functional>

#include "doctest.h"
#include "quanet/graph.hpp"
#include "quanet/rng.hpp"

namespace testutil {

using quanet::Grid;
using quanet::GridD;
using quanet::Graph;
using quanet::Rng;
using quanet::Shape;
using quanet::Var;

inline GridD random_grid(Shape s, Rng& rng, double scale = 1.0) {
    GridD g(std::move(s));
    for (double& v : g.data) v = rng.normal() * scale;
    return g;
}

inline GridD positive_grid(Shape s, Rng& rng) {
    GridD g(std::move(s));
    for (double& v : g.data) v = 0.2 + rng.uniform();
    return g;
}

// Reduce an arbitrary output to a scalar with fixed random weights so the
// upstream gradient is non-uniform.
inline Var weighted_sum(Graph<double>& g, Var x, uint64_t seed = 99) {
    Rng rng(seed, "ws");
    GridD w(g.shape(x));
    for (double& v : w.data) v = rng.normal();
    return g.sum_all(g.mul(x, g.constant(std::move(w))));
}

using Builder = std::function<Var(Graph<double>&, std::vector<Var>&)>;

struct FdReport {
    int checked = 0;
    int skipped = 0;
    double max_rel = 0.0;
};

// Central-difference check of d loss / d inputs against the tape's
// gradients. Probes whose two evaluations disagree on any relu activation
// pattern (or touch a relu argument within kink_eps of zero) are discarded:
// the loss is not differentiable there.
inline FdReport fd_check(const Builder& build, const std::vector<GridD>& inputs,
                         double tol = 1e-5, double h = 1e-5, int max_coords = 48,
                         uint64_t seed = 1234, double kink_eps = 1e-4) {
    Graph<double> g;
    g.kink_eps = kink_eps;
    std::vector<Var> vars;
    for (const auto& in : inputs) vars.push_back(g.input(in, true));
    Var loss = build(g, vars);
    REQUIRE(g.val(loss).numel() == 1);
    g.backward(loss);
    std::vector<GridD> analytic;
    for (Var v : vars) analytic.push_back(g.grad(v));

    auto eval = [&](const std::vector<GridD>& xs, std::vector<uint8_t>* trace) {
        Graph<double> g2;
        g2.recording = false;
        g2.relu_trace = trace;
        g2.kink_eps = kink_eps;
        std::vector<Var> vs;
        for (const auto& x : xs) vs.push_back(g2.input(x, false));
        return g2.scalar(build(g2, vs));
    };

    Rng rng(seed);
    FdReport rep;
    for (size_t i = 0; i < inputs.size(); ++i) {
        int64_t n = inputs[i].numel();
        int ncheck = static_cast<int>(std::min<int64_t>(max_coords, n));
        for (int t = 0; t < ncheck; ++t) {
            int64_t j = (n <= max_coords) ? t : rng.uniform_int(0, n - 1);
            std::vector<GridD> xs = inputs;
            std::vector<uint8_t> trace_p, trace_m;
            xs[i].data[j] = inputs[i].data[j] + h;
            double fp = eval(xs, &trace_p);
            xs[i].data[j] = inputs[i].data[j] - h;
            double fm = eval(xs, &trace_m);

            bool kink = trace_p.size() != trace_m.size();
            if (!kink) {
                for (size_t q = 0; q < trace_p.size(); ++q) {
                    if (trace_p[q] != trace_m[q] || (trace_p[q] & 2)) {
                        kink = true;
                        break;
                    }
                }
            }
            if (kink) {
                ++rep.skipped;
                continue;
            }
            double fd = (fp - fm) / (2 * h);
            double an = analytic[i].data[j];
            double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
            rep.max_rel = std::max(rep.max_rel, rel);
            ++rep.checked;
            if (rel > tol) {
                CAPTURE(i);
                CAPTURE(j);
                CAPTURE(fd);
                CAPTURE(an);
                CHECK(rel <= tol);
            }
        }
    }
    CHECK(rep.checked > 0);
    return rep;
}

}  // namespace testutil
