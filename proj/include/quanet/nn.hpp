#pragma once

#include <map>
#include <string>

#include "quanet/graph.hpp"
#include "quanet/rng.hpp"

namespace quanet {

// Parameter initialization. Normal draws are seeded from (seed, param name),
// so adding or removing one parameter never shifts the init of the others.
struct Init {
    enum Kind { Zeros, Ones, Normal, Constant } kind = Zeros;
    double std = 0.0;  // Normal: stddev; Constant: the fill value

    static Init zeros() { return {Zeros, 0.0}; }
    static Init ones() { return {Ones, 0.0}; }
    static Init normal(double std) { return {Normal, std}; }
    static Init fan_in(int64_t fan) { return {Normal, 1.0 / std::sqrt(double(fan))}; }
    static Init constant(double v) { return {Constant, v}; }
};

// Named parameter tensors plus their accumulated gradients and Adam moments.
// std::map keeps iteration order stable (sorted by name) for deterministic
// reduction and serialization.
template <typename T>
class ParamStore {
public:
    struct Entry {
        Grid<T> value;
        Grid<T> grad;     // accumulated across a batch
        Grid<T> m, v;     // Adam moments (training only)
    };

    explicit ParamStore(uint64_t seed = 0) : seed_(seed) {}

    Grid<T>& get(const std::string& name, const Shape& shape, Init init) {
        auto it = entries_.find(name);
        if (it != entries_.end()) {
            require_shape(it->second.value.shape == shape,
                          "param " + name + " requested with shape " + shape.str() +
                              " but stored as " + it->second.value.shape.str());
            return it->second.value;
        }
        Entry e;
        e.value = Grid<T>(shape);
        switch (init.kind) {
            case Init::Zeros:
                break;
            case Init::Ones:
                e.value.fill(T(1));
                break;
            case Init::Normal: {
                Rng rng(seed_, name);
                for (T& v : e.value.data) v = static_cast<T>(rng.normal() * init.std);
                break;
            }
            case Init::Constant:
                e.value.fill(static_cast<T>(init.std));
                break;
        }
        return entries_.emplace(name, std::move(e)).first->second.value;
    }

    bool has(const std::string& name) const { return entries_.count(name) > 0; }
    Entry& entry(const std::string& name) { return entries_.at(name); }
    const Entry& entry(const std::string& name) const { return entries_.at(name); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    size_t count() const { return entries_.size(); }
    uint64_t seed() const { return seed_; }

    void zero_grads() {
        for (auto& [k, e] : entries_) {
            if (!e.grad.data.empty()) e.grad.fill(T(0));
        }
    }

    int64_t total_scalars() const {
        int64_t n = 0;
        for (const auto& [k, e] : entries_) n += e.value.numel();
        return n;
    }

private:
    uint64_t seed_;
    std::map<std::string, Entry> entries_;
};

// Binds a tape to a parameter store for one forward/backward pass. Each
// parameter is attached to the graph once and cached, so repeated layer
// calls share the Var.
template <typename T>
class ModelCtx {
public:
    Graph<T>* g = nullptr;
    ParamStore<T>* params = nullptr;
    bool train = true;  // if false parameters do not require grad

    ModelCtx(Graph<T>& graph, ParamStore<T>& store, bool training = true)
        : g(&graph), params(&store), train(training) {}

    Var param(const std::string& name, const Shape& shape, Init init) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        Grid<T>& p = params->get(name, shape, init);
        Var v = g->input(p, train);
        bound_.emplace(name, v);
        return v;
    }

    // After backward(): fold the tape's gradients into the store.
    void accumulate_grads() {
        for (auto& [name, var] : bound_) {
            if (!g->needs_grad(var)) continue;
            auto& e = params->entry(name);
            if (e.grad.data.empty()) e.grad = Grid<T>(e.value.shape);
            const Grid<T>& gv = g->grad(var);
            for (size_t i = 0; i < e.grad.data.size(); ++i) e.grad.data[i] += gv.data[i];
        }
    }

    const std::map<std::string, Var>& bound() const { return bound_; }

private:
    std::map<std::string, Var> bound_;
};

// ---- layers ----

template <typename T>
Var linear(ModelCtx<T>& c, Var x, const std::string& prefix, int in, int out,
           Init winit = Init{Init::Normal, -1.0}, Init binit = Init::zeros()) {
    if (winit.kind == Init::Normal && winit.std < 0) winit = Init::fan_in(in);
    Var w = c.param(prefix + ".w", Shape{in, out}, winit);
    Var b = c.param(prefix + ".b", Shape{out}, binit);
    return c.g->add_row_bias(c.g->matmul(x, w), b);
}

template <typename T>
Var layer_norm(ModelCtx<T>& c, Var x, const std::string& prefix) {
    int d = c.g->shape(x)[1];
    Var gamma = c.param(prefix + ".gamma", Shape{d}, Init::ones());
    Var beta = c.param(prefix + ".beta", Shape{d}, Init::zeros());
    return c.g->layer_norm(x, gamma, beta);
}

// Multi-head attention with learned projections; query tokens attend to
// key/value tokens (self-attention when q_tokens == kv_tokens).
template <typename T>
Var mha(ModelCtx<T>& c, Var q_tokens, Var kv_tokens, const std::string& prefix, int d,
        int heads) {
    Var q = linear(c, q_tokens, prefix + ".q", d, d);
    Var k = linear(c, kv_tokens, prefix + ".k", d, d);
    Var v = linear(c, kv_tokens, prefix + ".v", d, d);
    Var attn = c.g->attention(q, k, v, heads);
    return linear(c, attn, prefix + ".o", d, d);
}

template <typename T>
Var mlp_block(ModelCtx<T>& c, Var x, const std::string& prefix, int d, int hidden) {
    Var h = linear(c, x, prefix + ".fc1", d, hidden);
    h = c.g->gelu(h);
    return linear(c, h, prefix + ".fc2", hidden, d);
}

// Pre-norm transformer encoder block: x += MHA(LN(x)); x += MLP(LN(x)).
template <typename T>
Var transformer_block(ModelCtx<T>& c, Var x, const std::string& prefix, int d, int heads,
                      int mlp_ratio = 2) {
    Var h = layer_norm(c, x, prefix + ".ln1");
    x = c.g->add(x, mha(c, h, h, prefix + ".attn", d, heads));
    Var h2 = layer_norm(c, x, prefix + ".ln2");
    return c.g->add(x, mlp_block(c, h2, prefix + ".mlp", d, mlp_ratio * d));
}

// Pre-norm cross-attention block: queries attend to a fixed context.
template <typename T>
Var cross_attn_block(ModelCtx<T>& c, Var x, Var context, const std::string& prefix, int d,
                     int heads, int mlp_ratio = 2) {
    Var h = layer_norm(c, x, prefix + ".ln1");
    Var ctx_n = layer_norm(c, context, prefix + ".lnc");
    x = c.g->add(x, mha(c, h, ctx_n, prefix + ".attn", d, heads));
    Var h2 = layer_norm(c, x, prefix + ".ln2");
    return c.g->add(x, mlp_block(c, h2, prefix + ".mlp", d, mlp_ratio * d));
}

template <typename T>
Var conv3x3_layer(ModelCtx<T>& c, Var x, const std::string& prefix, int cin, int cout,
                  Init winit = Init{Init::Normal, -1.0}) {
    if (winit.kind == Init::Normal && winit.std < 0) winit = Init::fan_in(9 * cin);
    Var w = c.param(prefix + ".w", Shape{9 * cin, cout}, winit);
    Var b = c.param(prefix + ".b", Shape{cout}, Init::zeros());
    return c.g->conv3x3(x, w, b);
}

// 1x1 convolution = per-pixel linear map over channels.
template <typename T>
Var conv1x1_layer(ModelCtx<T>& c, Var x, const std::string& prefix, int cin, int cout,
                  Init winit = Init{Init::Normal, -1.0}, Init binit = Init::zeros()) {
    const Shape s = c.g->shape(x);
    require_shape(s.rank() == 3 && s[2] == cin, "conv1x1: bad input " + s.str());
    Var flat = c.g->reshape(x, Shape{s[0] * s[1], cin});
    Var y = linear(c, flat, prefix, cin, cout, winit, binit);
    return c.g->reshape(y, Shape{s[0], s[1], cout});
}

// Fixed (non-learned) sinusoidal code for an integer value.
template <typename T>
inline Grid<T> sinusoid_code(int64_t value, int d) {
    Grid<T> out(Shape{d});
    for (int i = 0; i < d / 2; ++i) {
        double freq = std::pow(10000.0, -2.0 * i / d);
        out.data[2 * i] = static_cast<T>(std::sin(value * freq));
        out.data[2 * i + 1] = static_cast<T>(std::cos(value * freq));
    }
    return out;
}

}  // namespace quanet
