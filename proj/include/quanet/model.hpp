#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "quanet/nn.hpp"
#include "quanet/prompts.hpp"

namespace quanet {

struct ModelConfig {
    int image_size = 128;
    int patch_size = 8;
    int embed_dim = 64;
    int vision_depth = 2;
    int text_depth = 1;
    int heads = 4;
    int fusion_blocks = 4;
    int text_max_len = 16;
    int decoder_stages = 3;       // token grid doubles per stage up to image_size
    int decoder_trans_depth = 2;  // token-transformer blocks in the decoder
    int cnn_channels = 16;
    int trans_channels = 16;
    int num_counterfactuals = 8;  // N: counterfactual prompts per sample
    int64_t max_count = 2048;     // numeral embedding support [1, max_count]

    int token_grid() const { return image_size / patch_size; }
    int n_tokens() const { return token_grid() * token_grid(); }

    void validate() const {
        require(image_size > 0 && patch_size > 0 && image_size % patch_size == 0,
                "image_size must be a positive multiple of patch_size");
        require(embed_dim > 0 && embed_dim % heads == 0,
                "embed_dim must be divisible by heads");
        require(embed_dim % 2 == 0, "embed_dim must be even (sinusoidal numeral code)");
        require(vision_depth >= 1 && text_depth >= 1 && fusion_blocks >= 1,
                "encoder/fusion depths must be >= 1");
        require(decoder_stages >= 1 && decoder_trans_depth >= 1,
                "decoder depths must be >= 1");
        require(token_grid() * (1 << decoder_stages) == image_size,
                "token_grid * 2^decoder_stages must equal image_size (got grid " +
                    std::to_string(token_grid()) + ", stages " +
                    std::to_string(decoder_stages) + ", image " + std::to_string(image_size) +
                    ")");
        require(num_counterfactuals >= 2 && num_counterfactuals % 2 == 0,
                "num_counterfactuals must be even and >= 2");
        require(max_count >= 1, "max_count must be >= 1");
        require(cnn_channels >= 1 && trans_channels >= 1, "stream channels must be >= 1");
    }
};

// Which sub-graphs a run wires up. Every named ablation flag maps onto these
// booleans; anything not listed here is identical across variants.
struct Variant {
    std::string flag = "full";
    std::string table_row = "QUANet";

    // prompt side
    bool qtp = true;             // quantity counterfactual prompts
    bool factual_prompt = true;  // quantity factual prompt (also sources F^C)
    bool ctp = false;            // category counterfactual prompts
    int fixed_delta = 0;         // >0 overrides the count-binned step table

    // decoder side
    bool cnn_stream = true;
    bool trans_stream = true;
    bool t2c = true;  // transformer -> CNN adapters
    bool c2t = false; // CNN -> transformer adapters (reversed/bidirectional)
    bool ce = true;   // channel-excitation branch inside adapters
    bool ca = true;   // cross-attention branch inside adapters
    bool gating = true;  // false = fixed (0.5, 0.5) when both streams live

    // losses
    bool align = true;
    bool align_first = true;
    bool align_second = true;
    bool rank = true;
    bool rank_within = true;
    bool rank_cross = true;
    bool vtc = false;  // InfoNCE replacement for the margin alignment

    bool dual_stream() const { return cnn_stream && trans_stream; }
    bool any_adapter() const { return dual_stream() && (t2c || c2t); }
};

inline const std::vector<std::string>& variant_flags() {
    static const std::vector<std::string> flags = {
        "full",   "baseline", "no_qtp", "no_fp",  "fixed_delta:<k>", "ctp",
        "cqtp",   "no_trans", "no_cnn", "no_t2c", "c2t",             "bid",
        "no_ce",  "no_ca",    "avg_w",  "no_rank", "srank",          "crank",
        "vtc",    "align_no_ft", "align_no_st"};
    return flags;
}

inline Variant parse_variant(const std::string& flag) {
    Variant v;
    v.flag = flag;
    if (flag == "full") {
        v.table_row = "QUANet";
    } else if (flag == "baseline") {
        v.qtp = v.factual_prompt = false;
        v.align = v.rank = false;
        v.trans_stream = false;
        v.t2c = v.gating = false;
        v.table_row = "Baseline";
    } else if (flag == "no_qtp") {
        v.qtp = v.factual_prompt = false;
        v.align = false;
        v.table_row = "QUANet w/o QTPs";
    } else if (flag == "no_fp") {
        v.factual_prompt = false;
        v.align_first = false;  // first term needs the factual similarity
        v.table_row = "QUANet w/o FP";
    } else if (flag.rfind("fixed_delta:", 0) == 0) {
        std::string k = flag.substr(12);
        try {
            v.fixed_delta = std::stoi(k);
        } catch (...) {
            throw ConfigError("bad fixed_delta value '" + k + "'");
        }
        require(v.fixed_delta >= 1, "fixed_delta must be >= 1");
        v.table_row = "QUANet(delta=" + k + ")";
    } else if (flag == "ctp") {
        v.qtp = false;
        v.ctp = true;
        v.table_row = "QUANet-CTP";
    } else if (flag == "cqtp") {
        v.ctp = true;
        v.table_row = "QUANet-CQTP";
    } else if (flag == "no_trans") {
        v.trans_stream = false;
        v.t2c = v.gating = false;
        v.table_row = "DAC-decoder w/o Trans";
    } else if (flag == "no_cnn") {
        v.cnn_stream = false;
        v.t2c = v.gating = false;
        v.table_row = "DAC-decoder w/o CNN";
    } else if (flag == "no_t2c") {
        v.t2c = false;
        v.table_row = "DAC-decoder w/o T2C";
    } else if (flag == "c2t") {
        v.t2c = false;
        v.c2t = true;
        v.table_row = "DAC-decoder w/ C2T";
    } else if (flag == "bid") {
        v.c2t = true;
        v.table_row = "DAC-decoder w/ BiD";
    } else if (flag == "no_ce") {
        v.ce = false;
        v.table_row = "DAC-decoder w/o CE";
    } else if (flag == "no_ca") {
        v.ca = false;
        v.table_row = "DAC-decoder w/o CA";
    } else if (flag == "avg_w") {
        v.gating = false;
        v.table_row = "DAC-decoder w/ avg-w";
    } else if (flag == "no_rank") {
        v.rank = false;
        v.table_row = "QUANet w/o L_rank";
    } else if (flag == "srank") {
        v.rank_cross = false;
        v.table_row = "QUANet(L_rank -> L_srank)";
    } else if (flag == "crank") {
        v.rank_within = false;
        v.table_row = "QUANet(L_rank -> L_crank)";
    } else if (flag == "vtc") {
        v.align = false;
        v.vtc = true;
        v.table_row = "QUANet(L_align -> L_vtc)";
    } else if (flag == "align_no_ft") {
        v.align_first = false;
        v.table_row = "QUANet(L_align w/o FT)";
    } else if (flag == "align_no_st") {
        v.align_second = false;
        v.table_row = "QUANet(L_align w/o ST)";
    } else {
        std::string all;
        for (const auto& f : variant_flags()) all += f + " ";
        throw ConfigError("unknown variant flag '" + flag + "'; valid: " + all);
    }
    return v;
}

// Counts evaluations of the numeral-token embedding. The evaluation path
// must never touch it (category prompts only); tests assert the counter
// stays flat across evaluate().
struct Instrument {
    static inline int64_t numeral_embed_evals = 0;
};

// Cuts an [S x S x 3] image into non-overlapping patch rows
// [(S/p)^2 x p*p*3]; row-major patches, row-major pixels inside a patch.
template <typename T>
Grid<T> patchify(const Grid<T>& img, int patch) {
    require_shape(img.shape.rank() == 3 && img.shape[2] == 3,
                  "patchify expects [S x S x 3], got " + img.shape.str());
    int S = img.shape[0];
    require_shape(img.shape[1] == S && S % patch == 0,
                  "patchify: image " + img.shape.str() + " not divisible by patch " +
                      std::to_string(patch));
    int gs = S / patch;
    Grid<T> out(Shape{gs * gs, patch * patch * 3});
    for (int py = 0; py < gs; ++py)
        for (int px = 0; px < gs; ++px) {
            size_t row = (static_cast<size_t>(py) * gs + px) * patch * patch * 3;
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x)
                    for (int c = 0; c < 3; ++c)
                        out.data[row + (static_cast<size_t>(y) * patch + x) * 3 + c] =
                            img.at(py * patch + y, px * patch + x, c);
        }
    return out;
}

// One forward pass of the network over a single tape. Construct, call the
// pieces you need, read values/gradients off the graph.
template <typename T>
struct Net {
    ModelConfig cfg;
    Variant var;
    ModelCtx<T>& c;
    Graph<T>& g;

    Net(const ModelConfig& config, const Variant& variant, ModelCtx<T>& ctx)
        : cfg(config), var(variant), c(ctx), g(*ctx.g) {
        cfg.validate();
    }

    // ---- vision encoder ----

    struct Encoded {
        Var patches;  // [P x p*p*3] patchified pixels (differentiable input)
        Var tokens;   // [P x d]
        Var global;   // [d], mean over tokens
    };

    Encoded encode_image(const Grid<T>& img) {
        require_shape(img.shape == Shape{cfg.image_size, cfg.image_size, 3},
                      "encode_image expects " +
                          Shape{cfg.image_size, cfg.image_size, 3}.str() + ", got " +
                          img.shape.str());
        for (const T& v : img.data)
            if (v < T(-1e-6) || v > T(1) + T(1e-6))
                throw ConfigError("image pixels must lie in [0,1]");
        const int d = cfg.embed_dim;
        Var patches = g.input(patchify(img, cfg.patch_size), c.train);
        Var x = linear(c, patches, "vision.patch_embed", cfg.patch_size * cfg.patch_size * 3, d);
        Var pos = c.param("vision.pos_embed", Shape{cfg.n_tokens(), d}, Init::normal(0.02));
        x = g.add(x, pos);
        for (int i = 0; i < cfg.vision_depth; ++i)
            x = transformer_block(c, x, "vision.blk" + std::to_string(i), d, cfg.heads);
        x = layer_norm(c, x, "vision.ln");
        x = linear(c, x, "vision.proj", d, d);
        return {patches, x, g.mean_rows(x)};
    }

    // ---- text encoder ----

    struct TextOut {
        Var tokens;  // [L x d]
        Var pooled;  // [d]
        int num_pos = -1;
    };

    // Embedding-table stage only: one learned row per token id; the numeral
    // slot additionally receives a sinusoidal code of its integer value.
    Var embed_prompt_rows(const TokenSeq& seq, int vocab_size) {
        require(!seq.ids.empty(), "cannot encode an empty token sequence");
        require(static_cast<int>(seq.ids.size()) <= cfg.text_max_len,
                "prompt longer than text_max_len");
        const int d = cfg.embed_dim;
        Var table = c.param("text.embed", Shape{vocab_size, d}, Init::normal(0.02));
        Var rows = g.gather_rows(table, seq.ids);
        if (seq.num_pos >= 0) {
            require(seq.num_value >= 1 && seq.num_value <= cfg.max_count,
                    "count " + std::to_string(seq.num_value) +
                        " outside numeral support [1, " + std::to_string(cfg.max_count) +
                        "]");
            Grid<T> code(Shape{static_cast<int>(seq.ids.size()), d});
            Grid<T> sc = sinusoid_code<T>(seq.num_value, d);
            std::copy(sc.data.begin(), sc.data.end(),
                      code.data.begin() + static_cast<size_t>(seq.num_pos) * d);
            rows = g.add(rows, g.constant(std::move(code)));
            ++Instrument::numeral_embed_evals;
        }
        return rows;
    }

    TextOut encode_text(const TokenSeq& seq, int vocab_size) {
        const int d = cfg.embed_dim;
        const int L = static_cast<int>(seq.ids.size());
        Var x = embed_prompt_rows(seq, vocab_size);
        Var pos = c.param("text.pos", Shape{cfg.text_max_len, d}, Init::normal(0.02));
        x = g.add(x, g.slice_rows(pos, 0, L));
        for (int i = 0; i < cfg.text_depth; ++i)
            x = transformer_block(c, x, "text.blk" + std::to_string(i), d, cfg.heads);
        x = layer_norm(c, x, "text.ln");
        return {x, g.mean_rows(x), seq.num_pos};
    }

    // F^C: the encoded prompt with the numeral row dropped (identity when
    // the prompt carries no numeral — the inference path).
    Var category_tokens(const TextOut& t) {
        if (t.num_pos < 0) return t.tokens;
        require_shape(g.shape(t.tokens)[0] >= 2, "cannot drop the only token row");
        return g.drop_row(t.tokens, t.num_pos);
    }

    // ---- similarity ----

    Var cosine(Var a, Var b) {
        Var dot = g.sum_all(g.mul(a, b));
        Var na2 = g.sum_all(g.mul(a, a));
        Var nb2 = g.sum_all(g.mul(b, b));
        if (g.scalar(na2) < T(1e-12) || g.scalar(nb2) < T(1e-12))
            throw NumericError("degenerate embedding: zero norm in cosine similarity");
        return g.div(dot, g.mul(g.sqrt_op(na2), g.sqrt_op(nb2)));
    }

    // ---- fusion ----

    // Cross-attention blocks: visual tokens query the category tokens.
    // Attention output and MLP output projections start at zero, so a fresh
    // model fuses as the identity map.
    Var fuse(Var vis_tokens, Var fc_tokens) {
        require(g.shape(fc_tokens)[0] >= 1, "fusion requires a non-empty category embedding");
        require_shape(g.shape(fc_tokens)[1] == cfg.embed_dim,
                      "fusion: category embedding width mismatch");
        const int d = cfg.embed_dim;
        Var x = vis_tokens;
        for (int i = 0; i < cfg.fusion_blocks; ++i) {
            std::string p = "fusion.blk" + std::to_string(i);
            Var h = layer_norm(c, x, p + ".ln1");
            Var kv = layer_norm(c, fc_tokens, p + ".lnc");
            Var q = linear(c, h, p + ".attn.q", d, d);
            Var k = linear(c, kv, p + ".attn.k", d, d);
            Var v = linear(c, kv, p + ".attn.v", d, d);
            Var a = g.attention(q, k, v, cfg.heads);
            x = g.add(x, linear(c, a, p + ".attn.o", d, d, Init::zeros()));
            Var h2 = layer_norm(c, x, p + ".ln2");
            Var m = linear(c, h2, p + ".mlp.fc1", d, 2 * d);
            m = g.gelu(m);
            x = g.add(x, linear(c, m, p + ".mlp.fc2", 2 * d, d, Init::zeros()));
        }
        return x;
    }

    // ---- adapters ----

    // Transformer -> CNN enhancement: channel excitation (CE) from pooled
    // transformer tokens plus cross-attention (CA) with CNN pixels as
    // queries. Returns F_CE + F_CA; the caller adds it to the CNN feature.
    Var t2c_adapt(int stage, Var f_cnn, Var f_trans) {
        const Shape s = g.shape(f_cnn);
        require_shape(s.rank() == 3, "t2c_adapt expects an [h x w x c] CNN feature");
        const int hw = s[0] * s[1], ch = s[2], d = cfg.embed_dim;
        require_shape(g.shape(f_trans)[1] == d, "t2c_adapt: token width mismatch");
        std::string p = "t2c.stage" + std::to_string(stage);
        Var flat = g.reshape(f_cnn, Shape{hw, ch});
        std::optional<Var> out;
        if (var.ca) {
            Var q = linear(c, flat, p + ".ca.q", ch, d);
            Var k = linear(c, f_trans, p + ".ca.k", d, d);
            Var v = linear(c, f_trans, p + ".ca.v", d, d);
            Var a = g.attention(q, k, v, cfg.heads);
            a = linear(c, a, p + ".ca.o", d, ch);
            Var m = layer_norm(c, a, p + ".ca.ln");
            m = linear(c, m, p + ".ca.mlp.fc1", ch, 2 * ch);
            m = g.gelu(m);
            m = linear(c, m, p + ".ca.mlp.fc2", 2 * ch, ch);
            out = g.add(a, m);
        }
        if (var.ce) {
            Var pooled = g.mean_rows(f_trans);  // GAP over tokens -> [d]
            Var e = g.reshape(pooled, Shape{1, d});
            e = linear(c, e, p + ".ce.fc1", d, d);
            e = g.relu(e);
            e = linear(c, e, p + ".ce.fc2", d, ch);
            Var wv = g.sigmoid(g.reshape(e, Shape{ch}));
            Var ce = g.mul_columns(flat, wv);
            out = out ? g.add(*out, ce) : ce;
        }
        require(out.has_value(), "t2c_adapt: both CE and CA branches disabled");
        return g.reshape(*out, s);
    }

    // Reversed direction: CNN feature enhances the transformer tokens.
    Var c2t_adapt(int stage, Var f_trans, Var f_cnn) {
        const Shape s = g.shape(f_cnn);
        require_shape(s.rank() == 3, "c2t_adapt expects an [h x w x c] CNN feature");
        const int hw = s[0] * s[1], ch = s[2], d = cfg.embed_dim;
        std::string p = "c2t.stage" + std::to_string(stage);
        Var flat = g.reshape(f_cnn, Shape{hw, ch});
        std::optional<Var> out;
        if (var.ca) {
            Var q = linear(c, f_trans, p + ".ca.q", d, d);
            Var k = linear(c, flat, p + ".ca.k", ch, d);
            Var v = linear(c, flat, p + ".ca.v", ch, d);
            Var a = g.attention(q, k, v, cfg.heads);
            a = linear(c, a, p + ".ca.o", d, d);
            Var m = layer_norm(c, a, p + ".ca.ln");
            m = linear(c, m, p + ".ca.mlp.fc1", d, 2 * d);
            m = g.gelu(m);
            m = linear(c, m, p + ".ca.mlp.fc2", 2 * d, d);
            out = g.add(a, m);
        }
        if (var.ce) {
            Var pooled = g.mean_rows(flat);  // GAP over pixels -> [ch]
            Var e = g.reshape(pooled, Shape{1, ch});
            e = linear(c, e, p + ".ce.fc1", ch, ch);
            e = g.relu(e);
            e = linear(c, e, p + ".ce.fc2", ch, d);
            Var wv = g.sigmoid(g.reshape(e, Shape{d}));
            Var ce = g.mul_columns(f_trans, wv);
            out = out ? g.add(*out, ce) : ce;
        }
        require(out.has_value(), "c2t_adapt: both CE and CA branches disabled");
        return *out;
    }

    // ---- gating ----

    // (w1, w2) from the pooled category-prompted visual feature.
    Var gate_weights(Var fused_tokens) {
        const int d = cfg.embed_dim;
        Var pooled = g.reshape(g.mean_rows(fused_tokens), Shape{1, d});
        Var h = g.relu(linear(c, pooled, "gate.fc1", d, d));
        Var logits = linear(c, h, "gate.fc2", d, 2);
        return g.reshape(g.softmax_rows(logits), Shape{2});
    }

    // ---- decoder ----

    struct Decoded {
        Var d_cnn;    // invalid Var when the CNN stream is off
        Var d_trans;  // invalid Var when the transformer stream is off
        Var d_final;
        Var w;        // [2]
    };

    Decoded decode(Var fused) {
        const int d = cfg.embed_dim, gs = cfg.token_grid(), S = cfg.image_size;
        require_shape(g.shape(fused) == Shape{cfg.n_tokens(), d},
                      "decode expects [" + std::to_string(cfg.n_tokens()) + " x " +
                          std::to_string(d) + "] tokens, got " + g.shape(fused).str());
        require(var.cnn_stream || var.trans_stream, "decoder needs at least one stream");

        Var tok = fused;
        int blocks_applied = 0;
        auto advance_tokens_to = [&](int target) {
            while (blocks_applied < target) {
                tok = transformer_block(
                    c, tok, "dec.trans.blk" + std::to_string(blocks_applied), d, cfg.heads);
                ++blocks_applied;
            }
        };

        Var x;  // CNN stream feature
        if (var.cnn_stream) {
            Var grid0 = g.reshape(fused, Shape{gs, gs, d});
            x = conv1x1_layer(c, grid0, "dec.cnn.proj", d, cfg.cnn_channels);
        }

        for (int i = 1; i <= cfg.decoder_stages; ++i) {
            if (var.trans_stream)
                advance_tokens_to(std::min(i, cfg.decoder_trans_depth));
            if (var.any_adapter()) {
                // both directions read the pre-update features
                std::optional<Var> dx, dt;
                if (var.t2c) dx = t2c_adapt(i, x, tok);
                if (var.c2t) dt = c2t_adapt(i, tok, x);
                if (dx) x = g.add(x, *dx);
                if (dt) tok = g.add(tok, *dt);
            }
            if (var.cnn_stream) {
                x = g.relu(conv3x3_layer(c, x, "dec.cnn.stage" + std::to_string(i),
                                         cfg.cnn_channels, cfg.cnn_channels));
                x = g.upsample2x(x);
            }
        }

        // Density heads use softplus, not a hard ReLU: a ReLU head trained
        // from scratch is an absorbing state (background pixels dominate the
        // squared error, drive every pre-activation negative, and the zero
        // subgradient then blocks recovery permanently). Softplus keeps the
        // output strictly non-negative while gradients always flow.
        //
        // The head starts at the background operating point — bias -6
        // (softplus(-6) ~ 2.5e-3 per pixel) with near-zero weights — so the
        // first optimizer steps see the small, spatially informative
        // gradients rather than a large uniform overshoot. A big transient
        // would park Adam's second moment far above the useful gradient
        // scale and freeze learning for thousands of steps.
        const Init head_weights = Init::normal(0.02);
        const Init head_bias = Init::constant(-6.0);

        Decoded out;
        if (var.cnn_stream) {
            Var head = conv1x1_layer(c, x, "dec.head.cnn", cfg.cnn_channels, 1,
                                     head_weights, head_bias);
            out.d_cnn = g.reshape(g.softplus(head), Shape{S, S});
        }
        if (var.trans_stream) {
            advance_tokens_to(cfg.decoder_trans_depth);
            Var y = g.reshape(tok, Shape{gs, gs, d});
            y = conv1x1_layer(c, y, "dec.trans.proj", d, cfg.trans_channels);
            for (int u = 1; u <= cfg.decoder_stages; ++u) {
                y = g.upsample2x(y);
                y = g.relu(conv3x3_layer(c, y, "dec.trans.up" + std::to_string(u),
                                         cfg.trans_channels, cfg.trans_channels));
            }
            Var head = conv1x1_layer(c, y, "dec.head.trans", cfg.trans_channels, 1,
                                     head_weights, head_bias);
            out.d_trans = g.reshape(g.softplus(head), Shape{S, S});
        }

        if (var.dual_stream()) {
            if (var.gating) {
                out.w = gate_weights(fused);
            } else {
                Grid<T> half(Shape{2});
                half.fill(T(0.5));
                out.w = g.constant(std::move(half));
            }
            out.d_final = g.add(g.scale_by(out.d_cnn, g.pick(out.w, 0)),
                                g.scale_by(out.d_trans, g.pick(out.w, 1)));
        } else {
            Grid<T> onehot(Shape{2});
            onehot.data[0] = var.cnn_stream ? T(1) : T(0);
            onehot.data[1] = var.trans_stream ? T(1) : T(0);
            out.w = g.constant(std::move(onehot));
            out.d_final = var.cnn_stream ? out.d_cnn : out.d_trans;
        }
        return out;
    }
};

}  // namespace quanet
