#include "quanet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

namespace fs = std::filesystem;
using nlohmann::json;

namespace quanet {

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (k == a) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError("unknown key '" + k + "' in " + where);
    }
}

std::string sanitize_flag(const std::string& flag) {
    std::string s = flag;
    for (char& c : s)
        if (c == ':') c = '-';
    return s;
}

std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

void OptimConfig::validate() const {
    require(lr > 0.0, "learning rate must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
            "Adam betas must lie in [0, 1)");
    require(eps > 0.0, "Adam eps must be positive");
    require(decay > 0.0 && decay <= 1.0, "lr decay factor must lie in (0, 1]");
}

void RunConfig::validate() const {
    model.validate();
    loss.validate();
    optim.validate();
    require(!data_root.empty(), "data_root must be set");
    require(!out_dir.empty(), "out_dir must be set");
    require(epochs >= 1, "epochs must be >= 1");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(max_train >= 0 && max_val >= 0, "split caps must be >= 0");
    parse_variant(variant);  // throws on unknown flags
    int r = static_cast<int>(std::lround(std::sqrt(double(loss.patch_grid))));
    require(model.image_size % r == 0,
            "image_size " + std::to_string(model.image_size) + " is not divisible into a " +
                std::to_string(r) + "x" + std::to_string(r) + " ranking patch grid");
}

json RunConfig::to_json() const {
    json j;
    j["version"] = 1;
    j["model"] = {{"image_size", model.image_size},
                  {"patch_size", model.patch_size},
                  {"embed_dim", model.embed_dim},
                  {"vision_depth", model.vision_depth},
                  {"text_depth", model.text_depth},
                  {"heads", model.heads},
                  {"fusion_blocks", model.fusion_blocks},
                  {"text_max_len", model.text_max_len},
                  {"decoder_stages", model.decoder_stages},
                  {"decoder_trans_depth", model.decoder_trans_depth},
                  {"cnn_channels", model.cnn_channels},
                  {"trans_channels", model.trans_channels},
                  {"num_counterfactuals", model.num_counterfactuals},
                  {"max_count", model.max_count}};
    j["loss"] = {{"mu", loss.mu},
                 {"patch_grid", loss.patch_grid},
                 {"rank_interval", loss.rank_interval}};
    j["optim"] = {{"lr", optim.lr},
                  {"beta1", optim.beta1},
                  {"beta2", optim.beta2},
                  {"eps", optim.eps},
                  {"decay", optim.decay}};
    j["data_root"] = data_root;
    j["out_dir"] = out_dir;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["variant"] = variant;
    j["max_train"] = max_train;
    j["max_val"] = max_val;
    return j;
}

RunConfig RunConfig::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    if (!j.contains("version")) throw ConfigError("run config has no version field");
    int version = j.at("version").get<int>();
    if (version != 1)
        throw ConfigError("run config version " + std::to_string(version) +
                          " unsupported; this build reads version 1");
    check_keys(j,
               {"version", "model", "loss", "optim", "data_root", "out_dir", "epochs",
                "batch_size", "seed", "variant", "max_train", "max_val"},
               "run config");

    RunConfig cfg;
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m,
                   {"image_size", "patch_size", "embed_dim", "vision_depth", "text_depth",
                    "heads", "fusion_blocks", "text_max_len", "decoder_stages",
                    "decoder_trans_depth", "cnn_channels", "trans_channels",
                    "num_counterfactuals", "max_count"},
                   "model config");
        cfg.model.image_size = m.value("image_size", cfg.model.image_size);
        cfg.model.patch_size = m.value("patch_size", cfg.model.patch_size);
        cfg.model.embed_dim = m.value("embed_dim", cfg.model.embed_dim);
        cfg.model.vision_depth = m.value("vision_depth", cfg.model.vision_depth);
        cfg.model.text_depth = m.value("text_depth", cfg.model.text_depth);
        cfg.model.heads = m.value("heads", cfg.model.heads);
        cfg.model.fusion_blocks = m.value("fusion_blocks", cfg.model.fusion_blocks);
        cfg.model.text_max_len = m.value("text_max_len", cfg.model.text_max_len);
        cfg.model.decoder_stages = m.value("decoder_stages", cfg.model.decoder_stages);
        cfg.model.decoder_trans_depth =
            m.value("decoder_trans_depth", cfg.model.decoder_trans_depth);
        cfg.model.cnn_channels = m.value("cnn_channels", cfg.model.cnn_channels);
        cfg.model.trans_channels = m.value("trans_channels", cfg.model.trans_channels);
        cfg.model.num_counterfactuals =
            m.value("num_counterfactuals", cfg.model.num_counterfactuals);
        cfg.model.max_count = m.value("max_count", cfg.model.max_count);
    }
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        check_keys(l, {"mu", "patch_grid", "rank_interval"}, "loss config");
        cfg.loss.mu = l.value("mu", cfg.loss.mu);
        cfg.loss.patch_grid = l.value("patch_grid", cfg.loss.patch_grid);
        cfg.loss.rank_interval = l.value("rank_interval", cfg.loss.rank_interval);
    }
    if (j.contains("optim")) {
        const json& o = j.at("optim");
        check_keys(o, {"lr", "beta1", "beta2", "eps", "decay"}, "optimizer config");
        cfg.optim.lr = o.value("lr", cfg.optim.lr);
        cfg.optim.beta1 = o.value("beta1", cfg.optim.beta1);
        cfg.optim.beta2 = o.value("beta2", cfg.optim.beta2);
        cfg.optim.eps = o.value("eps", cfg.optim.eps);
        cfg.optim.decay = o.value("decay", cfg.optim.decay);
    }
    cfg.data_root = j.value("data_root", cfg.data_root);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.variant = j.value("variant", cfg.variant);
    cfg.max_train = j.value("max_train", cfg.max_train);
    cfg.max_val = j.value("max_val", cfg.max_val);
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed JSON in '" + path + "': " + e.what());
    }
    return from_json(j);
}

// ---------------------------------------------------------------------------
// trainer
// ---------------------------------------------------------------------------

struct Trainer::Prepped {
    const CountingSample* s = nullptr;
    GridD image;
    GridD density;
    int64_t count = 0;
    TokenSeq category;
    TokenSeq factual;                 // quantity prompt with the true count
    std::vector<TokenSeq> negatives;  // quantity counterfactuals
};

struct Trainer::ForwardOut {
    double total = 0.0, count = 0.0, align = 0.0, rank = 0.0;
    double pred = 0.0;  // sum of the fused density
    bool finite = true;
};

Trainer::Trainer(RunConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    variant_ = parse_variant(cfg_.variant);
    params_ = ParamStore<double>(cfg_.seed);

    classes_ = dataset_classes(cfg_.data_root);
    require(!classes_.empty(), "dataset at '" + cfg_.data_root + "' lists no classes");
    if (variant_.ctp)
        require(classes_.size() >= 2,
                "category counterfactuals need >= 2 classes in the dataset");
    for (const std::string& c : classes_) vocab_.add_category(c);

    const int S = cfg_.model.image_size;
    train_ = load_dataset(cfg_.data_root, "train", S);
    val_ = load_dataset(cfg_.data_root, "val", S);
    if (cfg_.max_train > 0 && static_cast<int>(train_.size()) > cfg_.max_train)
        train_.resize(cfg_.max_train);
    if (cfg_.max_val > 0 && static_cast<int>(val_.size()) > cfg_.max_val)
        val_.resize(cfg_.max_val);
    require(!train_.empty(), "training split is empty");
}

Trainer::Prepped Trainer::prep(const CountingSample& s) const {
    Prepped p;
    p.s = &s;
    p.image = s.image.cast<double>();
    p.density = s.density.cast<double>();
    p.count = static_cast<int64_t>(s.points.size());
    p.category = tokenize(make_category_text(s.class_name), vocab_);
    if (variant_.qtp || variant_.factual_prompt) {
        require(p.count >= 1, "image '" + s.image_id + "' has no annotated objects; " +
                                  "quantity prompts need a count >= 1");
        PromptSet set = generate_prompt_set(s.class_name, p.count,
                                            cfg_.model.num_counterfactuals,
                                            variant_.fixed_delta);
        p.factual = tokenize(set.factual_text, vocab_);
        if (variant_.qtp)
            for (const std::string& text : set.counterfactual_texts)
                p.negatives.push_back(tokenize(text, vocab_));
    }
    return p;
}

Trainer::ForwardOut Trainer::forward(const Prepped& p, int epoch, bool training) {
    Graph<double> g;
    ModelCtx<double> c(g, params_, training);
    Net<double> net(cfg_.model, variant_, c);
    const int vs = vocab_.size();

    auto enc = net.encode_image(p.image);

    // --- text path: F^C for fusion, similarities for the quantity losses ---
    std::optional<typename Net<double>::TextOut> factual_out, category_out;
    auto need_category = [&]() -> const typename Net<double>::TextOut& {
        if (!category_out) category_out = net.encode_text(p.category, vs);
        return *category_out;
    };

    Var fc;
    if (variant_.qtp && variant_.factual_prompt) {
        factual_out = net.encode_text(p.factual, vs);
        fc = net.category_tokens(*factual_out);  // numeral row dropped
    } else {
        fc = net.category_tokens(need_category());
    }

    std::optional<Var> l_align;
    if (variant_.qtp && (variant_.align || variant_.vtc)) {
        std::vector<Var> sn;
        sn.reserve(p.negatives.size());
        for (const TokenSeq& seq : p.negatives)
            sn.push_back(net.cosine(enc.global, net.encode_text(seq, vs).pooled));
        Var sp;
        if (variant_.factual_prompt) {
            sp = net.cosine(enc.global, factual_out->pooled);
        } else {
            sp = g.constant(GridD(Shape{1}));  // placeholder; first term is off
        }
        if (variant_.vtc) {
            l_align = vtc_loss(g, sp, sn);
        } else {
            AlignTerms terms{variant_.align_first && variant_.factual_prompt,
                             variant_.align_second};
            l_align = alignment_loss(g, sp, sn, terms);
        }
    }
    if (variant_.ctp && variant_.align) {
        // category counterfactuals: only the factual-above-negative hinge is
        // meaningful (there is no count distance to order by)
        Rng rng(cfg_.seed, "ctp:" + std::to_string(epoch) + ":" + p.s->image_id);
        auto self = std::find(classes_.begin(), classes_.end(), p.s->class_name);
        int self_idx = self == classes_.end() ? -1 : static_cast<int>(self - classes_.begin());
        std::vector<Var> sn;
        for (int i = 0; i < cfg_.model.num_counterfactuals; ++i) {
            int hi = static_cast<int>(classes_.size()) - (self_idx >= 0 ? 2 : 1);
            int idx = static_cast<int>(rng.uniform_int(0, hi));
            if (self_idx >= 0 && idx >= self_idx) ++idx;
            TokenSeq neg = tokenize(make_category_text(classes_[idx]), vocab_);
            sn.push_back(net.cosine(enc.global, net.encode_text(neg, vs).pooled));
        }
        Var spc = net.cosine(enc.global, need_category().pooled);
        Var ctp = alignment_loss(g, spc, sn, AlignTerms{variant_.align_first, false});
        l_align = l_align ? g.add(*l_align, ctp) : ctp;
    }

    // --- fuse + decode + losses ---
    auto dec = net.decode(net.fuse(enc.tokens, fc));
    std::optional<Var> d_cnn, d_trans;
    if (dec.d_cnn.valid()) d_cnn = dec.d_cnn;
    if (dec.d_trans.valid()) d_trans = dec.d_trans;

    Var d_gt = g.constant(p.density);
    Var l_count = counting_loss(g, dec.d_final, d_cnn, d_trans, d_gt);

    std::optional<Var> l_rank;
    if (variant_.rank) {
        auto pv = build_patch_vectors(g, d_cnn, d_trans, p.density, cfg_.loss);
        l_rank = ranking_loss(g, pv, cfg_.loss,
                              RankTerms{variant_.rank_within, variant_.rank_cross});
    }

    Var total = total_loss(g, l_count, l_align, l_rank, cfg_.loss.mu);

    ForwardOut out;
    out.count = g.scalar(l_count);
    out.align = l_align ? g.scalar(*l_align) : 0.0;
    out.rank = l_rank ? g.scalar(*l_rank) : 0.0;
    out.total = g.scalar(total);
    out.pred = g.val(dec.d_final).sum();
    out.finite = std::isfinite(out.total) && std::isfinite(out.pred);

    if (training && out.finite) {
        g.backward(total);
        c.accumulate_grads();
    }
    return out;
}

GridF Trainer::infer_density(const CountingSample& s) {
    Graph<double> g;
    ModelCtx<double> c(g, params_, false);
    Net<double> net(cfg_.model, variant_, c);
    auto enc = net.encode_image(s.image.cast<double>());
    Var fc = net.category_tokens(
        net.encode_text(tokenize(make_category_text(s.class_name), vocab_), vocab_.size()));
    auto dec = net.decode(net.fuse(enc.tokens, fc));
    return g.val(dec.d_final).cast<float>();
}

void Trainer::restore(const Checkpoint& ck) {
    forward(prep(train_.front()), 0, false);  // bind the full parameter set
    restore_params(params_, ck);
    adam_t_ = ck.opt_step;
}

void Trainer::adam_step(double lr, int batch_n) {
    require(batch_n >= 1, "optimizer step needs a non-empty batch");
    ++adam_t_;
    const double b1 = cfg_.optim.beta1, b2 = cfg_.optim.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_t_));
    for (auto& [name, e] : params_) {
        if (e.grad.data.empty()) continue;
        if (e.m.data.empty()) {
            e.m = GridD(e.value.shape);
            e.v = GridD(e.value.shape);
        }
        for (size_t i = 0; i < e.value.data.size(); ++i) {
            double gr = e.grad.data[i] / batch_n;
            double m = e.m.data[i] = b1 * e.m.data[i] + (1.0 - b1) * gr;
            double v = e.v.data[i] = b2 * e.v.data[i] + (1.0 - b2) * gr * gr;
            e.value.data[i] -= lr * (m / c1) / (std::sqrt(v / c2) + cfg_.optim.eps);
        }
    }
    params_.zero_grads();
}

BatchStats Trainer::train_batch(const std::vector<int>& batch, int epoch) {
    require(!batch.empty(), "train_batch needs at least one sample index");
    params_.zero_grads();
    BatchStats st;
    for (int idx : batch) {
        require(idx >= 0 && idx < static_cast<int>(train_.size()),
                "train_batch index out of range");
        const CountingSample& s = train_[static_cast<size_t>(idx)];
        ForwardOut f = forward(prep(s), epoch, true);
        if (!f.finite) {
            fs::create_directories(cfg_.out_dir);
            json dump = {{"epoch", epoch},
                         {"image_id", s.image_id},
                         {"class", s.class_name},
                         {"loss_total", f.total},
                         {"loss_count", f.count},
                         {"loss_align", f.align},
                         {"loss_rank", f.rank},
                         {"pred_sum", f.pred}};
            std::ofstream(fs::path(cfg_.out_dir) / "nan_dump.json") << dump.dump(1) << "\n";
            throw NumericError("non-finite loss on image '" + s.image_id +
                               "'; diagnostics written to " + cfg_.out_dir + "/nan_dump.json");
        }
        st.total += f.total;
        st.count += f.count;
        st.align += f.align;
        st.rank += f.rank;
    }
    adam_step(lr_at_epoch(epoch), static_cast<int>(batch.size()));
    const double n = static_cast<double>(batch.size());
    st.total /= n;
    st.count /= n;
    st.align /= n;
    st.rank /= n;
    return st;
}

double Trainer::lr_at_epoch(int epoch) const {
    const int m1 = static_cast<int>(std::lround(0.60 * cfg_.epochs));
    const int m2 = static_cast<int>(std::lround(0.85 * cfg_.epochs));
    double lr = cfg_.optim.lr;
    if (epoch > m1) lr *= cfg_.optim.decay;
    if (epoch > m2) lr *= cfg_.optim.decay;
    return lr;
}

void Trainer::save_state(const std::string& path, int epochs_done, int best_epoch,
                         double best_val_mae) {
    Checkpoint ck = snapshot_params(params_, true);
    ck.opt_step = adam_t_;
    ck.state["epochs_completed"] = epochs_done;
    ck.state["best_epoch"] = best_epoch;
    ck.state["best_val_mae"] = best_val_mae;
    ck.state["variant"] = cfg_.variant;
    ck.state["seed"] = cfg_.seed;
    ck.state["config"] = cfg_.to_json();
    save_checkpoint(path, ck);
}

void Trainer::log_jsonl(const json& event) {
    std::ofstream out(fs::path(cfg_.out_dir) / "train_log.jsonl", std::ios::app);
    out << event.dump() << "\n";
}

TrainResult Trainer::fit(const std::string& resume_from,
                         const std::function<void(const EpochStats&)>& on_epoch) {
    fs::create_directories(cfg_.out_dir);
    TrainResult res;
    int done = 0;
    int best_epoch = -1;
    double best = std::numeric_limits<double>::infinity();

    if (!resume_from.empty()) {
        Checkpoint ck = load_checkpoint(resume_from);
        require(ck.state.contains("config"),
                "checkpoint '" + resume_from + "' carries no config echo");
        if (json(cfg_.to_json()) != ck.state.at("config"))
            throw ConfigError("resume config differs from the one stored in '" + resume_from +
                              "'; resuming requires an identical run config");
        require(ck.has_moments, "resume checkpoint lacks the optimizer sidecar");
        restore(ck);
        done = ck.state.at("epochs_completed").get<int>();
        best_epoch = ck.state.at("best_epoch").get<int>();
        double stored_best = ck.state.at("best_val_mae").get<double>();
        if (best_epoch >= 0) best = stored_best;
    }

    const std::string best_path = (fs::path(cfg_.out_dir) / "best.tar").string();
    const std::string last_path = (fs::path(cfg_.out_dir) / "last.tar").string();

    std::ofstream csv;
    const fs::path csv_path = fs::path(cfg_.out_dir) / "train_log.csv";
    const bool fresh_csv = !fs::exists(csv_path) || done == 0;
    csv.open(csv_path, fresh_csv ? std::ios::trunc : std::ios::app);
    if (fresh_csv)
        csv << "epoch,lr,train_loss,train_count,train_align,train_rank,val_loss,val_mae\n";

    log_jsonl({{"event", "start"},
               {"resumed_after_epoch", done},
               {"train_images", train_.size()},
               {"val_images", val_.size()},
               {"config", cfg_.to_json()}});

    for (int epoch = done + 1; epoch <= cfg_.epochs; ++epoch) {
        // deterministic per-epoch shuffle: resume needs no carried RNG state
        std::vector<int> order(train_.size());
        std::iota(order.begin(), order.end(), 0);
        Rng(cfg_.seed, "shuffle:" + std::to_string(epoch)).shuffle(order);

        EpochStats st;
        st.epoch = epoch;
        st.lr = lr_at_epoch(epoch);
        size_t seen = 0;
        for (size_t at = 0; at < order.size(); at += cfg_.batch_size) {
            size_t take = std::min(order.size() - at, static_cast<size_t>(cfg_.batch_size));
            std::vector<int> batch(order.begin() + at, order.begin() + at + take);
            BatchStats b = train_batch(batch, epoch);
            st.train_loss += b.total * take;
            st.train_count += b.count * take;
            st.train_align += b.align * take;
            st.train_rank += b.rank * take;
            seen += take;
        }
        st.train_loss /= seen;
        st.train_count /= seen;
        st.train_align /= seen;
        st.train_rank /= seen;

        for (const CountingSample& s : val_) {
            ForwardOut f = forward(prep(s), epoch, false);
            if (!f.finite)
                throw NumericError("non-finite validation loss on image '" + s.image_id + "'");
            st.val_loss += f.total;
            GridF pred = infer_density(s);
            st.val_mae += std::abs(static_cast<double>(pred.sum()) -
                                   static_cast<double>(s.points.size()));
        }
        if (!val_.empty()) {
            st.val_loss /= static_cast<double>(val_.size());
            st.val_mae /= static_cast<double>(val_.size());
            if (!std::isfinite(st.val_mae))
                throw NumericError("non-finite validation MAE at epoch " +
                                   std::to_string(epoch));
        }

        res.history.push_back(st);
        csv << st.epoch << "," << st.lr << "," << st.train_loss << "," << st.train_count << ","
            << st.train_align << "," << st.train_rank << "," << st.val_loss << "," << st.val_mae
            << "\n";
        csv.flush();
        log_jsonl({{"event", "epoch"},
                   {"epoch", st.epoch},
                   {"lr", st.lr},
                   {"train_loss", st.train_loss},
                   {"train_count", st.train_count},
                   {"train_align", st.train_align},
                   {"train_rank", st.train_rank},
                   {"val_loss", st.val_loss},
                   {"val_mae", st.val_mae}});

        if (val_.empty() || st.val_mae < best) {
            best = st.val_mae;
            best_epoch = epoch;
            save_state(best_path, epoch, best_epoch, best);
            log_jsonl({{"event", "best"}, {"epoch", epoch}, {"val_mae", st.val_mae}});
        }
        save_state(last_path, epoch, best_epoch, best);
        if (on_epoch) on_epoch(st);
    }

    res.best_epoch = best_epoch;
    res.best_val_mae = best;
    res.best_ckpt = best_path;
    res.last_ckpt = last_path;
    log_jsonl({{"event", "done"}, {"best_epoch", best_epoch}, {"best_val_mae", best}});
    return res;
}

EvalSummary Trainer::evaluate(const std::vector<CountingSample>& samples) {
    require(!samples.empty(), "evaluate needs at least one sample");
    EvalSummary out;
    const int64_t numeral_evals_before = Instrument::numeral_embed_evals;
    for (const CountingSample& s : samples) {
        GridF pred = infer_density(s);
        out.records.push_back(make_eval_record(s.image_id, s.class_name, pred, s.density));
    }
    require(Instrument::numeral_embed_evals == numeral_evals_before,
            "inference evaluated a numeral embedding; the deployment path must be "
            "quantity-prompt-free");

    auto [mae, rmse] = mae_rmse(out.records);
    out.mae = mae;
    out.rmse = rmse;
    for (int level = 0; level <= 3; ++level) out.game.push_back(game(out.records, level));

    std::map<std::string, int> per_class;
    for (const EvalRecord& r : out.records) ++per_class[r.class_name];
    bool rankable = false;
    for (const auto& [cls, n] : per_class) rankable |= n >= 2;
    if (rankable) {
        out.rank_map = rank_map(out.records, &out.warnings);
    } else {
        out.rank_map = std::numeric_limits<double>::quiet_NaN();
        out.warnings.push_back("rank mAP skipped: no class has >= 2 images");
    }
    return out;
}

double Trainer::mean_factual_similarity(const std::vector<CountingSample>& samples) {
    require(!samples.empty(), "similarity probe needs at least one sample");
    double total = 0.0;
    for (const CountingSample& s : samples) {
        int64_t count = static_cast<int64_t>(s.points.size());
        require(count >= 1, "image '" + s.image_id + "' has no annotated objects");
        Graph<double> g;
        ModelCtx<double> c(g, params_, false);
        Net<double> net(cfg_.model, variant_, c);
        auto enc = net.encode_image(s.image.cast<double>());
        PromptSet set = generate_prompt_set(s.class_name, count,
                                            cfg_.model.num_counterfactuals,
                                            variant_.fixed_delta);
        auto t = net.encode_text(tokenize(set.factual_text, vocab_), vocab_.size());
        total += g.scalar(net.cosine(enc.global, t.pooled));
    }
    return total / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// evaluation artifacts
// ---------------------------------------------------------------------------

void write_eval_csv(const std::string& path, const std::vector<EvalRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "image_id,class,gt_count,pred_count,abs_err\n";
    for (const EvalRecord& r : records)
        out << r.image_id << "," << r.class_name << "," << fmt(r.gt_count) << ","
            << fmt(r.pred_count) << "," << fmt(std::abs(r.pred_count - r.gt_count)) << "\n";
}

void write_summary_csv(const std::string& path, const EvalSummary& s) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "mae,rmse,game0,game1,game2,game3,rank_map\n";
    out << fmt(s.mae) << "," << fmt(s.rmse);
    for (double gv : s.game) out << "," << fmt(gv);
    out << "," << fmt(s.rank_map) << "\n";
}

// ---------------------------------------------------------------------------
// ablation sweeps
// ---------------------------------------------------------------------------

double AblationRow::mean(double (*field)(const AblationRun&)) const {
    require(!runs.empty(), "ablation row has no runs");
    double t = 0.0;
    for (const AblationRun& r : runs) t += field(r);
    return t / static_cast<double>(runs.size());
}

double AblationRow::stddev(double (*field)(const AblationRun&)) const {
    if (runs.size() < 2) return 0.0;
    double m = mean(field);
    double ss = 0.0;
    for (const AblationRun& r : runs) ss += (field(r) - m) * (field(r) - m);
    return std::sqrt(ss / static_cast<double>(runs.size() - 1));
}

namespace {
double run_mae(const AblationRun& r) { return r.val.mae; }
double run_rmse(const AblationRun& r) { return r.val.rmse; }
double run_rank_map(const AblationRun& r) { return r.val.rank_map; }
double run_sim_init(const AblationRun& r) { return r.sim_init; }
double run_sim_trained(const AblationRun& r) { return r.sim_trained; }
}  // namespace

double AblationRow::mean_mae() const { return mean(run_mae); }
double AblationRow::stddev_mae() const { return stddev(run_mae); }

std::vector<AblationRow> ablate(const RunConfig& base, const std::vector<std::string>& variants,
                                const std::vector<uint64_t>& seeds,
                                const std::function<void(const std::string&)>& progress) {
    require(variants.size() >= 2, "an ablation sweep needs at least two variants");
    require(!seeds.empty(), "an ablation sweep needs at least one seed");
    auto say = [&](const std::string& line) {
        if (progress) progress(line);
    };

    std::vector<AblationRow> rows;
    for (const std::string& flag : variants) {
        AblationRow row;
        row.flag = flag;
        row.table_row = parse_variant(flag).table_row;
        for (uint64_t seed : seeds) {
            RunConfig rc = base;
            rc.variant = flag;
            rc.seed = seed;
            rc.out_dir = (fs::path(base.out_dir) /
                          (sanitize_flag(flag) + "_s" + std::to_string(seed)))
                             .string();
            const std::string tag = flag + " seed " + std::to_string(seed);
            Trainer tr(rc);
            AblationRun run;
            run.seed = seed;
            run.run_dir = rc.out_dir;
            run.sim_init = tr.mean_factual_similarity(tr.val_set());
            TrainResult res = tr.fit("", [&](const EpochStats& st) {
                say(tag + "  epoch " + std::to_string(st.epoch) + "/" +
                    std::to_string(rc.epochs) + "  train " + fmt(st.train_loss) + "  val_mae " +
                    fmt(st.val_mae, 3));
            });
            run.best_val_mae = res.best_val_mae;
            tr.restore(load_checkpoint(res.best_ckpt));
            run.val = tr.evaluate(tr.val_set());
            run.sim_trained = tr.mean_factual_similarity(tr.val_set());
            write_eval_csv((fs::path(rc.out_dir) / "eval_val.csv").string(), run.val.records);
            write_summary_csv((fs::path(rc.out_dir) / "summary_val.csv").string(), run.val);
            say(tag + "  done: best val MAE " + fmt(run.best_val_mae, 3) + " (epoch " +
                std::to_string(res.best_epoch) + "), sim " + fmt(run.sim_init, 3) + " -> " +
                fmt(run.sim_trained, 3));
            row.runs.push_back(std::move(run));
        }
        rows.push_back(std::move(row));
    }
    write_ablation_outputs(base.out_dir, rows);
    return rows;
}

std::string render_ablation_table(const std::vector<AblationRow>& rows) {
    auto cell = [](double m, double s) { return fmt(m, 3) + " +/- " + fmt(s, 3); };
    std::vector<std::array<std::string, 5>> lines;
    lines.push_back({"Variant", "val MAE", "val RMSE", "rank mAP", "sim init->trained"});
    for (const AblationRow& r : rows)
        lines.push_back({r.table_row, cell(r.mean(run_mae), r.stddev(run_mae)),
                         cell(r.mean(run_rmse), r.stddev(run_rmse)),
                         cell(r.mean(run_rank_map), r.stddev(run_rank_map)),
                         fmt(r.mean(run_sim_init), 3) + " -> " + fmt(r.mean(run_sim_trained), 3)});
    std::array<size_t, 5> w{};
    for (const auto& l : lines)
        for (size_t i = 0; i < 5; ++i) w[i] = std::max(w[i], l[i].size());
    std::string out;
    for (size_t li = 0; li < lines.size(); ++li) {
        for (size_t i = 0; i < 5; ++i) {
            out += lines[li][i];
            out.append(w[i] - lines[li][i].size() + 2, ' ');
        }
        out += "\n";
        if (li == 0) {
            for (size_t i = 0; i < 5; ++i) out.append(w[i], '-'), out.append(2, ' ');
            out += "\n";
        }
    }
    return out;
}

void write_ablation_outputs(const std::string& dir, const std::vector<AblationRow>& rows) {
    fs::create_directories(dir);

    std::ofstream runs_csv(fs::path(dir) / "ablation_runs.csv", std::ios::trunc);
    runs_csv << "variant,row,seed,mae,rmse,game0,game1,game2,game3,rank_map,sim_init,"
                "sim_trained,best_val_mae\n";
    for (const AblationRow& r : rows)
        for (const AblationRun& run : r.runs) {
            runs_csv << r.flag << "," << r.table_row << "," << run.seed << ","
                     << fmt(run.val.mae) << "," << fmt(run.val.rmse);
            for (double gv : run.val.game) runs_csv << "," << fmt(gv);
            runs_csv << "," << fmt(run.val.rank_map) << "," << fmt(run.sim_init) << ","
                     << fmt(run.sim_trained) << "," << fmt(run.best_val_mae) << "\n";
        }

    std::ofstream agg_csv(fs::path(dir) / "ablation.csv", std::ios::trunc);
    agg_csv << "variant,row,mae_mean,mae_std,rmse_mean,rmse_std,rank_map_mean,rank_map_std,"
               "sim_init_mean,sim_trained_mean\n";
    for (const AblationRow& r : rows)
        agg_csv << r.flag << "," << r.table_row << "," << fmt(r.mean(run_mae)) << ","
                << fmt(r.stddev(run_mae)) << "," << fmt(r.mean(run_rmse)) << ","
                << fmt(r.stddev(run_rmse)) << "," << fmt(r.mean(run_rank_map)) << ","
                << fmt(r.stddev(run_rank_map)) << "," << fmt(r.mean(run_sim_init)) << ","
                << fmt(r.mean(run_sim_trained)) << "\n";

    std::ofstream txt(fs::path(dir) / "ablation.txt", std::ios::trunc);
    txt << render_ablation_table(rows);

    std::vector<std::string> labels;
    std::vector<double> means, stds;
    for (const AblationRow& r : rows) {
        labels.push_back(r.flag);
        means.push_back(r.mean(run_mae));
        stds.push_back(r.stddev(run_mae));
    }
    write_bar_svg((fs::path(dir) / "ablation_mae.svg").string(), "val MAE by variant", labels,
                  means, stds);
}

void write_bar_svg(const std::string& path, const std::string& title,
                   const std::vector<std::string>& labels, const std::vector<double>& means,
                   const std::vector<double>& stds) {
    require(!labels.empty() && labels.size() == means.size() && means.size() == stds.size(),
            "bar chart needs equal-length labels, means, and stds");
    const int n = static_cast<int>(labels.size());
    const int bar_w = 64, gap = 36, x0 = 70, y_top = 50, plot_h = 220;
    const int width = x0 + n * (bar_w + gap) + 40;
    const int height = y_top + plot_h + 70;
    double top = 1e-12;
    for (int i = 0; i < n; ++i) top = std::max(top, means[i] + stds[i]);
    top *= 1.1;

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" font-family=\"monospace\" font-size=\"12\">\n";
    out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
        << title << "</text>\n";
    // axes
    const int base_y = y_top + plot_h;
    out << "<line x1=\"" << x0 - 8 << "\" y1=\"" << base_y << "\" x2=\"" << width - 20
        << "\" y2=\"" << base_y << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << x0 - 8 << "\" y1=\"" << base_y << "\" x2=\"" << x0 - 8 << "\" y2=\""
        << y_top - 6 << "\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        double v = top * tick / 4.0;
        int y = base_y - static_cast<int>(plot_h * tick / 4.0);
        out << "<text x=\"" << x0 - 14 << "\" y=\"" << y + 4
            << "\" text-anchor=\"end\">" << fmt(v, 2) << "</text>\n";
        out << "<line x1=\"" << x0 - 12 << "\" y1=\"" << y << "\" x2=\"" << x0 - 8 << "\" y2=\""
            << y << "\" stroke=\"black\"/>\n";
    }
    for (int i = 0; i < n; ++i) {
        int x = x0 + i * (bar_w + gap);
        int h = static_cast<int>(plot_h * means[i] / top);
        out << "<rect x=\"" << x << "\" y=\"" << base_y - h << "\" width=\"" << bar_w
            << "\" height=\"" << h << "\" fill=\"#4878a8\"/>\n";
        if (stds[i] > 0.0) {
            int cx = x + bar_w / 2;
            int y1 = base_y - static_cast<int>(plot_h * (means[i] + stds[i]) / top);
            int y2 = base_y - static_cast<int>(plot_h * std::max(0.0, means[i] - stds[i]) / top);
            out << "<line x1=\"" << cx << "\" y1=\"" << y1 << "\" x2=\"" << cx << "\" y2=\"" << y2
                << "\" stroke=\"black\"/>\n";
            out << "<line x1=\"" << cx - 8 << "\" y1=\"" << y1 << "\" x2=\"" << cx + 8
                << "\" y2=\"" << y1 << "\" stroke=\"black\"/>\n";
            out << "<line x1=\"" << cx - 8 << "\" y1=\"" << y2 << "\" x2=\"" << cx + 8
                << "\" y2=\"" << y2 << "\" stroke=\"black\"/>\n";
        }
        out << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << base_y - h - 6
            << "\" text-anchor=\"middle\">" << fmt(means[i], 2) << "</text>\n";
        out << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << base_y + 18
            << "\" text-anchor=\"middle\">" << labels[i] << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace quanet
