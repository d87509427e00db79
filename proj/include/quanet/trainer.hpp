#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "quanet/checkpoint.hpp"
#include "quanet/losses.hpp"
#include "quanet/metrics.hpp"
#include "quanet/model.hpp"
#include "quanet/prompts.hpp"
#include "quanet/synthdata.hpp"

namespace quanet {

struct OptimConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    // Short second-moment memory: density gradients span orders of magnitude
    // between the initial transient and the converged regime, and a long
    // memory (0.999) keeps steps pinned to the stale large scale.
    double beta2 = 0.99;
    double eps = 1e-8;
    double decay = 1.0 / 3.0;  // lr multiplier applied after 60% and 85% of epochs

    void validate() const;
};

// Complete description of one training run. JSON configs mirror this struct
// field-for-field, carry a mandatory "version": 1, and reject unknown keys.
struct RunConfig {
    ModelConfig model;
    LossConfig loss;
    OptimConfig optim;
    std::string data_root;
    std::string out_dir = "run";
    int epochs = 30;
    int batch_size = 16;
    uint64_t seed = 0;
    std::string variant = "full";
    int max_train = 0;  // 0 = whole split; positive caps the sample count
    int max_val = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig from_file(const std::string& path);
};

struct EpochStats {
    int epoch = 0;  // 1-based
    double lr = 0.0;
    double train_loss = 0.0, train_count = 0.0, train_align = 0.0, train_rank = 0.0;
    double val_loss = 0.0, val_mae = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = -1;
    double best_val_mae = 0.0;
    std::string best_ckpt;  // lowest val MAE
    std::string last_ckpt;  // end of the final epoch (resume point)
};

struct EvalSummary {
    double mae = 0.0, rmse = 0.0;
    std::vector<double> game;  // levels 0..3
    double rank_map = 0.0;
    std::vector<EvalRecord> records;
    std::vector<std::string> warnings;
};

// Mean per-sample loss components of one batch.
struct BatchStats {
    double total = 0.0, count = 0.0, align = 0.0, rank = 0.0;
};

class Trainer {
public:
    explicit Trainer(RunConfig cfg);

    // Runs the epoch schedule, writing logs and checkpoints under
    // cfg.out_dir. resume_from restarts after the last completed epoch of a
    // checkpoint written by an identical config. on_epoch (if set) fires
    // after each epoch's validation pass.
    TrainResult fit(const std::string& resume_from = "",
                    const std::function<void(const EpochStats&)>& on_epoch = {});

    // Category-prompt inference over a sample set: the quantity path is
    // never touched (asserted via the numeral-embedding counter).
    EvalSummary evaluate(const std::vector<CountingSample>& samples);

    // Mean cosine similarity between each image's global feature and its
    // factual quantity prompt. Uses numerals, so it lives outside
    // evaluate(); this is the quantity-awareness probe.
    double mean_factual_similarity(const std::vector<CountingSample>& samples);

    // Overwrites the model (and optimizer moments, when present) from a
    // checkpoint. Parameters are created lazily on first use, so this first
    // materializes them with a throwaway forward pass.
    void restore(const Checkpoint& ck);

    // One optimizer step over batch indices into the training split;
    // exposed for tests.
    BatchStats train_batch(const std::vector<int>& batch, int epoch);

    double lr_at_epoch(int epoch) const;

    ParamStore<double>& params() { return params_; }
    const RunConfig& config() const { return cfg_; }
    const Variant& variant() const { return variant_; }
    const std::vector<CountingSample>& train_set() const { return train_; }
    const std::vector<CountingSample>& val_set() const { return val_; }

private:
    struct Prepped;
    struct ForwardOut;

    Prepped prep(const CountingSample& s) const;
    // Training-graph forward over one sample; backward when training=true.
    ForwardOut forward(const Prepped& p, int epoch, bool training);
    // Category-prompt forward (the deployment path): no losses, no numerals.
    GridF infer_density(const CountingSample& s);
    void adam_step(double lr, int batch_n);
    void save_state(const std::string& path, int epochs_done, int best_epoch,
                    double best_val_mae);
    void log_jsonl(const nlohmann::json& event);

    RunConfig cfg_;
    Variant variant_;
    ParamStore<double> params_;
    std::vector<CountingSample> train_, val_;
    std::vector<std::string> classes_;
    Vocab vocab_;
    int64_t adam_t_ = 0;
};

// Writes one row per image: image_id, class, gt_count, pred_count, abs_err.
void write_eval_csv(const std::string& path, const std::vector<EvalRecord>& records);
// Single-row summary: mae, rmse, game0..3, rank_map.
void write_summary_csv(const std::string& path, const EvalSummary& s);

// One trained-and-evaluated (variant, seed) pair inside an ablation sweep.
struct AblationRun {
    uint64_t seed = 0;
    EvalSummary val;
    double sim_init = 0.0;     // factual-prompt similarity before training
    double sim_trained = 0.0;  // ... and at the best checkpoint
    double best_val_mae = 0.0;
    std::string run_dir;
};

struct AblationRow {
    std::string flag;
    std::string table_row;
    std::vector<AblationRun> runs;

    // mean / sample stddev of any per-run scalar
    double mean(double (*field)(const AblationRun&)) const;
    double stddev(double (*field)(const AblationRun&)) const;
    double mean_mae() const;
    double stddev_mae() const;
};

// Trains and evaluates every (variant, seed) pair off the template config
// (each run under out_dir/<variant>_s<seed>) and writes ablation.csv,
// ablation.txt and ablation_mae.svg under the template's out_dir. progress
// (if set) receives one human-readable line per epoch and per finished run.
std::vector<AblationRow> ablate(const RunConfig& base, const std::vector<std::string>& variants,
                                const std::vector<uint64_t>& seeds,
                                const std::function<void(const std::string&)>& progress = {});

std::string render_ablation_table(const std::vector<AblationRow>& rows);
void write_ablation_outputs(const std::string& dir, const std::vector<AblationRow>& rows);

// Minimal grouped bar chart with error whiskers (one group per label).
void write_bar_svg(const std::string& path, const std::string& title,
                   const std::vector<std::string>& labels, const std::vector<double>& means,
                   const std::vector<double>& stds);

}  // namespace quanet
