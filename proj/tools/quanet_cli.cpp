// Command-line front end: dataset generation, training, evaluation,
// ablation sweeps, prompt inspection, and chart rendering.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "quanet/trainer.hpp"

using namespace quanet;
using nlohmann::json;

namespace {

DatasetSpec spec_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset spec '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed JSON in '" + path + "': " + e.what());
    }
    if (!j.is_object()) throw ConfigError("dataset spec must be a JSON object");
    static const char* allowed[] = {"image_size", "n_train",    "n_val",
                                    "n_test",     "classes",    "min_count",
                                    "max_count",  "min_glyph",  "max_glyph",
                                    "distractor_prob", "noise", "seed"};
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok |= (k == a);
        if (!ok) throw ConfigError("unknown key '" + k + "' in dataset spec");
    }
    DatasetSpec sp;
    sp.image_size = j.value("image_size", sp.image_size);
    sp.n_train = j.value("n_train", sp.n_train);
    sp.n_val = j.value("n_val", sp.n_val);
    sp.n_test = j.value("n_test", sp.n_test);
    sp.classes = j.value("classes", sp.classes);
    sp.min_count = j.value("min_count", sp.min_count);
    sp.max_count = j.value("max_count", sp.max_count);
    sp.min_glyph = j.value("min_glyph", sp.min_glyph);
    sp.max_glyph = j.value("max_glyph", sp.max_glyph);
    sp.distractor_prob = j.value("distractor_prob", sp.distractor_prob);
    sp.noise = j.value("noise", sp.noise);
    sp.seed = j.value("seed", sp.seed);
    return sp;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

void print_summary(const EvalSummary& s) {
    std::printf("images    %zu\n", s.records.size());
    std::printf("MAE       %.4f\n", s.mae);
    std::printf("RMSE      %.4f\n", s.rmse);
    for (size_t level = 0; level < s.game.size(); ++level)
        std::printf("GAME(%zu)   %.4f\n", level, s.game[level]);
    std::printf("rank mAP  %.4f\n", s.rank_map);
    for (const std::string& w : s.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

int run_gen_data(const std::string& spec_path, const std::string& out) {
    DatasetSpec sp = spec_from_file(spec_path);
    generate_dataset(sp, out);
    std::printf("wrote %d train / %d val / %d test images (%dpx, %zu classes) to %s\n",
                sp.n_train, sp.n_val, sp.n_test, sp.image_size, sp.classes.size(),
                out.c_str());
    return 0;
}

int run_train(const std::string& config_path, const std::string& variant,
              const std::string& seed, const std::string& out_dir,
              const std::string& resume) {
    RunConfig rc = RunConfig::from_file(config_path);
    if (!variant.empty()) rc.variant = variant;
    if (!seed.empty()) rc.seed = std::stoull(seed);
    if (!out_dir.empty()) rc.out_dir = out_dir;
    rc.validate();

    Trainer tr(rc);
    std::printf("variant %s (%s), %zu train / %zu val images, %d epochs, seed %llu\n",
                rc.variant.c_str(), tr.variant().table_row.c_str(), tr.train_set().size(),
                tr.val_set().size(), rc.epochs,
                static_cast<unsigned long long>(rc.seed));
    TrainResult res = tr.fit(resume, [&](const EpochStats& st) {
        std::printf("epoch %3d/%d  lr %.2e  train %.4f  val_loss %.4f  val_mae %.3f\n",
                    st.epoch, rc.epochs, st.lr, st.train_loss, st.val_loss, st.val_mae);
        std::fflush(stdout);
    });
    std::printf("best epoch %d  val MAE %.4f\n", res.best_epoch, res.best_val_mae);
    std::printf("checkpoints: %s (best), %s (last)\n", res.best_ckpt.c_str(),
                res.last_ckpt.c_str());

    tr.restore(load_checkpoint(res.best_ckpt));
    EvalSummary s = tr.evaluate(tr.val_set());
    std::printf("\nvalidation metrics at the best checkpoint:\n");
    print_summary(s);
    write_eval_csv(rc.out_dir + "/eval_val.csv", s.records);
    write_summary_csv(rc.out_dir + "/summary_val.csv", s);
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& config_path,
             const std::string& split, const std::string& data_root,
             const std::string& out_prefix) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    RunConfig rc;
    if (!config_path.empty()) {
        rc = RunConfig::from_file(config_path);
    } else {
        require(ck.state.contains("config"),
                "checkpoint carries no config echo; pass --config");
        rc = RunConfig::from_json(ck.state.at("config"));
    }
    if (!data_root.empty()) rc.data_root = data_root;

    Trainer tr(rc);
    tr.restore(ck);
    std::vector<CountingSample> loaded;
    const std::vector<CountingSample>* samples = nullptr;
    if (split == "train") {
        samples = &tr.train_set();
    } else if (split == "val") {
        samples = &tr.val_set();
    } else {
        loaded = load_dataset(rc.data_root, split, rc.model.image_size);
        samples = &loaded;
    }
    EvalSummary s = tr.evaluate(*samples);
    std::printf("split %s, checkpoint %s\n", split.c_str(), ckpt_path.c_str());
    print_summary(s);
    std::printf("factual-prompt similarity: %.4f\n", tr.mean_factual_similarity(*samples));
    if (!out_prefix.empty()) {
        write_eval_csv(out_prefix + "_records.csv", s.records);
        write_summary_csv(out_prefix + "_summary.csv", s);
        std::printf("wrote %s_records.csv and %s_summary.csv\n", out_prefix.c_str(),
                    out_prefix.c_str());
    }
    return 0;
}

int run_ablate(const std::string& config_path, const std::string& variants_csv,
               const std::string& seeds_csv) {
    RunConfig rc = RunConfig::from_file(config_path);
    std::vector<std::string> variants = split_csv(variants_csv);
    std::vector<uint64_t> seeds;
    for (const std::string& s : split_csv(seeds_csv)) seeds.push_back(std::stoull(s));
    std::vector<AblationRow> rows = ablate(rc, variants, seeds, [](const std::string& line) {
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
    });
    std::printf("\n%s", render_ablation_table(rows).c_str());
    std::printf("artifacts under %s: ablation.csv, ablation_runs.csv, ablation.txt, "
                "ablation_mae.svg\n",
                rc.out_dir.c_str());
    return 0;
}

int run_prompts(const std::string& cls, int64_t count, int n, int64_t delta) {
    PromptSet ps = generate_prompt_set(cls, count, n, delta);
    json factual = {{"role", "factual"},
                    {"count", ps.factual_count},
                    {"delta", ps.delta},
                    {"text", ps.factual_text}};
    std::cout << factual.dump() << "\n";
    for (size_t i = 0; i < ps.counterfactual_texts.size(); ++i) {
        json line = {{"role", "counterfactual"},
                     {"count", ps.counterfactual_counts[i]},
                     {"text", ps.counterfactual_texts[i]}};
        std::cout << line.dump() << "\n";
    }
    return 0;
}

int run_plot(const std::string& from, const std::string& out, const std::string& metric) {
    std::ifstream in(from);
    if (!in) throw IoError("cannot open '" + from + "'");
    std::string header;
    require(static_cast<bool>(std::getline(in, header)), "'" + from + "' is empty");
    std::vector<std::string> cols = split_csv(header);
    int label_col = -1, mean_col = -1, std_col = -1;
    for (size_t i = 0; i < cols.size(); ++i) {
        if (cols[i] == "variant") label_col = static_cast<int>(i);
        if (cols[i] == metric + "_mean") mean_col = static_cast<int>(i);
        if (cols[i] == metric + "_std") std_col = static_cast<int>(i);
    }
    require(label_col >= 0 && mean_col >= 0 && std_col >= 0,
            "'" + from + "' lacks variant/" + metric + "_mean/" + metric +
                "_std columns; is it an ablation.csv?");
    std::vector<std::string> labels;
    std::vector<double> means, stds;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f = split_csv(line);
        require(f.size() == cols.size(), "malformed row in '" + from + "': " + line);
        labels.push_back(f[static_cast<size_t>(label_col)]);
        means.push_back(std::stod(f[static_cast<size_t>(mean_col)]));
        stds.push_back(std::stod(f[static_cast<size_t>(std_col)]));
    }
    require(!labels.empty(), "'" + from + "' has no data rows");
    write_bar_svg(out, "val " + metric + " by variant", labels, means, stds);
    std::printf("wrote %s (%zu bars)\n", out.c_str(), labels.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"quantity-aware text-promptable counting: data, training, evaluation"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "render a synthetic counting dataset");
    std::string gen_spec, gen_out = "data";
    gen->add_option("--spec", gen_spec, "dataset spec JSON")->required();
    gen->add_option("--out", gen_out, "output directory (default: data)");

    auto* train = app.add_subcommand("train", "train one model");
    std::string tr_config, tr_variant, tr_seed, tr_out, tr_resume;
    train->add_option("--config", tr_config, "run config JSON")->required();
    train->add_option("--variant", tr_variant, "override the config's variant flag");
    train->add_option("--seed", tr_seed, "override the config's seed");
    train->add_option("--out", tr_out, "override the config's out_dir");
    train->add_option("--resume", tr_resume, "continue from this checkpoint");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    std::string ev_ckpt, ev_config, ev_split = "val", ev_root, ev_out;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint .tar")->required();
    ev->add_option("--config", ev_config, "run config JSON (default: the checkpoint's echo)");
    ev->add_option("--split", ev_split, "train, val, or test (default: val)");
    ev->add_option("--data-root", ev_root, "override the config's dataset directory");
    ev->add_option("--out", ev_out, "prefix for _records.csv and _summary.csv");

    auto* ab = app.add_subcommand("ablate", "train and compare a set of variants");
    std::string ab_config, ab_variants, ab_seeds = "1";
    ab->add_option("--config", ab_config, "template run config JSON")->required();
    ab->add_option("--variants", ab_variants, "comma-separated variant flags")->required();
    ab->add_option("--seeds", ab_seeds, "comma-separated seeds (default: 1)");

    auto* pr = app.add_subcommand("prompts", "print a quantity prompt set as JSON lines");
    std::string pr_class;
    int64_t pr_count = 0, pr_delta = 0;
    int pr_n = 8;
    pr->add_option("--class", pr_class, "object class, e.g. kiwis")->required();
    pr->add_option("--count", pr_count, "factual object count")->required();
    pr->add_option("--n", pr_n, "number of counterfactuals (default: 8)");
    pr->add_option("--delta", pr_delta, "fixed count step (default: 0 = binned table)");

    auto* pl = app.add_subcommand("plot", "render a bar chart from an ablation.csv");
    std::string pl_from, pl_out = "chart.svg", pl_metric = "mae";
    pl->add_option("--from", pl_from, "aggregated ablation.csv")->required();
    pl->add_option("--out", pl_out, "output SVG path (default: chart.svg)");
    pl->add_option("--metric", pl_metric, "mae, rmse, or rank_map (default: mae)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return run_gen_data(gen_spec, gen_out);
        if (train->parsed()) return run_train(tr_config, tr_variant, tr_seed, tr_out, tr_resume);
        if (ev->parsed()) return run_eval(ev_ckpt, ev_config, ev_split, ev_root, ev_out);
        if (ab->parsed()) return run_ablate(ab_config, ab_variants, ab_seeds);
        if (pr->parsed()) return run_prompts(pr_class, pr_count, pr_n, pr_delta);
        if (pl->parsed()) return run_plot(pl_from, pl_out, pl_metric);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
