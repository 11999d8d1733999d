// segclr - command line front end: dataset generation, training, evaluation,
// ranking, and report emission, all driven by declarative configs.

#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "segclr/commands.hpp"

namespace {

int worker_count() {
    // deterministic mode (the default) runs seeds sequentially; outputs are
    // identical either way since every seed is an isolated computation
    const char* det = std::getenv("SEGCLR_DETERMINISTIC");
    if (det == nullptr || std::string(det) != "0") return 1;
    const unsigned n = std::thread::hardware_concurrency();
    return n > 0 ? int(n) : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"segclr: joint supervised + contrastive slice-wise segmentation"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, manifest_path, model_filter, baseline_model;
    std::vector<std::string> csvs, domains;
    std::vector<int> seeds;
    bool force = false;

    auto* gen = app.add_subcommand("generate", "generate synthetic multi-domain datasets");
    gen->add_option("--config", config_path, "generation config")->required();
    gen->add_option("--out", out_path, "output dataset root")->required();

    auto* train = app.add_subcommand("train", "train seeded replicates of one experiment");
    train->add_option("--config", config_path, "experiment config")->required();
    train->add_option("--data", data_dir, "dataset root")->required();
    train->add_option("--out", out_path, "run output directory")->required();
    train->add_option("--seeds", seeds, "override the config seed list");
    train->add_flag("--force", force, "overwrite an existing run directory");

    auto* eval = app.add_subcommand("evaluate", "evaluate a run on held-out test volumes");
    eval->add_option("--manifest", manifest_path, "run manifest")->required();
    eval->add_option("--data", data_dir, "dataset root")->required();
    eval->add_option("--out", out_path, "output metric CSV")->required();
    eval->add_option("--domains", domains, "domains to evaluate (default: all)");
    eval->add_option("--model", model_filter, "expected model id");

    auto* rank = app.add_subcommand("rank", "rank models and report significance");
    rank->add_option("--metrics", csvs, "metric CSV files")->required();
    rank->add_option("--out", out_path, "output directory")->required();

    auto* report = app.add_subcommand("report", "emit summary tables and plots");
    report->add_option("--metrics", csvs, "metric CSV files")->required();
    report->add_option("--out", out_path, "output directory")->required();
    report->add_option("--baseline", baseline_model, "baseline model id for relative metrics")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            segclr::cmd_generate(config_path, out_path);
        } else if (train->parsed()) {
            segclr::TrainOptions opts;
            opts.seeds_override = seeds;
            opts.force = force;
            opts.workers = worker_count();
            segclr::cmd_train(config_path, data_dir, out_path, opts);
        } else if (eval->parsed()) {
            segclr::cmd_evaluate(manifest_path, data_dir, out_path, domains, model_filter);
        } else if (rank->parsed()) {
            segclr::cmd_rank(csvs, out_path);
        } else if (report->parsed()) {
            segclr::cmd_report(csvs, out_path, baseline_model);
        }
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: validation: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: runtime: %s\n", e.what());
        return 2;
    }
    return 0;
}
