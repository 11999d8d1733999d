// commands.hpp - the operations behind the CLI subcommands. Kept in the
// library so they can be tested without spawning processes.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace segclr {

struct RunManifest {
    std::string model_id;
    std::string config_name;
    std::uint64_t config_hash = 0;
    std::vector<std::string> classes;
    double threshold = 0.5;
    std::string framework;
    std::string created;  // wall-clock timestamp, excluded from determinism
    std::vector<int> seeds;
    std::vector<std::string> checkpoints;  // parallel to seeds
    std::vector<std::string> histories;
    std::vector<std::string> data_domains;  // dataset directories opened
    std::map<std::string, std::size_t> domain_image_reads;
    std::size_t label_reads = 0;

    void save(const std::string& path) const;
    static RunManifest load(const std::string& path);
};

struct TrainOptions {
    std::vector<int> seeds_override;
    bool force = false;
    int workers = 1;
};

void cmd_generate(const std::string& config_path, const std::string& out_dir);
void cmd_train(const std::string& config_path, const std::string& data_dir,
               const std::string& out_dir, const TrainOptions& options);
void cmd_evaluate(const std::string& manifest_path, const std::string& data_dir,
                  const std::string& out_csv, const std::vector<std::string>& domains = {},
                  const std::string& model_filter = "");
void cmd_rank(const std::vector<std::string>& metric_csvs, const std::string& out_dir);
void cmd_report(const std::vector<std::string>& metric_csvs, const std::string& out_dir,
                const std::string& baseline_model);

}  // namespace segclr
