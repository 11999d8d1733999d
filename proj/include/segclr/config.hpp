// config.hpp - the flat hierarchical key/value config format used by the
// CLI for dataset generation and experiment definitions.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "segclr/synthdata.hpp"
#include "segclr/training.hpp"

namespace segclr {

// `key = value` lines, '#' comments, dotted keys for nesting. Every key must
// be consumed; finish() reports unknown keys by their full path.
class KeyValueConfig {
public:
    static KeyValueConfig parse_file(const std::string& path);
    static KeyValueConfig parse_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::string require(const std::string& key);
    std::optional<std::string> get(const std::string& key);

    double require_double(const std::string& key);
    double get_double(const std::string& key, double fallback);
    int require_int(const std::string& key);
    int get_int(const std::string& key, int fallback);
    bool get_bool(const std::string& key, bool fallback);
    std::vector<std::string> require_list(const std::string& key);
    std::vector<std::string> get_list(const std::string& key);  // empty when absent

    std::set<std::string> segments_under(const std::string& prefix) const;
    void finish() const;  // throws on unconsumed keys

private:
    std::string origin_;
    std::map<std::string, std::string> values_;
    std::set<std::string> consumed_;
};

struct GenerationConfig {
    std::string name = "dataset";
    std::uint64_t seed = 0;
    double f_train = 0.6, f_val = 0.2, f_test = 0.2;
    std::vector<DomainSpec> domains;  // sorted by domain_id
};

GenerationConfig parse_generation_config(const std::string& path);
ExperimentConfig parse_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config_text(const std::string& text,
                                              const std::string& origin = "<string>");

std::uint64_t file_content_hash(const std::string& path);

}  // namespace segclr
