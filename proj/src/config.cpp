#include "segclr/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace segclr {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    const auto last = trim(cur);
    if (!last.empty() || !out.empty()) out.push_back(last);
    while (!out.empty() && out.back().empty()) out.pop_back();
    return out;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str(), path);
}

KeyValueConfig KeyValueConfig::parse_string(const std::string& text, const std::string& origin) {
    KeyValueConfig cfg;
    cfg.origin_ = origin;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                        ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": empty key");
        if (cfg.values_.count(key))
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                                        key + "'");
        cfg.values_[key] = value;
    }
    return cfg;
}

std::string KeyValueConfig::require(const std::string& key) {
    const auto it = values_.find(key);
    if (it == values_.end())
        throw std::invalid_argument(origin_ + ": missing required field '" + key + "'");
    consumed_.insert(key);
    return it->second;
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    consumed_.insert(key);
    return it->second;
}

double KeyValueConfig::require_double(const std::string& key) {
    const auto s = require(key);
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (...) {
        throw std::invalid_argument(origin_ + ": field '" + key + "' is not a number: '" + s + "'");
    }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    return require_double(key);
}

int KeyValueConfig::require_int(const std::string& key) {
    const auto s = require(key);
    try {
        std::size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (...) {
        throw std::invalid_argument(origin_ + ": field '" + key + "' is not an integer: '" + s + "'");
    }
}

int KeyValueConfig::get_int(const std::string& key, int fallback) {
    if (!has(key)) return fallback;
    return require_int(key);
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto s = require(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw std::invalid_argument(origin_ + ": field '" + key + "' is not a boolean: '" + s + "'");
}

std::vector<std::string> KeyValueConfig::require_list(const std::string& key) {
    return split_on(require(key), ',');
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key) {
    if (!has(key)) return {};
    return split_on(require(key), ',');
}

std::set<std::string> KeyValueConfig::segments_under(const std::string& prefix) const {
    std::set<std::string> out;
    for (const auto& [k, v] : values_) {
        if (k.rfind(prefix + ".", 0) != 0) continue;
        const std::string rest = k.substr(prefix.size() + 1);
        const auto dot = rest.find('.');
        out.insert(dot == std::string::npos ? rest : rest.substr(0, dot));
    }
    return out;
}

void KeyValueConfig::finish() const {
    std::string unknown;
    for (const auto& [k, v] : values_)
        if (!consumed_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    if (!unknown.empty())
        throw std::invalid_argument(origin_ + ": unknown field(s): " + unknown);
}

// ---- generation ---------------------------------------------------------------

GenerationConfig parse_generation_config(const std::string& path) {
    auto cfg = KeyValueConfig::parse_file(path);
    GenerationConfig gen;
    if (auto n = cfg.get("name")) gen.name = *n;
    gen.seed = std::uint64_t(cfg.get_int("seed", 0));
    const auto fr = cfg.get_list("fractions");
    if (!fr.empty()) {
        if (fr.size() != 3)
            throw std::invalid_argument(path + ": fractions must be 'train,val,test'");
        gen.f_train = std::stod(fr[0]);
        gen.f_val = std::stod(fr[1]);
        gen.f_test = std::stod(fr[2]);
    }
    const auto ids = cfg.segments_under("domain");
    if (ids.empty()) throw std::invalid_argument(path + ": no domain.<id>.* entries");
    for (const auto& id : ids) {
        const std::string p = "domain." + id + ".";
        DomainSpec spec;
        spec.domain_id = id;
        spec.n_volumes = cfg.require_int(p + "n_volumes");
        spec.slices_per_volume = cfg.require_int(p + "slices_per_volume");
        spec.slice_h = cfg.require_int(p + "slice_h");
        spec.slice_w = cfg.require_int(p + "slice_w");
        spec.res_h_um = cfg.get_double(p + "res_h_um", 10.0);
        spec.res_w_um = cfg.get_double(p + "res_w_um", 4.0);
        spec.slice_spacing_um = cfg.get_double(p + "slice_spacing_um", 111.0);
        spec.class_set = cfg.require_list(p + "classes");
        spec.labeled_slices_per_volume = cfg.get_int(p + "labeled_slices_per_volume", -1);
        spec.appearance.noise_std = cfg.get_double(p + "noise_std", 0.0);
        spec.appearance.contrast_gain = cfg.get_double(p + "contrast_gain", 1.0);
        spec.appearance.blur_sigma = cfg.get_double(p + "blur_sigma", 0.0);
        spec.content.lesion_density = cfg.get_double(p + "lesion_density", 0.0);
        spec.content.lesion_scale = cfg.get_double(p + "lesion_scale", 6.0);
        spec.validate();
        gen.domains.push_back(std::move(spec));
    }
    cfg.finish();
    return gen;
}

// ---- experiment ----------------------------------------------------------------

ExperimentConfig parse_experiment_config_text(const std::string& text, const std::string& origin) {
    auto cfg = KeyValueConfig::parse_string(text, origin);
    ExperimentConfig ec;
    if (auto n = cfg.get("name")) ec.name = *n;
    ec.variant = model_variant_from_string(cfg.get("variant").value_or("segclr"));
    ec.pairing = pair_strategy_from_string(cfg.get("pairing").value_or("a"));
    const auto proj = cfg.get("projection").value_or("ch");
    if (proj == "pool")
        ec.arch.head_kind = HeadKind::pool;
    else if (proj == "ch")
        ec.arch.head_kind = HeadKind::ch;
    else
        throw std::invalid_argument(origin + ": projection must be 'pool' or 'ch'");
    ec.source_domains = cfg.require_list("source_domains");
    ec.target_domains = cfg.get_list("target_domains");
    ec.unlabeled_fraction = cfg.get_double("unlabeled_fraction", 1.0);
    ec.classes = cfg.require_list("classes");
    for (const auto& s : cfg.require_list("seeds")) ec.seeds.push_back(std::stoi(s));
    ec.epochs = cfg.get_int("epochs", 30);
    ec.pretrain_epochs = cfg.get_int("pretrain_epochs", -1);
    ec.batch_size_sup = cfg.get_int("batch_size_sup", 8);
    ec.batch_size_con = cfg.get_int("batch_size_con", 8);
    ec.supervised_augment = cfg.get_bool("supervised_augment", false);
    ec.contrastive_weight = cfg.get_double("contrastive_weight", 1.0);
    ec.eval_threshold = cfg.get_double("eval_threshold", 0.5);

    ec.optimizer.name = cfg.get("optimizer.name").value_or("adam");
    ec.optimizer.lr = cfg.get_double("optimizer.lr", 1e-3);

    ec.loss.lambda_sup = cfg.get_double("loss.lambda_sup", 20.0);
    ec.loss.tau = cfg.get_double("loss.tau", 0.5);
    ec.loss.epsilon = cfg.get_double("loss.epsilon", 1e-12);
    const auto kind = cfg.get("loss.contrastive").value_or("ntxent");
    if (kind == "ntxent")
        ec.loss.kind = LossConfig::Contrastive::ntxent;
    else if (kind == "simsiam")
        ec.loss.kind = LossConfig::Contrastive::simsiam;
    else
        throw std::invalid_argument(origin + ": loss.contrastive must be 'ntxent' or 'simsiam'");
    ec.loss.include_positive_in_denominator = cfg.get_bool("loss.include_positive", false);

    ec.augment.p_hflip = cfg.get_double("augment.p_hflip", 0.5);
    ec.augment.max_translate_frac = cfg.get_double("augment.max_translate_frac", 0.25);
    ec.augment.max_zoom_in_frac = cfg.get_double("augment.max_zoom_in_frac", 0.5);
    ec.augment.max_brightness_frac = cfg.get_double("augment.max_brightness_frac", 0.6);
    ec.augment.max_jitter_frac = cfg.get_double("augment.max_jitter_frac", 0.2);

    ec.slice_pairing.sigma_um = cfg.get_double("slice_pairing.sigma_um", 250.0);
    ec.slice_pairing.slice_spacing_um = cfg.get_double("slice_pairing.slice_spacing_um", 111.0);

    ec.arch.depth = cfg.get_int("arch.depth", 2);
    ec.arch.base_channels = cfg.get_int("arch.base_channels", 8);
    ec.arch.input_h = cfg.get_int("arch.input_h", 64);
    ec.arch.input_w = cfg.get_int("arch.input_w", 64);
    ec.arch.dropout_p = cfg.get_double("arch.dropout_p", 0.5);
    ec.arch.mlp_units = cfg.get_int("arch.mlp_units", 128);
    ec.arch.groupnorm_groups = cfg.get_int("arch.groupnorm_groups", 4);
    ec.arch.n_classes = int(ec.classes.size());

    cfg.finish();
    ec.validate();
    return ec;
}

ExperimentConfig parse_experiment_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_experiment_config_text(ss.str(), path);
}

std::uint64_t file_content_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::invalid_argument("cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return fnv1a64(ss.str());
}

}  // namespace segclr
