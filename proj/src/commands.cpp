#include "segclr/commands.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "segclr/config.hpp"
#include "segclr/evaluation.hpp"
#include "segclr/training.hpp"

namespace segclr {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFrameworkVersion = "segclr-0.1.0";

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

std::string join(const std::vector<std::string>& v, const char* sep = ",") {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += sep;
        out += v[i];
    }
    return out;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

// ---- manifest -----------------------------------------------------------------

void RunManifest::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("manifest: cannot write " + path);
    f << "segclr-run 1\n";
    f << "model_id " << model_id << "\n";
    f << "config_name " << config_name << "\n";
    char hex[24];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(config_hash));
    f << "config_hash " << hex << "\n";
    f << "classes " << join(classes) << "\n";
    f << "threshold " << fmt_double(threshold) << "\n";
    f << "framework " << framework << "\n";
    f << "created " << created << "\n";
    std::string seed_str;
    for (std::size_t i = 0; i < seeds.size(); ++i)
        seed_str += (i ? "," : "") + std::to_string(seeds[i]);
    f << "seeds " << seed_str << "\n";
    for (std::size_t i = 0; i < seeds.size(); ++i)
        f << "checkpoint " << seeds[i] << " " << checkpoints[i] << "\n";
    for (std::size_t i = 0; i < seeds.size(); ++i)
        f << "history " << seeds[i] << " " << histories[i] << "\n";
    f << "data_domains " << join(data_domains) << "\n";
    for (const auto& [dom, n] : domain_image_reads)
        f << "domain_image_reads " << dom << " " << n << "\n";
    f << "label_reads " << label_reads << "\n";
    f << "end\n";
    if (!f) throw std::runtime_error("manifest: write failed for " + path);
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("manifest: cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line != "segclr-run 1")
        throw std::runtime_error("manifest: bad header in " + path);
    RunManifest m;
    while (std::getline(f, line) && line != "end") {
        std::istringstream is(line);
        std::string key;
        is >> key;
        if (key == "model_id") is >> m.model_id;
        else if (key == "config_name") is >> m.config_name;
        else if (key == "config_hash") {
            std::string hex;
            is >> hex;
            m.config_hash = std::stoull(hex, nullptr, 16);
        } else if (key == "classes") {
            std::string s;
            is >> s;
            std::string cur;
            for (char c : s) {
                if (c == ',') { m.classes.push_back(cur); cur.clear(); }
                else cur += c;
            }
            if (!cur.empty()) m.classes.push_back(cur);
        } else if (key == "threshold") is >> m.threshold;
        else if (key == "framework") is >> m.framework;
        else if (key == "created") is >> m.created;
        else if (key == "seeds") {
            std::string s;
            is >> s;
            std::string cur;
            for (char c : s + ",") {
                if (c == ',') { if (!cur.empty()) m.seeds.push_back(std::stoi(cur)); cur.clear(); }
                else cur += c;
            }
        } else if (key == "checkpoint") {
            int seed; std::string p;
            is >> seed >> p;
            m.checkpoints.push_back(p);
        } else if (key == "history") {
            int seed; std::string p;
            is >> seed >> p;
            m.histories.push_back(p);
        } else if (key == "data_domains") {
            std::string s;
            is >> s;
            std::string cur;
            for (char c : s + ",") {
                if (c == ',') { if (!cur.empty()) m.data_domains.push_back(cur); cur.clear(); }
                else cur += c;
            }
        } else if (key == "domain_image_reads") {
            std::string dom; std::size_t n;
            is >> dom >> n;
            m.domain_image_reads[dom] = n;
        } else if (key == "label_reads") {
            is >> m.label_reads;
        } else {
            throw std::runtime_error("manifest: unknown key '" + key + "' in " + path);
        }
        if (is.fail()) throw std::runtime_error("manifest: malformed line '" + line + "'");
    }
    return m;
}

// ---- generate -----------------------------------------------------------------

void cmd_generate(const std::string& config_path, const std::string& out_dir) {
    const auto gen = parse_generation_config(config_path);
    fs::create_directories(out_dir);
    for (const auto& spec : gen.domains) {
        auto volumes = generate_domain(spec, gen.seed);
        const auto split = split_dataset(std::move(volumes), gen.f_train, gen.f_val, gen.f_test,
                                         splitmix64(gen.seed ^ fnv1a64(spec.domain_id)));
        save_dataset(split, (fs::path(out_dir) / spec.domain_id).string());
    }
}

// ---- train --------------------------------------------------------------------

void cmd_train(const std::string& config_path, const std::string& data_dir,
               const std::string& out_dir, const TrainOptions& options) {
    auto config = parse_experiment_config(config_path);
    if (!options.seeds_override.empty()) {
        config.seeds = options.seeds_override;
        config.validate();
    }

    const fs::path out(out_dir);
    const fs::path manifest_path = out / "run_manifest.txt";
    if (fs::exists(manifest_path) && !options.force)
        throw std::invalid_argument("cmd_train: " + manifest_path.string() +
                                    " already exists; pass --force to overwrite");

    DatasetBundle data;
    std::vector<std::string> loaded;
    for (const auto& dom : config.source_domains) {
        data.add(dom, load_dataset((fs::path(data_dir) / dom).string()));
        loaded.push_back(dom);
    }
    for (const auto& dom : config.target_domains) {
        data.add(dom, load_dataset((fs::path(data_dir) / dom).string()));
        loaded.push_back(dom);
    }

    const auto replicates = run_replicates(config, data, options.workers);

    fs::create_directories(out);
    RunManifest manifest;
    manifest.model_id = config.model_id();
    manifest.config_name = config.name;
    manifest.config_hash = file_content_hash(config_path);
    manifest.classes = config.classes;
    manifest.threshold = config.eval_threshold;
    manifest.framework = kFrameworkVersion;
    manifest.created = timestamp_utc();
    manifest.data_domains = loaded;

    for (const auto& rep : replicates) {
        const std::string ckpt = "ckpt_seed" + std::to_string(rep.seed) + ".bin";
        const std::string hist = "history_seed" + std::to_string(rep.seed) + ".txt";
        save_checkpoint(rep.result.model, (out / ckpt).string());
        std::ofstream hf(out / hist, std::ios::binary);
        if (!hf) throw std::runtime_error("cmd_train: cannot write " + (out / hist).string());
        hf << rep.result.history.to_text();
        manifest.seeds.push_back(rep.seed);
        manifest.checkpoints.push_back(ckpt);
        manifest.histories.push_back(hist);
        for (const auto& dom : loaded)
            manifest.domain_image_reads[dom] +=
                rep.result.access.image_reads_for_domain_prefix(dom);
        manifest.label_reads += rep.result.access.label_reads_total();
    }
    manifest.save(manifest_path.string());
}

// ---- evaluate -----------------------------------------------------------------

void cmd_evaluate(const std::string& manifest_path, const std::string& data_dir,
                  const std::string& out_csv, const std::vector<std::string>& domains,
                  const std::string& model_filter) {
    const auto manifest = RunManifest::load(manifest_path);
    if (!model_filter.empty() && model_filter != manifest.model_id)
        throw std::invalid_argument("cmd_evaluate: unknown model id '" + model_filter +
                                    "' (run manifest holds '" + manifest.model_id + "')");

    std::vector<std::string> eval_domains = domains;
    if (eval_domains.empty()) {
        for (const auto& entry : fs::directory_iterator(data_dir))
            if (entry.is_directory() && fs::exists(entry.path() / "manifest.txt"))
                eval_domains.push_back(entry.path().filename().string());
        std::sort(eval_domains.begin(), eval_domains.end());
    }
    if (eval_domains.empty())
        throw std::invalid_argument("cmd_evaluate: no dataset directories under " + data_dir);

    const fs::path base = fs::path(manifest_path).parent_path();
    std::vector<MetricRecord> records;
    for (std::size_t i = 0; i < manifest.seeds.size(); ++i) {
        const auto state = load_checkpoint((base / manifest.checkpoints[i]).string());
        for (const auto& dom : eval_domains) {
            const auto split = load_dataset((fs::path(data_dir) / dom).string());
            const auto recs = evaluate_model(state, split.test, manifest.classes,
                                             manifest.threshold, manifest.model_id,
                                             manifest.seeds[i]);
            records.insert(records.end(), recs.begin(), recs.end());
        }
    }
    write_metric_csv(records, out_csv);
}

// ---- rank / report ---------------------------------------------------------------

namespace {

std::vector<MetricRecord> read_all(const std::vector<std::string>& csvs) {
    std::vector<MetricRecord> records;
    for (const auto& p : csvs) {
        const auto r = read_metric_csv(p);
        records.insert(records.end(), r.begin(), r.end());
    }
    return records;
}

std::vector<std::string> sorted_domains(const std::vector<MetricRecord>& records) {
    std::set<std::string> s;
    for (const auto& r : records) s.insert(r.domain_id);
    return {s.begin(), s.end()};
}

std::vector<std::string> sorted_models(const std::vector<MetricRecord>& records) {
    std::set<std::string> s;
    for (const auto& r : records) s.insert(r.model_id);
    return {s.begin(), s.end()};
}

std::vector<MetricRecord> domain_records(const std::vector<MetricRecord>& records,
                                         const std::string& dom) {
    std::vector<MetricRecord> out;
    for (const auto& r : records)
        if (r.domain_id == dom) out.push_back(r);
    return out;
}

// per (model, seed) means of dice and uvd
std::map<std::pair<std::string, int>, std::pair<double, double>> seed_means(
    const std::vector<MetricRecord>& records) {
    std::map<std::pair<std::string, int>, std::array<double, 3>> acc;
    for (const auto& r : records) {
        auto& a = acc[{r.model_id, r.seed}];
        a[0] += r.dice;
        a[1] += r.uvd;
        a[2] += 1.0;
    }
    std::map<std::pair<std::string, int>, std::pair<double, double>> out;
    for (const auto& [k, a] : acc) out[k] = {a[0] / a[2], a[1] / a[2]};
    return out;
}

void write_rank_csv(std::ofstream& f, const std::string& dom, const RankTable& table) {
    for (const auto& e : table.entries)
        f << dom << "," << e.model_id << "," << fmt_double(e.final_rank) << ","
          << fmt_double(e.dice_rank) << "," << fmt_double(e.uvd_rank) << "\n";
}

nlohmann::json significance_json(const std::vector<MetricRecord>& records,
                                 const std::string& dom) {
    const auto models = sorted_models(records);
    const auto means = seed_means(records);
    std::set<int> seed_set;
    for (const auto& [k, v] : means) seed_set.insert(k.second);
    const std::vector<int> seeds(seed_set.begin(), seed_set.end());

    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < models.size(); ++i)
        for (std::size_t j = i + 1; j < models.size(); ++j) {
            std::vector<double> dice_a, dice_b, uvd_a, uvd_b;
            bool complete = true;
            for (int s : seeds) {
                const auto ia = means.find({models[i], s});
                const auto ib = means.find({models[j], s});
                if (ia == means.end() || ib == means.end()) {
                    complete = false;
                    break;
                }
                dice_a.push_back(ia->second.first);
                dice_b.push_back(ib->second.first);
                uvd_a.push_back(ia->second.second);
                uvd_b.push_back(ib->second.second);
            }
            if (!complete || dice_a.size() < 2) continue;
            const auto td = paired_ttest(dice_a, dice_b);
            const auto tu = paired_ttest(uvd_a, uvd_b);
            out.push_back({{"domain", dom},
                           {"model_a", models[i]},
                           {"model_b", models[j]},
                           {"dice", {{"p_value", td.p_value},
                                     {"tier", td.tier},
                                     {"mean_difference", td.mean_difference}}},
                           {"uvd", {{"p_value", tu.p_value},
                                    {"tier", tu.tier},
                                    {"mean_difference", tu.mean_difference}}}});
        }
    return out;
}

void emit_rank_and_significance(const std::vector<MetricRecord>& records,
                                const std::string& out_dir) {
    fs::create_directories(out_dir);
    const auto domains = sorted_domains(records);

    std::ofstream rf(fs::path(out_dir) / "ranks.csv");
    if (!rf) throw std::runtime_error("cmd_rank: cannot write ranks.csv in " + out_dir);
    rf << "domain,model_id,final_rank,dice_rank,uvd_rank\n";
    std::map<std::string, std::pair<double, int>> overall;  // model -> (sum of final, count)
    std::map<std::string, std::pair<double, double>> overall_parts;
    for (const auto& dom : domains) {
        const auto table = rank_models(domain_records(records, dom));
        write_rank_csv(rf, dom, table);
        for (const auto& e : table.entries) {
            overall[e.model_id].first += e.final_rank;
            overall[e.model_id].second += 1;
            overall_parts[e.model_id].first += e.dice_rank;
            overall_parts[e.model_id].second += e.uvd_rank;
        }
    }
    std::vector<RankEntry> overall_entries;
    for (const auto& [model, sum] : overall) {
        RankEntry e;
        e.model_id = model;
        e.final_rank = sum.first / sum.second;
        e.dice_rank = overall_parts[model].first / sum.second;
        e.uvd_rank = overall_parts[model].second / sum.second;
        overall_entries.push_back(e);
    }
    std::sort(overall_entries.begin(), overall_entries.end(),
              [](const RankEntry& a, const RankEntry& b) {
                  if (a.final_rank != b.final_rank) return a.final_rank < b.final_rank;
                  return a.model_id < b.model_id;
              });
    RankTable overall_table;
    overall_table.entries = overall_entries;
    write_rank_csv(rf, "overall", overall_table);

    nlohmann::json sig = nlohmann::json::array();
    for (const auto& dom : domains)
        for (auto& item : significance_json(domain_records(records, dom), dom))
            sig.push_back(item);
    std::ofstream jf(fs::path(out_dir) / "significance.json");
    jf << sig.dump(2) << "\n";
    std::ofstream sf(fs::path(out_dir) / "significance.csv");
    sf << "domain,model_a,model_b,dice_p,dice_tier,uvd_p,uvd_tier\n";
    for (const auto& item : sig)
        sf << item["domain"].get<std::string>() << "," << item["model_a"].get<std::string>() << ","
           << item["model_b"].get<std::string>() << ","
           << fmt_double(item["dice"]["p_value"].get<double>()) << ","
           << item["dice"]["tier"].get<std::string>() << ","
           << fmt_double(item["uvd"]["p_value"].get<double>()) << ","
           << item["uvd"]["tier"].get<std::string>() << "\n";
}

void svg_relative_plot(const std::string& path, const std::string& title,
                       const std::vector<std::string>& models,
                       const std::map<std::string, std::vector<double>>& values) {
    // one panel: per-model mean with a 95% band across seeds, zero line dashed
    const int width = 160 + int(models.size()) * 110, height = 320;
    const int plot_x = 70, plot_y = 40, plot_w = width - plot_x - 20, plot_h = height - plot_y - 60;
    double lo = 0, hi = 0;
    struct Band {
        double mean, half;
    };
    std::map<std::string, Band> bands;
    for (const auto& m : models) {
        const auto& v = values.at(m);
        double mean = 0;
        for (double x : v) mean += x;
        mean /= double(v.size());
        double sd = 0;
        for (double x : v) sd += (x - mean) * (x - mean);
        sd = v.size() > 1 ? std::sqrt(sd / double(v.size() - 1)) : 0.0;
        const double half = v.size() > 1 ? 1.959963984540054 * sd / std::sqrt(double(v.size())) : 0.0;
        bands[m] = {mean, half};
        lo = std::min(lo, mean - half);
        hi = std::max(hi, mean + half);
    }
    const double pad = 0.1 * std::max(1e-9, hi - lo);
    lo -= pad;
    hi += pad;
    const auto ypix = [&](double v) { return plot_y + plot_h * (1.0 - (v - lo) / (hi - lo)); };

    std::ofstream f(path);
    if (!f) throw std::runtime_error("report: cannot write " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\">\n";
    f << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << title << "</text>\n";
    f << "<line x1=\"" << plot_x << "\" y1=\"" << ypix(0.0) << "\" x2=\"" << plot_x + plot_w
      << "\" y2=\"" << ypix(0.0) << "\" stroke=\"black\" stroke-dasharray=\"4 3\"/>\n";
    for (std::size_t i = 0; i < models.size(); ++i) {
        const auto& b = bands.at(models[i]);
        const double cx = plot_x + (double(i) + 0.5) * plot_w / double(models.size());
        f << "<rect x=\"" << cx - 18 << "\" y=\"" << ypix(b.mean + b.half) << "\" width=\"36\" "
          << "height=\"" << std::max(1.0, ypix(b.mean - b.half) - ypix(b.mean + b.half))
          << "\" fill=\"#9db8e8\" opacity=\"0.7\"/>\n";
        f << "<line x1=\"" << cx - 18 << "\" y1=\"" << ypix(b.mean) << "\" x2=\"" << cx + 18
          << "\" y2=\"" << ypix(b.mean) << "\" stroke=\"#1d4ed8\" stroke-width=\"2\"/>\n";
        f << "<text x=\"" << cx << "\" y=\"" << plot_y + plot_h + 18
          << "\" text-anchor=\"middle\" font-size=\"10\">" << models[i] << "</text>\n";
    }
    char lab[64];
    std::snprintf(lab, sizeof lab, "%.2f", hi);
    f << "<text x=\"" << plot_x - 6 << "\" y=\"" << plot_y + 4
      << "\" text-anchor=\"end\" font-size=\"10\">" << lab << "</text>\n";
    std::snprintf(lab, sizeof lab, "%.2f", lo);
    f << "<text x=\"" << plot_x - 6 << "\" y=\"" << plot_y + plot_h
      << "\" text-anchor=\"end\" font-size=\"10\">" << lab << "</text>\n";
    f << "</svg>\n";
}

}  // namespace

void cmd_rank(const std::vector<std::string>& metric_csvs, const std::string& out_dir) {
    const auto records = read_all(metric_csvs);
    if (records.empty()) throw std::invalid_argument("cmd_rank: no metric records");
    emit_rank_and_significance(records, out_dir);
}

void cmd_report(const std::vector<std::string>& metric_csvs, const std::string& out_dir,
                const std::string& baseline_model) {
    const auto records = read_all(metric_csvs);
    if (records.empty()) throw std::invalid_argument("cmd_report: empty model list");
    const auto models = sorted_models(records);
    if (std::find(models.begin(), models.end(), baseline_model) == models.end())
        throw std::invalid_argument("cmd_report: baseline model '" + baseline_model +
                                    "' has no records");
    fs::create_directories(out_dir);
    const auto domains = sorted_domains(records);

    // absolute summary: mean +- std across per-seed means
    std::ofstream sf(fs::path(out_dir) / "summary.csv");
    if (!sf) throw std::runtime_error("cmd_report: cannot write summary.csv");
    sf << "domain,model_id,n_seeds,dice_mean,dice_std,uvd_mean,uvd_std\n";
    for (const auto& dom : domains) {
        const auto recs = domain_records(records, dom);
        const auto means = seed_means(recs);
        for (const auto& m : sorted_models(recs)) {
            std::vector<double> dice, uvd;
            for (const auto& [k, v] : means)
                if (k.first == m) {
                    dice.push_back(v.first);
                    uvd.push_back(v.second);
                }
            const auto stats = [](const std::vector<double>& v) {
                double mean = 0;
                for (double x : v) mean += x;
                mean /= double(v.size());
                double sd = 0;
                for (double x : v) sd += (x - mean) * (x - mean);
                sd = v.size() > 1 ? std::sqrt(sd / double(v.size() - 1)) : 0.0;
                return std::pair<double, double>(mean, sd);
            };
            const auto [dm, ds] = stats(dice);
            const auto [um, us] = stats(uvd);
            sf << dom << "," << m << "," << dice.size() << "," << fmt_double(dm) << ","
               << fmt_double(ds) << "," << fmt_double(um) << "," << fmt_double(us) << "\n";
        }
    }

    // relative metrics against the averaged baseline replicates
    std::ofstream rf(fs::path(out_dir) / "relative.csv");
    rf << "domain,model_id,seed,rel_dice_pct,rel_uvd_pct\n";
    for (const auto& dom : domains) {
        const auto recs = domain_records(records, dom);
        std::vector<MetricRecord> base;
        for (const auto& r : recs)
            if (r.model_id == baseline_model) base.push_back(r);
        if (base.empty()) continue;
        auto rel = relative_metrics(recs, base);
        std::sort(rel.begin(), rel.end(), [](const RelativeMetrics& a, const RelativeMetrics& b) {
            return std::tie(a.model_id, a.seed) < std::tie(b.model_id, b.seed);
        });
        std::map<std::string, std::vector<double>> rel_dice, rel_uvd;
        for (const auto& r : rel) {
            rf << dom << "," << r.model_id << "," << r.seed << "," << fmt_double(r.rel_dice_pct)
               << "," << fmt_double(r.rel_uvd_pct) << "\n";
            rel_dice[r.model_id].push_back(r.rel_dice_pct);
            rel_uvd[r.model_id].push_back(r.rel_uvd_pct);
        }
        std::vector<std::string> dom_models;
        for (const auto& [m, v] : rel_dice) dom_models.push_back(m);
        svg_relative_plot((fs::path(out_dir) / ("rel_dice_" + dom + ".svg")).string(),
                          "relative Dice [%] on " + dom + " (95% band)", dom_models, rel_dice);
        svg_relative_plot((fs::path(out_dir) / ("rel_uvd_" + dom + ".svg")).string(),
                          "relative UVD [%] on " + dom + " (95% band)", dom_models, rel_uvd);
    }

    emit_rank_and_significance(records, out_dir);
}

}  // namespace segclr
