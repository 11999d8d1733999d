#include "segclr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace segclr {

double dice_score(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("dice_score: shape mismatch");
    std::size_t np = 0, ng = 0, ni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] > 1 || gt[i] > 1) throw std::invalid_argument("dice_score: masks must be binary");
        np += pred[i];
        ng += gt[i];
        ni += pred[i] & gt[i];
    }
    if (np == 0 && ng == 0) return 100.0;
    return 100.0 * 2.0 * double(ni) / double(np + ng);
}

double uvd(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
           double pixel_area_um2, double slice_spacing_um) {
    if (pred.size() != gt.size()) throw std::invalid_argument("uvd: shape mismatch");
    if (pixel_area_um2 <= 0 || slice_spacing_um <= 0)
        throw std::invalid_argument("uvd: geometry must be positive");
    std::size_t mismatched = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] > 1 || gt[i] > 1) throw std::invalid_argument("uvd: masks must be binary");
        mismatched += std::size_t(pred[i] != gt[i]);
    }
    return double(mismatched) * pixel_area_um2 * slice_spacing_um;
}

std::vector<MetricRecord> evaluate_model(const ModelState& state,
                                         const std::vector<Volume>& volumes,
                                         const std::vector<std::string>& model_classes,
                                         double threshold, const std::string& model_id, int seed) {
    if (threshold <= 0.0 || threshold >= 1.0)
        throw std::invalid_argument("evaluate_model: threshold must be in (0,1)");
    if (int(model_classes.size()) != state.arch.n_classes)
        throw std::invalid_argument("evaluate_model: model_classes must match arch.n_classes");

    std::vector<MetricRecord> records;
    const int H = state.arch.input_h, W = state.arch.input_w;
    for (const auto& vol : volumes) {
        if (!vol.has_labels() || vol.labeled_slice_indices.empty()) continue;
        if (vol.height != H || vol.width != W)
            throw std::invalid_argument("evaluate_model: volume " + vol.volume_id +
                                        " shape does not match architecture input");
        // channel of each evaluated class in the network output
        std::vector<std::pair<int, int>> eval_classes;  // (volume class idx, model channel)
        for (std::size_t vc = 0; vc < vol.class_names.size(); ++vc)
            for (std::size_t mc = 0; mc < model_classes.size(); ++mc)
                if (vol.class_names[vc] == model_classes[mc])
                    eval_classes.emplace_back(int(vc), int(mc));
        if (eval_classes.empty()) continue;

        const double pixel_area = vol.res_h_um * vol.res_w_um;
        const std::size_t plane = vol.plane();
        std::vector<double> batch;
        batch.reserve(vol.labeled_slice_indices.size() * plane);
        for (int s : vol.labeled_slice_indices) {
            const float* p = vol.slice(s);
            batch.insert(batch.end(), p, p + plane);
        }
        const auto probs = forward_segment(state, batch, int(vol.labeled_slice_indices.size()));
        const int C = state.arch.n_classes;

        std::vector<std::uint8_t> pred(plane);
        for (std::size_t bi = 0; bi < vol.labeled_slice_indices.size(); ++bi) {
            const int s = vol.labeled_slice_indices[bi];
            for (const auto& [vc, mc] : eval_classes) {
                const double* pp = &probs[(bi * C + std::size_t(mc)) * plane];
                for (std::size_t i = 0; i < plane; ++i) pred[i] = pp[i] >= threshold ? 1 : 0;
                const std::uint8_t* gt = vol.label_mask(s, vc);
                MetricRecord r;
                r.model_id = model_id;
                r.seed = seed;
                r.domain_id = vol.domain_id;
                r.volume_id = vol.volume_id;
                r.slice_index = s;
                r.class_name = vol.class_names[vc];
                r.dice = dice_score(pred, std::span<const std::uint8_t>(gt, plane));
                r.uvd = uvd(pred, std::span<const std::uint8_t>(gt, plane), pixel_area,
                            vol.slice_spacing_um);
                records.push_back(std::move(r));
            }
        }
    }
    return records;
}

std::vector<RelativeMetrics> relative_metrics(const std::vector<MetricRecord>& records,
                                              const std::vector<MetricRecord>& baseline_records) {
    if (baseline_records.empty())
        throw std::invalid_argument("relative_metrics: baseline records are empty");

    struct Sums {
        double dice = 0, uvd = 0;
        std::size_t n = 0;
    };
    std::map<std::string, Sums> base;
    for (const auto& r : baseline_records) {
        auto& s = base[r.class_name];
        s.dice += r.dice;
        s.uvd += r.uvd;
        ++s.n;
    }
    std::map<std::string, std::pair<double, double>> base_mean;  // class -> (dice, uvd)
    for (const auto& [cls, s] : base) {
        const double md = s.dice / double(s.n), mu = s.uvd / double(s.n);
        if (md == 0.0 || mu == 0.0) {
            std::fprintf(stderr,
                         "warning: relative_metrics: baseline mean is zero for class '%s', "
                         "excluding it\n",
                         cls.c_str());
            continue;
        }
        base_mean[cls] = {md, mu};
    }
    if (base_mean.empty())
        throw std::invalid_argument("relative_metrics: no class has a usable baseline mean");

    // (model, seed) -> class -> per-slice relative sums
    struct Acc {
        double dice = 0, uvd = 0;
        std::size_t n = 0;
    };
    std::map<std::pair<std::string, int>, std::map<std::string, Acc>> acc;
    for (const auto& r : records) {
        const auto it = base_mean.find(r.class_name);
        if (it == base_mean.end()) continue;
        auto& a = acc[{r.model_id, r.seed}][r.class_name];
        a.dice += r.dice / it->second.first - 1.0;
        a.uvd += r.uvd / it->second.second - 1.0;
        ++a.n;
    }

    std::vector<RelativeMetrics> out;
    for (const auto& [key, classes] : acc) {
        RelativeMetrics rm;
        rm.model_id = key.first;
        rm.seed = key.second;
        double d = 0, u = 0;
        for (const auto& [cls, a] : classes) {
            d += a.dice / double(a.n);
            u += a.uvd / double(a.n);
        }
        rm.rel_dice_pct = 100.0 * d / double(classes.size());
        rm.rel_uvd_pct = 100.0 * u / double(classes.size());
        out.push_back(std::move(rm));
    }
    return out;
}

RankTable rank_models(const std::vector<MetricRecord>& records) {
    if (records.empty()) throw std::invalid_argument("rank_models: no records");

    std::set<std::string> model_set;
    std::set<std::pair<std::string, int>> cell_set;  // (volume, seed)
    for (const auto& r : records) {
        model_set.insert(r.model_id);
        cell_set.insert({r.volume_id, r.seed});
    }
    const std::vector<std::string> models(model_set.begin(), model_set.end());

    // volume-level aggregation: mean over the (slice, class) records
    struct Agg {
        double dice = 0, uvd = 0;
        std::size_t n = 0;
    };
    std::map<std::tuple<std::string, std::string, int>, Agg> cells;  // (model, volume, seed)
    for (const auto& r : records) {
        auto& a = cells[{r.model_id, r.volume_id, r.seed}];
        a.dice += r.dice;
        a.uvd += r.uvd;
        ++a.n;
    }

    std::string missing;
    for (const auto& m : models)
        for (const auto& [vol, seed] : cell_set)
            if (!cells.count({m, vol, seed}))
                missing += "  (model=" + m + ", volume=" + vol + ", seed=" + std::to_string(seed) +
                           ")\n";
    if (!missing.empty())
        throw std::invalid_argument("rank_models: missing cells:\n" + missing);

    std::map<std::string, double> dice_rank_sum, uvd_rank_sum;
    std::size_t n_cells = 0;
    // rank with average ties; values: metric per (model) for a fixed cell
    const auto ranks_of = [&](const std::vector<double>& value, bool higher_better) {
        const std::size_t m = value.size();
        std::vector<std::size_t> order(m);
        for (std::size_t i = 0; i < m; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return higher_better ? value[a] > value[b] : value[a] < value[b];
        });
        std::vector<double> rank(m, 0.0);
        std::size_t i = 0;
        while (i < m) {
            std::size_t j = i;
            while (j + 1 < m && value[order[j + 1]] == value[order[i]]) ++j;
            const double avg = 0.5 * double(i + 1 + j + 1);  // ranks are 1-based
            for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
            i = j + 1;
        }
        return rank;
    };

    for (const auto& cellkey : cell_set) {
        std::vector<double> dice_vals(models.size()), uvd_vals(models.size());
        for (std::size_t i = 0; i < models.size(); ++i) {
            const auto& a = cells.at({models[i], cellkey.first, cellkey.second});
            dice_vals[i] = a.dice / double(a.n);
            uvd_vals[i] = a.uvd / double(a.n);
        }
        const auto dr = ranks_of(dice_vals, /*higher_better=*/true);
        const auto ur = ranks_of(uvd_vals, /*higher_better=*/false);
        for (std::size_t i = 0; i < models.size(); ++i) {
            dice_rank_sum[models[i]] += dr[i];
            uvd_rank_sum[models[i]] += ur[i];
        }
        ++n_cells;
    }

    RankTable table;
    for (const auto& m : models) {
        RankEntry e;
        e.model_id = m;
        e.dice_rank = dice_rank_sum[m] / double(n_cells);
        e.uvd_rank = uvd_rank_sum[m] / double(n_cells);
        e.final_rank = 0.5 * (e.dice_rank + e.uvd_rank);
        table.entries.push_back(std::move(e));
    }
    std::sort(table.entries.begin(), table.entries.end(), [](const RankEntry& a, const RankEntry& b) {
        if (a.final_rank != b.final_rank) return a.final_rank < b.final_rank;
        return a.model_id < b.model_id;
    });
    return table;
}

// ---- CSV ---------------------------------------------------------------------

const char* kMetricCsvHeader = "model_id,seed,domain,volume,slice,class,dice,uvd";

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

bool record_less(const MetricRecord& a, const MetricRecord& b) {
    return std::tie(a.model_id, a.seed, a.domain_id, a.volume_id, a.slice_index, a.class_name) <
           std::tie(b.model_id, b.seed, b.domain_id, b.volume_id, b.slice_index, b.class_name);
}

}  // namespace

std::string format_metric_csv(std::vector<MetricRecord> records) {
    std::sort(records.begin(), records.end(), record_less);
    std::string out = kMetricCsvHeader;
    out += "\n";
    for (const auto& r : records) {
        out += r.model_id + "," + std::to_string(r.seed) + "," + r.domain_id + "," + r.volume_id +
               "," + std::to_string(r.slice_index) + "," + r.class_name + "," + fmt_double(r.dice) +
               "," + fmt_double(r.uvd) + "\n";
    }
    return out;
}

void write_metric_csv(const std::vector<MetricRecord>& records, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_metric_csv: cannot open " + path);
    f << format_metric_csv(records);
    if (!f) throw std::runtime_error("write_metric_csv: write failed for " + path);
}

std::vector<MetricRecord> read_metric_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_metric_csv: cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line != kMetricCsvHeader)
        throw std::runtime_error("read_metric_csv: bad header in " + path);
    std::vector<MetricRecord> records;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                cols.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        cols.push_back(cur);
        if (cols.size() != 8)
            throw std::runtime_error("read_metric_csv: malformed row '" + line + "'");
        MetricRecord r;
        r.model_id = cols[0];
        r.seed = std::stoi(cols[1]);
        r.domain_id = cols[2];
        r.volume_id = cols[3];
        r.slice_index = std::stoi(cols[4]);
        r.class_name = cols[5];
        r.dice = std::stod(cols[6]);
        r.uvd = std::stod(cols[7]);
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace segclr
