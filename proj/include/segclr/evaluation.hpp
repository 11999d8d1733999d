// evaluation.hpp - slice-wise class-wise metrics (Dice %, UVD fL),
// baseline-relative normalization, two-metric model ranking, and the
// paired significance test, plus the metric CSV interchange format.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "segclr/model.hpp"
#include "segclr/stats.hpp"
#include "segclr/synthdata.hpp"

namespace segclr {

struct MetricRecord {
    std::string model_id;
    int seed = 0;
    std::string domain_id;
    std::string volume_id;
    int slice_index = 0;
    std::string class_name;
    double dice = 0.0;  // percent
    double uvd = 0.0;   // femtoliters
};

// Overlap in percent; two empty masks count as a perfect match.
double dice_score(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

// Physical volume of the segmentation error (FP+FN) in fL = µm³.
double uvd(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
           double pixel_area_um2, double slice_spacing_um);

// Deterministic (dropout-off) evaluation of every annotated slice. Records
// are emitted per (slice, class) for classes present in both the volume's
// class set and model_classes; class channel c of the network output maps to
// model_classes[c].
std::vector<MetricRecord> evaluate_model(const ModelState& state,
                                         const std::vector<Volume>& volumes,
                                         const std::vector<std::string>& model_classes,
                                         double threshold, const std::string& model_id, int seed);

struct RelativeMetrics {
    std::string model_id;
    int seed = 0;
    double rel_dice_pct = 0.0;
    double rel_uvd_pct = 0.0;
};

// Per (model, seed): metric / mean-of-baseline-for-that-class - 1, in %,
// averaged first over slices within a class and then across classes with
// equal weight. Classes whose baseline mean is zero are excluded (warned).
std::vector<RelativeMetrics> relative_metrics(const std::vector<MetricRecord>& records,
                                              const std::vector<MetricRecord>& baseline_records);

struct RankEntry {
    std::string model_id;
    double final_rank = 0.0;
    double dice_rank = 0.0;
    double uvd_rank = 0.0;
};

struct RankTable {
    std::vector<RankEntry> entries;  // sorted by final_rank ascending
};

// Volume-level two-metric ranking: per (volume, seed) the models are ranked
// by mean Dice (descending) and mean UVD (ascending), rank 1 best, ties get
// the average rank; ranks are then averaged over volumes, seeds, and the two
// metrics. Every model must cover every (volume, seed) cell.
RankTable rank_models(const std::vector<MetricRecord>& records);

// ---- CSV interchange --------------------------------------------------------

extern const char* kMetricCsvHeader;  // model_id,seed,domain,volume,slice,class,dice,uvd

void write_metric_csv(const std::vector<MetricRecord>& records, const std::string& path);
std::vector<MetricRecord> read_metric_csv(const std::string& path);
std::string format_metric_csv(std::vector<MetricRecord> records);  // sorted, deterministic

}  // namespace segclr
