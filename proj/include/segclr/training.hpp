// training.hpp - experiment orchestration: batch assembly, the joint
// optimization loop, best-validation-epoch selection, seeded replicates,
// pretrain-then-finetune comparison modes, and the unlabeled-data ablation.

#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "segclr/losses.hpp"
#include "segclr/model.hpp"
#include "segclr/pairing.hpp"
#include "segclr/synthdata.hpp"

namespace segclr {

struct OptimizerConfig {
    std::string name = "adam";
    double lr = 1e-3;
};

enum class ModelVariant { baseline_unet, segclr, simclr_pretrain, simsiam_pretrain };
ModelVariant model_variant_from_string(const std::string& s);
std::string model_variant_name(ModelVariant v);

struct ExperimentConfig {
    std::string name = "experiment";
    std::vector<std::string> source_domains;  // labeled
    std::vector<std::string> target_domains;  // unlabeled, possibly empty
    double unlabeled_fraction = 1.0;
    ModelVariant variant = ModelVariant::segclr;
    PairStrategy pairing = PairStrategy::augmentation;
    LossConfig loss;
    OptimizerConfig optimizer;
    int epochs = 30;
    int pretrain_epochs = -1;  // -1 => same as epochs
    int batch_size_sup = 8;
    int batch_size_con = 8;
    std::vector<int> seeds;
    ArchitectureSpec arch;  // arch.head_kind selects the projection C
    AugmentParams augment;
    SlicePairingParams slice_pairing;
    std::vector<std::string> classes;  // experiment class list, global order
    bool supervised_augment = false;
    double contrastive_weight = 1.0;  // 0 disables the contrastive branch entirely
    double eval_threshold = 0.5;

    bool is_contrastive() const { return variant != ModelVariant::baseline_unet; }
    bool is_pretrain() const {
        return variant == ModelVariant::simclr_pretrain || variant == ModelVariant::simsiam_pretrain;
    }
    std::string model_id() const;
    void validate() const;
};

struct DatasetBundle {
    std::map<std::string, DatasetSplit> domains;

    const DatasetSplit& domain(const std::string& id) const;
    void add(const std::string& id, DatasetSplit split) { domains[id] = std::move(split); }
};

// Per-volume read counters; the trainer logs every voxel/label access so
// tests can assert which data a mode touched.
struct AccessCounters {
    std::map<std::string, std::size_t> image_reads;  // volume_id -> slices read
    std::map<std::string, std::size_t> label_reads;
    std::set<std::string> domains_touched;

    std::size_t image_reads_for_domain_prefix(const std::string& domain_id) const;
    std::size_t label_reads_total() const;
};

struct EpochRecord {
    int epoch = 0;
    std::string phase;  // "joint", "supervised", "pretrain", "finetune"
    double sup_loss = 0.0;
    std::map<std::string, double> con_loss;  // per domain, mean over steps
    double total_loss = 0.0;
    double val_dice = 0.0;  // mean Dice across classes on validation
};

struct TrainHistory {
    std::vector<EpochRecord> records;
    int best_epoch = -1;
    double best_val_dice = -1.0;

    std::string to_text() const;  // line-delimited, one record per epoch
};

struct TrainResult {
    ModelState model;  // parameters at the best validation epoch
    TrainHistory history;
    AccessCounters access;
    // pretrain modes only: snapshot of the backbone as phase 2 received it
    std::vector<ParamTensor> handoff_backbone;
};

struct StepBatches {
    // supervised
    std::vector<double> sup_images;                // [N][H][W]
    std::vector<double> sup_labels;                // [N][C][H][W], binary
    std::vector<double> sup_class_mask;            // [N*C]
    int sup_n = 0;
    // contrastive, one pair batch per participating domain
    std::vector<std::pair<std::string, PairBatch>> source_pairs;
    std::vector<std::pair<std::string, PairBatch>> target_pairs;
};

// Internal slice pools used by the trainer; exposed for tests of batch
// assembly.
struct TrainPools {
    struct Pick {
        std::string domain_id;
        const Volume* volume = nullptr;
        int slice = 0;
    };
    std::vector<Pick> labeled;                                  // supervised pool
    std::map<std::string, std::vector<Pick>> source_pair_pool;  // per source domain
    std::map<std::string, std::vector<Pick>> target_pair_pool;  // per target domain
};

TrainPools build_pools(const ExperimentConfig& config, const DatasetBundle& data);

StepBatches assemble_step_batches(const ExperimentConfig& config, const TrainPools& pools,
                                  const std::vector<std::size_t>& sup_order, std::size_t step,
                                  RandomStream& pair_rng, AccessCounters& access);

TrainResult train(const ExperimentConfig& config, const DatasetBundle& data, int seed);
TrainResult pretrain_finetune(const ExperimentConfig& config, const DatasetBundle& data, int seed);

struct ReplicateResult {
    int seed = 0;
    TrainResult result;
};

// Runs train() (or pretrain_finetune() for the pretrain variants) once per
// seed. workers > 1 runs seeds on that many threads; outputs are identical
// either way.
std::vector<ReplicateResult> run_replicates(const ExperimentConfig& config,
                                            const DatasetBundle& data, int workers = 1);

std::vector<ExperimentConfig> ablation_schedule(const ExperimentConfig& base,
                                                const std::vector<double>& fractions);

// Mean Dice across classes of a model on the labeled slices of `volumes`
// (the validation criterion).
double validation_mean_dice(const ModelState& state, const std::vector<const Volume*>& volumes,
                            const std::vector<std::string>& classes, double threshold);

}  // namespace segclr
