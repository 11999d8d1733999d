#include "segclr/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "segclr/evaluation.hpp"

namespace segclr {

ModelVariant model_variant_from_string(const std::string& s) {
    if (s == "baseline_unet") return ModelVariant::baseline_unet;
    if (s == "segclr") return ModelVariant::segclr;
    if (s == "simclr_pretrain") return ModelVariant::simclr_pretrain;
    if (s == "simsiam_pretrain") return ModelVariant::simsiam_pretrain;
    throw std::invalid_argument("unknown model variant '" + s + "'");
}

std::string model_variant_name(ModelVariant v) {
    switch (v) {
        case ModelVariant::baseline_unet: return "baseline_unet";
        case ModelVariant::segclr: return "segclr";
        case ModelVariant::simclr_pretrain: return "simclr_pretrain";
        default: return "simsiam_pretrain";
    }
}

std::string ExperimentConfig::model_id() const {
    if (variant == ModelVariant::baseline_unet) return "baseline_unet";
    if (is_pretrain()) return model_variant_name(variant);
    return "segclr_P" + pair_strategy_name(pairing) + "_C" +
           (arch.head_kind == HeadKind::pool ? "pool" : "ch");
}

void ExperimentConfig::validate() const {
    if (source_domains.empty())
        throw std::invalid_argument("ExperimentConfig.source_domains: at least one labeled source "
                                    "domain is required");
    if (is_pretrain() && target_domains.empty())
        throw std::invalid_argument(
            "ExperimentConfig.target_domains: pretrain variants need a target domain");
    if (unlabeled_fraction < 0 || unlabeled_fraction > 1)
        throw std::invalid_argument("ExperimentConfig.unlabeled_fraction: must be in [0,1]");
    if (epochs < 1) throw std::invalid_argument("ExperimentConfig.epochs: must be >= 1");
    if (pretrain_epochs == 0 || pretrain_epochs < -1)
        throw std::invalid_argument("ExperimentConfig.pretrain_epochs: must be -1 or >= 1");
    if (batch_size_sup < 1)
        throw std::invalid_argument("ExperimentConfig.batch_size_sup: must be >= 1");
    if (batch_size_con < 1)
        throw std::invalid_argument("ExperimentConfig.batch_size_con: must be >= 1");
    if (is_contrastive() && contrastive_weight > 0 && loss.kind == LossConfig::Contrastive::ntxent &&
        batch_size_con < 2)
        throw std::invalid_argument(
            "ExperimentConfig.batch_size_con: the contrastive loss needs at least 2 pairs");
    if (seeds.empty()) throw std::invalid_argument("ExperimentConfig.seeds: must be non-empty");
    if (classes.empty()) throw std::invalid_argument("ExperimentConfig.classes: must be non-empty");
    int prev = -1;
    for (const auto& c : classes) {
        const int gi = global_class_index(c);
        if (gi < 0) throw std::invalid_argument("ExperimentConfig.classes: unknown class '" + c + "'");
        if (gi <= prev)
            throw std::invalid_argument(
                "ExperimentConfig.classes: must follow the global class order without duplicates");
        prev = gi;
    }
    if (int(classes.size()) != arch.n_classes)
        throw std::invalid_argument("ExperimentConfig.classes: size must equal arch.n_classes");
    if (optimizer.name != "adam")
        throw std::invalid_argument("ExperimentConfig.optimizer.name: only 'adam' is supported");
    if (optimizer.lr <= 0) throw std::invalid_argument("ExperimentConfig.optimizer.lr: must be > 0");
    if (contrastive_weight < 0)
        throw std::invalid_argument("ExperimentConfig.contrastive_weight: must be >= 0");
    if (eval_threshold <= 0 || eval_threshold >= 1)
        throw std::invalid_argument("ExperimentConfig.eval_threshold: must be in (0,1)");
    for (const auto& s : source_domains)
        for (const auto& t : target_domains)
            if (s == t)
                throw std::invalid_argument("ExperimentConfig: domain '" + s +
                                            "' cannot be both source and target");
    loss.validate();
    augment.validate();
    slice_pairing.validate();
    arch.validate();
}

const DatasetSplit& DatasetBundle::domain(const std::string& id) const {
    const auto it = domains.find(id);
    if (it == domains.end()) throw std::invalid_argument("dataset bundle has no domain '" + id + "'");
    return it->second;
}

std::size_t AccessCounters::image_reads_for_domain_prefix(const std::string& domain_id) const {
    std::size_t n = 0;
    for (const auto& [vol, c] : image_reads)
        if (vol.rfind(domain_id + "_", 0) == 0) n += c;
    return n;
}

std::size_t AccessCounters::label_reads_total() const {
    std::size_t n = 0;
    for (const auto& [vol, c] : label_reads) n += c;
    return n;
}

// ---- history ----------------------------------------------------------------

std::string TrainHistory::to_text() const {
    std::string out;
    char buf[64];
    for (const auto& r : records) {
        out += "epoch=" + std::to_string(r.epoch) + " phase=" + r.phase;
        std::snprintf(buf, sizeof buf, " sup=%.17g", r.sup_loss);
        out += buf;
        for (const auto& [dom, v] : r.con_loss) {
            std::snprintf(buf, sizeof buf, " con_%s=%.17g", dom.c_str(), v);
            out += buf;
        }
        std::snprintf(buf, sizeof buf, " total=%.17g val_dice=%.17g\n", r.total_loss, r.val_dice);
        out += buf;
    }
    out += "best_epoch=" + std::to_string(best_epoch);
    std::snprintf(buf, sizeof buf, " best_val_dice=%.17g\n", best_val_dice);
    out += buf;
    return out;
}

// ---- pools --------------------------------------------------------------------

TrainPools build_pools(const ExperimentConfig& config, const DatasetBundle& data) {
    TrainPools pools;
    for (const auto& dom : config.source_domains) {
        const auto& split = data.domain(dom);
        auto& pair_pool = pools.source_pair_pool[dom];
        for (const auto& vol : split.train) {
            if (!vol.has_labels()) continue;
            for (int s : vol.labeled_slice_indices) {
                pools.labeled.push_back({dom, &vol, s});
                pair_pool.push_back({dom, &vol, s});
            }
        }
        if (pair_pool.empty()) pools.source_pair_pool.erase(dom);
    }
    if (pools.labeled.empty())
        throw std::invalid_argument("train: no labeled training slices in the source domains");

    for (const auto& dom : config.target_domains) {
        const auto& split = data.domain(dom);
        // The unlabeled subset is a property of the experiment, not of the
        // replicate, so the subsample seed comes from the domain id alone.
        const auto kept = subsample_unlabeled(split.train, config.unlabeled_fraction,
                                              fnv1a64("subsample-" + dom));
        auto& pool = pools.target_pair_pool[dom];
        // `kept` holds copies; picks must reference stable storage, so map
        // back to the original split volumes by id.
        for (const auto& kv : kept)
            for (const auto& vol : split.train)
                if (vol.volume_id == kv.volume_id) {
                    for (int s = 0; s < vol.n_slices; ++s) pool.push_back({dom, &vol, s});
                    break;
                }
        if (pool.empty()) pools.target_pair_pool.erase(dom);
    }
    return pools;
}

// ---- batch assembly --------------------------------------------------------------

namespace {

std::vector<double> slice_as_double(const Volume& v, int s) {
    const float* p = v.slice(s);
    return std::vector<double>(p, p + v.plane());
}

PairBatch pairs_for_domain(const ExperimentConfig& config,
                           const std::vector<TrainPools::Pick>& pool, RandomStream& pair_rng,
                           AccessCounters& access) {
    std::vector<const Volume*> volumes;
    std::vector<std::pair<int, int>> picks;
    for (int i = 0; i < config.batch_size_con; ++i) {
        const auto& p = pool[pair_rng.uniform_int(pool.size())];
        volumes.push_back(p.volume);
        picks.emplace_back(int(volumes.size()) - 1, p.slice);
        access.image_reads[p.volume->volume_id] += 2;  // both views
        access.domains_touched.insert(p.domain_id);
    }
    return make_pair_batch(volumes, picks, config.pairing, config.augment, config.slice_pairing,
                           pair_rng);
}

}  // namespace

StepBatches assemble_step_batches(const ExperimentConfig& config, const TrainPools& pools,
                                  const std::vector<std::size_t>& sup_order, std::size_t step,
                                  RandomStream& pair_rng, AccessCounters& access) {
    if (pools.labeled.empty()) throw std::invalid_argument("assemble_step_batches: empty labeled pool");
    StepBatches out;
    const int C = int(config.classes.size());
    const int H = config.arch.input_h, W = config.arch.input_w;
    const std::size_t plane = std::size_t(H) * W;

    for (int i = 0; i < config.batch_size_sup; ++i) {
        const auto& pick = pools.labeled[sup_order[(step * config.batch_size_sup + i) % sup_order.size()]];
        const Volume& vol = *pick.volume;
        if (vol.height != H || vol.width != W)
            throw std::invalid_argument("assemble_step_batches: volume " + vol.volume_id +
                                        " shape does not match the architecture input");
        access.image_reads[vol.volume_id] += 1;
        access.label_reads[vol.volume_id] += 1;
        access.domains_touched.insert(pick.domain_id);

        auto img = slice_as_double(vol, pick.slice);
        std::vector<std::vector<std::uint8_t>> masks(C);
        std::vector<double> rowmask(C, 0.0);
        for (int c = 0; c < C; ++c) {
            for (std::size_t vc = 0; vc < vol.class_names.size(); ++vc)
                if (vol.class_names[vc] == config.classes[c]) {
                    const std::uint8_t* m = vol.label_mask(pick.slice, int(vc));
                    masks[c].assign(m, m + plane);
                    rowmask[c] = 1.0;
                }
            if (masks[c].empty()) masks[c].assign(plane, 0);
        }
        if (config.supervised_augment) {
            const auto draw = draw_augment(H, W, config.augment, pair_rng);
            img = apply_augment(img, H, W, draw);
            for (int c = 0; c < C; ++c)
                if (rowmask[c] != 0.0) masks[c] = apply_augment_mask(masks[c], H, W, draw);
        }
        out.sup_images.insert(out.sup_images.end(), img.begin(), img.end());
        for (int c = 0; c < C; ++c)
            for (std::size_t j = 0; j < plane; ++j) out.sup_labels.push_back(double(masks[c][j]));
        out.sup_class_mask.insert(out.sup_class_mask.end(), rowmask.begin(), rowmask.end());
        ++out.sup_n;
    }

    const bool contrastive = config.is_contrastive() && config.contrastive_weight > 0;
    if (contrastive) {
        for (const auto& dom : config.source_domains) {
            const auto it = pools.source_pair_pool.find(dom);
            if (it != pools.source_pair_pool.end())
                out.source_pairs.emplace_back(dom, pairs_for_domain(config, it->second, pair_rng, access));
        }
        for (const auto& dom : config.target_domains) {
            const auto it = pools.target_pair_pool.find(dom);
            if (it != pools.target_pair_pool.end())
                out.target_pairs.emplace_back(dom, pairs_for_domain(config, it->second, pair_rng, access));
        }
    }
    return out;
}

// ---- validation -----------------------------------------------------------------

double validation_mean_dice(const ModelState& state, const std::vector<const Volume*>& volumes,
                            const std::vector<std::string>& classes, double threshold) {
    const int C = int(classes.size());
    const std::size_t plane = std::size_t(state.arch.input_h) * state.arch.input_w;
    std::vector<double> class_sum(C, 0.0);
    std::vector<std::size_t> class_n(C, 0);
    std::vector<std::uint8_t> pred(plane);

    for (const Volume* volp : volumes) {
        const Volume& vol = *volp;
        if (!vol.has_labels() || vol.labeled_slice_indices.empty()) continue;
        std::vector<double> batch;
        batch.reserve(vol.labeled_slice_indices.size() * plane);
        for (int s : vol.labeled_slice_indices) {
            const float* p = vol.slice(s);
            batch.insert(batch.end(), p, p + plane);
        }
        const auto probs = forward_segment(state, batch, int(vol.labeled_slice_indices.size()));
        for (std::size_t bi = 0; bi < vol.labeled_slice_indices.size(); ++bi) {
            const int s = vol.labeled_slice_indices[bi];
            for (int c = 0; c < C; ++c) {
                int vc = -1;
                for (std::size_t k = 0; k < vol.class_names.size(); ++k)
                    if (vol.class_names[k] == classes[c]) vc = int(k);
                if (vc < 0) continue;
                const double* pp = &probs[(bi * C + std::size_t(c)) * plane];
                for (std::size_t i = 0; i < plane; ++i) pred[i] = pp[i] >= threshold ? 1 : 0;
                const std::uint8_t* gt = vol.label_mask(s, vc);
                class_sum[c] += dice_score(pred, std::span<const std::uint8_t>(gt, plane));
                ++class_n[c];
            }
        }
    }
    double mean = 0.0;
    int n_classes = 0;
    for (int c = 0; c < C; ++c)
        if (class_n[c] > 0) {
            mean += class_sum[c] / double(class_n[c]);
            ++n_classes;
        }
    return n_classes > 0 ? mean / n_classes : 0.0;
}

// ---- optimizer -----------------------------------------------------------------

namespace {

struct AdamState {
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
    long t = 0;
    double lr = 1e-3;
    static constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void step(const GraphBind& bind) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, double(t));
        const double bc2 = 1.0 - std::pow(beta2, double(t));
        for (const auto& [param, leaf] : bind.leaves) {
            if (leaf->g.size() != leaf->x.size()) continue;  // no gradient flowed
            auto& [m, v] = moments[param->name];
            if (m.empty()) {
                m.assign(param->numel(), 0.0);
                v.assign(param->numel(), 0.0);
            }
            for (std::size_t i = 0; i < param->numel(); ++i) {
                const double g = leaf->g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                param->value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
            }
        }
    }
};

ad::Value mean_of(const std::vector<ad::Value>& terms) {
    ad::Value acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return terms.size() > 1 ? ad::scale(acc, 1.0 / double(terms.size())) : acc;
}

void check_finite(double v, const char* what, int epoch, std::size_t step) {
    if (!std::isfinite(v))
        throw std::runtime_error("train: non-finite " + std::string(what) + " at epoch " +
                                 std::to_string(epoch) + " step " + std::to_string(step) +
                                 " (value " + std::to_string(v) + ")");
}

std::vector<const Volume*> validation_volumes(const ExperimentConfig& config,
                                              const DatasetBundle& data) {
    std::vector<const Volume*> out;
    for (const auto& dom : config.source_domains)
        for (const auto& vol : data.domain(dom).val) out.push_back(&vol);
    return out;
}

LossConfig::Contrastive effective_contrastive_kind(const ExperimentConfig& config) {
    if (config.variant == ModelVariant::simclr_pretrain) return LossConfig::Contrastive::ntxent;
    if (config.variant == ModelVariant::simsiam_pretrain) return LossConfig::Contrastive::simsiam;
    return config.loss.kind;
}

// Forward both views of a pair batch and return the contrastive loss term.
ad::Value contrastive_term(const ExperimentConfig& config, ModelState& model, GraphBind& bind,
                           const PairBatch& batch, bool training, RandomStream& drop_rng) {
    const int n = batch.view_a.size();
    const auto fa = forward_graph(model, bind, batch.view_a.images, n, training, &drop_rng);
    const auto fb = forward_graph(model, bind, batch.view_b.images, n, training, &drop_rng);
    const auto z_a = project_graph(model, bind, fa.bottleneck);
    const auto z_b = project_graph(model, bind, fb.bottleneck);
    if (effective_contrastive_kind(config) == LossConfig::Contrastive::simsiam)
        return simsiam_loss(z_a, z_b,
                            [&](const ad::Value& z) { return predict_graph(model, bind, z); });
    return ntxent_loss(z_a, z_b, config.loss.tau, config.loss.include_positive_in_denominator);
}

}  // namespace

// ---- joint training -----------------------------------------------------------

TrainResult train(const ExperimentConfig& config, const DatasetBundle& data, int seed) {
    config.validate();
    if (config.is_pretrain())
        throw std::invalid_argument("train: pretrain variants use pretrain_finetune()");
    const auto pools = build_pools(config, data);

    const bool contrastive = config.is_contrastive() && config.contrastive_weight > 0;
    const bool with_predictor =
        contrastive && effective_contrastive_kind(config) == LossConfig::Contrastive::simsiam;
    ModelState model = build_model(config.arch, std::uint64_t(seed), contrastive, with_predictor);

    RandomStream batch_rng = RandomStream::derive(std::uint64_t(seed), "batch");
    RandomStream pair_rng = RandomStream::derive(std::uint64_t(seed), "pairs");
    RandomStream drop_rng = RandomStream::derive(std::uint64_t(seed), "dropout");

    AdamState adam;
    adam.lr = config.optimizer.lr;
    TrainResult result;
    const auto val_vols = validation_volumes(config, data);

    ModelState best = model;
    const std::size_t steps_per_epoch =
        std::max<std::size_t>(1, pools.labeled.size() / std::size_t(config.batch_size_sup));

    std::vector<std::size_t> sup_order(pools.labeled.size());
    std::iota(sup_order.begin(), sup_order.end(), std::size_t(0));

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        batch_rng.shuffle(sup_order);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.phase = contrastive ? "joint" : "supervised";
        std::map<std::string, double> con_sums;

        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            const auto batches =
                assemble_step_batches(config, pools, sup_order, step, pair_rng, result.access);

            GraphBind bind;
            const auto sup_fwd =
                forward_graph(model, bind, batches.sup_images, batches.sup_n, true, &drop_rng);
            const auto y = ad::constant({batches.sup_n, config.arch.n_classes,
                                         config.arch.input_h, config.arch.input_w},
                                        batches.sup_labels);
            const auto sup = dice_loss(sup_fwd.probs, y, batches.sup_class_mask, config.loss.epsilon);

            ad::Value total;
            if (contrastive) {
                std::vector<ad::Value> src_terms, tgt_terms;
                for (const auto& [dom, pb] : batches.source_pairs) {
                    auto term = contrastive_term(config, model, bind, pb, true, drop_rng);
                    con_sums[dom] += term->x[0];
                    src_terms.push_back(std::move(term));
                }
                for (const auto& [dom, pb] : batches.target_pairs) {
                    auto term = contrastive_term(config, model, bind, pb, true, drop_rng);
                    con_sums[dom] += term->x[0];
                    tgt_terms.push_back(std::move(term));
                }
                if (src_terms.empty())
                    throw std::runtime_error("train: contrastive mode without a source pair pool");
                const auto con_s = ad::scale(mean_of(src_terms), config.contrastive_weight);
                std::optional<ad::Value> con_t;
                if (!tgt_terms.empty())
                    con_t = ad::scale(mean_of(tgt_terms), config.contrastive_weight);
                total = joint_loss(con_s, con_t, sup, config.loss.lambda_sup);
            } else {
                total = ad::scale(sup, config.loss.lambda_sup);
            }

            check_finite(sup->x[0], "supervised loss", epoch, step);
            check_finite(total->x[0], "total loss", epoch, step);
            rec.sup_loss += sup->x[0];
            rec.total_loss += total->x[0];

            ad::backward(total);
            adam.step(bind);
        }

        rec.sup_loss /= double(steps_per_epoch);
        rec.total_loss /= double(steps_per_epoch);
        for (auto& [dom, v] : con_sums) rec.con_loss[dom] = v / double(steps_per_epoch);
        rec.val_dice = validation_mean_dice(model, val_vols, config.classes, config.eval_threshold);
        result.history.records.push_back(rec);

        if (rec.val_dice > result.history.best_val_dice) {
            result.history.best_val_dice = rec.val_dice;
            result.history.best_epoch = epoch;
            best = model;
        }
    }
    result.model = std::move(best);
    return result;
}

// ---- pretrain-then-finetune ------------------------------------------------------

TrainResult pretrain_finetune(const ExperimentConfig& config, const DatasetBundle& data, int seed) {
    config.validate();
    if (!config.is_pretrain())
        throw std::invalid_argument("pretrain_finetune: needs a pretrain variant");
    const auto pools = build_pools(config, data);
    std::size_t target_pool = 0;
    for (const auto& [dom, pool] : pools.target_pair_pool) target_pool += pool.size();
    if (target_pool == 0)
        throw std::invalid_argument("pretrain_finetune: target pair pool is empty");

    const bool with_predictor =
        effective_contrastive_kind(config) == LossConfig::Contrastive::simsiam;
    ModelState model = build_model(config.arch, std::uint64_t(seed), true, with_predictor);

    RandomStream pair_rng = RandomStream::derive(std::uint64_t(seed), "pretrain-pairs");
    RandomStream drop_rng = RandomStream::derive(std::uint64_t(seed), "pretrain-dropout");

    TrainResult result;
    AdamState adam;
    adam.lr = config.optimizer.lr;

    const int p1_epochs = config.pretrain_epochs < 0 ? config.epochs : config.pretrain_epochs;
    const std::size_t p1_steps =
        std::max<std::size_t>(1, target_pool / std::size_t(config.batch_size_con));

    // phase 1: contrastive-only on the target pairs; labels are never read
    for (int epoch = 0; epoch < p1_epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.phase = "pretrain";
        rec.val_dice = -1.0;  // no labels, no validation
        std::map<std::string, double> con_sums;
        for (std::size_t step = 0; step < p1_steps; ++step) {
            GraphBind bind;
            std::vector<ad::Value> terms;
            for (const auto& dom : config.target_domains) {
                const auto it = pools.target_pair_pool.find(dom);
                if (it == pools.target_pair_pool.end()) continue;
                const auto pb = pairs_for_domain(config, it->second, pair_rng, result.access);
                auto term = contrastive_term(config, model, bind, pb, true, drop_rng);
                con_sums[dom] += term->x[0];
                terms.push_back(std::move(term));
            }
            const auto total = mean_of(terms);
            check_finite(total->x[0], "pretrain loss", epoch, step);
            rec.total_loss += total->x[0];
            ad::backward(total);
            adam.step(bind);
        }
        rec.total_loss /= double(p1_steps);
        for (auto& [dom, v] : con_sums) rec.con_loss[dom] = v / double(p1_steps);
        result.history.records.push_back(rec);
    }
    if (result.access.label_reads_total() != 0)
        throw std::logic_error("pretrain_finetune: phase 1 read labels");

    // phase 2: supervised finetuning of the pretrained backbone on the source
    ModelState tuned = build_model(config.arch, std::uint64_t(seed), false, false);
    tuned.backbone = model.backbone;  // handoff
    result.handoff_backbone = tuned.backbone;

    RandomStream batch_rng = RandomStream::derive(std::uint64_t(seed), "finetune-batch");
    RandomStream ft_pair_rng = RandomStream::derive(std::uint64_t(seed), "finetune-pairs");
    RandomStream ft_drop_rng = RandomStream::derive(std::uint64_t(seed), "finetune-dropout");
    AdamState ft_adam;
    ft_adam.lr = config.optimizer.lr;

    const auto val_vols = validation_volumes(config, data);
    ModelState best = tuned;
    const std::size_t steps_per_epoch =
        std::max<std::size_t>(1, pools.labeled.size() / std::size_t(config.batch_size_sup));
    std::vector<std::size_t> sup_order(pools.labeled.size());
    std::iota(sup_order.begin(), sup_order.end(), std::size_t(0));

    auto cfg_sup = config;  // suppress pair batches in assembly
    cfg_sup.contrastive_weight = 0.0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        batch_rng.shuffle(sup_order);
        EpochRecord rec;
        rec.epoch = p1_epochs + epoch;
        rec.phase = "finetune";
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            const auto batches =
                assemble_step_batches(cfg_sup, pools, sup_order, step, ft_pair_rng, result.access);
            GraphBind bind;
            const auto fwd =
                forward_graph(tuned, bind, batches.sup_images, batches.sup_n, true, &ft_drop_rng);
            const auto y = ad::constant({batches.sup_n, config.arch.n_classes,
                                         config.arch.input_h, config.arch.input_w},
                                        batches.sup_labels);
            const auto sup = dice_loss(fwd.probs, y, batches.sup_class_mask, config.loss.epsilon);
            const auto total = ad::scale(sup, config.loss.lambda_sup);
            check_finite(total->x[0], "finetune loss", epoch, step);
            rec.sup_loss += sup->x[0];
            rec.total_loss += total->x[0];
            ad::backward(total);
            ft_adam.step(bind);
        }
        rec.sup_loss /= double(steps_per_epoch);
        rec.total_loss /= double(steps_per_epoch);
        rec.val_dice = validation_mean_dice(tuned, val_vols, config.classes, config.eval_threshold);
        result.history.records.push_back(rec);
        if (rec.val_dice > result.history.best_val_dice) {
            result.history.best_val_dice = rec.val_dice;
            result.history.best_epoch = p1_epochs + epoch;
            best = tuned;
        }
    }
    result.model = std::move(best);
    return result;
}

// ---- replicates ---------------------------------------------------------------

std::vector<ReplicateResult> run_replicates(const ExperimentConfig& config,
                                            const DatasetBundle& data, int workers) {
    config.validate();
    const std::size_t n = config.seeds.size();
    std::vector<ReplicateResult> out(n);
    std::vector<std::string> errors(n);
    std::atomic<std::size_t> next{0};

    const auto work = [&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
            const int seed = config.seeds[i];
            try {
                out[i].seed = seed;
                out[i].result = config.is_pretrain() ? pretrain_finetune(config, data, seed)
                                                     : train(config, data, seed);
            } catch (const std::exception& e) {
                errors[i] = "seed " + std::to_string(seed) + ": " + e.what();
            }
        }
    };

    if (workers <= 1 || n <= 1) {
        work();
    } else {
        std::vector<std::thread> threads;
        const int k = int(std::min<std::size_t>(std::size_t(workers), n));
        threads.reserve(k);
        for (int i = 0; i < k; ++i) threads.emplace_back(work);
        for (auto& t : threads) t.join();
    }

    std::string joined;
    for (const auto& e : errors)
        if (!e.empty()) joined += (joined.empty() ? "" : "; ") + e;
    if (!joined.empty()) throw std::runtime_error("run_replicates: " + joined);
    return out;
}

std::vector<ExperimentConfig> ablation_schedule(const ExperimentConfig& base,
                                                const std::vector<double>& fractions) {
    std::vector<ExperimentConfig> out;
    out.reserve(fractions.size());
    for (double f : fractions) {
        if (f < 0 || f > 1)
            throw std::invalid_argument("ablation_schedule: fractions must be in [0,1]");
        ExperimentConfig c = base;
        c.unlabeled_fraction = f;
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace segclr
