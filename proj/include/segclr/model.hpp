// model.hpp - 2D UNet segmentation backbone with optional contrastive
// projection head (global-pool or learned channel-collapse aggregation)
// and an optional predictor MLP for the negative-cosine objective.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segclr/random.hpp"
#include "segclr/tensor.hpp"

namespace segclr {

enum class HeadKind { pool, ch };

struct ArchitectureSpec {
    int depth = 4;
    int base_channels = 32;
    int n_classes = 1;
    int input_h = 64, input_w = 64;
    double dropout_p = 0.5;
    HeadKind head_kind = HeadKind::ch;
    int mlp_units = 128;
    int groupnorm_groups = 4;

    void validate() const;
    int bottleneck_channels() const { return base_channels << depth; }
    int bottleneck_h() const { return input_h >> depth; }
    int bottleneck_w() const { return input_w >> depth; }
    bool operator==(const ArchitectureSpec&) const = default;
};

struct ParamTensor {
    std::string name;
    ad::Shape shape;
    std::vector<double> value;
    std::size_t numel() const { return value.size(); }
};

struct ModelState {
    ArchitectureSpec arch;
    std::vector<ParamTensor> backbone;
    std::vector<ParamTensor> head;       // empty unless a contrastive head is attached
    std::vector<ParamTensor> predictor;  // empty unless the predictor is attached

    bool has_head() const { return !head.empty(); }
    bool has_predictor() const { return !predictor.empty(); }
};

ModelState build_model(const ArchitectureSpec& arch, std::uint64_t seed, bool with_head = false,
                       bool with_predictor = false);

// ---- graph construction (training path) ------------------------------------

// Leaf bindings for one optimization step: each ParamTensor gets exactly one
// graph leaf so gradients can be read back per parameter.
struct GraphBind {
    std::vector<std::pair<ParamTensor*, ad::Value>> leaves;
    ad::Value leaf(ParamTensor& t);
};

struct SegForward {
    ad::Value probs;       // [N,C,H,W]
    ad::Value bottleneck;  // [N,Cb,Hb,Wb], the representation h
};

// images is row-major [N][H][W]. When training, dropout masks are drawn from
// drop_rng; in eval mode the pass is deterministic.
SegForward forward_graph(ModelState& state, GraphBind& bind, const std::vector<double>& images,
                         int n, bool training, RandomStream* drop_rng);

ad::Value project_graph(ModelState& state, GraphBind& bind, const ad::Value& h);
ad::Value predict_graph(ModelState& state, GraphBind& bind, const ad::Value& z);

// ---- plain (inference) API --------------------------------------------------

struct Features {
    ad::Shape shape;  // [N,Cb,Hb,Wb]
    std::vector<double> h;
};

std::vector<double> forward_segment(const ModelState& state, const std::vector<double>& images,
                                    int n);
Features encode(const ModelState& state, const std::vector<double>& images, int n);
std::vector<double> project(const ModelState& state, const Features& h);
std::vector<double> predict(const ModelState& state, const std::vector<double>& z);

enum class CountMode { inference, training };
std::size_t count_params(const ModelState& state, CountMode mode);

// Bit-exact binary checkpoint (named tensors + architecture manifest).
void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace segclr
