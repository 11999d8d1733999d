#include "segclr/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace segclr {

void ArchitectureSpec::validate() const {
    if (depth < 2) throw std::invalid_argument("ArchitectureSpec.depth: must be >= 2");
    if (base_channels < 1)
        throw std::invalid_argument("ArchitectureSpec.base_channels: must be >= 1");
    if (n_classes < 1) throw std::invalid_argument("ArchitectureSpec.n_classes: must be >= 1");
    const int div = 1 << depth;
    if (input_h <= 0 || input_w <= 0 || input_h % div != 0 || input_w % div != 0)
        throw std::invalid_argument("ArchitectureSpec.input_shape: dims must be divisible by 2^depth");
    if (dropout_p < 0 || dropout_p >= 1)
        throw std::invalid_argument("ArchitectureSpec.dropout_p: must be in [0,1)");
    if (mlp_units < 1) throw std::invalid_argument("ArchitectureSpec.mlp_units: must be >= 1");
    if (groupnorm_groups < 1 || base_channels % groupnorm_groups != 0 ||
        mlp_units % groupnorm_groups != 0)
        throw std::invalid_argument(
            "ArchitectureSpec.groupnorm_groups: must divide base_channels and mlp_units");
}

namespace {

ParamTensor make_param(std::string name, ad::Shape shape) {
    ParamTensor t;
    t.name = std::move(name);
    t.shape = std::move(shape);
    t.value.assign(ad::shape_numel(t.shape), 0.0);
    return t;
}

// He-normal fan-in init for weights; zeros for biases; identity affine for
// normalization. Draw order is the construction order, so two builds with
// the same seed are identical.
void init_params(std::vector<ParamTensor>& params, RandomStream& rng) {
    for (auto& t : params) {
        const bool is_weight = t.name.ends_with(".w");
        const bool is_gamma = t.name.ends_with(".gamma");
        if (is_weight) {
            std::size_t fan_in = 1;
            for (std::size_t d = 1; d < t.shape.size(); ++d) fan_in *= std::size_t(t.shape[d]);
            const double std = std::sqrt(2.0 / double(fan_in));
            for (auto& v : t.value) v = rng.gaussian(0.0, std);
        } else if (is_gamma) {
            for (auto& v : t.value) v = 1.0;
        }  // biases and betas stay zero
    }
}

struct ConvBlockNames {
    std::string conv1_w, conv1_b, gn1_g, gn1_b, conv2_w, conv2_b, gn2_g, gn2_b;
};

void push_conv_block(std::vector<ParamTensor>& out, const std::string& prefix, int in_ch,
                     int out_ch) {
    out.push_back(make_param(prefix + ".conv1.w", {out_ch, in_ch, 3, 3}));
    out.push_back(make_param(prefix + ".conv1.b", {out_ch}));
    out.push_back(make_param(prefix + ".gn1.gamma", {out_ch}));
    out.push_back(make_param(prefix + ".gn1.beta", {out_ch}));
    out.push_back(make_param(prefix + ".conv2.w", {out_ch, out_ch, 3, 3}));
    out.push_back(make_param(prefix + ".conv2.b", {out_ch}));
    out.push_back(make_param(prefix + ".gn2.gamma", {out_ch}));
    out.push_back(make_param(prefix + ".gn2.beta", {out_ch}));
}

}  // namespace

ModelState build_model(const ArchitectureSpec& arch, std::uint64_t seed, bool with_head,
                       bool with_predictor) {
    arch.validate();
    ModelState state;
    state.arch = arch;

    for (int l = 0; l < arch.depth; ++l) {
        const int in_ch = (l == 0) ? 1 : (arch.base_channels << (l - 1));
        push_conv_block(state.backbone, "enc" + std::to_string(l), in_ch, arch.base_channels << l);
    }
    push_conv_block(state.backbone, "bott", arch.base_channels << (arch.depth - 1),
                    arch.base_channels << arch.depth);
    for (int l = arch.depth - 1; l >= 0; --l) {
        const int deeper = arch.base_channels << (l + 1);
        const int skip = arch.base_channels << l;
        push_conv_block(state.backbone, "dec" + std::to_string(l), deeper + skip, skip);
    }
    state.backbone.push_back(make_param("out.w", {arch.n_classes, arch.base_channels, 1, 1}));
    state.backbone.push_back(make_param("out.b", {arch.n_classes}));
    // start near the background prior: lesion classes are sparse, and a 0.5
    // initial probability everywhere stalls the early Dice descent
    for (auto& v : state.backbone.back().value) v = -2.0;

    if (with_head) {
        const int cb = arch.bottleneck_channels();
        const int mlp_in =
            arch.head_kind == HeadKind::pool ? cb : arch.bottleneck_h() * arch.bottleneck_w();
        if (arch.head_kind == HeadKind::ch) {
            state.head.push_back(make_param("head.agg.w", {1, cb, 1, 1}));
            state.head.push_back(make_param("head.agg.b", {1}));
        }
        state.head.push_back(make_param("head.mlp.fc1.w", {arch.mlp_units, mlp_in}));
        state.head.push_back(make_param("head.mlp.fc1.b", {arch.mlp_units}));
        state.head.push_back(make_param("head.mlp.gn.gamma", {arch.mlp_units}));
        state.head.push_back(make_param("head.mlp.gn.beta", {arch.mlp_units}));
        state.head.push_back(make_param("head.mlp.fc2.w", {arch.mlp_units, arch.mlp_units}));
        state.head.push_back(make_param("head.mlp.fc2.b", {arch.mlp_units}));
    }
    if (with_predictor) {
        state.predictor.push_back(make_param("pred.fc1.w", {arch.mlp_units, arch.mlp_units}));
        state.predictor.push_back(make_param("pred.fc1.b", {arch.mlp_units}));
        state.predictor.push_back(make_param("pred.fc2.w", {arch.mlp_units, arch.mlp_units}));
        state.predictor.push_back(make_param("pred.fc2.b", {arch.mlp_units}));
    }

    RandomStream rng = RandomStream::derive(seed, "model-init");
    init_params(state.backbone, rng);
    init_params(state.head, rng);
    init_params(state.predictor, rng);
    return state;
}

// ---- graph construction -------------------------------------------------------

ad::Value GraphBind::leaf(ParamTensor& t) {
    for (auto& [pt, v] : leaves)
        if (pt == &t) return v;
    auto v = ad::param(t.shape, t.value);
    leaves.emplace_back(&t, v);
    return v;
}

namespace {

ParamTensor& find_param(std::vector<ParamTensor>& params, const std::string& name) {
    for (auto& t : params)
        if (t.name == name) return t;
    throw std::logic_error("missing parameter tensor: " + name);
}

ad::Value conv_block(ModelState& state, GraphBind& bind, const ad::Value& x,
                     const std::string& prefix) {
    const int groups = state.arch.groupnorm_groups;
    auto& b = state.backbone;
    auto h = ad::conv2d(x, bind.leaf(find_param(b, prefix + ".conv1.w")),
                        bind.leaf(find_param(b, prefix + ".conv1.b")), 1);
    h = ad::relu(ad::group_norm(h, bind.leaf(find_param(b, prefix + ".gn1.gamma")),
                                bind.leaf(find_param(b, prefix + ".gn1.beta")), groups));
    h = ad::conv2d(h, bind.leaf(find_param(b, prefix + ".conv2.w")),
                   bind.leaf(find_param(b, prefix + ".conv2.b")), 1);
    h = ad::relu(ad::group_norm(h, bind.leaf(find_param(b, prefix + ".gn2.gamma")),
                                bind.leaf(find_param(b, prefix + ".gn2.beta")), groups));
    return h;
}

ad::Value dropout(const ad::Value& x, double p, RandomStream& rng) {
    std::vector<double> mask(x->numel());
    const double keep = 1.0 - p;
    for (auto& m : mask) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    return ad::mul(x, ad::constant(x->shape, std::move(mask)));
}

}  // namespace

SegForward forward_graph(ModelState& state, GraphBind& bind, const std::vector<double>& images,
                         int n, bool training, RandomStream* drop_rng) {
    const auto& arch = state.arch;
    if (images.size() != std::size_t(n) * arch.input_h * arch.input_w)
        throw std::invalid_argument("forward_graph: batch size does not match input shape");
    const bool drop = training && arch.dropout_p > 0.0;
    if (drop && !drop_rng)
        throw std::invalid_argument("forward_graph: training with dropout needs an rng");

    auto x = ad::constant({n, 1, arch.input_h, arch.input_w}, images);
    std::vector<ad::Value> skips;
    for (int l = 0; l < arch.depth; ++l) {
        x = conv_block(state, bind, x, "enc" + std::to_string(l));
        skips.push_back(x);
        x = ad::maxpool2(x);
    }
    x = conv_block(state, bind, x, "bott");
    if (drop) x = dropout(x, arch.dropout_p, *drop_rng);
    const auto bottleneck = x;

    for (int l = arch.depth - 1; l >= 0; --l) {
        x = ad::upsample_nearest2(x);
        x = ad::concat_channels(x, skips[l]);
        x = conv_block(state, bind, x, "dec" + std::to_string(l));
        // the two decoder levels next to the bottleneck carry dropout
        if (drop && l >= arch.depth - 2) x = dropout(x, arch.dropout_p, *drop_rng);
    }
    auto logits = ad::conv2d(x, bind.leaf(find_param(state.backbone, "out.w")),
                             bind.leaf(find_param(state.backbone, "out.b")), 0);
    return {ad::sigmoid(logits), bottleneck};
}

ad::Value project_graph(ModelState& state, GraphBind& bind, const ad::Value& h) {
    if (!state.has_head()) throw std::invalid_argument("project_graph: model has no head");
    const auto& arch = state.arch;
    ad::Value flat;
    if (arch.head_kind == HeadKind::pool) {
        flat = ad::spatial_mean(h);  // [N,Cb]
    } else {
        auto agg = ad::conv2d(h, bind.leaf(find_param(state.head, "head.agg.w")),
                              bind.leaf(find_param(state.head, "head.agg.b")), 0);  // [N,1,Hb,Wb]
        flat = ad::reshape(agg, {h->shape[0], h->shape[2] * h->shape[3]});
    }
    auto z = ad::dense(flat, bind.leaf(find_param(state.head, "head.mlp.fc1.w")),
                       bind.leaf(find_param(state.head, "head.mlp.fc1.b")));
    z = ad::relu(ad::group_norm(z, bind.leaf(find_param(state.head, "head.mlp.gn.gamma")),
                                bind.leaf(find_param(state.head, "head.mlp.gn.beta")),
                                arch.groupnorm_groups));
    return ad::dense(z, bind.leaf(find_param(state.head, "head.mlp.fc2.w")),
                     bind.leaf(find_param(state.head, "head.mlp.fc2.b")));
}

ad::Value predict_graph(ModelState& state, GraphBind& bind, const ad::Value& z) {
    if (!state.has_predictor())
        throw std::invalid_argument("predict_graph: model has no predictor");
    auto q = ad::relu(ad::dense(z, bind.leaf(find_param(state.predictor, "pred.fc1.w")),
                                bind.leaf(find_param(state.predictor, "pred.fc1.b"))));
    return ad::dense(q, bind.leaf(find_param(state.predictor, "pred.fc2.w")),
                     bind.leaf(find_param(state.predictor, "pred.fc2.b")));
}

// ---- plain API -----------------------------------------------------------------

std::vector<double> forward_segment(const ModelState& state, const std::vector<double>& images,
                                    int n) {
    auto& mutable_state = const_cast<ModelState&>(state);  // leaves copy values; state untouched
    GraphBind bind;
    const auto fwd = forward_graph(mutable_state, bind, images, n, /*training=*/false, nullptr);
    return fwd.probs->x;
}

Features encode(const ModelState& state, const std::vector<double>& images, int n) {
    auto& mutable_state = const_cast<ModelState&>(state);
    GraphBind bind;
    const auto fwd = forward_graph(mutable_state, bind, images, n, /*training=*/false, nullptr);
    return {fwd.bottleneck->shape, fwd.bottleneck->x};
}

std::vector<double> project(const ModelState& state, const Features& h) {
    auto& mutable_state = const_cast<ModelState&>(state);
    GraphBind bind;
    return project_graph(mutable_state, bind, ad::constant(h.shape, h.h))->x;
}

std::vector<double> predict(const ModelState& state, const std::vector<double>& z) {
    auto& mutable_state = const_cast<ModelState&>(state);
    GraphBind bind;
    const int n = int(z.size()) / state.arch.mlp_units;
    return predict_graph(mutable_state, bind, ad::constant({n, state.arch.mlp_units}, z))->x;
}

std::size_t count_params(const ModelState& state, CountMode mode) {
    std::size_t n = 0;
    for (const auto& t : state.backbone) n += t.numel();
    if (mode == CountMode::training) {
        for (const auto& t : state.head) n += t.numel();
        for (const auto& t : state.predictor) n += t.numel();
    }
    return n;
}

// ---- checkpoint ------------------------------------------------------------------

namespace {

void write_section(std::ofstream& f, const char* name, const std::vector<ParamTensor>& params) {
    f << name << " " << params.size() << "\n";
    for (const auto& t : params) {
        f << "tensor " << t.name << " " << t.shape.size();
        for (int d : t.shape) f << " " << d;
        f << "\n";
        f.write(reinterpret_cast<const char*>(t.value.data()),
                std::streamsize(t.value.size() * sizeof(double)));
        f << "\n";
    }
}

std::vector<ParamTensor> read_section(std::ifstream& f, const std::string& expect) {
    std::string line;
    if (!std::getline(f, line))
        throw std::runtime_error("load_checkpoint: truncated before section " + expect);
    std::istringstream hs(line);
    std::string name;
    std::size_t count = 0;
    hs >> name >> count;
    if (name != expect)
        throw std::runtime_error("load_checkpoint: expected section '" + expect + "', got '" +
                                 name + "'");
    std::vector<ParamTensor> params;
    params.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(f, line))
            throw std::runtime_error("load_checkpoint: truncated tensor header");
        std::istringstream ts(line);
        std::string tag;
        ParamTensor t;
        std::size_t ndim = 0;
        ts >> tag >> t.name >> ndim;
        if (tag != "tensor" || ts.fail())
            throw std::runtime_error("load_checkpoint: bad tensor header '" + line + "'");
        t.shape.resize(ndim);
        for (auto& d : t.shape) ts >> d;
        if (ts.fail()) throw std::runtime_error("load_checkpoint: bad tensor shape for " + t.name);
        t.value.resize(ad::shape_numel(t.shape));
        f.read(reinterpret_cast<char*>(t.value.data()),
               std::streamsize(t.value.size() * sizeof(double)));
        if (!f) throw std::runtime_error("load_checkpoint: truncated tensor data for " + t.name);
        char nl = 0;
        f.read(&nl, 1);
        if (nl != '\n') throw std::runtime_error("load_checkpoint: framing error after " + t.name);
        params.push_back(std::move(t));
    }
    return params;
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    const auto& a = state.arch;
    f << "segclr-checkpoint 1\n";
    f << "arch " << a.depth << " " << a.base_channels << " " << a.n_classes << " " << a.input_h
      << " " << a.input_w << " ";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", a.dropout_p);
    f << buf << " " << (a.head_kind == HeadKind::pool ? "pool" : "ch") << " " << a.mlp_units << " "
      << a.groupnorm_groups << "\n";
    write_section(f, "backbone", state.backbone);
    write_section(f, "head", state.head);
    write_section(f, "predictor", state.predictor);
    f << "end\n";
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line != "segclr-checkpoint 1")
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    if (!std::getline(f, line) || line.rfind("arch ", 0) != 0)
        throw std::runtime_error("load_checkpoint: missing arch line");
    std::istringstream as(line.substr(5));
    ModelState state;
    auto& a = state.arch;
    std::string head_kind;
    as >> a.depth >> a.base_channels >> a.n_classes >> a.input_h >> a.input_w >> a.dropout_p >>
        head_kind >> a.mlp_units >> a.groupnorm_groups;
    if (as.fail()) throw std::runtime_error("load_checkpoint: malformed arch line");
    a.head_kind = head_kind == "pool" ? HeadKind::pool : HeadKind::ch;
    state.backbone = read_section(f, "backbone");
    state.head = read_section(f, "head");
    state.predictor = read_section(f, "predictor");
    if (!std::getline(f, line) || line != "end")
        throw std::runtime_error("load_checkpoint: missing end marker");
    return state;
}

}  // namespace segclr
