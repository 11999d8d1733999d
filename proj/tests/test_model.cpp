#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "segclr/model.hpp"

using namespace segclr;

namespace {

ArchitectureSpec tiny_arch() {
    ArchitectureSpec a;
    a.depth = 2;
    a.base_channels = 4;
    a.n_classes = 2;
    a.input_h = 16;
    a.input_w = 16;
    a.dropout_p = 0.5;
    a.head_kind = HeadKind::ch;
    a.mlp_units = 8;
    a.groupnorm_groups = 4;
    return a;
}

std::vector<double> random_images(const ArchitectureSpec& a, int n, std::uint64_t seed) {
    RandomStream rng(seed);
    std::vector<double> img(std::size_t(n) * a.input_h * a.input_w);
    for (auto& v : img) v = rng.u01();
    return img;
}

bool params_equal(const std::vector<ParamTensor>& a, const std::vector<ParamTensor>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].name != b[i].name || a[i].shape != b[i].shape || a[i].value != b[i].value)
            return false;
    return true;
}

}  // namespace

TEST_CASE("build_model determinism and validation") {
    const auto arch = tiny_arch();
    const auto m1 = build_model(arch, 7, true, true);
    const auto m2 = build_model(arch, 7, true, true);
    CHECK(params_equal(m1.backbone, m2.backbone));
    CHECK(params_equal(m1.head, m2.head));
    CHECK(params_equal(m1.predictor, m2.predictor));
    const auto m3 = build_model(arch, 8, true, true);
    CHECK_FALSE(params_equal(m1.backbone, m3.backbone));

    // backbone draws do not depend on whether a head is attached
    const auto bare = build_model(arch, 7, false, false);
    CHECK(params_equal(m1.backbone, bare.backbone));
    CHECK(bare.head.empty());
    CHECK(bare.predictor.empty());

    auto bad = arch;
    bad.input_h = 18;  // not divisible by 2^depth
    CHECK_THROWS_WITH_AS(build_model(bad, 1), doctest::Contains("divisible"),
                         std::invalid_argument);
}

TEST_CASE("forward_segment output range, shape, determinism") {
    const auto arch = tiny_arch();
    const auto model = build_model(arch, 3);
    const auto imgs = random_images(arch, 2, 5);
    const auto p1 = forward_segment(model, imgs, 2);
    CHECK(p1.size() == std::size_t(2) * arch.n_classes * arch.input_h * arch.input_w);
    for (double v : p1) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    const auto p2 = forward_segment(model, imgs, 2);
    CHECK(p1 == p2);  // dropout off => pure function

    // all-zero input still produces finite sigmoid outputs
    const std::vector<double> zeros(std::size_t(1) * arch.input_h * arch.input_w, 0.0);
    for (double v : forward_segment(model, zeros, 1)) {
        CHECK(std::isfinite(v));
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }

    CHECK_THROWS_AS(forward_segment(model, imgs, 1), std::invalid_argument);
}

TEST_CASE("encode matches the bottleneck feeding the decoder") {
    const auto arch = tiny_arch();
    auto model = build_model(arch, 11);
    const auto imgs = random_images(arch, 1, 13);

    const auto feats = encode(model, imgs, 1);
    CHECK(feats.shape == ad::Shape{1, arch.bottleneck_channels(), arch.bottleneck_h(),
                                   arch.bottleneck_w()});
    CHECK(arch.bottleneck_h() == 4);  // 16 / 2^2

    GraphBind bind;
    const auto fwd = forward_graph(model, bind, imgs, 1, false, nullptr);
    CHECK(feats.h == fwd.bottleneck->x);  // shared-path contract, bit-identical

    // distinct inputs give distinct features
    const auto other = encode(model, random_images(arch, 1, 14), 1);
    CHECK(feats.h != other.h);
}

TEST_CASE("projection heads: shapes, permutation behaviour") {
    auto arch = tiny_arch();

    // C_pool is invariant to spatial permutations of h
    arch.head_kind = HeadKind::pool;
    auto pool_model = build_model(arch, 17, true);
    Features h;
    h.shape = {1, arch.bottleneck_channels(), arch.bottleneck_h(), arch.bottleneck_w()};
    RandomStream rng(19);
    h.h.resize(ad::shape_numel(h.shape));
    for (auto& v : h.h) v = rng.uniform(-1, 1);
    const auto z_pool = project(pool_model, h);
    CHECK(int(z_pool.size()) == arch.mlp_units);

    Features hp = h;  // reverse each channel plane (a spatial permutation)
    const std::size_t plane = std::size_t(arch.bottleneck_h()) * arch.bottleneck_w();
    for (int c = 0; c < arch.bottleneck_channels(); ++c)
        std::reverse(hp.h.begin() + c * plane, hp.h.begin() + (c + 1) * plane);
    const auto z_pool_perm = project(pool_model, hp);
    for (std::size_t i = 0; i < z_pool.size(); ++i)
        CHECK(z_pool[i] == doctest::Approx(z_pool_perm[i]).epsilon(1e-12));

    // C_ch is not: generic weights see the spatial layout
    arch.head_kind = HeadKind::ch;
    auto ch_model = build_model(arch, 17, true);
    const auto z_ch = project(ch_model, h);
    const auto z_ch_perm = project(ch_model, hp);
    CHECK(int(z_ch.size()) == arch.mlp_units);
    double max_diff = 0;
    for (std::size_t i = 0; i < z_ch.size(); ++i)
        max_diff = std::max(max_diff, std::abs(z_ch[i] - z_ch_perm[i]));
    CHECK(max_diff > 1e-6);

    // missing head
    const auto bare = build_model(arch, 17, false);
    CHECK_THROWS_AS(project(bare, h), std::invalid_argument);
}

TEST_CASE("mlp_units=128 gives a 128-long projection") {
    auto arch = tiny_arch();
    arch.mlp_units = 128;
    const auto model = build_model(arch, 23, true);
    const auto imgs = random_images(arch, 1, 29);
    const auto z = project(model, encode(model, imgs, 1));
    CHECK(z.size() == 128);
}

TEST_CASE("predictor: shape, determinism, gradient flow") {
    const auto arch = tiny_arch();
    auto model = build_model(arch, 31, true, true);
    RandomStream rng(37);
    std::vector<double> z(std::size_t(3) * arch.mlp_units);
    for (auto& v : z) v = rng.uniform(-1, 1);
    const auto q = predict(model, z);
    CHECK(q.size() == z.size());

    // zero input, zero bias -> the second dense collapses to its (zero) bias
    const std::vector<double> zz(std::size_t(1) * arch.mlp_units, 0.0);
    const auto qz = predict(model, zz);
    for (double v : qz) CHECK(v == 0.0);

    // gradient flows through Q parameters
    GraphBind bind;
    auto zv = ad::constant({3, arch.mlp_units}, z);
    auto out = ad::mean_all(ad::mul(predict_graph(model, bind, zv), predict_graph(model, bind, zv)));
    ad::backward(out);
    double grad_mag = 0;
    for (const auto& [param, leaf] : bind.leaves)
        if (param->name.rfind("pred.", 0) == 0 && leaf->g.size() == leaf->x.size())
            for (double g : leaf->g) grad_mag += std::abs(g);
    CHECK(grad_mag > 1e-8);

    const auto no_pred = build_model(arch, 31, true, false);
    CHECK_THROWS_AS(predict(no_pred, z), std::invalid_argument);
}

TEST_CASE("count_params: inference vs training, C_ch accounting") {
    auto arch = tiny_arch();
    arch.head_kind = HeadKind::ch;
    const auto baseline = build_model(arch, 41, false, false);
    const auto joint = build_model(arch, 42, true, false);
    const auto siam = build_model(arch, 43, true, true);

    CHECK(count_params(baseline, CountMode::inference) ==
          count_params(joint, CountMode::inference));
    CHECK(count_params(joint, CountMode::training) > count_params(joint, CountMode::inference));
    CHECK(count_params(siam, CountMode::training) > count_params(joint, CountMode::training));
    CHECK(count_params(baseline, CountMode::training) ==
          count_params(baseline, CountMode::inference));

    // the learned channel-collapse aggregation adds channels+1 parameters
    std::size_t agg = 0;
    for (const auto& t : joint.head)
        if (t.name.rfind("head.agg.", 0) == 0) agg += t.numel();
    CHECK(agg == std::size_t(arch.bottleneck_channels()) + 1);
}

TEST_CASE("dropout: training stochastic, evaluation deterministic") {
    const auto arch = tiny_arch();
    auto model = build_model(arch, 51);
    const auto imgs = random_images(arch, 1, 53);
    RandomStream drop(55);
    GraphBind b1, b2;
    const auto t1 = forward_graph(model, b1, imgs, 1, true, &drop);
    const auto t2 = forward_graph(model, b2, imgs, 1, true, &drop);
    CHECK(t1.probs->x != t2.probs->x);  // distinct masks

    GraphBind b3, b4;
    const auto e1 = forward_graph(model, b3, imgs, 1, false, nullptr);
    const auto e2 = forward_graph(model, b4, imgs, 1, false, nullptr);
    CHECK(e1.probs->x == e2.probs->x);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    const auto arch = tiny_arch();
    const auto model = build_model(arch, 61, true, true);
    const auto path =
        (std::filesystem::temp_directory_path() / "segclr_test_ckpt.bin").string();
    save_checkpoint(model, path);
    const auto loaded = load_checkpoint(path);
    CHECK(loaded.arch == model.arch);
    CHECK(params_equal(loaded.backbone, model.backbone));
    CHECK(params_equal(loaded.head, model.head));
    CHECK(params_equal(loaded.predictor, model.predictor));
    std::filesystem::remove(path);
}

TEST_CASE("full forward/backward gradients match finite differences") {
    // tiny arch, 16x16, one sample: every backbone parameter is checked
    auto arch = tiny_arch();
    arch.dropout_p = 0.0;  // deterministic loss for differencing
    arch.base_channels = 4;
    auto model = build_model(arch, 71);
    const auto imgs = random_images(arch, 1, 73);

    const auto loss_of = [&](ModelState& m) {
        GraphBind bind;
        const auto fwd = forward_graph(m, bind, imgs, 1, false, nullptr);
        return ad::mean_all(ad::mul(fwd.probs, fwd.probs));
    };

    GraphBind bind;
    const auto fwd = forward_graph(model, bind, imgs, 1, false, nullptr);
    auto loss = ad::mean_all(ad::mul(fwd.probs, fwd.probs));
    ad::backward(loss);

    RandomStream pick(79);
    const double h = 1e-6;
    for (auto& [param, leaf] : bind.leaves) {
        REQUIRE(leaf->g.size() == leaf->x.size());
        // spot-check up to 8 coordinates per tensor (full sweep is the
        // acceptance suite's job)
        for (int rep = 0; rep < 8; ++rep) {
            const std::size_t j = pick.uniform_int(param->numel());
            const double keep = param->value[j];
            param->value[j] = keep + h;
            const double fp = loss_of(model)->x[0];
            param->value[j] = keep - h;
            const double fm = loss_of(model)->x[0];
            param->value[j] = keep;
            const double fd = (fp - fm) / (2 * h);
            const double an = leaf->g[j];
            CHECK(std::abs(fd - an) <= 1e-4 * std::max({std::abs(fd), std::abs(an), 1e-4}));
        }
    }
}
