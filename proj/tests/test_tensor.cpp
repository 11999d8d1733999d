#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "segclr/random.hpp"
#include "segclr/tensor.hpp"

using namespace segclr;

namespace {

using Builder = std::function<ad::Value(const std::vector<ad::Value>&)>;

std::vector<std::vector<double>> random_data(const std::vector<ad::Shape>& shapes,
                                             std::uint64_t seed, double lo = -1.0,
                                             double hi = 1.0) {
    RandomStream rng(seed);
    std::vector<std::vector<double>> data;
    for (const auto& s : shapes) {
        std::vector<double> d(ad::shape_numel(s));
        for (auto& v : d) v = rng.uniform(lo, hi);
        data.push_back(std::move(d));
    }
    return data;
}

double eval_scalar(const std::vector<ad::Shape>& shapes,
                   const std::vector<std::vector<double>>& data, const Builder& build) {
    std::vector<ad::Value> params;
    for (std::size_t i = 0; i < shapes.size(); ++i) params.push_back(ad::param(shapes[i], data[i]));
    return build(params)->x[0];
}

// Central finite differences against the recorded backward pass.
void check_gradients(const std::vector<ad::Shape>& shapes, const Builder& build,
                     std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    auto data = random_data(shapes, seed, lo, hi);
    std::vector<ad::Value> params;
    for (std::size_t i = 0; i < shapes.size(); ++i) params.push_back(ad::param(shapes[i], data[i]));
    auto loss = build(params);
    REQUIRE(loss->numel() == 1);
    ad::backward(loss);

    const double h = 1e-6;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        REQUIRE(params[i]->g.size() == params[i]->x.size());
        for (std::size_t j = 0; j < data[i].size(); ++j) {
            const double keep = data[i][j];
            data[i][j] = keep + h;
            const double fp = eval_scalar(shapes, data, build);
            data[i][j] = keep - h;
            const double fm = eval_scalar(shapes, data, build);
            data[i][j] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = params[i]->g[j];
            const double err = std::abs(fd - an);
            const double tol = 1e-4 * std::max({std::abs(fd), std::abs(an), 1e-4});
            INFO("tensor ", i, " element ", j, " analytic ", an, " fd ", fd);
            CHECK(err <= tol);
        }
    }
}

}  // namespace

TEST_CASE("elementwise and reduction gradients") {
    check_gradients({{2, 3}, {2, 3}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::sum_all(ad::mul(ad::add(p[0], p[1]), ad::sub(p[0], p[1])));
                    },
                    1);
    check_gradients({{5}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::mean_all(ad::exp_(ad::scale(p[0], 0.7)));
                    },
                    2);
    check_gradients({{4}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::sum_all(ad::log_(ad::add_scalar(ad::sigmoid(p[0]), 0.1)));
                    },
                    3);
    check_gradients({{6}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::sum_all(ad::sqrt_(ad::add_scalar(ad::mul(p[0], p[0]), 0.5)));
                    },
                    4);
}

TEST_CASE("relu gradient away from the kink") {
    check_gradients({{8}},
                    [](const std::vector<ad::Value>& p) { return ad::sum_all(ad::relu(p[0])); }, 5,
                    0.2, 1.0);
    check_gradients({{8}},
                    [](const std::vector<ad::Value>& p) { return ad::sum_all(ad::relu(p[0])); }, 6,
                    -1.0, -0.2);
}

TEST_CASE("dense and matmul gradients") {
    check_gradients({{2, 3}, {4, 3}, {4}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::mean_all(ad::sigmoid(ad::dense(p[0], p[1], p[2])));
                    },
                    7);
    check_gradients({{3, 4}, {2, 4}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::sum_all(ad::mul(ad::matmul_nt(p[0], p[1]),
                                                   ad::matmul_nt(p[0], p[1])));
                    },
                    8);
}

TEST_CASE("conv2d values and gradients") {
    // identity kernel reproduces the input
    std::vector<double> img(2 * 1 * 4 * 4);
    RandomStream rng(11);
    for (auto& v : img) v = rng.u01();
    auto x = ad::constant({2, 1, 4, 4}, img);
    std::vector<double> w(9, 0.0);
    w[4] = 1.0;  // center tap
    auto y = ad::conv2d(x, ad::constant({1, 1, 3, 3}, w), ad::constant({1}, {0.0}), 1);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(y->x[i] == doctest::Approx(img[i]));

    check_gradients({{1, 2, 4, 4}, {3, 2, 3, 3}, {3}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::mean_all(ad::sigmoid(ad::conv2d(p[0], p[1], p[2], 1)));
                    },
                    12);
    // 1x1 convolution, no padding
    check_gradients({{2, 3, 2, 2}, {1, 3, 1, 1}, {1}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::sum_all(ad::conv2d(p[0], p[1], p[2], 0));
                    },
                    13);
}

TEST_CASE("pooling and upsampling") {
    auto x = ad::constant({1, 1, 2, 2}, {1.0, 2.0, 4.0, 3.0});
    auto p = ad::maxpool2(x);
    CHECK(p->x[0] == 4.0);

    auto u = ad::upsample_nearest2(x);
    CHECK(u->shape == ad::Shape{1, 1, 4, 4});
    CHECK(u->x[0] == 1.0);   // (0,0) <- (0,0)
    CHECK(u->x[2] == 2.0);   // (0,2) <- (0,1)
    CHECK(u->x[5] == 1.0);   // (1,1) <- (0,0)
    CHECK(u->x[10] == 3.0);  // (2,2) <- (1,1)

    check_gradients({{1, 2, 4, 4}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::sum_all(ad::mul(ad::maxpool2(p[0]), ad::maxpool2(p[0])));
                    },
                    14);
    check_gradients({{2, 1, 2, 2}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::mean_all(ad::sigmoid(ad::upsample_nearest2(p[0])));
                    },
                    15);
}

TEST_CASE("group_norm matches direct computation and gradients") {
    check_gradients({{2, 4, 2, 2}, {4}, {4}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::mean_all(ad::mul(ad::group_norm(p[0], p[1], p[2], 2), p[0]));
                    },
                    16);
    check_gradients({{3, 4}, {4}, {4}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::sum_all(ad::sigmoid(ad::group_norm(p[0], p[1], p[2], 4)));
                    },
                    17);

    // hand check: one group, [1,2] input, gamma 1 beta 0 => +-1 up to eps
    auto x = ad::constant({1, 2}, {1.0, 2.0});
    auto g = ad::group_norm(x, ad::constant({2}, {1.0, 1.0}), ad::constant({2}, {0.0, 0.0}), 1);
    CHECK(g->x[0] == doctest::Approx(-0.99999).epsilon(1e-3));
    CHECK(g->x[1] == doctest::Approx(0.99999).epsilon(1e-3));
}

TEST_CASE("concat, reshape, normalize gradients") {
    check_gradients({{1, 2, 2, 2}, {1, 3, 2, 2}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::mean_all(ad::mul(ad::concat_channels(p[0], p[1]),
                                                    ad::concat_channels(p[0], p[1])));
                    },
                    18);
    check_gradients({{2, 3}, {2, 3}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::sum_all(ad::mul(ad::concat_rows(p[0], p[1]),
                                                   ad::concat_rows(p[1], p[0])));
                    },
                    19);
    check_gradients({{2, 6}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::mean_all(ad::l2_normalize_rows(p[0]));
                    },
                    20, 0.3, 1.0);
    check_gradients({{1, 2, 2, 3}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::sum_all(
                            ad::mul(ad::reshape(p[0], {3, 4}), ad::reshape(p[0], {3, 4})));
                    },
                    21);
    check_gradients({{2, 3, 2, 2}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::sum_all(ad::mul(ad::spatial_mean(p[0]), ad::spatial_mean(p[0])));
                    },
                    22);
    check_gradients({{2, 3, 2, 2}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::sum_all(
                            ad::mul(ad::sum_per_channel(p[0]), ad::sum_per_channel(p[0])));
                    },
                    23);
    check_gradients({{3, 4}},
                    [](const std::vector<ad::Value>& p) {
                        return ad::sum_all(ad::mul(ad::row_sum(p[0]), ad::row_sum(p[0])));
                    },
                    24);
}

TEST_CASE("stopgrad blocks the backward path exactly") {
    auto p = ad::param({3}, {0.5, -0.2, 0.8});
    auto q = ad::param({3}, {0.1, 0.4, -0.3});
    auto loss = ad::sum_all(ad::mul(p, ad::stopgrad(q)));
    ad::backward(loss);
    REQUIRE(p->g.size() == 3);
    CHECK(p->g[0] == 0.1);
    CHECK(p->g[1] == 0.4);
    CHECK(p->g[2] == -0.3);
    CHECK(q->g.empty());  // never touched

    // value passes through unchanged
    auto s = ad::stopgrad(q);
    CHECK(s->x == q->x);
}

TEST_CASE("l2_normalize_rows produces unit rows") {
    RandomStream rng(30);
    std::vector<double> d(4 * 5);
    for (auto& v : d) v = rng.uniform(-2.0, 2.0);
    auto z = ad::l2_normalize_rows(ad::constant({4, 5}, d));
    for (int n = 0; n < 4; ++n) {
        double ss = 0;
        for (int k = 0; k < 5; ++k) ss += z->x[n * 5 + k] * z->x[n * 5 + k];
        CHECK(ss == doctest::Approx(1.0).epsilon(1e-12));
    }
}
