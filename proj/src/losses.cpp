#include "segclr/losses.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace segclr {

void LossConfig::validate() const {
    if (epsilon <= 0) throw std::invalid_argument("LossConfig.epsilon: must be positive");
    if (tau <= 0) throw std::invalid_argument("LossConfig.tau: must be positive");
    if (lambda_sup < 0) throw std::invalid_argument("LossConfig.lambda_sup: must be >= 0");
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size())
        throw std::invalid_argument("cosine_similarity: length mismatch");
    double uu = 0, vv = 0, uv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        uu += u[i] * u[i];
        vv += v[i] * v[i];
        uv += u[i] * v[i];
    }
    if (uu == 0.0 || vv == 0.0) {
        static std::atomic<bool> warned{false};
        if (!warned.exchange(true))
            std::fprintf(stderr, "warning: cosine_similarity on zero vector, returning 0\n");
        return 0.0;
    }
    return uv / (std::sqrt(uu) * std::sqrt(vv));
}

ad::Value dice_loss(const ad::Value& p, const ad::Value& y,
                    const std::vector<double>& class_mask, double epsilon) {
    if (p->shape != y->shape || p->shape.size() != 4)
        throw std::invalid_argument("dice_loss: p and y must both be [N,C,H,W]");
    for (double v : y->x)
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("dice_loss: y must be binary");
    const int N = p->shape[0], C = p->shape[1];
    const std::size_t plane = std::size_t(p->shape[2]) * p->shape[3];

    std::vector<double> rowmask(std::size_t(N) * C);
    if (class_mask.size() == std::size_t(C)) {
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) rowmask[std::size_t(n) * C + c] = class_mask[c];
    } else if (class_mask.size() == std::size_t(N) * C) {
        rowmask = class_mask;
    } else {
        throw std::invalid_argument("dice_loss: class_mask must have C or N*C entries");
    }

    // availability per class; the class average runs over available ones only
    std::vector<double> avail(C, 0.0);
    int n_avail = 0;
    for (int c = 0; c < C; ++c) {
        for (int n = 0; n < N; ++n)
            if (rowmask[std::size_t(n) * C + c] != 0.0) avail[c] = 1.0;
        if (avail[c] != 0.0) ++n_avail;
    }
    if (n_avail == 0) throw std::invalid_argument("dice_loss: every class is masked");

    std::vector<double> bmask(p->numel());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double m = rowmask[std::size_t(n) * C + c];
            double* dst = &bmask[(std::size_t(n) * C + c) * plane];
            for (std::size_t i = 0; i < plane; ++i) dst[i] = m;
        }
    const auto mask_t = ad::constant(p->shape, std::move(bmask));

    const auto pm = ad::mul(p, mask_t);
    const auto ym = ad::mul(y, mask_t);
    const auto inter = ad::sum_per_channel(ad::mul(pm, ym));          // [C]
    const auto psum = ad::sum_per_channel(pm);                        // [C]
    const auto ysum = ad::sum_per_channel(ym);                        // [C]
    const auto num = ad::add_scalar(ad::scale(inter, 2.0), epsilon);  // 2*sum(yp) + eps
    const auto den = ad::add_scalar(ad::add(psum, ysum), epsilon);    // eps + sum(y) + sum(p)
    const auto terms = ad::sub(ad::log_(den), ad::log_(num));         // -log(num/den), per class
    const auto picked = ad::mul(terms, ad::constant({C}, avail));
    return ad::scale(ad::sum_all(picked), 1.0 / double(n_avail));
}

ad::Value ntxent_loss(const ad::Value& z_a, const ad::Value& z_b, double tau,
                      bool include_positive_in_denominator) {
    if (z_a->shape != z_b->shape || z_a->shape.size() != 2)
        throw std::invalid_argument("ntxent_loss: projections must both be [N,d]");
    if (tau <= 0) throw std::invalid_argument("ntxent_loss: tau must be positive");
    const int N = z_a->shape[0];
    if (N < 2)
        throw std::invalid_argument("ntxent_loss: need at least 2 pairs (empty denominator)");
    const int R = 2 * N;  // anchors: rows 0..N-1 are view a, N..2N-1 view b

    const auto zn = ad::l2_normalize_rows(ad::concat_rows(z_a, z_b));
    const auto sims = ad::scale(ad::matmul_nt(zn, zn), 1.0 / tau);  // [2N,2N]

    std::vector<double> neg_mask(std::size_t(R) * R, 0.0);
    std::vector<double> pos_mask(std::size_t(R) * R, 0.0);
    for (int i = 0; i < R; ++i) {
        const int pair_i = i % N;
        const int partner = (i < N) ? i + N : i - N;
        pos_mask[std::size_t(i) * R + partner] = 1.0;
        for (int k = 0; k < R; ++k)
            if (k % N != pair_i) neg_mask[std::size_t(i) * R + k] = 1.0;
        if (include_positive_in_denominator) neg_mask[std::size_t(i) * R + partner] = 1.0;
    }

    const auto denom = ad::row_sum(ad::mul(ad::exp_(sims), ad::constant({R, R}, std::move(neg_mask))));
    const auto pos = ad::row_sum(ad::mul(sims, ad::constant({R, R}, std::move(pos_mask))));
    const auto per_anchor = ad::sub(ad::log_(denom), pos);  // -log(exp(pos)/denom)
    return ad::mean_all(per_anchor);
}

ad::Value simsiam_loss(const ad::Value& z_a, const ad::Value& z_b,
                       const std::function<ad::Value(const ad::Value&)>& predictor) {
    if (!predictor) throw std::invalid_argument("simsiam_loss: missing predictor");
    if (z_a->shape != z_b->shape || z_a->shape.size() != 2)
        throw std::invalid_argument("simsiam_loss: projections must both be [N,d]");
    const auto cos_rows = [](const ad::Value& u, const ad::Value& v) {
        return ad::row_sum(ad::mul(ad::l2_normalize_rows(u), ad::l2_normalize_rows(v)));
    };
    const auto t1 = cos_rows(predictor(z_a), ad::stopgrad(z_b));
    const auto t2 = cos_rows(predictor(z_b), ad::stopgrad(z_a));
    return ad::scale(ad::mean_all(ad::add(t1, t2)), -1.0);
}

ad::Value joint_loss(const ad::Value& con_source, const std::optional<ad::Value>& con_target,
                     const ad::Value& sup, double lambda_sup) {
    const auto weighted_sup = ad::scale(sup, lambda_sup);
    if (con_target)
        return ad::add(ad::scale(ad::add(con_source, *con_target), 0.5), weighted_sup);
    return ad::add(con_source, weighted_sup);
}

double joint_loss_value(double con_source, std::optional<double> con_target, double sup,
                        double lambda_sup) {
    if (con_target) return 0.5 * (con_source + *con_target) + lambda_sup * sup;
    return con_source + lambda_sup * sup;
}

}  // namespace segclr
