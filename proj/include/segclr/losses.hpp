// losses.hpp - training objectives: log-Dice supervision, NT-Xent and
// SimSiam contrastive losses, and the weighted joint objective.

#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "segclr/tensor.hpp"

namespace segclr {

struct LossConfig {
    double epsilon = 1e-12;
    double tau = 0.5;
    double lambda_sup = 20.0;
    enum class Contrastive { ntxent, simsiam };
    Contrastive kind = Contrastive::ntxent;
    // Standard NT-Xent keeps the positive pair in the denominator; the
    // variant used here excludes the whole paired sample by default.
    bool include_positive_in_denominator = false;

    void validate() const;
};

// Plain cosine similarity; zero vectors map to 0 (degenerate projection,
// warned once on stderr).
double cosine_similarity(std::span<const double> u, std::span<const double> v);

// Log-Dice loss over a batch. p and y are [N,C,H,W]; y must be binary.
// class_mask has either C entries (shared availability flags) or N*C
// entries (per-sample availability); masked entries contribute nothing.
// Throws when every class is masked.
ad::Value dice_loss(const ad::Value& p, const ad::Value& y,
                    const std::vector<double>& class_mask, double epsilon);

// NT-Xent over paired projections z_a,z_b = [N,d], N >= 2. The loss is the
// mean over all 2N anchor terms; negatives are both views of every other
// pair in the batch.
ad::Value ntxent_loss(const ad::Value& z_a, const ad::Value& z_b, double tau,
                      bool include_positive_in_denominator = false);

// Negative-cosine SimSiam loss with stop-gradient on the target branch.
// predictor maps a projection batch through Q.
ad::Value simsiam_loss(const ad::Value& z_a, const ad::Value& z_b,
                       const std::function<ad::Value(const ad::Value&)>& predictor);

// Joint objective: 0.5*(con_source + con_target) + lambda*sup; without a
// target-domain term the contrastive part is con_source alone.
ad::Value joint_loss(const ad::Value& con_source, const std::optional<ad::Value>& con_target,
                     const ad::Value& sup, double lambda_sup);
double joint_loss_value(double con_source, std::optional<double> con_target, double sup,
                        double lambda_sup);

}  // namespace segclr
