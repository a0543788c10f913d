#pragma once

#include <optional>
#include <span>
#include <vector>

#include "ldl/graph.hpp"
#include "ldl/rng.hpp"

namespace ldl {

constexpr double kLogEps = 1e-12;

/// Loss-term weights. The matrix-regularizer weight depends on which branch
/// applies: beta_few_labels when L <= label_threshold, beta_many_labels
/// otherwise (the branch with the perceptual term).
struct LossWeights {
    double lambda_kl = 0.01;      // KL weight, few-label branch
    double beta_few_labels = 0.1; // matrix regularizer, few-label branch
    double lambda1 = 0.01;        // KL weight, many-label branch
    double lambda2 = 0.01;        // perceptual weight, many-label branch
    double beta_many_labels = 0.08;
    int label_threshold = 20;
    double sigma2 = 0.5;          // Gaussian prior variance for matrix rows

    double beta_for(int L) const { return L <= label_threshold ? beta_few_labels : beta_many_labels; }
};

/// Frozen random three-layer MLP (width L, ReLU) used as the feature space of
/// the perceptual loss. Parameters are Kaiming-initialized once and never
/// updated.
struct PerceptualNet {
    int L = 0;
    std::vector<Tensor> weights;  // 3 x (L x L)
    std::vector<Tensor> biases;   // 3 x (L)

    static PerceptualNet init(int L, std::uint64_t seed);
};

// ---- plain scalar versions (evaluation/reporting) ----

double l1_loss(std::span<const double> pred, std::span<const double> target);
/// KL(d || d_hat) with 0*ln0 := 0 and the epsilon clamp on predictions.
double kl_loss(std::span<const double> d, std::span<const double> d_hat, double eps = kLogEps);
/// Moment-matching Gaussian regularizer on an (L x 2L) matrix: rows should
/// have mean d_i and population variance sigma2.
double gaussian_matrix_reg(const Tensor& m, std::span<const double> d, double sigma2 = 0.5);
double perceptual_loss(std::span<const double> pred, std::span<const double> target,
                       const PerceptualNet& net);

// ---- graph builders (training path) ----

Var l1_loss_node(Graph& g, Var pred, const std::vector<double>& target);
Var kl_loss_node(Graph& g, const std::vector<double>& target, Var pred, double eps = kLogEps);
Var gaussian_matrix_reg_node(Graph& g, Var m, const std::vector<double>& target, double sigma2);
Var perceptual_loss_node(Graph& g, Var pred, const std::vector<double>& target,
                         const PerceptualNet& net);

/// Batch-averaged composite loss. L <= threshold: mean L1 + lambda*KL +
/// beta*reg. Otherwise the perceptual term joins with weights lambda1/lambda2
/// and net must be non-null (it is not evaluated on the few-label branch).
Var composite_loss_node(Graph& g, std::span<const Var> preds,
                        std::span<const std::vector<double>> targets, std::span<const Var> matrices,
                        const LossWeights& w, int L, const PerceptualNet* net);

}  // namespace ldl
