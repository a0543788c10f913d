#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ldl/dataset.hpp"
#include "ldl/tensor.hpp"

namespace ldl {

/// Maximum-entropy linear model: predict(x) = softmax(theta x + b).
struct MaxEntModel {
    Tensor theta;  // L x d
    Tensor bias;   // L
    int d = 0;
    int L = 0;
};

struct FitOptions {
    double l2_reg = 1e-6;  // pins the softmax gauge on theta
    double tol = 1e-6;     // stop when ||grad||_2 < tol
    int max_iter = 500;
    int memory = 10;       // limited-memory history length
};

struct FitReport {
    int iterations = 0;
    double objective = 0.0;
    double grad_norm = 0.0;
    bool converged = false;
    std::vector<double> objective_history;
};

/// Line search could not find an acceptable step; message carries iterate
/// diagnostics.
struct LineSearchError : LdlError {
    using LdlError::LdlError;
};

LabelDistribution bfgsll_predict(const MaxEntModel& model, std::span<const double> x);

/// Minimize mean KL(d_i || predict(x_i)) + l2_reg * ||theta||_F^2 with
/// limited-memory quasi-Newton (two-loop recursion, Armijo backtracking).
/// Deterministic from the zero initializer; `init` overrides it.
MaxEntModel bfgsll_fit(const LdlDataset& ds, std::span<const int> indices, const FitOptions& opt,
                       FitReport* report = nullptr,
                       const std::optional<MaxEntModel>& init = std::nullopt);
MaxEntModel bfgsll_fit(const LdlDataset& ds, const FitOptions& opt, FitReport* report = nullptr);

/// Mean KL of model predictions against dataset targets over the given rows.
double mean_kl(const MaxEntModel& model, const LdlDataset& ds, std::span<const int> indices);

void save_maxent(const MaxEntModel& model, const std::string& path);
MaxEntModel load_maxent(const std::string& path);

}  // namespace ldl
