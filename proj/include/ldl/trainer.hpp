#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ldl/dataset.hpp"
#include "ldl/metrics.hpp"
#include "ldl/model.hpp"
#include "ldl/objectives.hpp"

namespace ldl {

struct TrainConfig {
    int batch_size = 32;
    int epochs = 100;
    double learning_rate = 2e-3;
    double weight_decay = 1e-4;
    bool early_stopping = true;
    int patience = 10;
    double min_delta = 1e-4;
    bool greedy_soup = true;
    AugmentConfig augment;
    std::uint64_t seed = 0;
};

/// Training aborted on a non-finite loss; carries the epoch index.
struct TrainingError : LdlError {
    TrainingError(int ep, const std::string& msg) : LdlError(msg), epoch(ep) {}
    int epoch;
};

struct AdamState {
    std::vector<std::pair<std::string, std::pair<Tensor, Tensor>>> moments;  // key -> (m, v)
    std::int64_t t = 0;
};

using GradMap = std::vector<std::pair<std::string, Tensor>>;

/// One Adam step with decoupled weight decay (beta1 0.9, beta2 0.999,
/// eps 1e-8). Throws LdlError naming the parameter on non-finite gradients.
void adam_step(ParamStore& params, const GradMap& grads, AdamState& state, double lr,
               double weight_decay);

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_kl = 0.0;
};

struct Checkpoint {
    ParamStore params;
    int epoch = 0;
    double val_kl = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    std::vector<Checkpoint> checkpoints;  // populated when greedy_soup is on
    int stopped_epoch = 0;                // last epoch actually run
};

/// Mini-batch training on the given index split. Early stopping monitors the
/// validation composite loss; when soup is enabled every epoch's parameters
/// are kept as soup candidates and the final model is the greedy soup,
/// otherwise the best-validation snapshot is restored.
TrainResult train(IdrModel& model, const LdlDataset& ds, std::span<const int> train_idx,
                  std::span<const int> val_idx, const TrainConfig& cfg, const LossWeights& weights);

/// Greedy parameter averaging: checkpoints are visited in ascending
/// validation-KL order; a candidate joins the soup only if the averaged
/// parameters do not increase validation KL. The result is never worse than
/// the best single checkpoint.
ParamStore greedy_soup(const std::vector<Checkpoint>& checkpoints,
                       const std::function<double(const ParamStore&)>& val_kl);

/// Mean composite loss and mean KL over the given samples (no augmentation,
/// unmasked time slots).
std::pair<double, double> evaluate_objective(const IdrModel& model, const LdlDataset& ds,
                                             std::span<const int> idx, const LossWeights& weights,
                                             const PerceptualNet* pnet);

enum class Algo { idr, bfgsll, uniform };

std::string algo_name(Algo a);
Algo algo_from_name(const std::string& s);

struct CvOptions {
    int k = 5;
    int repeats = 10;
    std::uint64_t seed = 0;
    int jobs = 1;
    IdrConfig model_cfg;        // d_in/L filled from the dataset
    TrainConfig train_cfg;
    LossWeights weights;
};

/// repeats x k-fold protocol: fresh seeded init per split, train with the
/// configured regularizers, evaluate the test fold, aggregate across folds.
MetricsReport cross_validate(const LdlDataset& ds, Algo algo, const CvOptions& opt);

}  // namespace ldl
