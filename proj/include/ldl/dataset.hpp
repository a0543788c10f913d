#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ldl/rng.hpp"
#include "ldl/tensor.hpp"

namespace ldl {

constexpr double kSimplexTol = 1e-6;

/// Probability vector over labels: entries >= 0, sum 1 (exact after
/// renormalization at construction time).
struct LabelDistribution {
    std::vector<double> values;

    int size() const { return static_cast<int>(values.size()); }
    bool is_valid(double tol = kSimplexTol) const;
    /// Rescale so the entries sum to exactly 1.0 in double arithmetic
    /// (largest entry absorbs the rounding residual).
    void renormalize();
};

struct LdlSample {
    std::vector<double> features;
    LabelDistribution target;
};

/// Optional sidecar overrides read from "<data>.cfg" (key = value text).
struct CvDefaults {
    std::optional<std::string> name;
    std::optional<int> k;
    std::optional<int> repeats;
    std::optional<std::uint64_t> seed;
};

struct LdlDataset {
    std::vector<LdlSample> samples;
    int d = 0;
    int L = 0;
    std::string name;
    CvDefaults defaults;

    int size() const { return static_cast<int>(samples.size()); }
};

/// Mixup configuration. lambda ~ Beta(alpha, alpha); the feature mask is
/// Bernoulli(keep_prob) and shared between both parents.
struct AugmentConfig {
    double alpha = 0.2;
    double keep_prob = 0.8;
    bool enabled = false;
};

/// CSV with header f0..f{d-1},y0..y{L-1}. Rows with non-finite features or
/// targets off the simplex (tolerance 1e-6) abort the load; the error lists
/// the offending 1-based data row numbers. Reads "<path>.cfg" overrides if
/// present.
LdlDataset load_csv(const std::string& path);
void save_csv(const LdlDataset& ds, const std::string& path);

struct Synthesized {
    LdlDataset dataset;
    Tensor weights;  // L x d ground-truth map
    Tensor bias;     // L
};

/// Standard-normal features; targets = softmax(W x + b) for a hidden linear
/// map drawn from the seed. The map is returned so tests can use it as an
/// oracle.
Synthesized synthesize(int n, int d, int L, std::uint64_t seed);

struct Split {
    std::vector<int> train;
    std::vector<int> validation;
    std::vector<int> test;
};

/// repeats x k splits. Per repeat the folds partition the index range; each
/// fold serves as the test set once and 10% of the remaining training
/// indices (at least one) are carved off for validation.
std::vector<Split> kfold_split(int n, int k, int repeats, std::uint64_t seed);

/// Eq-style masked mixup of two samples: features mix under a shared binary
/// mask, targets mix convexly and are renormalized with lnf.
LdlSample mixup_mask(const LdlSample& a, const LdlSample& b, double lambda,
                     const std::vector<int>& mask);

/// Randomized batch augmentation; returns a batch of the same size. Disabled
/// config passes the batch through unchanged.
std::vector<LdlSample> sample_augmentation(const std::vector<LdlSample>& batch,
                                           const AugmentConfig& cfg, Rng& rng);

}  // namespace ldl
