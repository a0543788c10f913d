#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "ldl/dataset.hpp"

namespace ldl {

/// (chebyshev, clark, canberra, kl, cosine, intersection)
using MetricTuple = std::array<double, 6>;

constexpr std::array<const char*, 6> kMetricNames = {"chebyshev", "clark",  "canberra",
                                                     "kl",        "cosine", "intersection"};
/// true where larger is better
constexpr std::array<bool, 6> kMetricHigherBetter = {false, false, false, false, true, true};

struct MetricStat {
    double mean = 0.0;
    double std = 0.0;
};

struct MetricsReport {
    std::array<MetricStat, 6> stats;
    int folds = 0;
    std::int64_t samples = 0;
    std::string dataset;
    std::string algorithm;

    std::string to_json() const;
    static std::string csv_header();
    std::string csv_row() const;
};

/// The six distances/similarities for a ground-truth/prediction pair. Both
/// inputs must be simplex vectors of equal length; 0/0 terms in clark and
/// canberra contribute 0.
MetricTuple evaluate(const LabelDistribution& d, const LabelDistribution& d_hat);

/// Fold means, then mean +/- sample standard deviation across folds.
MetricsReport aggregate(const std::vector<std::vector<MetricTuple>>& folds);

}  // namespace ldl
