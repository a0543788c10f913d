#include "ldl/metrics.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "ldl/objectives.hpp"

namespace ldl {

MetricTuple evaluate(const LabelDistribution& d, const LabelDistribution& d_hat) {
    if (d.size() != d_hat.size())
        throw ShapeError("evaluate", "distribution lengths " + std::to_string(d.size()) + " vs " +
                                         std::to_string(d_hat.size()));
    if (!d.is_valid() || !d_hat.is_valid())
        throw DataError("evaluate: inputs must be label distributions on the simplex");

    double cheb = 0.0, clark2 = 0.0, canberra = 0.0, dot = 0.0, na = 0.0, nb = 0.0, inter = 0.0;
    for (int j = 0; j < d.size(); ++j) {
        const double a = d.values[j], b = d_hat.values[j];
        const double diff = std::fabs(a - b);
        cheb = std::max(cheb, diff);
        const double s = a + b;
        if (s > 0.0) {
            clark2 += (diff * diff) / (s * s);
            canberra += diff / s;
        }
        dot += a * b;
        na += a * a;
        nb += b * b;
        inter += std::min(a, b);
    }
    const double kl = kl_loss(d.values, d_hat.values);
    const double cosine = dot / (std::sqrt(na) * std::sqrt(nb));
    return {cheb, std::sqrt(clark2), canberra, kl, cosine, inter};
}

MetricsReport aggregate(const std::vector<std::vector<MetricTuple>>& folds) {
    if (folds.empty()) throw DataError("aggregate: no folds");
    MetricsReport rep;
    rep.folds = static_cast<int>(folds.size());
    std::vector<MetricTuple> fold_means;
    for (const auto& fold : folds) {
        if (fold.empty()) throw DataError("aggregate: empty fold");
        MetricTuple m{};
        for (const auto& t : fold)
            for (int i = 0; i < 6; ++i) m[i] += t[i];
        for (int i = 0; i < 6; ++i) m[i] /= static_cast<double>(fold.size());
        fold_means.push_back(m);
        rep.samples += static_cast<std::int64_t>(fold.size());
    }
    const double nf = static_cast<double>(fold_means.size());
    for (int i = 0; i < 6; ++i) {
        double mean = 0.0;
        for (const auto& m : fold_means) mean += m[i];
        mean /= nf;
        double var = 0.0;
        if (fold_means.size() > 1) {
            for (const auto& m : fold_means) var += (m[i] - mean) * (m[i] - mean);
            var /= nf - 1.0;
        }
        rep.stats[i] = {mean, std::sqrt(var)};
    }
    return rep;
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["kind"] = "metrics-report";
    j["dataset"] = dataset;
    j["algorithm"] = algorithm;
    j["folds"] = folds;
    j["samples"] = samples;
    for (int i = 0; i < 6; ++i)
        j["metrics"][kMetricNames[i]] = {{"mean", stats[i].mean}, {"std", stats[i].std}};
    return j.dump(2) + "\n";
}

std::string MetricsReport::csv_header() {
    std::string h = "algorithm,dataset,folds,samples";
    for (const char* n : kMetricNames) {
        h += std::string(",") + n + "_mean," + n + "_std";
    }
    return h;
}

std::string MetricsReport::csv_row() const {
    char buf[64];
    std::string r = algorithm + "," + dataset + "," + std::to_string(folds) + "," +
                    std::to_string(samples);
    for (int i = 0; i < 6; ++i) {
        std::snprintf(buf, sizeof(buf), ",%.10g,%.10g", stats[i].mean, stats[i].std);
        r += buf;
    }
    return r;
}

}  // namespace ldl
