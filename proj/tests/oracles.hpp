// Test-side oracles, written independently of the library implementations
// they check: naive metric formulas, a sort-based percentile, and helpers for
// random simplex vectors with exactly unit sum.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "ldl/rng.hpp"

namespace oracle {

inline std::vector<double> random_simplex(int L, ldl::Rng& rng) {
    std::vector<double> v(L);
    double sum = 0.0;
    for (double& x : v) {
        x = -std::log(1.0 - rng.uniform());  // Exp(1); normalized -> Dirichlet(1)
        sum += x;
    }
    for (double& x : v) x /= sum;
    // force the sum to exactly 1.0 so simplex identities hold bit-tight
    for (int iter = 0; iter < 4; ++iter) {
        double s = std::accumulate(v.begin(), v.end(), 0.0);
        if (s == 1.0) break;
        *std::max_element(v.begin(), v.end()) += 1.0 - s;
    }
    return v;
}

inline double chebyshev(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

inline double clark(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double den = a[i] + b[i];
        if (den == 0.0) continue;
        const double r = (a[i] - b[i]) / den;
        s += r * r;
    }
    return std::sqrt(s);
}

inline double canberra(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double den = a[i] + b[i];
        if (den == 0.0) continue;
        s += std::fabs(a[i] - b[i]) / den;
    }
    return s;
}

inline double kl(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] <= 0.0) continue;
        s += a[i] * std::log(a[i] / std::max(b[i], 1e-12));
    }
    return s;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::sqrt(na * nb);
}

inline double intersection(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::min(a[i], b[i]);
    return s;
}

inline std::array<double, 6> all_metrics(const std::vector<double>& a,
                                         const std::vector<double>& b) {
    return {chebyshev(a, b), clark(a, b), canberra(a, b), kl(a, b), cosine(a, b),
            intersection(a, b)};
}

/// Linear-interpolation percentile over a copy of the values.
inline double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + (pos - lo) * (v[lo + 1] - v[lo]);
}

}  // namespace oracle
