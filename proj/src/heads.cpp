#include "ldl/heads.hpp"

#include <algorithm>
#include <cmath>

#include "ldl/tensor.hpp"

namespace ldl {

std::vector<double> softmax(std::span<const double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> out(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - m);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

std::vector<double> lnf(std::span<const double> z) {
    const double m = *std::min_element(z.begin(), z.end());
    const double shift = std::fabs(m);
    std::vector<double> out(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = z[i] + shift;
        sum += out[i];
    }
    if (sum <= 0.0) throw LdlError("lnf: degenerate input, shifted sum is not positive");
    for (double& v : out) v /= sum;
    return out;
}

}  // namespace ldl
