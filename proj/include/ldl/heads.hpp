#pragma once

#include <span>
#include <vector>

namespace ldl {

/// Softmax with max-subtraction (value-preserving overflow guard).
std::vector<double> softmax(std::span<const double> z);

/// Linear normalization: out_i = (z_i + |min z|) / sum_c (z_c + |min z|).
/// Identity on simplex vectors whose minimum entry is 0. Throws LdlError on
/// degenerate input (shifted sum 0, e.g. the all-zero vector).
std::vector<double> lnf(std::span<const double> z);

}  // namespace ldl
