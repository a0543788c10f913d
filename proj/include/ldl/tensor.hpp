#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldl {

/// Base class for all library errors.
struct LdlError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for an operation. Carries the op name and
/// the offending shapes so callers can report precisely.
struct ShapeError : LdlError {
    ShapeError(const std::string& op, const std::string& detail)
        : LdlError(op + ": " + detail), op_name(op) {}
    std::string op_name;
};

struct DataError : LdlError {
    using LdlError::LdlError;
};

struct CheckpointError : LdlError {
    using LdlError::LdlError;
};

std::string shape_str(const std::vector<int>& shape);

/// Dense row-major tensor of doubles. Shapes are small (rank <= 3 in this
/// codebase); data is owned and contiguous.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);
    static Tensor scalar(double v);
    static Tensor row(std::vector<double> v);  // shape {n}

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    // 2-D accessors
    int rows() const { return shape.at(0); }
    int cols() const { return shape.at(1); }
    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

    // 3-D accessor
    double& at3(int i, int j, int k) {
        return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    double at3(int i, int j, int k) const {
        return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

std::int64_t shape_numel(const std::vector<int>& shape);

}  // namespace ldl
