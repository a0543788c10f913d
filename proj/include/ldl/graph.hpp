#pragma once

#include <functional>
#include <vector>

#include "ldl/tensor.hpp"

namespace ldl {

class Graph;

/// Lightweight handle to a node in a Graph tape.
struct Var {
    Graph* graph = nullptr;
    int id = -1;

    const Tensor& value() const;
    /// Adjoint after Graph::backward. Empty tensor means "not reached" (i.e. zero).
    const Tensor& grad() const;
};

/// Reverse-mode tape over dense tensors. Nodes are appended in topological
/// order by construction; backward walks the tape in reverse, so gradient
/// accumulation order is fixed and reruns are bit-identical.
///
/// Broadcasting is deliberately restricted to leading-dimension batch
/// expansion (broadcast_add of a row vector, rowwise_* with a per-row scalar)
/// and true scalar operands, which keeps every backward rule auditable.
class Graph {
  public:
    /// Leaf that does not receive a gradient.
    Var constant(Tensor v);
    /// Leaf that participates in backward (a parameter).
    Var param(Tensor v);

    // --- elementwise (operands must have identical shapes) ---
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);

    // --- ops with a plain-number operand ---
    Var scalar_mul(Var a, double c);
    Var scalar_add(Var a, double c);
    /// max(x, c) elementwise; gradient passes where x >= c. This is the
    /// documented epsilon-clamp that must precede log on possibly
    /// non-positive values.
    Var clamp_min(Var a, double c);

    // --- ops with a scalar *node* operand (broadcast over all of a) ---
    Var add_scalar(Var a, Var s);
    Var div_scalar(Var a, Var s);

    // --- unary ---
    Var relu(Var a);   // subgradient at 0 is 0
    Var exp(Var a);
    Var log(Var a);    // throws on non-positive entries; clamp first
    Var tanh(Var a);
    Var abs(Var a);    // subgradient at 0 is 0

    // --- linear algebra (2-D) ---
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    /// (N x M) + (M): add v to every row.
    Var broadcast_add(Var x, Var v);
    /// (N x M) op (N): apply the row's scalar to each entry of that row.
    Var rowwise_sub(Var x, Var c);
    Var rowwise_div(Var x, Var c);

    // --- reductions ---
    Var sum_all(Var a);
    Var mean_all(Var a);
    Var sum_axis(Var a, int axis);   // 2-D only; axis 0 -> (cols), axis 1 -> (rows)
    Var mean_axis(Var a, int axis);
    Var max_all(Var a);   // gradient to first argmax
    Var min_all(Var a);
    Var max_axis1(Var a); // per-row max of a 2-D tensor -> (rows)

    // --- structure ---
    Var reshape(Var a, std::vector<int> shape);
    Var concat_rows(const std::vector<Var>& parts);  // stack 2-D blocks along axis 0
    Var slice_rows(Var a, int r0, int r1);           // rows [r0, r1)

    /// Bilinear lookup: feature map (L x H x W), grid (L x P x 2) with
    /// coordinates in [-1,1]^2 (x indexes W, y indexes H). Align-corners
    /// mapping: -1 is the center of pixel 0 and +1 the center of pixel H-1
    /// (resp. W-1); out-of-range coordinates clamp to the border and then
    /// carry zero gradient. Differentiable in both the map and the grid.
    Var grid_sample(Var feature, Var grid);

    /// Reverse sweep from a scalar-valued root. Leaves reachable from the
    /// root end up with adjoint = d(root)/d(leaf); unreached leaves keep an
    /// empty (all-zero) adjoint.
    void backward(Var root);

    const Tensor& value(int id) const { return nodes_[id].value; }
    const Tensor& grad(int id) const { return nodes_[id].grad; }
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;  // empty until touched by backward
        bool requires_grad = false;
        std::function<void(Graph&, const Tensor&)> backprop;  // pulls own grad, pushes to parents
    };

    friend struct Var;

    int push(Tensor value, bool requires_grad, std::function<void(Graph&, const Tensor&)> fn);
    void accum(int id, const Tensor& contribution);
    void accum_at(int id, std::size_t flat_index, double v);
    bool wants_grad(int id) const { return nodes_[id].requires_grad; }

    std::vector<Node> nodes_;
};

/// Report from gradient_check: autodiff against central finite differences.
struct GradCheckReport {
    double max_rel_err = 0.0;
    int worst_tensor = -1;
    std::int64_t worst_coord = -1;
    std::int64_t coords_checked = 0;
    std::int64_t coords_skipped = 0;
    double tol = 0.0;
    bool pass = false;
};

struct GradCheckOptions {
    /// 0 checks every coordinate; otherwise a seeded subsample per tensor.
    std::int64_t max_coords_per_tensor = 0;
    std::uint64_t seed = 0;
    /// Skip coordinates whose central second difference reveals a kink.
    /// Smooth coordinates have |f+ + f- - 2 f0| ~ f'' h^2, roughly h smaller
    /// than the first difference; at a relu/abs/min/max kink the two are the
    /// same order. A coordinate is skipped when the second difference
    /// exceeds both kink_threshold * max(1, |f0|) and a quarter of
    /// |f+ - f-|. Finite differences are only meaningful away from kinks.
    bool skip_kinks = false;
    double kink_threshold = 1e-11;
    /// Relative-error denominator floor; coordinates where both gradients
    /// are below this are compared absolutely. At step 1e-6 the central
    /// quotient carries rounding noise of roughly ulp(f)/(2*step) ~ 1e-7 for
    /// unit-scale losses, so a floor of 1e-3 keeps noise-limited near-zero
    /// coordinates from masquerading as mismatches while still flagging any
    /// absolute error above floor * tol.
    double denom_floor = 1e-3;
};

/// f builds a scalar root from bound parameter Vars (one per theta entry).
using ScalarGraphFn = std::function<Var(Graph&, const std::vector<Var>&)>;

/// Compare the autodiff gradient of f at theta against central differences
/// with the given step. Throws LdlError naming the coordinate if f is
/// non-finite anywhere probed.
GradCheckReport gradient_check(const ScalarGraphFn& f, const std::vector<Tensor>& theta,
                               double step, double tol, const GradCheckOptions& opt = {});

}  // namespace ldl
