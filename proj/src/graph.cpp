#include "ldl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "ldl/rng.hpp"

namespace ldl {

const Tensor& Var::value() const { return graph->value(id); }
const Tensor& Var::grad() const { return graph->grad(id); }

int Graph::push(Tensor value, bool requires_grad, std::function<void(Graph&, const Tensor&)> fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backprop = std::move(fn);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void Graph::accum(int id, const Tensor& contribution) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
    for (std::size_t i = 0; i < contribution.data.size(); ++i) n.grad.data[i] += contribution.data[i];
}

void Graph::accum_at(int id, std::size_t flat_index, double v) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
    n.grad.data[flat_index] += v;
}

Var Graph::constant(Tensor v) { return {this, push(std::move(v), false, nullptr)}; }

Var Graph::param(Tensor v) { return {this, push(std::move(v), true, nullptr)}; }

namespace {
void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw ShapeError(op, "operand shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}
void check_2d(const char* op, const Tensor& a) {
    if (a.rank() != 2) throw ShapeError(op, "expected 2-D operand, got " + shape_str(a.shape));
}
void check_scalar(const char* op, const Tensor& a) {
    if (a.numel() != 1) throw ShapeError(op, "expected scalar operand, got " + shape_str(a.shape));
}
}  // namespace

Var Graph::add(Var a, Var b) {
    const Tensor& va = value(a.id);
    const Tensor& vb = value(b.id);
    check_same_shape("add", va, vb);
    Tensor out = va;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb.data[i];
    bool rg = wants_grad(a.id) || wants_grad(b.id);
    int ai = a.id, bi = b.id;
    return {this, push(std::move(out), rg, [ai, bi](Graph& g, const Tensor& go) {
                g.accum(ai, go);
                g.accum(bi, go);
            })};
}

Var Graph::sub(Var a, Var b) {
    const Tensor& va = value(a.id);
    const Tensor& vb = value(b.id);
    check_same_shape("sub", va, vb);
    Tensor out = va;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= vb.data[i];
    bool rg = wants_grad(a.id) || wants_grad(b.id);
    int ai = a.id, bi = b.id;
    return {this, push(std::move(out), rg, [ai, bi](Graph& g, const Tensor& go) {
                g.accum(ai, go);
                Tensor neg = go;
                for (double& v : neg.data) v = -v;
                g.accum(bi, neg);
            })};
}

Var Graph::mul(Var a, Var b) {
    const Tensor& va = value(a.id);
    const Tensor& vb = value(b.id);
    check_same_shape("mul", va, vb);
    Tensor out = va;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= vb.data[i];
    bool rg = wants_grad(a.id) || wants_grad(b.id);
    int ai = a.id, bi = b.id;
    return {this, push(std::move(out), rg, [ai, bi](Graph& g, const Tensor& go) {
                Tensor da = go;
                const Tensor& vb2 = g.value(bi);
                for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] *= vb2.data[i];
                g.accum(ai, da);
                Tensor db = go;
                const Tensor& va2 = g.value(ai);
                for (std::size_t i = 0; i < db.data.size(); ++i) db.data[i] *= va2.data[i];
                g.accum(bi, db);
            })};
}

Var Graph::scalar_mul(Var a, double c) {
    Tensor out = value(a.id);
    for (double& v : out.data) v *= c;
    int ai = a.id;
    return {this, push(std::move(out), wants_grad(a.id), [ai, c](Graph& g, const Tensor& go) {
                Tensor da = go;
                for (double& v : da.data) v *= c;
                g.accum(ai, da);
            })};
}

Var Graph::scalar_add(Var a, double c) {
    Tensor out = value(a.id);
    for (double& v : out.data) v += c;
    int ai = a.id;
    return {this, push(std::move(out), wants_grad(a.id),
                       [ai](Graph& g, const Tensor& go) { g.accum(ai, go); })};
}

Var Graph::clamp_min(Var a, double c) {
    const Tensor& va = value(a.id);
    Tensor out = va;
    for (double& v : out.data) v = std::max(v, c);
    int ai = a.id;
    return {this, push(std::move(out), wants_grad(a.id), [ai, c](Graph& g, const Tensor& go) {
                Tensor da = go;
                const Tensor& va2 = g.value(ai);
                for (std::size_t i = 0; i < da.data.size(); ++i)
                    if (va2.data[i] < c) da.data[i] = 0.0;
                g.accum(ai, da);
            })};
}

Var Graph::add_scalar(Var a, Var s) {
    const Tensor& vs = value(s.id);
    check_scalar("add_scalar", vs);
    Tensor out = value(a.id);
    for (double& v : out.data) v += vs.data[0];
    bool rg = wants_grad(a.id) || wants_grad(s.id);
    int ai = a.id, si = s.id;
    return {this, push(std::move(out), rg, [ai, si](Graph& g, const Tensor& go) {
                g.accum(ai, go);
                double total = 0.0;
                for (double v : go.data) total += v;
                g.accum_at(si, 0, total);
            })};
}

Var Graph::div_scalar(Var a, Var s) {
    const Tensor& vs = value(s.id);
    check_scalar("div_scalar", vs);
    const double sv = vs.data[0];
    Tensor out = value(a.id);
    for (double& v : out.data) v /= sv;
    bool rg = wants_grad(a.id) || wants_grad(s.id);
    int ai = a.id, si = s.id;
    return {this, push(std::move(out), rg, [ai, si](Graph& g, const Tensor& go) {
                const double s2 = g.value(si).data[0];
                Tensor da = go;
                for (double& v : da.data) v /= s2;
                g.accum(ai, da);
                const Tensor& va = g.value(ai);
                double total = 0.0;
                for (std::size_t i = 0; i < go.data.size(); ++i)
                    total += go.data[i] * (-va.data[i] / (s2 * s2));
                g.accum_at(si, 0, total);
            })};
}

Var Graph::relu(Var a) {
    Tensor out = value(a.id);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    int ai = a.id;
    return {this, push(std::move(out), wants_grad(a.id), [ai](Graph& g, const Tensor& go) {
                Tensor da = go;
                const Tensor& va = g.value(ai);
                for (std::size_t i = 0; i < da.data.size(); ++i)
                    if (va.data[i] <= 0.0) da.data[i] = 0.0;
                g.accum(ai, da);
            })};
}

Var Graph::exp(Var a) {
    Tensor out = value(a.id);
    for (double& v : out.data) v = std::exp(v);
    int ai = a.id;
    int oi = push(std::move(out), wants_grad(a.id), nullptr);
    nodes_[oi].backprop = [ai, oi](Graph& g, const Tensor& go) {
        Tensor da = go;
        const Tensor& vo = g.value(oi);
        for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] *= vo.data[i];
        g.accum(ai, da);
    };
    return {this, oi};
}

Var Graph::log(Var a) {
    const Tensor& va = value(a.id);
    for (double v : va.data)
        if (v <= 0.0)
            throw LdlError("log: non-positive input " + std::to_string(v) +
                           " (apply clamp_min first)");
    Tensor out = va;
    for (double& v : out.data) v = std::log(v);
    int ai = a.id;
    return {this, push(std::move(out), wants_grad(a.id), [ai](Graph& g, const Tensor& go) {
                Tensor da = go;
                const Tensor& va2 = g.value(ai);
                for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] /= va2.data[i];
                g.accum(ai, da);
            })};
}

Var Graph::tanh(Var a) {
    Tensor out = value(a.id);
    for (double& v : out.data) v = std::tanh(v);
    int ai = a.id;
    int oi = push(std::move(out), wants_grad(a.id), nullptr);
    nodes_[oi].backprop = [ai, oi](Graph& g, const Tensor& go) {
        Tensor da = go;
        const Tensor& vo = g.value(oi);
        for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] *= 1.0 - vo.data[i] * vo.data[i];
        g.accum(ai, da);
    };
    return {this, oi};
}

Var Graph::abs(Var a) {
    Tensor out = value(a.id);
    for (double& v : out.data) v = std::fabs(v);
    int ai = a.id;
    return {this, push(std::move(out), wants_grad(a.id), [ai](Graph& g, const Tensor& go) {
                Tensor da = go;
                const Tensor& va = g.value(ai);
                for (std::size_t i = 0; i < da.data.size(); ++i) {
                    double x = va.data[i];
                    da.data[i] *= (x > 0.0) ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                }
                g.accum(ai, da);
            })};
}

Var Graph::matmul(Var a, Var b) {
    const Tensor& va = value(a.id);
    const Tensor& vb = value(b.id);
    check_2d("matmul", va);
    check_2d("matmul", vb);
    if (va.cols() != vb.rows())
        throw ShapeError("matmul", "operand shapes " + shape_str(va.shape) + " vs " +
                                       shape_str(vb.shape));
    const int n = va.rows(), k = va.cols(), m = vb.cols();
    Tensor out = Tensor::zeros({n, m});
    for (int i = 0; i < n; ++i) {
        const double* arow = &va.data[static_cast<std::size_t>(i) * k];
        double* orow = &out.data[static_cast<std::size_t>(i) * m];
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = &vb.data[static_cast<std::size_t>(kk) * m];
            for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    bool rg = wants_grad(a.id) || wants_grad(b.id);
    int ai = a.id, bi = b.id;
    return {this, push(std::move(out), rg, [ai, bi, n, k, m](Graph& g, const Tensor& go) {
                const Tensor& va2 = g.value(ai);
                const Tensor& vb2 = g.value(bi);
                if (g.wants_grad(ai)) {
                    // dA = dC * B^T
                    Tensor da = Tensor::zeros({n, k});
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < m; ++j) {
                            const double gv = go.data[static_cast<std::size_t>(i) * m + j];
                            if (gv == 0.0) continue;
                            const double* brow = &vb2.data[0];
                            for (int kk = 0; kk < k; ++kk)
                                da.data[static_cast<std::size_t>(i) * k + kk] +=
                                    gv * brow[static_cast<std::size_t>(kk) * m + j];
                        }
                    g.accum(ai, da);
                }
                if (g.wants_grad(bi)) {
                    // dB = A^T * dC
                    Tensor db = Tensor::zeros({k, m});
                    for (int i = 0; i < n; ++i) {
                        const double* arow = &va2.data[static_cast<std::size_t>(i) * k];
                        const double* grow = &go.data[static_cast<std::size_t>(i) * m];
                        for (int kk = 0; kk < k; ++kk) {
                            const double av = arow[kk];
                            if (av == 0.0) continue;
                            double* drow = &db.data[static_cast<std::size_t>(kk) * m];
                            for (int j = 0; j < m; ++j) drow[j] += av * grow[j];
                        }
                    }
                    g.accum(bi, db);
                }
            })};
}

Var Graph::transpose(Var a) {
    const Tensor& va = value(a.id);
    check_2d("transpose", va);
    const int n = va.rows(), m = va.cols();
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.at(j, i) = va.at(i, j);
    int ai = a.id;
    return {this, push(std::move(out), wants_grad(a.id), [ai, n, m](Graph& g, const Tensor& go) {
                Tensor da = Tensor::zeros({n, m});
                for (int j = 0; j < m; ++j)
                    for (int i = 0; i < n; ++i) da.at(i, j) = go.at(j, i);
                g.accum(ai, da);
            })};
}

Var Graph::broadcast_add(Var x, Var v) {
    const Tensor& vx = value(x.id);
    const Tensor& vv = value(v.id);
    check_2d("broadcast_add", vx);
    if (vv.rank() != 1 || vv.shape[0] != vx.cols())
        throw ShapeError("broadcast_add",
                         "operand shapes " + shape_str(vx.shape) + " vs " + shape_str(vv.shape));
    const int n = vx.rows(), m = vx.cols();
    Tensor out = vx;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.at(i, j) += vv.data[j];
    bool rg = wants_grad(x.id) || wants_grad(v.id);
    int xi = x.id, vi = v.id;
    return {this, push(std::move(out), rg, [xi, vi, n, m](Graph& g, const Tensor& go) {
                g.accum(xi, go);
                Tensor dv = Tensor::zeros({m});
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < m; ++j) dv.data[j] += go.at(i, j);
                g.accum(vi, dv);
            })};
}

Var Graph::rowwise_sub(Var x, Var c) {
    const Tensor& vx = value(x.id);
    const Tensor& vc = value(c.id);
    check_2d("rowwise_sub", vx);
    if (vc.rank() != 1 || vc.shape[0] != vx.rows())
        throw ShapeError("rowwise_sub",
                         "operand shapes " + shape_str(vx.shape) + " vs " + shape_str(vc.shape));
    const int n = vx.rows(), m = vx.cols();
    Tensor out = vx;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.at(i, j) -= vc.data[i];
    bool rg = wants_grad(x.id) || wants_grad(c.id);
    int xi = x.id, ci = c.id;
    return {this, push(std::move(out), rg, [xi, ci, n, m](Graph& g, const Tensor& go) {
                g.accum(xi, go);
                Tensor dc = Tensor::zeros({n});
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < m; ++j) dc.data[i] -= go.at(i, j);
                g.accum(ci, dc);
            })};
}

Var Graph::rowwise_div(Var x, Var c) {
    const Tensor& vx = value(x.id);
    const Tensor& vc = value(c.id);
    check_2d("rowwise_div", vx);
    if (vc.rank() != 1 || vc.shape[0] != vx.rows())
        throw ShapeError("rowwise_div",
                         "operand shapes " + shape_str(vx.shape) + " vs " + shape_str(vc.shape));
    const int n = vx.rows(), m = vx.cols();
    Tensor out = vx;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.at(i, j) /= vc.data[i];
    bool rg = wants_grad(x.id) || wants_grad(c.id);
    int xi = x.id, ci = c.id;
    return {this, push(std::move(out), rg, [xi, ci, n, m](Graph& g, const Tensor& go) {
                const Tensor& vx2 = g.value(xi);
                const Tensor& vc2 = g.value(ci);
                if (g.wants_grad(xi)) {
                    Tensor dx = go;
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < m; ++j) dx.at(i, j) /= vc2.data[i];
                    g.accum(xi, dx);
                }
                if (g.wants_grad(ci)) {
                    Tensor dc = Tensor::zeros({n});
                    for (int i = 0; i < n; ++i) {
                        const double inv2 = 1.0 / (vc2.data[i] * vc2.data[i]);
                        for (int j = 0; j < m; ++j) dc.data[i] -= go.at(i, j) * vx2.at(i, j) * inv2;
                    }
                    g.accum(ci, dc);
                }
            })};
}

Var Graph::sum_all(Var a) {
    const Tensor& va = value(a.id);
    double total = 0.0;
    for (double v : va.data) total += v;
    int ai = a.id;
    return {this, push(Tensor::scalar(total), wants_grad(a.id), [ai](Graph& g, const Tensor& go) {
                const double gv = go.data[0];
                Tensor da = Tensor::full(g.value(ai).shape, gv);
                g.accum(ai, da);
            })};
}

Var Graph::mean_all(Var a) {
    return scalar_mul(sum_all(a), 1.0 / static_cast<double>(value(a.id).numel()));
}

Var Graph::sum_axis(Var a, int axis) {
    const Tensor& va = value(a.id);
    check_2d("sum_axis", va);
    if (axis != 0 && axis != 1) throw ShapeError("sum_axis", "axis must be 0 or 1");
    const int n = va.rows(), m = va.cols();
    int ai = a.id;
    if (axis == 0) {
        Tensor out = Tensor::zeros({m});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) out.data[j] += va.at(i, j);
        return {this, push(std::move(out), wants_grad(a.id), [ai, n, m](Graph& g, const Tensor& go) {
                    Tensor da = Tensor::zeros({n, m});
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < m; ++j) da.at(i, j) = go.data[j];
                    g.accum(ai, da);
                })};
    }
    Tensor out = Tensor::zeros({n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.data[i] += va.at(i, j);
    return {this, push(std::move(out), wants_grad(a.id), [ai, n, m](Graph& g, const Tensor& go) {
                Tensor da = Tensor::zeros({n, m});
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < m; ++j) da.at(i, j) = go.data[i];
                g.accum(ai, da);
            })};
}

Var Graph::mean_axis(Var a, int axis) {
    const Tensor& va = value(a.id);
    check_2d("mean_axis", va);
    const double denom = axis == 0 ? va.rows() : va.cols();
    return scalar_mul(sum_axis(a, axis), 1.0 / denom);
}

Var Graph::max_all(Var a) {
    const Tensor& va = value(a.id);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < va.data.size(); ++i)
        if (va.data[i] > va.data[arg]) arg = i;
    int ai = a.id;
    return {this, push(Tensor::scalar(va.data[arg]), wants_grad(a.id),
                       [ai, arg](Graph& g, const Tensor& go) { g.accum_at(ai, arg, go.data[0]); })};
}

Var Graph::min_all(Var a) {
    const Tensor& va = value(a.id);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < va.data.size(); ++i)
        if (va.data[i] < va.data[arg]) arg = i;
    int ai = a.id;
    return {this, push(Tensor::scalar(va.data[arg]), wants_grad(a.id),
                       [ai, arg](Graph& g, const Tensor& go) { g.accum_at(ai, arg, go.data[0]); })};
}

Var Graph::max_axis1(Var a) {
    const Tensor& va = value(a.id);
    check_2d("max_axis1", va);
    const int n = va.rows(), m = va.cols();
    Tensor out = Tensor::zeros({n});
    std::vector<int> args(n, 0);
    for (int i = 0; i < n; ++i) {
        int arg = 0;
        for (int j = 1; j < m; ++j)
            if (va.at(i, j) > va.at(i, arg)) arg = j;
        args[i] = arg;
        out.data[i] = va.at(i, arg);
    }
    int ai = a.id;
    return {this,
            push(std::move(out), wants_grad(a.id), [ai, m, args](Graph& g, const Tensor& go) {
                for (std::size_t i = 0; i < args.size(); ++i)
                    g.accum_at(ai, i * m + args[i], go.data[i]);
            })};
}

Var Graph::reshape(Var a, std::vector<int> shape) {
    const Tensor& va = value(a.id);
    if (shape_numel(shape) != va.numel())
        throw ShapeError("reshape", "cannot view " + shape_str(va.shape) + " as " + shape_str(shape));
    Tensor out(shape, va.data);
    int ai = a.id;
    return {this, push(std::move(out), wants_grad(a.id), [ai](Graph& g, const Tensor& go) {
                Tensor da(g.value(ai).shape, go.data);
                g.accum(ai, da);
            })};
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows", "no operands");
    int cols = -1, rows = 0;
    bool rg = false;
    for (const Var& p : parts) {
        const Tensor& v = value(p.id);
        check_2d("concat_rows", v);
        if (cols < 0) cols = v.cols();
        if (v.cols() != cols)
            throw ShapeError("concat_rows", "column mismatch " + std::to_string(v.cols()) + " vs " +
                                                std::to_string(cols));
        rows += v.rows();
        rg = rg || wants_grad(p.id);
    }
    Tensor out = Tensor::zeros({rows, cols});
    std::vector<int> ids;
    std::vector<int> offsets;
    int r = 0;
    for (const Var& p : parts) {
        const Tensor& v = value(p.id);
        std::copy(v.data.begin(), v.data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(r) * cols);
        ids.push_back(p.id);
        offsets.push_back(r);
        r += v.rows();
    }
    return {this, push(std::move(out), rg, [ids, offsets, cols](Graph& g, const Tensor& go) {
                for (std::size_t p = 0; p < ids.size(); ++p) {
                    const Tensor& v = g.value(ids[p]);
                    Tensor da = Tensor::zeros(v.shape);
                    const std::size_t base = static_cast<std::size_t>(offsets[p]) * cols;
                    std::copy(go.data.begin() + base, go.data.begin() + base + da.data.size(),
                              da.data.begin());
                    g.accum(ids[p], da);
                }
            })};
}

Var Graph::slice_rows(Var a, int r0, int r1) {
    const Tensor& va = value(a.id);
    check_2d("slice_rows", va);
    if (r0 < 0 || r1 > va.rows() || r0 >= r1)
        throw ShapeError("slice_rows", "range [" + std::to_string(r0) + "," + std::to_string(r1) +
                                           ") of " + shape_str(va.shape));
    const int m = va.cols();
    Tensor out = Tensor::zeros({r1 - r0, m});
    std::copy(va.data.begin() + static_cast<std::ptrdiff_t>(r0) * m,
              va.data.begin() + static_cast<std::ptrdiff_t>(r1) * m, out.data.begin());
    int ai = a.id;
    return {this, push(std::move(out), wants_grad(a.id), [ai, r0, m](Graph& g, const Tensor& go) {
                const std::size_t base = static_cast<std::size_t>(r0) * m;
                for (std::size_t i = 0; i < go.data.size(); ++i)
                    g.accum_at(ai, base + i, go.data[i]);
            })};
}

Var Graph::grid_sample(Var feature, Var grid) {
    const Tensor& f = value(feature.id);
    const Tensor& g0 = value(grid.id);
    if (f.rank() != 3) throw ShapeError("grid_sample", "feature map must be 3-D, got " + shape_str(f.shape));
    if (g0.rank() != 3 || g0.shape[2] != 2)
        throw ShapeError("grid_sample", "grid must be (L,P,2), got " + shape_str(g0.shape));
    if (g0.shape[0] != f.shape[0])
        throw ShapeError("grid_sample", "channel count " + std::to_string(f.shape[0]) +
                                            " vs grid rows " + std::to_string(g0.shape[0]));
    const int L = f.shape[0], H = f.shape[1], W = f.shape[2];
    const int P = g0.shape[1];
    if (H < 2 || W < 2) throw ShapeError("grid_sample", "feature map sides must be >= 2");

    Tensor out = Tensor::zeros({L, P});
    for (int l = 0; l < L; ++l) {
        for (int p = 0; p < P; ++p) {
            const double gx = g0.at3(l, p, 0);
            const double gy = g0.at3(l, p, 1);
            double fx = (gx + 1.0) * 0.5 * (W - 1);
            double fy = (gy + 1.0) * 0.5 * (H - 1);
            fx = std::min(std::max(fx, 0.0), static_cast<double>(W - 1));
            fy = std::min(std::max(fy, 0.0), static_cast<double>(H - 1));
            int x0 = std::min(static_cast<int>(std::floor(fx)), W - 2);
            int y0 = std::min(static_cast<int>(std::floor(fy)), H - 2);
            const double tx = fx - x0, ty = fy - y0;
            const double v00 = f.at3(l, y0, x0), v01 = f.at3(l, y0, x0 + 1);
            const double v10 = f.at3(l, y0 + 1, x0), v11 = f.at3(l, y0 + 1, x0 + 1);
            out.at(l, p) = (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01) +
                           ty * ((1.0 - tx) * v10 + tx * v11);
        }
    }
    bool rg = wants_grad(feature.id) || wants_grad(grid.id);
    int fi = feature.id, gi = grid.id;
    return {this, push(std::move(out), rg, [fi, gi, L, H, W, P](Graph& g, const Tensor& go) {
                const Tensor& f2 = g.value(fi);
                const Tensor& g2 = g.value(gi);
                Tensor df = g.wants_grad(fi) ? Tensor::zeros({L, H, W}) : Tensor();
                Tensor dg = g.wants_grad(gi) ? Tensor::zeros({L, P, 2}) : Tensor();
                for (int l = 0; l < L; ++l) {
                    for (int p = 0; p < P; ++p) {
                        const double gv = go.at(l, p);
                        if (gv == 0.0) continue;
                        const double gx = g2.at3(l, p, 0);
                        const double gy = g2.at3(l, p, 1);
                        double fx = (gx + 1.0) * 0.5 * (W - 1);
                        double fy = (gy + 1.0) * 0.5 * (H - 1);
                        const bool x_in = fx > 0.0 && fx < W - 1;
                        const bool y_in = fy > 0.0 && fy < H - 1;
                        fx = std::min(std::max(fx, 0.0), static_cast<double>(W - 1));
                        fy = std::min(std::max(fy, 0.0), static_cast<double>(H - 1));
                        int x0 = std::min(static_cast<int>(std::floor(fx)), W - 2);
                        int y0 = std::min(static_cast<int>(std::floor(fy)), H - 2);
                        const double tx = fx - x0, ty = fy - y0;
                        const double v00 = f2.at3(l, y0, x0), v01 = f2.at3(l, y0, x0 + 1);
                        const double v10 = f2.at3(l, y0 + 1, x0), v11 = f2.at3(l, y0 + 1, x0 + 1);
                        if (!df.data.empty()) {
                            df.at3(l, y0, x0) += gv * (1.0 - ty) * (1.0 - tx);
                            df.at3(l, y0, x0 + 1) += gv * (1.0 - ty) * tx;
                            df.at3(l, y0 + 1, x0) += gv * ty * (1.0 - tx);
                            df.at3(l, y0 + 1, x0 + 1) += gv * ty * tx;
                        }
                        if (!dg.data.empty()) {
                            // d(out)/d(fx) and /d(fy); zero outside the map (clamped region)
                            const double dfx =
                                x_in ? (1.0 - ty) * (v01 - v00) + ty * (v11 - v10) : 0.0;
                            const double dfy =
                                y_in ? (1.0 - tx) * (v10 - v00) + tx * (v11 - v01) : 0.0;
                            dg.at3(l, p, 0) += gv * dfx * 0.5 * (W - 1);
                            dg.at3(l, p, 1) += gv * dfy * 0.5 * (H - 1);
                        }
                    }
                }
                if (!df.data.empty()) g.accum(fi, df);
                if (!dg.data.empty()) g.accum(gi, dg);
            })};
}

void Graph::backward(Var root) {
    if (root.graph != this) throw LdlError("backward: root from a different graph");
    Node& r = nodes_[root.id];
    if (r.value.numel() != 1)
        throw ShapeError("backward", "root must be scalar, got " + shape_str(r.value.shape));
    if (!r.requires_grad) return;  // constant root: nothing reachable
    r.grad = Tensor::full(r.value.shape, 1.0);
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.grad.data.empty() || !n.backprop) continue;
        n.backprop(*this, n.grad);
    }
}

GradCheckReport gradient_check(const ScalarGraphFn& f, const std::vector<Tensor>& theta,
                               double step, double tol, const GradCheckOptions& opt) {
    auto eval = [&](const std::vector<Tensor>& th) {
        Graph g;
        std::vector<Var> vars;
        vars.reserve(th.size());
        for (const Tensor& t : th) vars.push_back(g.constant(t));
        Var root = f(g, vars);
        if (root.value().numel() != 1) throw ShapeError("gradient_check", "f must return a scalar");
        return root.value().data[0];
    };

    // autodiff gradient at theta
    Graph g;
    std::vector<Var> vars;
    vars.reserve(theta.size());
    for (const Tensor& t : theta) vars.push_back(g.param(t));
    Var root = f(g, vars);
    if (root.value().numel() != 1) throw ShapeError("gradient_check", "f must return a scalar");
    const double f0 = root.value().data[0];
    if (!std::isfinite(f0)) throw LdlError("gradient_check: f non-finite at theta");
    g.backward(root);

    GradCheckReport rep;
    rep.tol = tol;
    std::vector<Tensor> work = theta;
    Rng pick(opt.seed);
    for (std::size_t t = 0; t < theta.size(); ++t) {
        const std::int64_t n = theta[t].numel();
        std::vector<std::int64_t> coords;
        if (opt.max_coords_per_tensor > 0 && n > opt.max_coords_per_tensor) {
            for (std::int64_t c = 0; c < opt.max_coords_per_tensor; ++c)
                coords.push_back(static_cast<std::int64_t>(pick.below(static_cast<std::uint64_t>(n))));
        } else {
            coords.resize(static_cast<std::size_t>(n));
            for (std::int64_t c = 0; c < n; ++c) coords[static_cast<std::size_t>(c)] = c;
        }
        const Tensor& ag = g.grad(vars[t].id);
        for (std::int64_t c : coords) {
            const double orig = work[t].data[static_cast<std::size_t>(c)];
            work[t].data[static_cast<std::size_t>(c)] = orig + step;
            const double fp = eval(work);
            work[t].data[static_cast<std::size_t>(c)] = orig - step;
            const double fm = eval(work);
            work[t].data[static_cast<std::size_t>(c)] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw LdlError("gradient_check: f non-finite at tensor " + std::to_string(t) +
                               " coordinate " + std::to_string(c));
            if (opt.skip_kinks) {
                const double second = std::fabs(fp + fm - 2.0 * f0);
                if (second > opt.kink_threshold * std::max(1.0, std::fabs(f0)) &&
                    second > 0.25 * std::fabs(fp - fm)) {
                    ++rep.coords_skipped;
                    continue;
                }
            }
            const double fd = (fp - fm) / (2.0 * step);
            const double ad = ag.data.empty() ? 0.0 : ag.data[static_cast<std::size_t>(c)];
            const double denom = std::max({std::fabs(fd), std::fabs(ad), opt.denom_floor});
            const double rel = std::fabs(fd - ad) / denom;
            ++rep.coords_checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_tensor = static_cast<int>(t);
                rep.worst_coord = c;
            }
        }
    }
    rep.pass = rep.max_rel_err < tol;
    return rep;
}

}  // namespace ldl
