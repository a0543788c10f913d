#include "ldl/objectives.hpp"

#include <cmath>

namespace ldl {

PerceptualNet PerceptualNet::init(int L, std::uint64_t seed) {
    PerceptualNet net;
    net.L = L;
    Rng rng(seed);
    const double std_dev = std::sqrt(2.0 / static_cast<double>(L));
    for (int layer = 0; layer < 3; ++layer) {
        Tensor w = Tensor::zeros({L, L});
        for (double& v : w.data) v = rng.normal() * std_dev;
        net.weights.push_back(std::move(w));
        net.biases.push_back(Tensor::zeros({L}));
    }
    return net;
}

double l1_loss(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size())
        throw ShapeError("l1_loss", "lengths " + std::to_string(pred.size()) + " vs " +
                                        std::to_string(target.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::fabs(pred[i] - target[i]);
    return s;
}

double kl_loss(std::span<const double> d, std::span<const double> d_hat, double eps) {
    if (d.size() != d_hat.size())
        throw ShapeError("kl_loss", "lengths " + std::to_string(d.size()) + " vs " +
                                        std::to_string(d_hat.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i] <= 0.0) continue;  // 0 * ln 0 := 0
        s += d[i] * std::log(d[i] / std::max(d_hat[i], eps));
    }
    return s;
}

double gaussian_matrix_reg(const Tensor& m, std::span<const double> d, double sigma2) {
    if (m.rank() != 2 || m.rows() != static_cast<int>(d.size()))
        throw ShapeError("gaussian_matrix_reg",
                         "matrix " + shape_str(m.shape) + " vs " + std::to_string(d.size()) +
                             " labels");
    const int L = m.rows(), P = m.cols();
    double total = 0.0;
    for (int i = 0; i < L; ++i) {
        double mean = 0.0;
        for (int j = 0; j < P; ++j) mean += m.at(i, j);
        mean /= P;
        double var = 0.0;
        for (int j = 0; j < P; ++j) {
            const double c = m.at(i, j) - mean;
            var += c * c;
        }
        var /= P;  // population variance
        total += (mean - d[i]) * (mean - d[i]) + (var - sigma2) * (var - sigma2);
    }
    return total;
}

namespace {
std::vector<Tensor> perceptual_activations(const PerceptualNet& net, std::span<const double> x) {
    std::vector<Tensor> acts;
    std::vector<double> cur(x.begin(), x.end());
    for (int layer = 0; layer < 3; ++layer) {
        std::vector<double> next(net.L, 0.0);
        for (int i = 0; i < net.L; ++i) {
            double z = net.biases[layer].data[i];
            for (int j = 0; j < net.L; ++j) z += cur[j] * net.weights[layer].at(j, i);
            next[i] = z > 0.0 ? z : 0.0;
        }
        acts.push_back(Tensor::row(next));
        cur = std::move(next);
    }
    return acts;
}
}  // namespace

double perceptual_loss(std::span<const double> pred, std::span<const double> target,
                       const PerceptualNet& net) {
    if (static_cast<int>(pred.size()) != net.L || static_cast<int>(target.size()) != net.L)
        throw ShapeError("perceptual_loss", "input length vs net width " + std::to_string(net.L));
    auto a = perceptual_activations(net, pred);
    auto b = perceptual_activations(net, target);
    double total = 0.0;
    for (int layer = 0; layer < 3; ++layer) {
        double mse = 0.0;
        for (int i = 0; i < net.L; ++i) {
            const double diff = a[layer].data[i] - b[layer].data[i];
            mse += diff * diff;
        }
        total += mse / net.L;
    }
    return total;
}

Var l1_loss_node(Graph& g, Var pred, const std::vector<double>& target) {
    Var t = g.constant(Tensor::row(target));
    return g.sum_all(g.abs(g.sub(pred, t)));
}

Var kl_loss_node(Graph& g, const std::vector<double>& target, Var pred, double eps) {
    // sum_j d_j ln d_j is constant w.r.t. the model; only the cross term
    // -sum_j d_j ln max(pred_j, eps) carries gradient.
    double entropy_term = 0.0;
    std::vector<double> d = target;
    for (double& v : d)
        if (v <= 0.0) v = 0.0;
    for (double v : d)
        if (v > 0.0) entropy_term += v * std::log(v);
    Var cross = g.sum_all(g.mul(g.constant(Tensor::row(d)), g.log(g.clamp_min(pred, eps))));
    return g.sub(g.constant(Tensor::scalar(entropy_term)), cross);
}

Var gaussian_matrix_reg_node(Graph& g, Var m, const std::vector<double>& target, double sigma2) {
    const Tensor& mv = m.value();
    if (mv.rank() != 2 || mv.rows() != static_cast<int>(target.size()))
        throw ShapeError("gaussian_matrix_reg",
                         "matrix " + shape_str(mv.shape) + " vs " + std::to_string(target.size()) +
                             " labels");
    Var row_mean = g.mean_axis(m, 1);                     // (L)
    Var row_sq_mean = g.mean_axis(g.mul(m, m), 1);        // (L)
    Var var = g.sub(row_sq_mean, g.mul(row_mean, row_mean));
    Var mean_err = g.sub(row_mean, g.constant(Tensor::row(target)));
    Var var_err = g.scalar_add(var, -sigma2);
    return g.add(g.sum_all(g.mul(mean_err, mean_err)), g.sum_all(g.mul(var_err, var_err)));
}

Var perceptual_loss_node(Graph& g, Var pred, const std::vector<double>& target,
                         const PerceptualNet& net) {
    auto target_acts = perceptual_activations(net, target);
    Var cur = g.reshape(pred, {1, net.L});
    Var total = g.constant(Tensor::scalar(0.0));
    for (int layer = 0; layer < 3; ++layer) {
        Var w = g.constant(net.weights[layer]);  // frozen: constants, no gradient to them
        Var b = g.constant(net.biases[layer]);
        cur = g.relu(g.broadcast_add(g.matmul(cur, w), b));
        Var diff = g.sub(cur, g.constant(Tensor({1, net.L}, target_acts[layer].data)));
        total = g.add(total, g.mean_all(g.mul(diff, diff)));
    }
    return total;
}

Var composite_loss_node(Graph& g, std::span<const Var> preds,
                        std::span<const std::vector<double>> targets, std::span<const Var> matrices,
                        const LossWeights& w, int L, const PerceptualNet* net) {
    if (preds.size() != targets.size() || preds.size() != matrices.size() || preds.empty())
        throw ShapeError("composite_loss", "batch arrays must be non-empty and equally sized");
    const bool many = L > w.label_threshold;
    if (many && net == nullptr)
        throw LdlError("composite_loss: perceptual net required when L > " +
                       std::to_string(w.label_threshold));
    const double kl_w = many ? w.lambda1 : w.lambda_kl;
    const double beta = w.beta_for(L);
    Var total = g.constant(Tensor::scalar(0.0));
    for (std::size_t i = 0; i < preds.size(); ++i) {
        Var term = l1_loss_node(g, preds[i], targets[i]);
        term = g.add(term, g.scalar_mul(kl_loss_node(g, targets[i], preds[i]), kl_w));
        if (many)
            term = g.add(term,
                         g.scalar_mul(perceptual_loss_node(g, preds[i], targets[i], *net), w.lambda2));
        term = g.add(term, g.scalar_mul(gaussian_matrix_reg_node(g, matrices[i], targets[i], w.sigma2),
                                        beta));
        total = g.add(total, term);
    }
    return g.scalar_mul(total, 1.0 / static_cast<double>(preds.size()));
}

}  // namespace ldl
