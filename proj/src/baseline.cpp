#include "ldl/baseline.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ldl/heads.hpp"
#include "ldl/objectives.hpp"

namespace ldl {

LabelDistribution bfgsll_predict(const MaxEntModel& model, std::span<const double> x) {
    if (static_cast<int>(x.size()) != model.d)
        throw ShapeError("bfgsll_predict", "feature length " + std::to_string(x.size()) +
                                               " vs d " + std::to_string(model.d));
    std::vector<double> z(model.L);
    for (int l = 0; l < model.L; ++l) {
        double v = model.bias.data[l];
        for (int j = 0; j < model.d; ++j) v += model.theta.at(l, j) * x[j];
        z[l] = v;
    }
    LabelDistribution out;
    out.values = softmax(z);
    return out;
}

namespace {

struct Objective {
    const LdlDataset& ds;
    std::span<const int> idx;
    double l2;
    int d, L;

    // packed layout: theta (L*d) then bias (L)
    double eval(const std::vector<double>& w, std::vector<double>& grad) const {
        const double* theta = w.data();
        const double* bias = w.data() + static_cast<std::size_t>(L) * d;
        std::fill(grad.begin(), grad.end(), 0.0);
        double* g_theta = grad.data();
        double* g_bias = grad.data() + static_cast<std::size_t>(L) * d;

        const double inv_n = 1.0 / static_cast<double>(idx.size());
        double f = 0.0;
        std::vector<double> z(L), p(L);
        for (int i : idx) {
            const LdlSample& s = ds.samples[i];
            for (int l = 0; l < L; ++l) {
                double v = bias[l];
                const double* row = theta + static_cast<std::size_t>(l) * d;
                for (int j = 0; j < d; ++j) v += row[j] * s.features[j];
                z[l] = v;
            }
            p = softmax(z);
            for (int l = 0; l < L; ++l) {
                const double t = s.target.values[l];
                if (t > 0.0) f += inv_n * t * std::log(t / std::max(p[l], kLogEps));
                const double delta = inv_n * (p[l] - t);
                double* grow = g_theta + static_cast<std::size_t>(l) * d;
                for (int j = 0; j < d; ++j) grow[j] += delta * s.features[j];
                g_bias[l] += delta;
            }
        }
        for (std::size_t k = 0; k < static_cast<std::size_t>(L) * d; ++k) {
            f += l2 * theta[k] * theta[k];
            g_theta[k] += 2.0 * l2 * theta[k];
        }
        return f;
    }
};

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

MaxEntModel bfgsll_fit(const LdlDataset& ds, std::span<const int> indices, const FitOptions& opt,
                       FitReport* report, const std::optional<MaxEntModel>& init) {
    if (indices.empty()) throw DataError("bfgsll_fit: empty dataset");
    const int d = ds.d, L = ds.L;
    const std::size_t n_var = static_cast<std::size_t>(L) * d + L;

    std::vector<double> w(n_var, 0.0);
    if (init) {
        std::copy(init->theta.data.begin(), init->theta.data.end(), w.begin());
        std::copy(init->bias.data.begin(), init->bias.data.end(),
                  w.begin() + static_cast<std::ptrdiff_t>(L) * d);
    }

    Objective obj{ds, indices, opt.l2_reg, d, L};
    std::vector<double> grad(n_var), new_grad(n_var);
    double f = obj.eval(w, grad);

    FitReport rep;
    rep.objective_history.push_back(f);

    std::deque<std::vector<double>> s_hist, y_hist;
    std::deque<double> rho_hist;
    std::vector<double> dir(n_var), trial(n_var);

    int iter = 0;
    for (; iter < opt.max_iter; ++iter) {
        const double gnorm = norm2(grad);
        if (gnorm < opt.tol) {
            rep.converged = true;
            break;
        }

        // two-loop recursion
        dir = grad;
        std::vector<double> alpha(s_hist.size());
        for (int h = static_cast<int>(s_hist.size()) - 1; h >= 0; --h) {
            alpha[h] = rho_hist[h] * dot(s_hist[h], dir);
            for (std::size_t k = 0; k < n_var; ++k) dir[k] -= alpha[h] * y_hist[h][k];
        }
        if (!s_hist.empty()) {
            const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
            for (double& v : dir) v *= gamma;
        }
        for (std::size_t h = 0; h < s_hist.size(); ++h) {
            const double beta = rho_hist[h] * dot(y_hist[h], dir);
            for (std::size_t k = 0; k < n_var; ++k) dir[k] += (alpha[h] - beta) * s_hist[h][k];
        }
        for (double& v : dir) v = -v;

        double slope = dot(grad, dir);
        if (slope >= 0.0) {
            // fall back to steepest descent if curvature info went stale
            dir = grad;
            for (double& v : dir) v = -v;
            slope = -dot(grad, grad);
        }

        // Armijo backtracking
        double step = s_hist.empty() ? 1.0 / std::max(1.0, gnorm) : 1.0;
        constexpr double c1 = 1e-4;
        double f_new = 0.0;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            for (std::size_t k = 0; k < n_var; ++k) trial[k] = w[k] + step * dir[k];
            f_new = obj.eval(trial, new_grad);
            if (std::isfinite(f_new) && f_new <= f + c1 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted)
            throw LineSearchError("bfgsll_fit: line search failed at iteration " +
                                  std::to_string(iter) + " (f=" + std::to_string(f) +
                                  ", |g|=" + std::to_string(gnorm) +
                                  ", last step=" + std::to_string(step) + ")");

        std::vector<double> s_vec(n_var), y_vec(n_var);
        for (std::size_t k = 0; k < n_var; ++k) {
            s_vec[k] = trial[k] - w[k];
            y_vec[k] = new_grad[k] - grad[k];
        }
        const double sy = dot(s_vec, y_vec);
        if (sy > 1e-12 * norm2(s_vec) * norm2(y_vec)) {
            s_hist.push_back(std::move(s_vec));
            y_hist.push_back(std::move(y_vec));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opt.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        w = trial;
        grad = new_grad;
        f = f_new;
        rep.objective_history.push_back(f);
    }

    rep.iterations = iter;
    rep.objective = f;
    rep.grad_norm = norm2(grad);
    if (report) *report = rep;

    MaxEntModel model;
    model.d = d;
    model.L = L;
    model.theta = Tensor({L, d}, std::vector<double>(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(L) * d));
    model.bias = Tensor({L}, std::vector<double>(w.begin() + static_cast<std::ptrdiff_t>(L) * d, w.end()));
    return model;
}

MaxEntModel bfgsll_fit(const LdlDataset& ds, const FitOptions& opt, FitReport* report) {
    std::vector<int> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    return bfgsll_fit(ds, all, opt, report);
}

double mean_kl(const MaxEntModel& model, const LdlDataset& ds, std::span<const int> indices) {
    double total = 0.0;
    for (int i : indices) {
        auto p = bfgsll_predict(model, ds.samples[i].features);
        total += kl_loss(ds.samples[i].target.values, p.values);
    }
    return total / static_cast<double>(indices.size());
}

void save_maxent(const MaxEntModel& model, const std::string& path) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["kind"] = "maxent-checkpoint";
    j["config"] = {{"d", model.d}, {"L", model.L}};
    j["params"] = {{"theta", model.theta.data}, {"bias", model.bias.data}};
    std::ofstream out(path);
    if (!out) throw CheckpointError("cannot write checkpoint: " + path);
    out << j.dump() << "\n";
}

MaxEntModel load_maxent(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw CheckpointError("malformed checkpoint " + path + ": " + e.what());
    }
    if (j.value("schema_version", -1) != 1)
        throw CheckpointError("unsupported checkpoint schema_version in " + path);
    if (j.value("kind", "") != "maxent-checkpoint")
        throw CheckpointError("not a maxent checkpoint: " + path);
    MaxEntModel m;
    m.d = j.at("config").at("d");
    m.L = j.at("config").at("L");
    m.theta = Tensor({m.L, m.d}, j.at("params").at("theta").get<std::vector<double>>());
    m.bias = Tensor({m.L}, j.at("params").at("bias").get<std::vector<double>>());
    return m;
}

}  // namespace ldl
