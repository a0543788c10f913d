// Acceptance suite: one numbered check per criterion, each printing a
// PASS/FAIL line with the measured values. Exit code 0 only if every
// criterion holds.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <vector>

#include "ldl/baseline.hpp"
#include "ldl/dataset.hpp"
#include "ldl/graph.hpp"
#include "ldl/heads.hpp"
#include "ldl/metrics.hpp"
#include "ldl/model.hpp"
#include "ldl/objectives.hpp"
#include "ldl/snn.hpp"
#include "ldl/trainer.hpp"
#include "oracles.hpp"

using namespace ldl;
namespace fs = std::filesystem;

namespace {

int g_passed = 0;
int g_failed = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(int idx, bool ok, const std::string& name, const std::string& detail) {
    std::printf("[%2d/10] %s %s (%s)\n", idx, ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    (ok ? g_passed : g_failed) += 1;
}

// ---------------------------------------------------------------- criterion 1

ScalarGraphFn composite_fn(const IdrConfig& cfg, const std::vector<Tensor>& stacks,
                           const std::vector<std::vector<double>>& targets, const LossWeights& w,
                           const PerceptualNet* net) {
    return [=, &stacks, &targets](Graph& g, const std::vector<Var>& vars) {
        BoundIdr p;
        std::size_t v = 0;
        for (int l = 0; l < cfg.n_linear; ++l) {
            p.extractor_w.push_back(vars[v++]);
            p.extractor_b.push_back(vars[v++]);
        }
        p.transform_w = vars[v++];
        p.transform_b = vars[v++];
        p.coord_features = vars[v++];
        for (std::size_t l = 0; l < gcn_widths(cfg.L).size(); ++l) p.gcn_w.push_back(vars[v++]);
        p.attn_wq = vars[v++];
        p.attn_wk = vars[v++];
        p.attn_wv = vars[v++];
        p.attn_out_w = vars[v++];
        p.attn_out_b = vars[v++];
        auto fw = model_forward_batch(g, p, cfg, stacks);
        std::vector<Var> preds, ms;
        for (auto& o : fw) {
            preds.push_back(o.pred);
            ms.push_back(o.m);
        }
        return composite_loss_node(g, preds, targets, ms, w, cfg.L, net);
    };
}

bool criterion_gradient_integrity() {
    auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::int64_t checked = 0, skipped = 0;
    for (int L : {3, 25}) {
        IdrConfig cfg;
        cfg.d_in = 5;
        cfg.hidden = 8;
        cfg.L = L;
        cfg.H = 4;
        cfg.W = 4;
        cfg.T = 2;
        IdrModel model = IdrModel::init(cfg, 1000 + L);
        Rng rng(2000 + L);
        AugmentConfig ac;
        ac.keep_prob = 0.8;
        std::vector<Tensor> stacks;
        std::vector<std::vector<double>> targets;
        for (int i = 0; i < 2; ++i) {
            std::vector<double> x(cfg.d_in);
            for (double& v : x) v = rng.normal();
            stacks.push_back(stack_time(x, cfg.T, ac, rng));
            targets.push_back(oracle::random_simplex(cfg.L, rng));
        }
        LossWeights w;
        std::optional<PerceptualNet> pnet;
        if (L > w.label_threshold) pnet = PerceptualNet::init(L, 77);
        std::vector<Tensor> theta;
        for (const auto& [key, t] : model.params.entries) theta.push_back(t);

        GradCheckOptions opt;
        // seeded coordinate subsample: small tensors are covered fully, the
        // wide GCN layers proportionally; kinked coordinates are excluded per
        // the documented finite-difference policy and counted
        opt.max_coords_per_tensor = L == 3 ? 500 : 200;
        opt.seed = 31415;
        opt.skip_kinks = true;
        auto rep = gradient_check(composite_fn(cfg, stacks, targets, w, pnet ? &*pnet : nullptr),
                                  theta, 1e-6, 1e-4, opt);
        worst = std::max(worst, rep.max_rel_err);
        checked += rep.coords_checked;
        skipped += rep.coords_skipped;
    }
    const double secs = seconds_since(t0);
    const bool ok = worst < 1e-4 && secs < 60.0 && skipped * 50 < checked;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "both composite-loss branches end-to-end: max rel err %.3g over %lld coords, "
                  "%lld kink-skipped, %.1fs",
                  worst, static_cast<long long>(checked), static_cast<long long>(skipped), secs);
    report(1, ok, "gradient integrity", buf);
    return ok;
}

// ---------------------------------------------------------------- criterion 2

bool criterion_metric_oracles() {
    Rng rng(987654321);
    double worst = 0.0, worst_ident = 0.0;
    for (int t = 0; t < 10000; ++t) {
        const int L = 2 + static_cast<int>(rng.below(14));
        auto a = oracle::random_simplex(L, rng);
        auto b = oracle::random_simplex(L, rng);
        auto got = evaluate(LabelDistribution{a}, LabelDistribution{b});
        auto want = oracle::all_metrics(a, b);
        for (int i = 0; i < 6; ++i) worst = std::max(worst, std::fabs(got[i] - want[i]));
        worst_ident = std::max(worst_ident, std::fabs(got[5] + 0.5 * l1_loss(a, b) - 1.0));
    }
    bool ideal_ok = true;
    for (int t = 0; t < 100; ++t) {
        auto d = oracle::random_simplex(3 + static_cast<int>(rng.below(8)), rng);
        auto m = evaluate(LabelDistribution{d}, LabelDistribution{d});
        ideal_ok = ideal_ok && m[0] == 0.0 && m[1] == 0.0 && m[2] == 0.0 && m[3] == 0.0 &&
                   std::fabs(m[4] - 1.0) < 1e-12 && std::fabs(m[5] - 1.0) < 1e-12;
    }
    const bool ok = worst <= 1e-12 && worst_ident <= 1e-12 && ideal_ok;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "10k pairs: max oracle gap %.2e, intersection identity gap %.2e, ideal tuple %s",
                  worst, worst_ident, ideal_ok ? "exact" : "violated");
    report(2, ok, "metric oracle equivalence", buf);
    return ok;
}

// ---------------------------------------------------------------- criterion 3

bool criterion_hand_values() {
    auto l = lnf(std::vector<double>{0.2, -0.1, 0.4});
    const bool lnf_ok = std::fabs(l[0] - 0.375) < 1e-12 && std::fabs(l[1]) < 1e-12 &&
                        std::fabs(l[2] - 0.625) < 1e-12;
    const double kl = kl_loss(std::vector<double>{0.5, 0.5}, std::vector<double>{0.25, 0.75});
    const bool kl_ok = std::fabs(kl - 0.14384) < 1e-5;
    auto m = evaluate(LabelDistribution{{1.0, 0.0}}, LabelDistribution{{0.5, 0.5}});
    const double want[6] = {0.5, 1.05409, 1.33333, 0.69315, 0.70711, 0.5};
    bool tuple_ok = true;
    for (int i = 0; i < 6; ++i) tuple_ok = tuple_ok && std::fabs(m[i] - want[i]) < 1e-5;
    const bool ok = lnf_ok && kl_ok && tuple_ok;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "lnf %s, KL=%.6f, metric tuple %s", lnf_ok ? "exact" : "wrong",
                  kl, tuple_ok ? "within 1e-5" : "off");
    report(3, ok, "hand-value conformance", buf);
    return ok;
}

// ---------------------------------------------------------------- criterion 4

constexpr std::uint64_t kSynthSeed = 4242;

bool criterion_baseline_recovery(const LdlDataset& ds) {
    auto t0 = std::chrono::steady_clock::now();
    FitOptions opt;
    opt.max_iter = 500;
    FitReport rep;
    MaxEntModel m = bfgsll_fit(ds, opt, &rep);
    std::vector<int> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    const double kl = mean_kl(m, ds, all);
    const double secs = seconds_since(t0);
    const bool ok = kl < 0.01 && rep.iterations <= 500 && secs < 120.0;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "mean KL %.3g after %d iterations, %.2fs", kl, rep.iterations,
                  secs);
    report(4, ok, "baseline recovery", buf);
    return ok;
}

// ---------------------------------------------------------------- criterion 5

CvOptions accept_cv_options(const LdlDataset& ds) {
    CvOptions opt;
    opt.k = 2;
    opt.repeats = 1;
    opt.seed = 7;
    opt.model_cfg.d_in = ds.d;
    opt.model_cfg.L = ds.L;
    opt.model_cfg.hidden = 64;
    opt.model_cfg.H = 16;
    opt.model_cfg.W = 16;
    opt.model_cfg.T = 2;
    // interior (softmax-generated) targets: the softmax head fits them
    // smoothly, while lnf's exact zero would floor the KL metric
    opt.model_cfg.head = HeadKind::softmax;
    opt.train_cfg.batch_size = 25;
    opt.train_cfg.epochs = 50;
    opt.train_cfg.learning_rate = 5e-3;
    opt.train_cfg.early_stopping = true;
    opt.train_cfg.patience = 10;
    opt.train_cfg.greedy_soup = true;
    return opt;
}

bool criterion_model_learns(const LdlDataset& ds) {
    auto t0 = std::chrono::steady_clock::now();
    CvOptions opt = accept_cv_options(ds);
    MetricsReport idr = cross_validate(ds, Algo::idr, opt);
    MetricsReport uni = cross_validate(ds, Algo::uniform, opt);
    MetricsReport bfgs = cross_validate(ds, Algo::bfgsll, opt);
    const double secs = seconds_since(t0);

    bool beats_uniform = true;
    for (int i = 0; i < 6; ++i) {
        if (kMetricHigherBetter[i])
            beats_uniform = beats_uniform && idr.stats[i].mean > uni.stats[i].mean;
        else
            beats_uniform = beats_uniform && idr.stats[i].mean < uni.stats[i].mean;
    }
    const double cheb_gate = 2.0 * bfgs.stats[0].mean;
    const bool cheb_ok = idr.stats[0].mean <= cheb_gate;
    const bool ok = beats_uniform && cheb_ok && secs < 600.0;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "beats uniform on all six: %s; chebyshev %.4g vs 2x baseline %.3g: %s; %.0fs",
                  beats_uniform ? "yes" : "NO", idr.stats[0].mean, cheb_gate,
                  cheb_ok ? "yes" : "NO", secs);
    report(5, ok, "model learns", buf);
    if (!cheb_ok)
        std::printf(
            "        note: the synthetic generator is noiseless and exactly softmax-linear, so the\n"
            "        convex baseline recovers it to optimizer precision (chebyshev ~1e-5); a factor-2\n"
            "        gate against that is out of reach for any trained deep pipeline at this scale.\n");
    return ok;
}

// ---------------------------------------------------------------- criterion 6

double matrix_alignment(const IdrModel& model, const LdlDataset& ds, int count) {
    std::vector<const LdlSample*> ptrs;
    for (int i = 0; i < count; ++i) ptrs.push_back(&ds.samples[i]);
    auto outs = model_forward_many(model, ptrs);
    double total = 0.0;
    int n = 0;
    for (int i = 0; i < count; ++i) {
        for (int l = 0; l < ds.L; ++l) {
            double mean = 0.0;
            for (int j = 0; j < outs[i].m.cols(); ++j) mean += outs[i].m.at(l, j);
            mean /= outs[i].m.cols();
            total += std::fabs(mean - ds.samples[i].target.values[l]);
            ++n;
        }
    }
    return total / n;
}

bool criterion_regularizer() {
    // exact-zero contract on constructed moment-matched rows (dyadic values)
    Tensor m({2, 4}, {0.25 - 1.0, 0.25 + 1.0, 0.25, 0.25, 0.75 - 1.0, 0.75 + 1.0, 0.75, 0.75});
    const bool zero_ok = gaussian_matrix_reg(m, std::vector<double>{0.25, 0.75}) == 0.0;

    auto ds = synthesize(400, 10, 5, 99).dataset;
    IdrConfig mc;
    mc.d_in = 10;
    mc.L = 5;
    mc.hidden = 64;
    mc.H = 16;
    mc.W = 16;
    mc.T = 2;
    mc.head = HeadKind::softmax;
    IdrModel model = IdrModel::init(mc, 7);
    const double before = matrix_alignment(model, ds, 100);
    std::vector<int> train_idx, val_idx;
    for (int i = 0; i < 360; ++i) train_idx.push_back(i);
    for (int i = 360; i < 400; ++i) val_idx.push_back(i);
    TrainConfig tc;
    tc.batch_size = 25;
    tc.epochs = 15;
    tc.learning_rate = 5e-3;
    tc.early_stopping = false;
    tc.greedy_soup = false;
    tc.seed = 3;
    LossWeights w;  // beta = 0.1 > 0
    train(model, ds, train_idx, val_idx, tc, w);
    const double after = matrix_alignment(model, ds, 100);
    const bool align_ok = after <= 0.5 * before;
    const bool ok = zero_ok && align_ok;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "row-mean gap %.4f -> %.4f (%.0f%% drop); moment-matched reg %s", before, after,
                  100.0 * (1.0 - after / before), zero_ok ? "exactly 0" : "nonzero");
    report(6, ok, "regularizer behavior", buf);
    return ok;
}

// ---------------------------------------------------------------- criterion 7

bool criterion_snn_fidelity() {
    // single-IF hand case
    SpikingNet unit;
    unit.d_in = 1;
    unit.hidden = 1;
    unit.weights.push_back(Tensor({1, 1}, {1.0}));
    unit.biases.push_back(Tensor({1}, {0.0}));
    unit.sources.push_back({-1});
    unit.scale.push_back(1.0);
    const bool hand_ok = simulate(unit, Tensor({1, 1}, {0.5}), 10).spike_counts[0][0] == 5;

    IdrConfig mc;
    mc.d_in = 6;
    mc.hidden = 16;
    mc.L = 3;
    mc.H = 4;
    mc.W = 4;
    mc.T = 2;
    IdrModel model = IdrModel::init(mc, 2077);
    ExtractorStack stack = extractor_stack(model);
    Rng rng(31);
    std::vector<std::vector<double>> batch(32, std::vector<double>(6));
    for (auto& x : batch)
        for (double& v : x) v = rng.normal();
    SpikingNet snn = convert(stack, calibrate(stack, batch, 99.9));

    double err64 = 0.0, prev = 1e300;
    bool monotone = true;
    std::string curve;
    for (int t_sim : {8, 16, 32, 64}) {
        double num = 0.0, den = 0.0;
        for (const auto& x : batch) {
            auto acts = extractor_activations(stack, x);
            SimResult res = simulate(snn, Tensor({1, 6}, x), t_sim);
            for (std::size_t j = 0; j < res.decoded.size(); ++j) {
                num += std::fabs(res.decoded[j] - acts.back()[j]);
                den += std::fabs(acts.back()[j]);
            }
        }
        const double err = num / den;
        monotone = monotone && err <= prev + 1e-12;
        prev = err;
        if (t_sim == 64) err64 = err;
        char piece[32];
        std::snprintf(piece, sizeof(piece), "%s%.3f", curve.empty() ? "" : " > ", err);
        curve += piece;
    }
    const bool ok = hand_ok && monotone && err64 <= 0.10;
    char buf[200];
    std::snprintf(buf, sizeof(buf), "decode err over T=8,16,32,64: %s; hand IF case %s",
                  curve.c_str(), hand_ok ? "exact" : "wrong");
    report(7, ok, "snn conversion fidelity", buf);
    return ok;
}

// ---------------------------------------------------------------- criterion 8

bool criterion_energy() {
    IdrConfig mc;
    mc.d_in = 6;
    mc.hidden = 16;
    mc.L = 3;
    mc.H = 4;
    mc.W = 4;
    mc.T = 2;
    IdrModel model = IdrModel::init(mc, 3001);
    ExtractorStack stack = extractor_stack(model);
    const bool macs_ok = ann_mac_count(stack, 1) == 6 * 16 + 7 * 16 * 16 &&
                         ann_mac_count(stack, 5) == 5 * (6 * 16 + 7 * 16 * 16);

    Rng rng(8);
    std::vector<std::vector<double>> calib(8, std::vector<double>(6));
    for (auto& x : calib)
        for (double& v : x) v = rng.normal();
    SpikingNet snn = convert(stack, calibrate(stack, calib, 99.9));
    std::vector<std::vector<double>> zeros(4, std::vector<double>(6, 0.0));
    EnergyReport zr = energy_report(stack, snn, zeros, 32);
    const bool zero_ok = zr.snn_synops == 0 && zr.estimated_saving == 1.0;

    SpikingNet chain;
    chain.d_in = 1;
    chain.hidden = 1;
    for (int l = 0; l < 2; ++l) {
        chain.weights.push_back(Tensor({1, 1}, {1.0}));
        chain.biases.push_back(Tensor({1}, {0.0}));
        chain.sources.push_back({l - 1 < 0 ? -1 : l - 1});
        chain.scale.push_back(1.0);
    }
    const auto hi = simulate(chain, Tensor({1, 1}, {0.8}), 10);
    const auto lo = simulate(chain, Tensor({1, 1}, {0.4}), 10);
    const bool halving_ok = hi.synops == 2 * lo.synops && lo.synops > 0;

    const bool ok = macs_ok && zero_ok && halving_ok;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "analytic MACs %s; zero-input saving %.1f; synops %lld vs %lld on rate halving",
                  macs_ok ? "exact" : "wrong", zr.estimated_saving,
                  static_cast<long long>(hi.synops), static_cast<long long>(lo.synops));
    report(8, ok, "energy accounting", buf);
    return ok;
}

// ---------------------------------------------------------------- criterion 9

bool criterion_soup_early_stop() {
    auto ds = synthesize(120, 5, 3, 321).dataset;
    std::vector<int> train_idx, val_idx;
    for (int i = 0; i < 100; ++i) train_idx.push_back(i);
    for (int i = 100; i < 120; ++i) val_idx.push_back(i);

    IdrConfig mc;
    mc.d_in = 5;
    mc.hidden = 16;
    mc.L = 3;
    mc.H = 8;
    mc.W = 8;
    mc.T = 2;
    IdrModel model = IdrModel::init(mc, 11);
    TrainConfig tc;
    tc.batch_size = 20;
    tc.epochs = 12;
    tc.learning_rate = 3e-3;
    tc.early_stopping = false;
    tc.greedy_soup = true;
    tc.seed = 5;
    LossWeights w;
    TrainResult res = train(model, ds, train_idx, val_idx, tc, w);
    double best = 1e300;
    for (const auto& c : res.checkpoints) best = std::min(best, c.val_kl);
    const auto [loss_after, kl_after] = evaluate_objective(model, ds, val_idx, w, nullptr);
    (void)loss_after;
    const bool soup_ok = kl_after <= best + 1e-12;

    bool stop_ok = true;
    for (int patience : {1, 4}) {
        IdrModel m2 = IdrModel::init(mc, 12);
        TrainConfig tc2 = tc;
        tc2.learning_rate = 0.0;  // plateau
        tc2.early_stopping = true;
        tc2.greedy_soup = false;
        tc2.patience = patience;
        tc2.epochs = 50;
        TrainResult r2 = train(m2, ds, train_idx, val_idx, tc2, w);
        stop_ok = stop_ok && r2.stopped_epoch == patience + 1;
    }
    const bool ok = soup_ok && stop_ok;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "soup val KL %.5f <= best checkpoint %.5f: %s; plateau stops at patience+1: %s",
                  kl_after, best, soup_ok ? "yes" : "NO", stop_ok ? "yes" : "NO");
    report(9, ok, "soup and early-stopping contracts", buf);
    return ok;
}

// --------------------------------------------------------------- criterion 10

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool criterion_determinism() {
    const fs::path base = fs::temp_directory_path() / "ldl-acceptance";
    fs::remove_all(base);
    fs::create_directories(base);
    const std::string cli = LDL_CLI_PATH;
    const std::string synth =
        cli + " synth --n 120 --d 4 --labels 3 --seed 99 --out " + base.string() + " > /dev/null";
    if (std::system(synth.c_str()) != 0) {
        report(10, false, "determinism", "synth subcommand failed");
        return false;
    }
    fs::path csv;
    for (const auto& e : fs::directory_iterator(base))
        if (e.path().extension() == ".csv") csv = e.path();
    const std::string common = cli + " cv --data " + csv.string() +
                               " --algo idr --k 2 --repeats 1 --seed 17 --hidden 8 --map-h 4 "
                               "--map-w 4 --time-steps 2 --epochs 3 --batch-size 16 --out ";
    const fs::path r1 = base / "r1";
    const fs::path r2 = base / "r2";
    if (std::system((common + r1.string() + " > /dev/null").c_str()) != 0 ||
        std::system((common + r2.string() + " > /dev/null").c_str()) != 0) {
        report(10, false, "determinism", "cv subcommand failed");
        return false;
    }
    const bool json_ok = slurp(r1 / "cv_report.json") == slurp(r2 / "cv_report.json");
    const bool csv_ok = slurp(r1 / "cv_report.csv") == slurp(r2 / "cv_report.csv");
    const bool ok = json_ok && csv_ok && !slurp(r1 / "cv_report.json").empty();
    report(10, ok, "determinism",
           std::string("cv rerun bytes: json ") + (json_ok ? "identical" : "DIFFER") + ", csv " +
               (csv_ok ? "identical" : "DIFFER"));
    return ok;
}

}  // namespace

int main() {
    std::printf("acceptance suite\n================\n");
    auto t0 = std::chrono::steady_clock::now();

    criterion_gradient_integrity();
    criterion_metric_oracles();
    criterion_hand_values();

    auto synth = synthesize(2000, 10, 5, kSynthSeed);
    criterion_baseline_recovery(synth.dataset);
    criterion_model_learns(synth.dataset);
    criterion_regularizer();
    criterion_snn_fidelity();
    criterion_energy();
    criterion_soup_early_stop();
    criterion_determinism();

    std::printf("================\n%d/10 criteria passed in %.0fs\n", g_passed,
                seconds_since(t0));
    return g_failed == 0 ? 0 : 1;
}
