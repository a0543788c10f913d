#include "ldl/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "ldl/baseline.hpp"

namespace ldl {

void adam_step(ParamStore& params, const GradMap& grads, AdamState& state, double lr,
               double weight_decay) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (state.moments.empty()) {
        for (const auto& [key, t] : params.entries)
            state.moments.emplace_back(key,
                                       std::make_pair(Tensor::zeros(t.shape), Tensor::zeros(t.shape)));
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (std::size_t p = 0; p < params.entries.size(); ++p) {
        auto& [key, theta] = params.entries[p];
        auto& [m, v] = state.moments[p].second;
        const Tensor* grad = nullptr;
        for (const auto& [gk, gt] : grads)
            if (gk == key) {
                grad = &gt;
                break;
            }
        if (!grad) continue;  // frozen parameter: no update, no decay
        for (std::size_t i = 0; i < theta.data.size(); ++i) {
            const double gv = !grad->data.empty() ? grad->data[i] : 0.0;
            if (!std::isfinite(gv))
                throw LdlError("adam_step: non-finite gradient for parameter " + key);
            m.data[i] = b1 * m.data[i] + (1.0 - b1) * gv;
            v.data[i] = b2 * v.data[i] + (1.0 - b2) * gv * gv;
            const double m_hat = m.data[i] / bc1;
            const double v_hat = v.data[i] / bc2;
            theta.data[i] -= lr * weight_decay * theta.data[i];  // decoupled decay
            theta.data[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

namespace {

const PerceptualNet* maybe_perceptual(const LdlDataset& ds, const LossWeights& w,
                                      std::optional<PerceptualNet>& storage, std::uint64_t seed) {
    if (ds.L > w.label_threshold) {
        storage = PerceptualNet::init(ds.L, substream(seed, "perceptual"));
        return &*storage;
    }
    return nullptr;
}

}  // namespace

std::pair<double, double> evaluate_objective(const IdrModel& model, const LdlDataset& ds,
                                             std::span<const int> idx, const LossWeights& weights,
                                             const PerceptualNet* pnet) {
    AugmentConfig clean;
    clean.keep_prob = 1.0;
    Rng rng(0);
    double loss_total = 0.0, kl_total = 0.0;
    constexpr std::size_t kChunk = 64;
    for (std::size_t base = 0; base < idx.size(); base += kChunk) {
        const std::size_t end = std::min(base + kChunk, idx.size());
        std::vector<Tensor> stacks;
        std::vector<std::vector<double>> targets;
        for (std::size_t i = base; i < end; ++i) {
            const LdlSample& s = ds.samples[idx[i]];
            stacks.push_back(stack_time(s.features, model.cfg.T, clean, rng));
            targets.push_back(s.target.values);
        }
        Graph g;
        BoundIdr p = bind(g, model, false);
        auto fw = model_forward_batch(g, p, model.cfg, stacks);
        std::vector<Var> preds, ms;
        for (auto& f : fw) {
            preds.push_back(f.pred);
            ms.push_back(f.m);
        }
        Var loss = composite_loss_node(g, preds, targets, ms, weights, model.cfg.L, pnet);
        loss_total += loss.value().data[0] * static_cast<double>(end - base);
        for (std::size_t i = 0; i < fw.size(); ++i)
            kl_total += kl_loss(targets[i], fw[i].pred.value().data);
    }
    const double n = static_cast<double>(idx.size());
    return {loss_total / n, kl_total / n};
}

TrainResult train(IdrModel& model, const LdlDataset& ds, std::span<const int> train_idx,
                  std::span<const int> val_idx, const TrainConfig& cfg, const LossWeights& weights) {
    if (train_idx.empty() || val_idx.empty())
        throw DataError("train: both train and validation splits must be non-empty");

    std::optional<PerceptualNet> pnet_storage;
    const PerceptualNet* pnet = maybe_perceptual(ds, weights, pnet_storage, cfg.seed);

    AdamState opt;
    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    ParamStore best_params = model.params;
    int stagnant = 0;

    const std::uint64_t augment_seed = substream(cfg.seed, "augment");
    AugmentConfig stack_cfg;
    stack_cfg.keep_prob = model.cfg.pseudo_keep_prob;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng epoch_rng(substream(augment_seed, "epoch", static_cast<std::uint64_t>(epoch)));
        std::vector<int> order(train_idx.begin(), train_idx.end());
        epoch_rng.shuffle(order);

        double epoch_loss = 0.0;
        std::int64_t seen = 0;
        for (std::size_t base = 0; base < order.size(); base += cfg.batch_size) {
            const std::size_t end = std::min(base + cfg.batch_size, order.size());
            std::vector<LdlSample> batch;
            batch.reserve(end - base);
            for (std::size_t i = base; i < end; ++i) batch.push_back(ds.samples[order[i]]);
            if (cfg.augment.enabled && batch.size() >= 2)
                batch = sample_augmentation(batch, cfg.augment, epoch_rng);

            std::vector<Tensor> stacks;
            std::vector<std::vector<double>> targets;
            for (const auto& s : batch) {
                stacks.push_back(stack_time(s.features, model.cfg.T, stack_cfg, epoch_rng));
                targets.push_back(s.target.values);
            }

            Graph g;
            BoundIdr p = bind(g, model, true);
            auto fw = model_forward_batch(g, p, model.cfg, stacks);
            std::vector<Var> preds, ms;
            for (auto& f : fw) {
                preds.push_back(f.pred);
                ms.push_back(f.m);
            }
            Var loss = composite_loss_node(g, preds, targets, ms, weights, model.cfg.L, pnet);
            const double lv = loss.value().data[0];
            if (!std::isfinite(lv))
                throw TrainingError(epoch, "train: non-finite loss at epoch " +
                                               std::to_string(epoch));
            g.backward(loss);

            GradMap grads;
            auto take = [&](const std::string& key, Var v) {
                grads.emplace_back(key, v.grad());
            };
            for (int l = 0; l < model.cfg.n_linear; ++l) {
                take("extractor.linear" + std::to_string(l) + ".w", p.extractor_w[l]);
                take("extractor.linear" + std::to_string(l) + ".b", p.extractor_b[l]);
            }
            take("transform.w", p.transform_w);
            take("transform.b", p.transform_b);
            if (model.cfg.learn_coords) take("coord.features", p.coord_features);
            for (std::size_t l = 0; l < p.gcn_w.size(); ++l)
                take("gcn.layer" + std::to_string(l) + ".w", p.gcn_w[l]);
            take("attn.wq", p.attn_wq);
            take("attn.wk", p.attn_wk);
            take("attn.wv", p.attn_wv);
            take("attn.out.w", p.attn_out_w);
            take("attn.out.b", p.attn_out_b);

            adam_step(model.params, grads, opt, cfg.learning_rate, cfg.weight_decay);
            epoch_loss += lv * static_cast<double>(end - base);
            seen += static_cast<std::int64_t>(end - base);
        }

        auto [val_loss, val_kl] = evaluate_objective(model, ds, val_idx, weights, pnet);
        EpochStats st;
        st.epoch = epoch;
        st.train_loss = epoch_loss / static_cast<double>(seen);
        st.val_loss = val_loss;
        st.val_kl = val_kl;
        result.history.push_back(st);
        result.stopped_epoch = epoch;

        if (cfg.greedy_soup) result.checkpoints.push_back({model.params, epoch, val_kl});

        if (val_loss < best_val - cfg.min_delta) {
            best_val = val_loss;
            best_params = model.params;
            stagnant = 0;
        } else {
            ++stagnant;
            if (cfg.early_stopping && stagnant >= cfg.patience) break;
        }
    }

    if (cfg.greedy_soup && !result.checkpoints.empty()) {
        IdrModel probe = model;
        auto val_kl_of = [&](const ParamStore& ps) {
            probe.params = ps;
            return evaluate_objective(probe, ds, val_idx, weights, pnet).second;
        };
        model.params = greedy_soup(result.checkpoints, val_kl_of);
    } else {
        model.params = best_params;
    }
    return result;
}

ParamStore greedy_soup(const std::vector<Checkpoint>& checkpoints,
                       const std::function<double(const ParamStore&)>& val_kl) {
    if (checkpoints.empty()) throw LdlError("greedy_soup: no checkpoints");
    std::vector<const Checkpoint*> order;
    for (const auto& c : checkpoints) order.push_back(&c);
    std::stable_sort(order.begin(), order.end(),
                     [](const Checkpoint* a, const Checkpoint* b) { return a->val_kl < b->val_kl; });

    ParamStore soup = order.front()->params;
    double soup_kl = val_kl(soup);
    const double best_single = soup_kl;
    int members = 1;
    for (std::size_t c = 1; c < order.size(); ++c) {
        // tentative average with the candidate folded in
        ParamStore cand = soup;
        const double w_old = static_cast<double>(members) / (members + 1);
        const double w_new = 1.0 / (members + 1);
        for (std::size_t p = 0; p < cand.entries.size(); ++p) {
            auto& dst = cand.entries[p].second.data;
            const auto& add = order[c]->params.entries[p].second.data;
            for (std::size_t i = 0; i < dst.size(); ++i)
                dst[i] = dst[i] * w_old + add[i] * w_new;
        }
        const double cand_kl = val_kl(cand);
        if (cand_kl <= soup_kl) {
            soup = std::move(cand);
            soup_kl = cand_kl;
            ++members;
        }
    }
    if (soup_kl > best_single)
        throw LdlError("greedy_soup: invariant violated (soup worse than best checkpoint)");
    return soup;
}

std::string algo_name(Algo a) {
    switch (a) {
        case Algo::idr: return "idr";
        case Algo::bfgsll: return "bfgsll";
        case Algo::uniform: return "uniform";
    }
    return "?";
}

Algo algo_from_name(const std::string& s) {
    if (s == "idr") return Algo::idr;
    if (s == "bfgsll") return Algo::bfgsll;
    if (s == "uniform") return Algo::uniform;
    throw LdlError("unknown algorithm '" + s + "' (expected idr, bfgsll or uniform)");
}

namespace {

std::vector<MetricTuple> run_split(const LdlDataset& ds, Algo algo, const CvOptions& opt,
                                   const Split& split, std::uint64_t split_seed) {
    std::vector<MetricTuple> fold;
    fold.reserve(split.test.size());
    if (algo == Algo::uniform) {
        LabelDistribution u;
        u.values.assign(ds.L, 1.0 / ds.L);
        u.renormalize();
        for (int i : split.test) fold.push_back(evaluate(ds.samples[i].target, u));
        return fold;
    }
    if (algo == Algo::bfgsll) {
        // no early stopping involved, so validation rows join the fit
        std::vector<int> fit_idx(split.train.begin(), split.train.end());
        fit_idx.insert(fit_idx.end(), split.validation.begin(), split.validation.end());
        FitOptions fo;
        MaxEntModel m = bfgsll_fit(ds, fit_idx, fo);
        for (int i : split.test)
            fold.push_back(evaluate(ds.samples[i].target, bfgsll_predict(m, ds.samples[i].features)));
        return fold;
    }
    IdrConfig mc = opt.model_cfg;
    mc.d_in = ds.d;
    mc.L = ds.L;
    IdrModel model = IdrModel::init(mc, substream(split_seed, "init"));
    TrainConfig tc = opt.train_cfg;
    tc.seed = substream(split_seed, "train");
    train(model, ds, split.train, split.validation, tc, opt.weights);
    std::vector<const LdlSample*> test_samples;
    for (int i : split.test) test_samples.push_back(&ds.samples[i]);
    auto outs = model_forward_many(model, test_samples);
    for (std::size_t i = 0; i < outs.size(); ++i)
        fold.push_back(evaluate(ds.samples[split.test[i]].target, outs[i].pred));
    return fold;
}

}  // namespace

MetricsReport cross_validate(const LdlDataset& ds, Algo algo, const CvOptions& opt) {
    auto splits = kfold_split(ds.size(), opt.k, opt.repeats, substream(opt.seed, "split"));
    std::vector<std::vector<MetricTuple>> folds(splits.size());

    const int jobs = std::max(1, opt.jobs);
    if (jobs == 1) {
        for (std::size_t s = 0; s < splits.size(); ++s)
            folds[s] = run_split(ds, algo, opt, splits[s], substream(opt.seed, "cv-split", s));
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        std::exception_ptr err;
        std::mutex err_mu;
        for (int t = 0; t < jobs; ++t) {
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t s = next.fetch_add(1);
                    if (s >= splits.size()) return;
                    try {
                        folds[s] = run_split(ds, algo, opt, splits[s], substream(opt.seed, "cv-split", s));
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(err_mu);
                        if (!err) err = std::current_exception();
                        return;
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        if (err) std::rethrow_exception(err);
    }

    MetricsReport rep = aggregate(folds);
    rep.dataset = ds.name;
    rep.algorithm = algo_name(algo);
    return rep;
}

}  // namespace ldl
