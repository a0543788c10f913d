// Command-line front end: synth, train, eval, cv, convert-snn, energy.
// One root seed feeds named sub-streams (split/init/augment/sim) so runs are
// reproducible end to end; flags override config-file values.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <optional>

#include "ldl/baseline.hpp"
#include "ldl/dataset.hpp"
#include "ldl/metrics.hpp"
#include "ldl/model.hpp"
#include "ldl/objectives.hpp"
#include "ldl/snn.hpp"
#include "ldl/trainer.hpp"

namespace {

using namespace ldl;

struct RunSpec {
    std::string data_path;
    std::string synth_spec;  // "n,d,L"
    std::string algo = "idr";
    std::string out_dir;
    std::string checkpoint;
    std::string snn_checkpoint;
    std::string config_path;
    std::string head = "lnf";
    std::uint64_t seed = 0;
    int k = 5;
    int repeats = 10;
    int jobs = 1;
    // training
    int batch_size = 32;
    int epochs = 100;
    double learning_rate = 2e-3;
    double weight_decay = 1e-4;
    bool early_stopping = true;
    int patience = 10;
    double min_delta = 1e-4;
    bool greedy_soup = true;
    bool augment = false;
    double alpha = 0.2;
    double keep_prob = 0.8;
    // model shape
    int hidden = 0;  // 0 -> width chosen from feature count
    int H = 32, W = 32, T = 4;
    // loss weights
    double lambda_kl = 0.01;
    double beta_few = 0.1;
    double lambda1 = 0.01;
    double lambda2 = 0.01;
    double beta_many = 0.08;
    int label_threshold = 20;
    // snn
    double q = 99.9;
    int tsim = 64;
    int calib_count = 64;
};

std::string default_out_dir() {
    const char* env = std::getenv("LDL_OUT_DIR");
    return env && *env ? env : ".";
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw LdlError("config: cannot parse boolean value '" + v + "'");
}

/// key = value file mirroring the training-configuration table; unknown keys
/// are rejected so typos surface early.
void load_config_file(const std::string& path, RunSpec& spec) {
    std::ifstream in(path);
    if (!in) throw LdlError("cannot open config file: " + path);
    std::string line;
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) throw LdlError("config: expected 'key = value', got '" + t + "'");
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (key == "batch_size") spec.batch_size = std::stoi(val);
        else if (key == "epochs") spec.epochs = std::stoi(val);
        else if (key == "learning_rate") spec.learning_rate = std::stod(val);
        else if (key == "weight_decay") spec.weight_decay = std::stod(val);
        else if (key == "early_stopping") spec.early_stopping = parse_bool(val);
        else if (key == "patience") spec.patience = std::stoi(val);
        else if (key == "min_delta") spec.min_delta = std::stod(val);
        else if (key == "greedy_soup") spec.greedy_soup = parse_bool(val);
        else if (key == "augment") spec.augment = parse_bool(val);
        else if (key == "alpha") spec.alpha = std::stod(val);
        else if (key == "keep_prob") spec.keep_prob = std::stod(val);
        else if (key == "hidden") spec.hidden = std::stoi(val);
        else if (key == "H") spec.H = std::stoi(val);
        else if (key == "W") spec.W = std::stoi(val);
        else if (key == "T") spec.T = std::stoi(val);
        else if (key == "head") spec.head = val;
        else if (key == "lambda_kl") spec.lambda_kl = std::stod(val);
        else if (key == "beta_few") spec.beta_few = std::stod(val);
        else if (key == "lambda1") spec.lambda1 = std::stod(val);
        else if (key == "lambda2") spec.lambda2 = std::stod(val);
        else if (key == "beta_many") spec.beta_many = std::stod(val);
        else if (key == "label_threshold") spec.label_threshold = std::stoi(val);
        else if (key == "seed") spec.seed = std::stoull(val);
        else if (key == "k") spec.k = std::stoi(val);
        else if (key == "repeats") spec.repeats = std::stoi(val);
        else if (key == "jobs") spec.jobs = std::stoi(val);
        else if (key == "q") spec.q = std::stod(val);
        else if (key == "tsim") spec.tsim = std::stoi(val);
        else throw LdlError("config: unknown key '" + key + "'");
    }
}

LossWeights weights_of(const RunSpec& s) {
    LossWeights w;
    w.lambda_kl = s.lambda_kl;
    w.beta_few_labels = s.beta_few;
    w.lambda1 = s.lambda1;
    w.lambda2 = s.lambda2;
    w.beta_many_labels = s.beta_many;
    w.label_threshold = s.label_threshold;
    return w;
}

TrainConfig train_config_of(const RunSpec& s) {
    TrainConfig tc;
    tc.batch_size = s.batch_size;
    tc.epochs = s.epochs;
    tc.learning_rate = s.learning_rate;
    tc.weight_decay = s.weight_decay;
    tc.early_stopping = s.early_stopping;
    tc.patience = s.patience;
    tc.min_delta = s.min_delta;
    tc.greedy_soup = s.greedy_soup;
    tc.augment.enabled = s.augment;
    tc.augment.alpha = s.alpha;
    tc.augment.keep_prob = s.keep_prob;
    tc.seed = s.seed;
    return tc;
}

IdrConfig model_config_of(const RunSpec& s, int d, int L) {
    IdrConfig mc;
    mc.d_in = d;
    mc.L = L;
    mc.hidden = s.hidden > 0 ? s.hidden : default_hidden_for(d);
    mc.H = s.H;
    mc.W = s.W;
    mc.T = s.T;
    mc.head = head_from_name(s.head);
    mc.pseudo_keep_prob = s.keep_prob;
    return mc;
}

LdlDataset resolve_dataset(const RunSpec& s) {
    if (!s.data_path.empty() && !s.synth_spec.empty())
        throw LdlError("exactly one data source: pass --data or --synth, not both");
    if (!s.data_path.empty()) return load_csv(s.data_path);
    if (!s.synth_spec.empty()) {
        int n = 0, d = 0, L = 0;
        if (std::sscanf(s.synth_spec.c_str(), "%d,%d,%d", &n, &d, &L) != 3)
            throw LdlError("--synth expects n,d,L");
        return synthesize(n, d, L, substream(s.seed, "data")).dataset;
    }
    throw LdlError("no data source: pass --data <csv> or --synth n,d,L");
}

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p);
    if (!out) throw LdlError("cannot write " + p.string());
    out << content;
}

void write_report(const MetricsReport& rep, const std::filesystem::path& dir,
                  const std::string& stem) {
    std::filesystem::create_directories(dir);
    write_file(dir / (stem + ".json"), rep.to_json());
    write_file(dir / (stem + ".csv"), MetricsReport::csv_header() + "\n" + rep.csv_row() + "\n");
    std::cout << rep.to_json();
}

int cmd_synth(const RunSpec& s, int n, int d, int L) {
    auto synth = synthesize(n, d, L, s.seed);
    std::filesystem::path dir(s.out_dir);
    std::filesystem::create_directories(dir);
    const std::string stem = synth.dataset.name;
    save_csv(synth.dataset, (dir / (stem + ".csv")).string());
    nlohmann::json truth;
    truth["schema_version"] = 1;
    truth["kind"] = "synth-truth";
    truth["seed"] = s.seed;
    truth["weights"] = synth.weights.data;
    truth["bias"] = synth.bias.data;
    truth["shape"] = {{"n", n}, {"d", d}, {"L", L}};
    write_file(dir / (stem + ".truth.json"), truth.dump(2) + "\n");
    std::cout << "wrote " << (dir / (stem + ".csv")).string() << "\n";
    return 0;
}

int cmd_train(const RunSpec& s) {
    LdlDataset ds = resolve_dataset(s);
    std::filesystem::path dir(s.out_dir);
    std::filesystem::create_directories(dir);

    if (s.algo == "bfgsll") {
        FitOptions fo;
        FitReport rep;
        MaxEntModel m = bfgsll_fit(ds, fo, &rep);
        save_maxent(m, (dir / "checkpoint.json").string());
        std::cout << "bfgsll: " << rep.iterations << " iterations, objective " << rep.objective
                  << "\n";
        return 0;
    }

    // carve a seeded validation slice (10%, at least one sample)
    Rng rng(substream(s.seed, "train-val-split"));
    std::vector<int> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const int n_val = std::max(1, ds.size() / 10);
    std::vector<int> val_idx(order.begin(), order.begin() + n_val);
    std::vector<int> train_idx(order.begin() + n_val, order.end());

    IdrModel model = IdrModel::init(model_config_of(s, ds.d, ds.L), substream(s.seed, "init"));
    TrainResult res = train(model, ds, train_idx, val_idx, train_config_of(s), weights_of(s));

    save_checkpoint(model, (dir / "checkpoint.json").string());
    std::string hist = "epoch,train_loss,val_loss,val_kl\n";
    char buf[128];
    for (const auto& e : res.history) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g\n", e.epoch, e.train_loss, e.val_loss,
                      e.val_kl);
        hist += buf;
    }
    write_file(dir / "history.csv", hist);
    std::cout << "trained " << res.stopped_epoch << " epoch(s); checkpoint at "
              << (dir / "checkpoint.json").string() << "\n";
    return 0;
}

int cmd_eval(const RunSpec& s) {
    LdlDataset ds = resolve_dataset(s);
    std::filesystem::path dir(s.out_dir);
    std::filesystem::create_directories(dir);

    std::vector<std::vector<MetricTuple>> folds(1);
    nlohmann::json extra;

    if (s.algo == "bfgsll") {
        MaxEntModel m = load_maxent(s.checkpoint);
        if (m.d != ds.d || m.L != ds.L)
            throw CheckpointError("checkpoint shape (d=" + std::to_string(m.d) +
                                  ",L=" + std::to_string(m.L) + ") does not match dataset (d=" +
                                  std::to_string(ds.d) + ",L=" + std::to_string(ds.L) + ")");
        for (const auto& sample : ds.samples)
            folds[0].push_back(evaluate(sample.target, bfgsll_predict(m, sample.features)));
    } else {
        IdrModel model = load_checkpoint(s.checkpoint);
        if (model.cfg.d_in != ds.d || model.cfg.L != ds.L)
            throw CheckpointError("checkpoint shape (d=" + std::to_string(model.cfg.d_in) +
                                  ",L=" + std::to_string(model.cfg.L) +
                                  ") does not match dataset (d=" + std::to_string(ds.d) +
                                  ",L=" + std::to_string(ds.L) + ")");
        if (!s.snn_checkpoint.empty()) {
            // hybrid: spiking extractor, analog remainder; also report the
            // prediction gap against the pure ANN path
            SpikingNet snn = load_snn(s.snn_checkpoint);
            double gap = 0.0;
            for (const auto& sample : ds.samples) {
                Tensor stack({1, ds.d}, sample.features);
                SimResult sim = simulate(snn, stack, s.tsim);
                ForwardOut hy = model_forward_from_hidden(model, Tensor::row(sim.decoded));
                ForwardOut ann = model_forward(model, sample.features);
                gap += kl_loss(ann.pred.values, hy.pred.values);
                folds[0].push_back(evaluate(sample.target, hy.pred));
            }
            extra["ann_snn_pred_kl"] = gap / ds.size();
            extra["t_sim"] = s.tsim;
        } else {
            std::vector<const LdlSample*> ptrs;
            for (const auto& sample : ds.samples) ptrs.push_back(&sample);
            auto outs = model_forward_many(model, ptrs);
            for (int i = 0; i < ds.size(); ++i)
                folds[0].push_back(evaluate(ds.samples[i].target, outs[i].pred));
        }
    }

    MetricsReport rep = aggregate(folds);
    rep.dataset = ds.name;
    rep.algorithm = s.algo + (s.snn_checkpoint.empty() ? "" : "+snn");
    nlohmann::json j = nlohmann::json::parse(rep.to_json());
    for (auto& [k, v] : extra.items()) j[k] = v;
    write_file(dir / "eval_report.json", j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_cv(const RunSpec& s, const CLI::App* sub) {
    LdlDataset ds = resolve_dataset(s);
    CvOptions opt;
    opt.k = s.k;
    opt.repeats = s.repeats;
    opt.seed = s.seed;
    opt.jobs = s.jobs;
    // dataset sidecar supplies defaults unless flags were passed
    if (ds.defaults.k && sub->count("--k") == 0) opt.k = *ds.defaults.k;
    if (ds.defaults.repeats && sub->count("--repeats") == 0) opt.repeats = *ds.defaults.repeats;
    if (ds.defaults.seed && sub->count("--seed") == 0) opt.seed = *ds.defaults.seed;
    opt.model_cfg = model_config_of(s, ds.d, ds.L);
    opt.train_cfg = train_config_of(s);
    opt.weights = weights_of(s);
    MetricsReport rep = cross_validate(ds, algo_from_name(s.algo), opt);
    write_report(rep, s.out_dir, "cv_report");
    return 0;
}

int cmd_convert_snn(const RunSpec& s) {
    LdlDataset ds = resolve_dataset(s);
    IdrModel model = load_checkpoint(s.checkpoint);
    if (model.cfg.d_in != ds.d)
        throw CheckpointError("checkpoint d_in does not match calibration data");
    ExtractorStack stack = extractor_stack(model);
    std::vector<std::vector<double>> calib;
    for (int i = 0; i < std::min(s.calib_count, ds.size()); ++i)
        calib.push_back(ds.samples[i].features);
    CalibrationProfile profile = calibrate(stack, calib, s.q);
    SpikingNet snn = convert(stack, profile);
    std::filesystem::path dir(s.out_dir);
    std::filesystem::create_directories(dir);
    save_snn(snn, (dir / "snn.json").string());
    EnergyReport rep = energy_report(stack, snn, calib, s.tsim);
    write_file(dir / "energy_report.json", rep.to_json());
    std::cout << rep.to_json();
    return 0;
}

int cmd_energy(const RunSpec& s) {
    LdlDataset ds = resolve_dataset(s);
    IdrModel model = load_checkpoint(s.checkpoint);
    SpikingNet snn = load_snn(s.snn_checkpoint);
    ExtractorStack stack = extractor_stack(model);
    std::vector<std::vector<double>> probe;
    for (int i = 0; i < std::min(s.calib_count, ds.size()); ++i)
        probe.push_back(ds.samples[i].features);
    EnergyReport rep = energy_report(stack, snn, probe, s.tsim);
    std::filesystem::path dir(s.out_dir);
    std::filesystem::create_directories(dir);
    write_file(dir / "energy_report.json", rep.to_json());
    std::cout << rep.to_json();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    RunSpec spec;
    spec.out_dir = default_out_dir();

    // config file loads first so explicit flags keep the last word
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            try {
                load_config_file(argv[i + 1], spec);
            } catch (const std::exception& e) {
                std::cerr << "error: " << e.what() << "\n";
                return 2;
            }
        }
    }

    CLI::App app{"label distribution learning toolkit"};
    app.require_subcommand(1);

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", spec.config_path, "key = value run configuration");
        sub->add_option("--seed", spec.seed, "root seed for all sub-streams");
        sub->add_option("--out", spec.out_dir, "output directory (env LDL_OUT_DIR)");
    };
    auto add_data = [&](CLI::App* sub) {
        sub->add_option("--data", spec.data_path, "dataset CSV");
        sub->add_option("--synth", spec.synth_spec, "synthetic source n,d,L");
    };
    auto add_model_train = [&](CLI::App* sub) {
        sub->add_option("--hidden", spec.hidden, "extractor width (0 = auto)");
        sub->add_option("--map-h", spec.H, "feature map height");
        sub->add_option("--map-w", spec.W, "feature map width");
        sub->add_option("--time-steps", spec.T, "stacked time slots");
        sub->add_option("--head", spec.head, "lnf or softmax");
        sub->add_option("--batch-size", spec.batch_size);
        sub->add_option("--epochs", spec.epochs);
        sub->add_option("--lr", spec.learning_rate);
        sub->add_option("--weight-decay", spec.weight_decay);
        sub->add_flag("--augment,!--no-augment", spec.augment, "masked mixup");
        sub->add_flag("--early-stopping,!--no-early-stopping", spec.early_stopping);
        sub->add_option("--patience", spec.patience);
        sub->add_flag("--greedy-soup,!--no-greedy-soup", spec.greedy_soup);
        sub->add_option("--keep-prob", spec.keep_prob, "mask density for pseudo slots and mixup");
        sub->add_option("--alpha", spec.alpha, "mixup Beta concentration");
    };

    CLI::App* synth = app.add_subcommand("synth", "write a synthetic dataset CSV + ground truth");
    int n = 100, d = 5, L = 4;
    synth->add_option("--n", n, "samples")->required();
    synth->add_option("--d", d, "features")->required();
    synth->add_option("--labels", L, "labels")->required();
    add_common(synth);

    CLI::App* train_cmd = app.add_subcommand("train", "train a model, write checkpoint + history");
    add_common(train_cmd);
    add_data(train_cmd);
    add_model_train(train_cmd);
    train_cmd->add_option("--algo", spec.algo, "idr or bfgsll");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(eval_cmd);
    add_data(eval_cmd);
    eval_cmd->add_option("--checkpoint", spec.checkpoint)->required();
    eval_cmd->add_option("--algo", spec.algo, "idr or bfgsll");
    eval_cmd->add_option("--snn", spec.snn_checkpoint, "spiking extractor checkpoint (hybrid eval)");
    eval_cmd->add_option("--tsim", spec.tsim, "simulation steps for --snn");

    CLI::App* cv = app.add_subcommand("cv", "repeated k-fold cross-validation report");
    add_common(cv);
    add_data(cv);
    add_model_train(cv);
    cv->add_option("--algo", spec.algo, "idr, bfgsll or uniform");
    cv->add_option("--k", spec.k, "folds");
    cv->add_option("--repeats", spec.repeats);
    cv->add_option("--jobs", spec.jobs, "parallel splits");

    CLI::App* conv = app.add_subcommand("convert-snn", "calibrate + convert the extractor");
    add_common(conv);
    add_data(conv);
    conv->add_option("--checkpoint", spec.checkpoint)->required();
    conv->add_option("--q", spec.q, "activation percentile");
    conv->add_option("--tsim", spec.tsim);
    conv->add_option("--calib-count", spec.calib_count, "calibration sample cap");

    CLI::App* energy = app.add_subcommand("energy", "op-count energy report for a converted net");
    add_common(energy);
    add_data(energy);
    energy->add_option("--checkpoint", spec.checkpoint)->required();
    energy->add_option("--snn", spec.snn_checkpoint)->required();
    energy->add_option("--tsim", spec.tsim);
    energy->add_option("--calib-count", spec.calib_count, "probe sample cap");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(synth)) return cmd_synth(spec, n, d, L);
        if (app.got_subcommand(train_cmd)) return cmd_train(spec);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(spec);
        if (app.got_subcommand(cv)) return cmd_cv(spec, cv);
        if (app.got_subcommand(conv)) return cmd_convert_snn(spec);
        if (app.got_subcommand(energy)) return cmd_energy(spec);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
