#include "ldl/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ldl/heads.hpp"

namespace ldl {

bool LabelDistribution::is_valid(double tol) const {
    if (values.empty()) return false;
    double sum = 0.0;
    for (double v : values) {
        if (!std::isfinite(v) || v < 0.0) return false;
        sum += v;
    }
    return std::fabs(sum - 1.0) <= tol;
}

void LabelDistribution::renormalize() {
    double sum = std::accumulate(values.begin(), values.end(), 0.0);
    if (sum != 1.0) {
        for (double& v : values) v /= sum;
    }
    // nudge the largest entry until the sum is exactly 1.0 (a couple of
    // iterations at most; keeps write->load a fixed point)
    for (int iter = 0; iter < 4; ++iter) {
        double s = std::accumulate(values.begin(), values.end(), 0.0);
        if (s == 1.0) break;
        auto mx = std::max_element(values.begin(), values.end());
        *mx += 1.0 - s;
    }
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

bool parse_double(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && (*b == ' ' || *b == '\t')) ++b;
    auto [p, ec] = std::from_chars(b, e, out);
    if (ec != std::errc()) return false;
    while (p < e && (*p == ' ' || *p == '\t')) ++p;
    return p == e;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

void read_sidecar(const std::string& path, LdlDataset& ds) {
    std::ifstream in(path);
    if (!in) return;
    std::string line;
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) continue;
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (key == "name") {
            ds.defaults.name = val;
            ds.name = val;
        } else if (key == "k") {
            ds.defaults.k = std::stoi(val);
        } else if (key == "repeats") {
            ds.defaults.repeats = std::stoi(val);
        } else if (key == "seed") {
            ds.defaults.seed = std::stoull(val);
        }
    }
}

void format_double(std::string& out, double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    out.append(buf, p);
}

}  // namespace

LdlDataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path);

    std::string header;
    if (!std::getline(in, header)) throw DataError("empty dataset file: " + path);
    auto cols = split_line(header);
    int d = 0, L = 0;
    for (const auto& c : cols) {
        std::string t = trim(c);
        if (t.rfind('f', 0) == 0 && L == 0)
            ++d;
        else if (t.rfind('y', 0) == 0)
            ++L;
        else
            throw DataError("malformed header column '" + t + "' in " + path +
                            " (expected f0..f{d-1},y0..y{L-1})");
    }
    if (d < 1 || L < 2) throw DataError("header must name >=1 feature and >=2 label columns");

    LdlDataset ds;
    ds.d = d;
    ds.L = L;
    ds.name = std::filesystem::path(path).stem().string();

    std::string line;
    int row = 0;
    std::vector<std::string> bad;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        auto fields = split_line(line);
        if (static_cast<int>(fields.size()) != d + L) {
            bad.push_back("row " + std::to_string(row) + ": expected " + std::to_string(d + L) +
                          " columns, got " + std::to_string(fields.size()));
            continue;
        }
        LdlSample s;
        s.features.resize(d);
        s.target.values.resize(L);
        bool ok = true;
        for (int j = 0; j < d && ok; ++j)
            ok = parse_double(fields[j], s.features[j]) && std::isfinite(s.features[j]);
        for (int j = 0; j < L && ok; ++j)
            ok = parse_double(fields[d + j], s.target.values[j]) &&
                 std::isfinite(s.target.values[j]);
        if (!ok) {
            bad.push_back("row " + std::to_string(row) + ": unparseable or non-finite value");
            continue;
        }
        if (!s.target.is_valid()) {
            double sum = std::accumulate(s.target.values.begin(), s.target.values.end(), 0.0);
            bad.push_back("row " + std::to_string(row) + ": labels violate the simplex (sum " +
                          std::to_string(sum) + ")");
            continue;
        }
        s.target.renormalize();
        ds.samples.push_back(std::move(s));
    }
    if (!bad.empty()) {
        std::string msg = "rejected " + std::to_string(bad.size()) + " row(s) in " + path + ":";
        for (const auto& b : bad) msg += "\n  " + b;
        throw DataError(msg);
    }
    read_sidecar(path + ".cfg", ds);
    return ds;
}

void save_csv(const LdlDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset file: " + path);
    std::string line;
    for (int j = 0; j < ds.d; ++j) line += "f" + std::to_string(j) + ",";
    for (int j = 0; j < ds.L; ++j) {
        line += "y" + std::to_string(j);
        if (j + 1 < ds.L) line += ",";
    }
    out << line << "\n";
    for (const auto& s : ds.samples) {
        line.clear();
        for (int j = 0; j < ds.d; ++j) {
            format_double(line, s.features[j]);
            line += ",";
        }
        for (int j = 0; j < ds.L; ++j) {
            format_double(line, s.target.values[j]);
            if (j + 1 < ds.L) line += ",";
        }
        out << line << "\n";
    }
}

Synthesized synthesize(int n, int d, int L, std::uint64_t seed) {
    if (n < 1 || d < 1 || L < 2) throw DataError("synthesize: need n>=1, d>=1, L>=2");
    Rng map_rng(substream(seed, "synth-map"));
    Tensor w = Tensor::zeros({L, d});
    Tensor b = Tensor::zeros({L});
    const double w_scale = 1.5 / std::sqrt(static_cast<double>(d));
    for (double& v : w.data) v = map_rng.normal() * w_scale;
    for (double& v : b.data) v = map_rng.normal() * 0.3;

    Rng x_rng(substream(seed, "synth-x"));
    Synthesized out;
    out.weights = w;
    out.bias = b;
    out.dataset.d = d;
    out.dataset.L = L;
    out.dataset.name = "synth-" + std::to_string(n) + "x" + std::to_string(d) + "x" +
                       std::to_string(L) + "-s" + std::to_string(seed);
    out.dataset.samples.reserve(n);
    std::vector<double> logits(L);
    for (int i = 0; i < n; ++i) {
        LdlSample s;
        s.features.resize(d);
        for (double& v : s.features) v = x_rng.normal();
        for (int l = 0; l < L; ++l) {
            double z = b.data[l];
            for (int j = 0; j < d; ++j) z += w.at(l, j) * s.features[j];
            logits[l] = z;
        }
        s.target.values = softmax(logits);
        s.target.renormalize();
        out.dataset.samples.push_back(std::move(s));
    }
    return out;
}

std::vector<Split> kfold_split(int n, int k, int repeats, std::uint64_t seed) {
    if (k < 2) throw DataError("kfold_split: k must be >= 2");
    if (n < k) throw DataError("kfold_split: dataset smaller than fold count (" +
                               std::to_string(n) + " < " + std::to_string(k) + ")");
    std::vector<Split> splits;
    splits.reserve(static_cast<std::size_t>(k) * repeats);
    for (int r = 0; r < repeats; ++r) {
        Rng rng(substream(seed, "split", static_cast<std::uint64_t>(r)));
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        // fold boundaries; sizes differ by at most one
        std::vector<int> bounds(k + 1, 0);
        for (int f = 0; f <= k; ++f) bounds[f] = static_cast<int>(static_cast<std::int64_t>(n) * f / k);
        for (int f = 0; f < k; ++f) {
            Split sp;
            for (int i = bounds[f]; i < bounds[f + 1]; ++i) sp.test.push_back(order[i]);
            std::vector<int> rest;
            for (int i = 0; i < n; ++i)
                if (i < bounds[f] || i >= bounds[f + 1]) rest.push_back(order[i]);
            int n_val = std::max(1, static_cast<int>(rest.size()) / 10);
            sp.validation.assign(rest.begin(), rest.begin() + n_val);
            sp.train.assign(rest.begin() + n_val, rest.end());
            splits.push_back(std::move(sp));
        }
    }
    return splits;
}

LdlSample mixup_mask(const LdlSample& a, const LdlSample& b, double lambda,
                     const std::vector<int>& mask) {
    if (mask.size() != a.features.size() || a.features.size() != b.features.size())
        throw DataError("mixup_mask: mask length " + std::to_string(mask.size()) +
                        " does not match feature length " + std::to_string(a.features.size()));
    LdlSample out;
    out.features.resize(a.features.size());
    for (std::size_t j = 0; j < out.features.size(); ++j)
        out.features[j] =
            (lambda * a.features[j] + (1.0 - lambda) * b.features[j]) * static_cast<double>(mask[j]);
    std::vector<double> y(a.target.values.size());
    for (std::size_t j = 0; j < y.size(); ++j)
        y[j] = lambda * a.target.values[j] + (1.0 - lambda) * b.target.values[j];
    out.target.values = lnf(y);
    out.target.renormalize();
    return out;
}

std::vector<LdlSample> sample_augmentation(const std::vector<LdlSample>& batch,
                                           const AugmentConfig& cfg, Rng& rng) {
    if (!cfg.enabled) return batch;
    if (batch.size() < 2) throw DataError("sample_augmentation: need a batch of >= 2 samples");
    std::vector<LdlSample> out;
    out.reserve(batch.size());
    const std::size_t d = batch.front().features.size();
    std::vector<int> mask(d);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::size_t a = static_cast<std::size_t>(rng.below(batch.size()));
        std::size_t b = static_cast<std::size_t>(rng.below(batch.size()));
        double lambda = rng.beta(cfg.alpha, cfg.alpha);
        for (std::size_t j = 0; j < d; ++j) mask[j] = rng.bernoulli(cfg.keep_prob) ? 1 : 0;
        out.push_back(mixup_mask(batch[a], batch[b], lambda, mask));
    }
    return out;
}

}  // namespace ldl
