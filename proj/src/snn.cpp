#include "ldl/snn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace ldl {

ExtractorStack extractor_stack(const IdrModel& model) {
    ExtractorStack s;
    s.d_in = model.cfg.d_in;
    s.hidden = model.cfg.hidden;
    s.sources = extractor_sources();
    for (int l = 0; l < model.cfg.n_linear; ++l) {
        s.weights.push_back(&model.params.at("extractor.linear" + std::to_string(l) + ".w"));
        s.biases.push_back(&model.params.at("extractor.linear" + std::to_string(l) + ".b"));
    }
    return s;
}

std::vector<std::vector<double>> extractor_activations(const ExtractorStack& net,
                                                       std::span<const double> x) {
    if (static_cast<int>(x.size()) != net.d_in)
        throw ShapeError("extractor_activations", "feature length " + std::to_string(x.size()) +
                                                      " vs d_in " + std::to_string(net.d_in));
    std::vector<std::vector<double>> acts(net.weights.size());
    std::vector<double> input;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        input.assign(net.weights[l]->rows(), 0.0);
        for (int src : net.sources[l]) {
            const double* a = src < 0 ? x.data() : acts[src].data();
            for (std::size_t j = 0; j < input.size(); ++j) input[j] += a[j];
        }
        const Tensor& w = *net.weights[l];
        const Tensor& b = *net.biases[l];
        std::vector<double> out(w.cols(), 0.0);
        for (int i = 0; i < w.rows(); ++i) {
            const double xi = input[i];
            if (xi == 0.0) continue;
            for (int j = 0; j < w.cols(); ++j) out[j] += xi * w.at(i, j);
        }
        for (int j = 0; j < w.cols(); ++j) {
            out[j] += b.data[j];
            if (out[j] < 0.0) out[j] = 0.0;
        }
        acts[l] = std::move(out);
    }
    return acts;
}

CalibrationProfile calibrate(const ExtractorStack& net, const std::vector<std::vector<double>>& batch,
                             double q) {
    if (batch.empty()) throw DataError("calibrate: empty calibration batch");
    if (q <= 0.0 || q > 100.0) throw LdlError("calibrate: percentile must be in (0, 100]");
    std::vector<std::vector<double>> collected(net.weights.size());
    for (const auto& x : batch) {
        auto acts = extractor_activations(net, x);
        for (std::size_t l = 0; l < acts.size(); ++l)
            collected[l].insert(collected[l].end(), acts[l].begin(), acts[l].end());
    }
    CalibrationProfile profile;
    profile.q = q;
    for (std::size_t l = 0; l < collected.size(); ++l) {
        auto& vals = collected[l];
        std::sort(vals.begin(), vals.end());
        const std::size_t n = vals.size();
        const double pos = q / 100.0 * static_cast<double>(n - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(lo);
        const double p =
            lo + 1 < n ? vals[lo] + frac * (vals[lo + 1] - vals[lo]) : vals[n - 1];
        if (p <= 0.0)
            throw DataError("calibrate: unit " + std::to_string(l) +
                            " has an all-zero activation percentile");
        profile.scale.push_back(p);
    }
    return profile;
}

SpikingNet convert(const ExtractorStack& net, const CalibrationProfile& profile) {
    if (profile.scale.size() != net.weights.size())
        throw LdlError("convert: profile covers " + std::to_string(profile.scale.size()) +
                       " units, network has " + std::to_string(net.weights.size()));
    SpikingNet snn;
    snn.d_in = net.d_in;
    snn.hidden = net.hidden;
    snn.sources = net.sources;
    snn.scale = profile.scale;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        const double p_prev = l == 0 ? 1.0 : profile.scale[l - 1];
        const double p = profile.scale[l];
        Tensor w = *net.weights[l];
        for (double& v : w.data) v *= p_prev / p;
        Tensor b = *net.biases[l];
        for (double& v : b.data) v /= p;
        snn.weights.push_back(std::move(w));
        snn.biases.push_back(std::move(b));
    }
    return snn;
}

SimResult simulate(const SpikingNet& snn, const Tensor& x_stack, int t_sim) {
    if (t_sim < 1) throw LdlError("simulate: t_sim must be >= 1");
    if (x_stack.rank() != 2 || x_stack.cols() != snn.d_in)
        throw ShapeError("simulate", "stack " + shape_str(x_stack.shape) + " vs d_in " +
                                         std::to_string(snn.d_in));
    const int T = x_stack.rows();
    const std::size_t n_units = snn.weights.size();

    std::vector<std::vector<double>> v(n_units);       // membrane potentials
    std::vector<std::vector<double>> spikes(n_units);  // this step's spikes (0/1)
    SimResult res;
    res.t_sim = t_sim;
    res.spike_counts.resize(n_units);
    for (std::size_t l = 0; l < n_units; ++l) {
        const int width = snn.weights[l].cols();
        // half-threshold start rounds the rate code to nearest
        v[l].assign(width, snn.threshold * 0.5);
        spikes[l].assign(width, 0.0);
        res.spike_counts[l].assign(width, 0);
    }

    // fan-out per unit in accumulate ops: each spike drives the full output
    // row of every consumer
    std::vector<std::int64_t> fanout(n_units, 0);
    for (std::size_t c = 0; c < n_units; ++c)
        for (int src : snn.sources[c])
            if (src >= 0) fanout[src] += snn.weights[c].cols();

    std::vector<double> virt, current;
    for (int t = 0; t < t_sim; ++t) {
        const int slot = T > 0 ? t % T : 0;
        for (std::size_t l = 0; l < n_units; ++l) {
            const Tensor& w = snn.weights[l];
            const int n_in = w.rows(), n_out = w.cols();
            // virtual input in units of the previous layer's scale
            virt.assign(n_in, 0.0);
            const double p_prev = l == 0 ? 1.0 : snn.scale[l - 1];
            for (int src : snn.sources[l]) {
                if (src < 0) {
                    for (int j = 0; j < n_in; ++j) virt[j] += x_stack.at(slot, j);
                } else {
                    const double ratio = snn.scale[src] / p_prev;
                    const auto& s = spikes[src];
                    for (int j = 0; j < n_in; ++j) virt[j] += ratio * s[j];
                }
            }
            current.assign(n_out, 0.0);
            for (int i = 0; i < n_in; ++i) {
                const double xi = virt[i];
                if (xi == 0.0) continue;
                const double* row = &w.data[static_cast<std::size_t>(i) * n_out];
                for (int j = 0; j < n_out; ++j) current[j] += xi * row[j];
            }
            auto& vl = v[l];
            auto& sl = spikes[l];
            for (int j = 0; j < n_out; ++j) {
                vl[j] += current[j] + snn.biases[l].data[j];
                if (vl[j] >= snn.threshold) {
                    vl[j] -= snn.threshold;  // reset by subtraction
                    sl[j] = 1.0;
                    ++res.spike_counts[l][j];
                    ++res.total_spikes;
                    res.synops += fanout[l];
                } else {
                    sl[j] = 0.0;
                }
            }
        }
    }

    const std::size_t last = n_units - 1;
    res.rates_last.resize(res.spike_counts[last].size());
    res.decoded.resize(res.spike_counts[last].size());
    for (std::size_t j = 0; j < res.rates_last.size(); ++j) {
        res.rates_last[j] =
            static_cast<double>(res.spike_counts[last][j]) / static_cast<double>(t_sim);
        res.decoded[j] = res.rates_last[j] * snn.scale[last];
    }
    return res;
}

std::int64_t ann_mac_count(const ExtractorStack& net, int batch) {
    std::int64_t per_sample = 0;
    for (const Tensor* w : net.weights)
        per_sample += static_cast<std::int64_t>(w->rows()) * w->cols();
    return per_sample * batch;
}

EnergyReport energy_report(const ExtractorStack& ann, const SpikingNet& snn,
                           const std::vector<std::vector<double>>& probe, int t_sim, double e_mac,
                           double e_ac) {
    EnergyReport rep;
    rep.e_mac = e_mac;
    rep.e_ac = e_ac;
    rep.t_sim = t_sim;
    rep.batch = static_cast<int>(probe.size());
    rep.ann_macs = ann_mac_count(ann, rep.batch);
    for (const auto& x : probe) {
        Tensor stack({1, static_cast<int>(x.size())}, x);
        rep.snn_synops += simulate(snn, stack, t_sim).synops;
    }
    const double ann_energy = static_cast<double>(rep.ann_macs) * e_mac;
    rep.estimated_saving =
        ann_energy > 0.0 ? 1.0 - static_cast<double>(rep.snn_synops) * e_ac / ann_energy : 0.0;
    return rep;
}

std::string EnergyReport::to_json() const {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["kind"] = "energy-report";
    j["ann_macs"] = ann_macs;
    j["snn_synops"] = snn_synops;
    j["e_mac"] = e_mac;
    j["e_ac"] = e_ac;
    j["estimated_saving"] = estimated_saving;
    j["t_sim"] = t_sim;
    j["batch"] = batch;
    return j.dump(2) + "\n";
}

void save_snn(const SpikingNet& snn, const std::string& path) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["kind"] = "snn-checkpoint";
    j["config"] = {{"d_in", snn.d_in}, {"hidden", snn.hidden}, {"threshold", snn.threshold}};
    j["scale"] = snn.scale;
    j["sources"] = snn.sources;
    nlohmann::json units = nlohmann::json::array();
    for (std::size_t l = 0; l < snn.weights.size(); ++l) {
        units.push_back({{"w_shape", snn.weights[l].shape},
                         {"w", snn.weights[l].data},
                         {"b", snn.biases[l].data}});
    }
    j["units"] = std::move(units);
    std::ofstream out(path);
    if (!out) throw CheckpointError("cannot write snn checkpoint: " + path);
    out << j.dump() << "\n";
}

SpikingNet load_snn(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot open snn checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw CheckpointError("malformed snn checkpoint " + path + ": " + e.what());
    }
    if (j.value("schema_version", -1) != 1)
        throw CheckpointError("unsupported snn checkpoint schema_version in " + path);
    if (j.value("kind", "") != "snn-checkpoint")
        throw CheckpointError("not an snn checkpoint: " + path);
    SpikingNet snn;
    snn.d_in = j.at("config").at("d_in");
    snn.hidden = j.at("config").at("hidden");
    snn.threshold = j.at("config").at("threshold");
    if (!(snn.threshold > 0.0))
        throw CheckpointError("snn checkpoint has a non-positive threshold");
    snn.scale = j.at("scale").get<std::vector<double>>();
    snn.sources = j.at("sources").get<std::vector<std::vector<int>>>();
    for (const auto& u : j.at("units")) {
        snn.weights.emplace_back(u.at("w_shape").get<std::vector<int>>(),
                                 u.at("w").get<std::vector<double>>());
        Tensor b;
        b.data = u.at("b").get<std::vector<double>>();
        b.shape = {static_cast<int>(b.data.size())};
        snn.biases.push_back(std::move(b));
    }
    return snn;
}

}  // namespace ldl
