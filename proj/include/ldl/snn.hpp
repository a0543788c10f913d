#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ldl/model.hpp"

namespace ldl {

/// View of the extractor's ReLU trunk: 8 linear units plus the residual
/// source topology (which earlier post-ReLU outputs feed each unit; -1 is
/// the network input).
struct ExtractorStack {
    std::vector<const Tensor*> weights;  // (in x out) each
    std::vector<const Tensor*> biases;
    std::vector<std::vector<int>> sources;
    int d_in = 0;
    int hidden = 0;
};

ExtractorStack extractor_stack(const IdrModel& model);

/// Post-ReLU activations per unit for one feature vector (plain math, the
/// ANN reference for calibration and fidelity checks).
std::vector<std::vector<double>> extractor_activations(const ExtractorStack& net,
                                                       std::span<const double> x);

/// Per-unit activation scale: the q-th percentile (linear interpolation
/// between order statistics) of all post-ReLU values over a calibration set.
struct CalibrationProfile {
    double q = 99.9;
    std::vector<double> scale;
};

CalibrationProfile calibrate(const ExtractorStack& net, const std::vector<std::vector<double>>& batch,
                             double q);

/// Converted integrate-and-fire network. Chain weights are normalized as
/// W'_l = W_l * p_{l-1} / p_l (input scale 1) and biases as b_l / p_l;
/// thresholds are 1 and neurons reset by subtraction. Residual inputs are
/// rescaled spike trains from earlier units.
struct SpikingNet {
    std::vector<Tensor> weights;   // normalized, (in x out)
    std::vector<Tensor> biases;    // normalized
    std::vector<std::vector<int>> sources;
    std::vector<double> scale;     // p_l per unit
    double threshold = 1.0;
    int d_in = 0;
    int hidden = 0;
};

SpikingNet convert(const ExtractorStack& net, const CalibrationProfile& profile);

struct SimResult {
    std::vector<std::vector<std::int64_t>> spike_counts;  // per unit, per neuron
    std::vector<double> rates_last;                       // final unit spike rates
    std::vector<double> decoded;                          // rates_last * p_last
    std::int64_t total_spikes = 0;
    std::int64_t synops = 0;
    int t_sim = 0;
};

/// Constant-current simulation over t_sim steps. The stack's T slots cycle
/// across steps (slot t mod T drives step t); membranes start at half
/// threshold so spike counts quantize to the nearest rate.
SimResult simulate(const SpikingNet& snn, const Tensor& x_stack, int t_sim);

struct EnergyReport {
    std::int64_t ann_macs = 0;
    std::int64_t snn_synops = 0;
    double e_mac = 4.6;
    double e_ac = 0.9;
    double estimated_saving = 0.0;  // 1 - synops*e_ac / (macs*e_mac)
    int t_sim = 0;
    int batch = 0;

    std::string to_json() const;
};

/// Analytic multiply-accumulate count of one ANN pass over `batch` samples.
std::int64_t ann_mac_count(const ExtractorStack& net, int batch);

EnergyReport energy_report(const ExtractorStack& ann, const SpikingNet& snn,
                           const std::vector<std::vector<double>>& probe, int t_sim,
                           double e_mac = 4.6, double e_ac = 0.9);

void save_snn(const SpikingNet& snn, const std::string& path);
SpikingNet load_snn(const std::string& path);

}  // namespace ldl
