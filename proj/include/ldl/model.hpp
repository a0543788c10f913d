#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ldl/dataset.hpp"
#include "ldl/graph.hpp"
#include "ldl/heads.hpp"
#include "ldl/rng.hpp"

namespace ldl {

enum class HeadKind { lnf, softmax };

std::string head_name(HeadKind h);
HeadKind head_from_name(const std::string& s);

/// Shape configuration of the implicit-distribution model.
struct IdrConfig {
    int d_in = 0;
    int hidden = 1024;  // 64 suits small feature spaces
    int n_linear = 8;   // stem + 7 hidden units, each followed by ReLU
    int L = 0;
    int H = 32;
    int W = 32;
    int T = 4;
    HeadKind head = HeadKind::lnf;
    bool learn_coords = true;          // coordinate node features trainable
    double pseudo_keep_prob = 0.8;     // mask density of pseudo time slots

    void validate() const;
};

/// 64 suits small feature spaces (mirrors the published width table).
int default_hidden_for(int d_in);

/// Named flat parameter tensors with a fixed order, so checkpoint averaging
/// and optimizer state are key-wise.
struct ParamStore {
    std::vector<std::pair<std::string, Tensor>> entries;

    Tensor& at(const std::string& key);
    const Tensor& at(const std::string& key) const;
    bool has(const std::string& key) const;
    void add(const std::string& key, Tensor t);
    std::size_t size() const { return entries.size(); }
};

/// Parameter keys:
///   extractor.linear{0..7}.w / .b     stem (d_in x hidden) then 7 hidden units
///   transform.w / transform.b         hidden -> L*H*W projection
///   coord.features                    L x 64 node features (standard normal)
///   gcn.layer{0..3}.w                 64->64->128->256->4L, no biases
///   attn.wq / attn.wk / attn.wv       2L x 2L
///   attn.out.w (2L x 1), attn.out.b   shared per-token scalar readout
struct IdrModel {
    IdrConfig cfg;
    ParamStore params;

    static IdrModel init(const IdrConfig& cfg, std::uint64_t seed);
};

/// GCN layer output widths for a given label count.
std::vector<int> gcn_widths(int L);

/// Symmetrically normalized adjacency of the fully connected graph with
/// self-loops: every entry is 1/L.
Tensor normalized_adjacency(int L);

/// Skip topology of the residual extractor: sources[l] lists the layers
/// whose post-ReLU outputs feed linear unit l (-1 denotes the network
/// input). Identity shortcuts close over every second hidden unit, so units
/// 3, 5, 7 consume a running junction sum.
std::vector<std::vector<int>> extractor_sources();

/// Native features in slot 0; slots 1..T-1 are pseudo-copies under
/// Bernoulli(keep_prob) masks drawn from rng. keep_prob = 1 yields T
/// identical copies (the evaluation path).
Tensor stack_time(std::span<const double> x, int T, const AugmentConfig& cfg, Rng& rng);

/// Graph-bound parameters for one forward pass.
struct BoundIdr {
    std::vector<Var> extractor_w, extractor_b;
    Var transform_w, transform_b;
    Var coord_features;
    std::vector<Var> gcn_w;
    Var attn_wq, attn_wk, attn_wv, attn_out_w, attn_out_b;
};

BoundIdr bind(Graph& g, const IdrModel& model, bool trainable);

/// Per-slot residual MLP, mean squeeze over T, projection, reshape to
/// (L, H, W).
Var extract_features(Graph& g, const BoundIdr& p, const IdrConfig& cfg, Var x_stack);
/// Batched variant sharing the big matmuls across the batch.
std::vector<Var> extract_features_batch(Graph& g, const BoundIdr& p, const IdrConfig& cfg,
                                        const std::vector<Tensor>& stacks);

/// Four ReLU graph-convolution layers over the coordinate features, tanh
/// squash, reshaped to an (L x 2L x 2) lookup grid in [-1, 1]^2.
Var gcn_forward(Graph& g, const BoundIdr& p, const IdrConfig& cfg);

/// Single-head scaled dot-product attention over the L rows of M followed by
/// a shared linear readout to one scalar per row.
Var attention_logits(Graph& g, const BoundIdr& p, const IdrConfig& cfg, Var m);

Var softmax_node(Graph& g, Var z);
Var lnf_node(Graph& g, Var z);
Var head_node(Graph& g, Var z, HeadKind head);

struct ForwardVars {
    Var pred;  // (L)
    Var m;     // (L x 2L)
};

/// Full differentiable pipeline for a batch of prepared time stacks. The
/// lookup grid is input-independent, so it is built once per graph.
std::vector<ForwardVars> model_forward_batch(Graph& g, const BoundIdr& p, const IdrConfig& cfg,
                                             const std::vector<Tensor>& stacks);

struct ForwardOut {
    LabelDistribution pred;
    Tensor m;
};

/// Convenience inference on raw features. Pseudo slots are unmasked
/// (keep_prob 1), so the result depends only on params and x.
ForwardOut model_forward(const IdrModel& model, std::span<const double> x);
std::vector<ForwardOut> model_forward_many(const IdrModel& model,
                                           const std::vector<const LdlSample*>& samples);

/// Inference that resumes the pipeline from a precomputed extractor hidden
/// vector (used to evaluate spiking-extractor hybrids).
ForwardOut model_forward_from_hidden(const IdrModel& model, const Tensor& hidden);

// --- checkpoint container (versioned JSON) ---
void save_checkpoint(const IdrModel& model, const std::string& path);
IdrModel load_checkpoint(const std::string& path);

}  // namespace ldl
