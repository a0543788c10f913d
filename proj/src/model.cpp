#include "ldl/model.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace ldl {

std::string head_name(HeadKind h) { return h == HeadKind::lnf ? "lnf" : "softmax"; }

HeadKind head_from_name(const std::string& s) {
    if (s == "lnf") return HeadKind::lnf;
    if (s == "softmax") return HeadKind::softmax;
    throw LdlError("unknown head '" + s + "' (expected lnf or softmax)");
}

void IdrConfig::validate() const {
    if (d_in < 1) throw LdlError("config: d_in must be >= 1");
    if (hidden < 1) throw LdlError("config: hidden must be >= 1");
    if (n_linear != 8) throw LdlError("config: the extractor is fixed at 8 linear units");
    if (L < 2) throw LdlError("config: L must be >= 2");
    if (H < 2 || W < 2) throw LdlError("config: feature map sides must be >= 2");
    if (T < 1) throw LdlError("config: T must be >= 1");
    if (pseudo_keep_prob <= 0.0 || pseudo_keep_prob > 1.0)
        throw LdlError("config: pseudo_keep_prob must be in (0, 1]");
}

int default_hidden_for(int d_in) { return d_in <= 64 ? 64 : 1024; }

Tensor& ParamStore::at(const std::string& key) {
    for (auto& [k, t] : entries)
        if (k == key) return t;
    throw LdlError("unknown parameter key: " + key);
}

const Tensor& ParamStore::at(const std::string& key) const {
    for (const auto& [k, t] : entries)
        if (k == key) return t;
    throw LdlError("unknown parameter key: " + key);
}

bool ParamStore::has(const std::string& key) const {
    for (const auto& [k, t] : entries)
        if (k == key) return true;
    return false;
}

void ParamStore::add(const std::string& key, Tensor t) {
    if (has(key)) throw LdlError("duplicate parameter key: " + key);
    entries.emplace_back(key, std::move(t));
}

std::vector<int> gcn_widths(int L) { return {64, 128, 256, 4 * L}; }

Tensor normalized_adjacency(int L) {
    // fully connected + self loops: A + I is all-ones, D = L*I
    return Tensor::full({L, L}, 1.0 / static_cast<double>(L));
}

std::vector<std::vector<int>> extractor_sources() {
    // unit 0 is the stem; junctions close after units 2, 4, 6
    return {{-1}, {0}, {1}, {2, 0}, {3}, {4, 2, 0}, {5}, {6, 4, 2, 0}};
}

namespace {
Tensor kaiming(int fan_in, int fan_out, Rng& rng) {
    Tensor w = Tensor::zeros({fan_in, fan_out});
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : w.data) v = rng.normal() * std_dev;
    return w;
}
}  // namespace

IdrModel IdrModel::init(const IdrConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    IdrModel m;
    m.cfg = cfg;
    Rng rng(substream(seed, "init"));

    for (int l = 0; l < cfg.n_linear; ++l) {
        const int fan_in = l == 0 ? cfg.d_in : cfg.hidden;
        m.params.add("extractor.linear" + std::to_string(l) + ".w", kaiming(fan_in, cfg.hidden, rng));
        // small positive bias: an input that silences a whole layer must not
        // zero out the rest of the trunk
        m.params.add("extractor.linear" + std::to_string(l) + ".b",
                     Tensor::full({cfg.hidden}, 0.01));
    }
    const int map_size = cfg.L * cfg.H * cfg.W;
    // damped output projection: keeps the sampled label-distribution matrix
    // near the scale of its Gaussian prior (mean in [0,1], variance 0.5) at
    // init; the full-gain trunk would start the variance term orders of
    // magnitude off
    Tensor tw = kaiming(cfg.hidden, map_size, rng);
    for (double& v : tw.data) v *= 0.05;
    m.params.add("transform.w", std::move(tw));
    // jittered map bias keeps the lookup targets non-constant even when a
    // sample carries no signal through the trunk
    Tensor tb = Tensor::zeros({map_size});
    for (double& v : tb.data) v = rng.normal() * 0.01;
    m.params.add("transform.b", std::move(tb));

    Tensor coords = Tensor::zeros({cfg.L, 64});
    for (double& v : coords.data) v = rng.normal();
    m.params.add("coord.features", std::move(coords));

    int in_w = 64;
    const auto widths = gcn_widths(cfg.L);
    for (std::size_t l = 0; l < widths.size(); ++l) {
        m.params.add("gcn.layer" + std::to_string(l) + ".w", kaiming(in_w, widths[l], rng));
        in_w = widths[l];
    }

    const int tok = 2 * cfg.L;
    m.params.add("attn.wq", kaiming(tok, tok, rng));
    m.params.add("attn.wk", kaiming(tok, tok, rng));
    m.params.add("attn.wv", kaiming(tok, tok, rng));
    m.params.add("attn.out.w", kaiming(tok, 1, rng));
    m.params.add("attn.out.b", Tensor::zeros({1}));
    return m;
}

Tensor stack_time(std::span<const double> x, int T, const AugmentConfig& cfg, Rng& rng) {
    if (T < 1) throw LdlError("stack_time: T must be >= 1");
    const int d = static_cast<int>(x.size());
    Tensor out = Tensor::zeros({T, d});
    for (int j = 0; j < d; ++j) out.at(0, j) = x[j];
    for (int t = 1; t < T; ++t)
        for (int j = 0; j < d; ++j)
            out.at(t, j) = rng.bernoulli(cfg.keep_prob) ? x[j] : 0.0;
    return out;
}

BoundIdr bind(Graph& g, const IdrModel& model, bool trainable) {
    auto leaf = [&](const std::string& key, bool grad) {
        const Tensor& t = model.params.at(key);
        return grad ? g.param(t) : g.constant(t);
    };
    BoundIdr b;
    for (int l = 0; l < model.cfg.n_linear; ++l) {
        b.extractor_w.push_back(leaf("extractor.linear" + std::to_string(l) + ".w", trainable));
        b.extractor_b.push_back(leaf("extractor.linear" + std::to_string(l) + ".b", trainable));
    }
    b.transform_w = leaf("transform.w", trainable);
    b.transform_b = leaf("transform.b", trainable);
    b.coord_features = leaf("coord.features", trainable && model.cfg.learn_coords);
    for (std::size_t l = 0; l < gcn_widths(model.cfg.L).size(); ++l)
        b.gcn_w.push_back(leaf("gcn.layer" + std::to_string(l) + ".w", trainable));
    b.attn_wq = leaf("attn.wq", trainable);
    b.attn_wk = leaf("attn.wk", trainable);
    b.attn_wv = leaf("attn.wv", trainable);
    b.attn_out_w = leaf("attn.out.w", trainable);
    b.attn_out_b = leaf("attn.out.b", trainable);
    return b;
}

namespace {
/// Residual trunk shared by the single and batched extractor paths: 8 linear
/// units with ReLU, junction sums re-entering every second hidden unit.
Var extractor_trunk(Graph& g, const BoundIdr& p, Var x_rows) {
    Var a0 = g.relu(g.broadcast_add(g.matmul(x_rows, p.extractor_w[0]), p.extractor_b[0]));
    Var a1 = g.relu(g.broadcast_add(g.matmul(a0, p.extractor_w[1]), p.extractor_b[1]));
    Var a2 = g.relu(g.broadcast_add(g.matmul(a1, p.extractor_w[2]), p.extractor_b[2]));
    Var j1 = g.add(a2, a0);
    Var a3 = g.relu(g.broadcast_add(g.matmul(j1, p.extractor_w[3]), p.extractor_b[3]));
    Var a4 = g.relu(g.broadcast_add(g.matmul(a3, p.extractor_w[4]), p.extractor_b[4]));
    Var j2 = g.add(a4, j1);
    Var a5 = g.relu(g.broadcast_add(g.matmul(j2, p.extractor_w[5]), p.extractor_b[5]));
    Var a6 = g.relu(g.broadcast_add(g.matmul(a5, p.extractor_w[6]), p.extractor_b[6]));
    Var j3 = g.add(a6, j2);
    return g.relu(g.broadcast_add(g.matmul(j3, p.extractor_w[7]), p.extractor_b[7]));
}
}  // namespace

std::vector<Var> extract_features_batch(Graph& g, const BoundIdr& p, const IdrConfig& cfg,
                                        const std::vector<Tensor>& stacks) {
    if (stacks.empty()) throw LdlError("extract_features: empty batch");
    const int B = static_cast<int>(stacks.size());
    Tensor all = Tensor::zeros({B * cfg.T, cfg.d_in});
    for (int i = 0; i < B; ++i) {
        const Tensor& s = stacks[i];
        if (s.rank() != 2 || s.rows() != cfg.T || s.cols() != cfg.d_in)
            throw ShapeError("extract_features", "stack " + shape_str(s.shape) + " vs (T,d) = (" +
                                                     std::to_string(cfg.T) + "," +
                                                     std::to_string(cfg.d_in) + ")");
        std::copy(s.data.begin(), s.data.end(),
                  all.data.begin() + static_cast<std::ptrdiff_t>(i) * cfg.T * cfg.d_in);
    }
    Var trunk_out = extractor_trunk(g, p, g.constant(std::move(all)));  // (B*T, hidden)
    std::vector<Var> means;
    means.reserve(B);
    for (int i = 0; i < B; ++i) {
        Var rows = g.slice_rows(trunk_out, i * cfg.T, (i + 1) * cfg.T);
        means.push_back(g.reshape(g.mean_axis(rows, 0), {1, cfg.hidden}));
    }
    Var stacked = g.concat_rows(means);                                            // (B, hidden)
    Var maps = g.broadcast_add(g.matmul(stacked, p.transform_w), p.transform_b);   // (B, L*H*W)
    std::vector<Var> out;
    out.reserve(B);
    for (int i = 0; i < B; ++i)
        out.push_back(g.reshape(g.slice_rows(maps, i, i + 1), {cfg.L, cfg.H, cfg.W}));
    return out;
}

Var extract_features(Graph& g, const BoundIdr& p, const IdrConfig& cfg, Var x_stack) {
    const Tensor& s = x_stack.value();
    if (s.rank() != 2 || s.rows() != cfg.T || s.cols() != cfg.d_in)
        throw ShapeError("extract_features", "stack " + shape_str(s.shape) + " vs (T,d) = (" +
                                                 std::to_string(cfg.T) + "," +
                                                 std::to_string(cfg.d_in) + ")");
    Var trunk_out = extractor_trunk(g, p, x_stack);
    Var mean = g.reshape(g.mean_axis(trunk_out, 0), {1, cfg.hidden});
    Var map = g.broadcast_add(g.matmul(mean, p.transform_w), p.transform_b);
    return g.reshape(map, {cfg.L, cfg.H, cfg.W});
}

Var gcn_forward(Graph& g, const BoundIdr& p, const IdrConfig& cfg) {
    Var a_hat = g.constant(normalized_adjacency(cfg.L));
    Var x = p.coord_features;
    for (const Var& w : p.gcn_w) x = g.relu(g.matmul(g.matmul(a_hat, x), w));
    // squash into the sampling range; each node's 4L outputs become 2L points
    return g.reshape(g.tanh(x), {cfg.L, 2 * cfg.L, 2});
}

namespace {
Var softmax_rows(Graph& g, Var s) {
    Var m = g.max_axis1(s);
    Var e = g.exp(g.rowwise_sub(s, m));
    return g.rowwise_div(e, g.sum_axis(e, 1));
}
}  // namespace

Var attention_logits(Graph& g, const BoundIdr& p, const IdrConfig& cfg, Var m) {
    const int tok = 2 * cfg.L;
    const Tensor& mv = m.value();
    if (mv.rank() != 2 || mv.rows() != cfg.L || mv.cols() != tok)
        throw ShapeError("attention", "matrix " + shape_str(mv.shape) + " vs (L,2L) = (" +
                                          std::to_string(cfg.L) + "," + std::to_string(tok) + ")");
    Var q = g.matmul(m, p.attn_wq);
    Var k = g.matmul(m, p.attn_wk);
    Var v = g.matmul(m, p.attn_wv);
    Var scores = g.scalar_mul(g.matmul(q, g.transpose(k)), 1.0 / std::sqrt(static_cast<double>(tok)));
    Var o = g.matmul(softmax_rows(g, scores), v);
    Var logits = g.add_scalar(g.matmul(o, p.attn_out_w), p.attn_out_b);
    return g.reshape(logits, {cfg.L});
}

Var softmax_node(Graph& g, Var z) {
    Var m = g.max_all(z);
    Var e = g.exp(g.add_scalar(z, g.scalar_mul(m, -1.0)));
    return g.div_scalar(e, g.sum_all(e));
}

Var lnf_node(Graph& g, Var z) {
    Var shifted = g.add_scalar(z, g.abs(g.min_all(z)));
    // the plain head rejects the degenerate all-equal/non-positive input;
    // inside a training graph the guard keeps the loss finite so the next
    // update can move off the tie
    return g.div_scalar(shifted, g.clamp_min(g.sum_all(shifted), 1e-12));
}

Var head_node(Graph& g, Var z, HeadKind head) {
    return head == HeadKind::lnf ? lnf_node(g, z) : softmax_node(g, z);
}

std::vector<ForwardVars> model_forward_batch(Graph& g, const BoundIdr& p, const IdrConfig& cfg,
                                             const std::vector<Tensor>& stacks) {
    Var grid = gcn_forward(g, p, cfg);
    auto maps = extract_features_batch(g, p, cfg, stacks);
    std::vector<ForwardVars> out;
    out.reserve(maps.size());
    for (const Var& f : maps) {
        Var m = g.grid_sample(f, grid);
        Var logits = attention_logits(g, p, cfg, m);
        out.push_back({head_node(g, logits, cfg.head), m});
    }
    return out;
}

namespace {
ForwardOut run_single(const IdrModel& model, const Tensor& stack) {
    Graph g;
    BoundIdr p = bind(g, model, false);
    auto res = model_forward_batch(g, p, model.cfg, {stack});
    ForwardOut out;
    out.pred.values = res[0].pred.value().data;
    out.m = res[0].m.value();
    return out;
}
}  // namespace

ForwardOut model_forward(const IdrModel& model, std::span<const double> x) {
    if (static_cast<int>(x.size()) != model.cfg.d_in)
        throw ShapeError("model_forward", "feature length " + std::to_string(x.size()) + " vs d_in " +
                                              std::to_string(model.cfg.d_in));
    AugmentConfig clean;
    clean.keep_prob = 1.0;
    Rng rng(0);
    return run_single(model, stack_time(x, model.cfg.T, clean, rng));
}

std::vector<ForwardOut> model_forward_many(const IdrModel& model,
                                           const std::vector<const LdlSample*>& samples) {
    std::vector<ForwardOut> outs;
    outs.reserve(samples.size());
    AugmentConfig clean;
    clean.keep_prob = 1.0;
    Rng rng(0);
    constexpr std::size_t kChunk = 64;
    for (std::size_t base = 0; base < samples.size(); base += kChunk) {
        const std::size_t end = std::min(base + kChunk, samples.size());
        std::vector<Tensor> stacks;
        stacks.reserve(end - base);
        for (std::size_t i = base; i < end; ++i)
            stacks.push_back(stack_time(samples[i]->features, model.cfg.T, clean, rng));
        Graph g;
        BoundIdr p = bind(g, model, false);
        auto res = model_forward_batch(g, p, model.cfg, stacks);
        for (auto& r : res) {
            ForwardOut out;
            out.pred.values = r.pred.value().data;
            out.m = r.m.value();
            outs.push_back(std::move(out));
        }
    }
    return outs;
}

ForwardOut model_forward_from_hidden(const IdrModel& model, const Tensor& hidden) {
    if (hidden.numel() != model.cfg.hidden)
        throw ShapeError("model_forward_from_hidden", "hidden length " +
                                                          std::to_string(hidden.numel()) + " vs " +
                                                          std::to_string(model.cfg.hidden));
    Graph g;
    BoundIdr p = bind(g, model, false);
    const IdrConfig& cfg = model.cfg;
    Var grid = gcn_forward(g, p, cfg);
    Var h = g.constant(Tensor({1, cfg.hidden}, hidden.data));
    Var map = g.reshape(g.broadcast_add(g.matmul(h, p.transform_w), p.transform_b),
                        {cfg.L, cfg.H, cfg.W});
    Var m = g.grid_sample(map, grid);
    Var logits = attention_logits(g, p, cfg, m);
    Var pred = head_node(g, logits, cfg.head);
    ForwardOut out;
    out.pred.values = pred.value().data;
    out.m = m.value();
    return out;
}

void save_checkpoint(const IdrModel& model, const std::string& path) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["kind"] = "idr-checkpoint";
    j["config"] = {{"d_in", model.cfg.d_in},       {"hidden", model.cfg.hidden},
                   {"n_linear", model.cfg.n_linear}, {"L", model.cfg.L},
                   {"H", model.cfg.H},             {"W", model.cfg.W},
                   {"T", model.cfg.T},             {"head", head_name(model.cfg.head)},
                   {"learn_coords", model.cfg.learn_coords},
                   {"pseudo_keep_prob", model.cfg.pseudo_keep_prob}};
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [key, t] : model.params.entries)
        params[key] = {{"shape", t.shape}, {"data", t.data}};
    j["params"] = std::move(params);
    std::ofstream out(path);
    if (!out) throw CheckpointError("cannot write checkpoint: " + path);
    out << j.dump() << "\n";
}

IdrModel load_checkpoint(const std::string& path) {
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
    if (j.value("kind", "") != "idr-checkpoint")
        throw CheckpointError("not an idr checkpoint: " + path);
    IdrConfig cfg;
    const auto& c = j.at("config");
    cfg.d_in = c.at("d_in");
    cfg.hidden = c.at("hidden");
    cfg.n_linear = c.at("n_linear");
    cfg.L = c.at("L");
    cfg.H = c.at("H");
    cfg.W = c.at("W");
    cfg.T = c.at("T");
    cfg.head = head_from_name(c.at("head"));
    cfg.learn_coords = c.at("learn_coords");
    cfg.pseudo_keep_prob = c.at("pseudo_keep_prob");
    IdrModel model = IdrModel::init(cfg, 0);
    for (auto& [key, t] : model.params.entries) {
        if (!j.at("params").contains(key))
            throw CheckpointError("checkpoint missing parameter " + key);
        const auto& pj = j.at("params").at(key);
        std::vector<int> shape = pj.at("shape").get<std::vector<int>>();
        std::vector<double> data = pj.at("data").get<std::vector<double>>();
        if (shape != t.shape)
            throw CheckpointError("checkpoint parameter " + key + " has shape " + shape_str(shape) +
                                  ", expected " + shape_str(t.shape));
        t.data = std::move(data);
        if (!t.all_finite())
            throw CheckpointError("checkpoint parameter " + key + " contains non-finite values");
    }
    return model;
}

}  // namespace ldl
