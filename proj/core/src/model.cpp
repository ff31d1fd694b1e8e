#include "mtecg/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace mtecg {

namespace {

// Binds store tensors into a graph as shared leaves, recording which ones the
// trace touched.
struct ParamBinder {
    Graph& g;
    const ParameterStore& store;
    ForwardTrace& trace;
    std::unordered_map<std::string, NodeId> bound;

    NodeId operator()(const std::string& name) {
        auto it = bound.find(name);
        if (it != bound.end()) return it->second;
        const NodeId id = g.leaf_ref(&store.at(name));
        bound.emplace(name, id);
        trace.param_names.push_back(name);
        trace.param_nodes.push_back(id);
        return id;
    }
};

NodeId linear(Graph& g, ParamBinder& P, const std::string& prefix, NodeId x) {
    return g.add_rowvec(g.matmul(x, P(prefix + ".weight")), P(prefix + ".bias"));
}

NodeId norm(Graph& g, ParamBinder& P, const std::string& prefix, NodeId x, double eps) {
    return g.layer_norm(x, P(prefix + ".weight"), P(prefix + ".bias"), eps);
}

NodeId attention(Graph& g, ParamBinder& P, const std::string& prefix, NodeId x,
                 int d_model, int n_heads) {
    const NodeId qkv = linear(g, P, prefix + ".qkv", x);
    const int dh = d_model / n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<NodeId> heads;
    heads.reserve(n_heads);
    for (int i = 0; i < n_heads; ++i) {
        const NodeId q = g.slice_cols(qkv, i * dh, dh);
        const NodeId k = g.slice_cols(qkv, d_model + i * dh, dh);
        const NodeId v = g.slice_cols(qkv, 2 * d_model + i * dh, dh);
        const NodeId att = g.softmax_rows(g.scale(g.matmul_nt(q, k), att_scale));
        heads.push_back(g.matmul(att, v));
    }
    const NodeId cat = n_heads == 1 ? heads[0] : g.concat_cols(heads);
    return linear(g, P, prefix + ".proj", cat);
}

NodeId mlp(Graph& g, ParamBinder& P, const std::string& prefix, NodeId x) {
    return linear(g, P, prefix + ".fc2", g.gelu(linear(g, P, prefix + ".fc1", x)));
}

// Residual branch with stochastic depth. The coin is tossed before the branch
// is built so a dropped branch costs nothing; rate 0 consumes no randomness.
template <typename BuildBranch>
NodeId residual(Graph& g, NodeId z, double dp_rate, bool train_mode, Rng* rng,
                BuildBranch build) {
    if (train_mode && dp_rate > 0.0) {
        if (rng == nullptr) {
            throw std::invalid_argument("droppath in train mode requires an rng");
        }
        if (rng->bernoulli(dp_rate)) return z;
        return g.add(z, g.scale(build(), 1.0 / (1.0 - dp_rate)));
    }
    return g.add(z, build());
}

NodeId transformer_block(Graph& g, ParamBinder& P, const std::string& prefix, NodeId z,
                         int d_model, int n_heads, double ln_eps, double dp_rate,
                         bool train_mode, Rng* rng) {
    z = residual(g, z, dp_rate, train_mode, rng, [&] {
        return attention(g, P, prefix + ".attn", norm(g, P, prefix + ".norm1", z, ln_eps),
                         d_model, n_heads);
    });
    z = residual(g, z, dp_rate, train_mode, rng, [&] {
        return mlp(g, P, prefix + ".mlp", norm(g, P, prefix + ".norm2", z, ln_eps));
    });
    return z;
}

double block_droppath(const ModelConfig& c, int layer) {
    if (c.droppath_rate <= 0.0) return 0.0;
    if (c.n_layers == 1) return c.droppath_rate;
    return c.droppath_rate * layer / (c.n_layers - 1);
}

void check_indices(const std::vector<int>& indices, int t_len, const char* who) {
    std::unordered_set<int> seen;
    for (int i : indices) {
        if (i < 0 || i >= t_len) {
            throw std::invalid_argument(std::string(who) + ": segment index out of range");
        }
        if (!seen.insert(i).second) {
            throw std::invalid_argument(std::string(who) + ": duplicate segment index");
        }
    }
}

// Shared encoder body: (S+1) x D tokens, auxiliary token first.
NodeId encoder_tokens(Graph& g, ParamBinder& P, const ModelConfig& c,
                      const Tensor& segments, const std::vector<int>& indices,
                      bool train_mode, Rng* rng) {
    if (segments.rows() != static_cast<int>(indices.size())) {
        throw std::invalid_argument("encode: segment count does not match index count");
    }
    if (segments.cols() != c.d_seg) {
        throw std::invalid_argument("encode: segment dimension " +
                                    std::to_string(segments.cols()) + " does not match d_seg " +
                                    std::to_string(c.d_seg));
    }
    if (segments.rows() < 1 || segments.rows() > c.t_len) {
        throw std::invalid_argument("encode: need between 1 and T segments");
    }
    check_indices(indices, c.t_len, "encode");

    std::vector<int> pos_rows(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) pos_rows[i] = indices[i] + 1;

    const NodeId segs = g.leaf(segments);
    const NodeId embedded = linear(g, P, "embed", segs);
    const NodeId seg_tokens = g.add(embedded, g.gather_rows(P("pos_embed"), pos_rows));
    const NodeId aux = g.add(P("cls_token"), g.gather_rows(P("pos_embed"), {0}));
    NodeId z = g.concat_rows({aux, seg_tokens});

    for (int l = 0; l < c.n_layers; ++l) {
        z = transformer_block(g, P, "blocks." + std::to_string(l), z, c.d_model, c.n_heads,
                              c.ln_eps, block_droppath(c, l), train_mode, rng);
    }
    return norm(g, P, "norm", z, c.ln_eps);
}

void check_plan(const MaskPlan& plan, const ModelConfig& c) {
    if (plan.t_len != c.t_len) {
        throw std::invalid_argument("decode: plan t_len does not match config");
    }
    if (static_cast<int>(plan.unmasked.size() + plan.masked.size()) != c.t_len) {
        throw std::invalid_argument("decode: plan does not cover all segments");
    }
    std::unordered_set<int> seen;
    for (const auto* list : {&plan.unmasked, &plan.masked}) {
        for (int i : *list) {
            if (i < 0 || i >= c.t_len || !seen.insert(i).second) {
                throw std::invalid_argument("decode: plan is not a partition of 0..T-1");
            }
        }
    }
}

// Decoder body over already-encoded unmasked tokens (S x D), returns the
// reconstructed masked segments (S' x d_seg).
NodeId decoder_recon(Graph& g, ParamBinder& P, const ModelConfig& c, NodeId encoded_unmasked,
                     const MaskPlan& plan) {
    const int s = static_cast<int>(plan.unmasked.size());
    const int s_prime = static_cast<int>(plan.masked.size());

    const NodeId proj = linear(g, P, "decoder.embed", encoded_unmasked); // S x D'
    NodeId tokens;
    if (s_prime == 0) {
        tokens = proj;
    } else {
        const NodeId masks = g.repeat_row(P("mask_token"), s_prime);
        tokens = g.concat_rows({proj, masks}); // T x D'
    }
    std::vector<int> order;
    order.reserve(plan.unmasked.size() + plan.masked.size());
    order.insert(order.end(), plan.unmasked.begin(), plan.unmasked.end());
    order.insert(order.end(), plan.masked.begin(), plan.masked.end());
    NodeId z = g.add(tokens, g.gather_rows(P("decoder.pos_embed"), order));

    z = transformer_block(g, P, "decoder.block", z, c.d_decoder, c.decoder_heads, c.ln_eps,
                          0.0, false, nullptr);
    z = norm(g, P, "decoder.norm", z, c.ln_eps);
    return linear(g, P, "decoder.pred", g.slice_rows(z, s, s_prime));
}

NodeId classifier_logits(Graph& g, ParamBinder& P, const ModelConfig& c, NodeId tokens,
                         int n_segments) {
    NodeId feature;
    if (c.classifier == ClassifierKind::global_pool) {
        const NodeId pooled = g.mean_rows(g.slice_rows(tokens, 1, n_segments));
        feature = norm(g, P, "fc_norm", pooled, c.ln_eps);
    } else {
        feature = g.slice_rows(tokens, 0, 1);
    }
    return linear(g, P, "head", feature);
}

} // namespace

ClassifierKind parse_classifier(const std::string& name) {
    if (name == "pool") return ClassifierKind::global_pool;
    if (name == "token") return ClassifierKind::aux_token;
    throw std::invalid_argument("unknown classifier '" + name + "' (expected pool or token)");
}

const char* classifier_name(ClassifierKind kind) {
    return kind == ClassifierKind::global_pool ? "pool" : "token";
}

int ModelConfig::mlp_hidden() const {
    return static_cast<int>(std::llround(mlp_ratio * d_model));
}

int ModelConfig::decoder_mlp_hidden() const {
    return static_cast<int>(std::llround(mlp_ratio * d_decoder));
}

void ModelConfig::validate() const {
    if (t_len < 1) throw std::invalid_argument("ModelConfig: t_len must be positive");
    if (d_seg < 1) throw std::invalid_argument("ModelConfig: d_seg must be positive");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
        throw std::invalid_argument("ModelConfig: d_model must be a positive multiple of n_heads");
    }
    if (n_layers < 1) throw std::invalid_argument("ModelConfig: n_layers must be positive");
    if (d_decoder < 1 || decoder_heads < 1 || d_decoder % decoder_heads != 0) {
        throw std::invalid_argument(
            "ModelConfig: d_decoder must be a positive multiple of decoder_heads");
    }
    if (!(mlp_ratio > 0.0) || mlp_hidden() < 1 || decoder_mlp_hidden() < 1) {
        throw std::invalid_argument("ModelConfig: mlp_ratio too small");
    }
    if (!(droppath_rate >= 0.0 && droppath_rate < 1.0)) {
        throw std::invalid_argument("ModelConfig: droppath_rate must lie in [0,1)");
    }
    if (n_labels < 1) throw std::invalid_argument("ModelConfig: n_labels must be positive");
    if (!(ln_eps > 0.0)) throw std::invalid_argument("ModelConfig: ln_eps must be positive");
}

ModelConfig variant_config(char variant) {
    ModelConfig c;
    switch (variant) {
    case 'A': c.d_model = 64;  c.n_heads = 1;  break;
    case 'M': c.d_model = 128; c.n_heads = 2;  break;
    case 'T': c.d_model = 192; c.n_heads = 3;  break;
    case 'S': c.d_model = 384; c.n_heads = 6;  break;
    case 'B': c.d_model = 768; c.n_heads = 12; break;
    default:
        throw std::invalid_argument(std::string("unknown variant '") + variant +
                                    "' (expected A, M, T, S, or B)");
    }
    return c;
}

void ParameterStore::add(const std::string& name, Tensor t) {
    if (!tensors_.emplace(name, std::move(t)).second) {
        throw std::invalid_argument("ParameterStore: duplicate tensor " + name);
    }
    names_.push_back(name);
}

Tensor& ParameterStore::at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("ParameterStore: no tensor " + name);
    return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("ParameterStore: no tensor " + name);
    return it->second;
}

std::int64_t ParameterStore::total_parameters() const {
    std::int64_t n = 0;
    for (const auto& name : names_) n += at(name).numel();
    return n;
}

bool ParameterStore::all_finite() const {
    for (const auto& name : names_) {
        if (!at(name).all_finite()) return false;
    }
    return true;
}

std::vector<std::pair<std::string, std::pair<int, int>>>
parameter_shapes(const ModelConfig& c, CountScope scope) {
    c.validate();
    std::vector<std::pair<std::string, std::pair<int, int>>> out;
    auto put = [&](const std::string& name, int r, int cols) {
        out.emplace_back(name, std::make_pair(r, cols));
    };
    auto put_block = [&](const std::string& prefix, int d, int hidden) {
        put(prefix + ".norm1.weight", 1, d);
        put(prefix + ".norm1.bias", 1, d);
        put(prefix + ".attn.qkv.weight", d, 3 * d);
        put(prefix + ".attn.qkv.bias", 1, 3 * d);
        put(prefix + ".attn.proj.weight", d, d);
        put(prefix + ".attn.proj.bias", 1, d);
        put(prefix + ".norm2.weight", 1, d);
        put(prefix + ".norm2.bias", 1, d);
        put(prefix + ".mlp.fc1.weight", d, hidden);
        put(prefix + ".mlp.fc1.bias", 1, hidden);
        put(prefix + ".mlp.fc2.weight", hidden, d);
        put(prefix + ".mlp.fc2.bias", 1, d);
    };

    put("embed.weight", c.d_seg, c.d_model);
    put("embed.bias", 1, c.d_model);
    put("cls_token", 1, c.d_model);
    put("pos_embed", c.t_len + 1, c.d_model);
    for (int l = 0; l < c.n_layers; ++l) {
        put_block("blocks." + std::to_string(l), c.d_model, c.mlp_hidden());
    }
    put("norm.weight", 1, c.d_model);
    put("norm.bias", 1, c.d_model);
    if (c.classifier == ClassifierKind::global_pool) {
        put("fc_norm.weight", 1, c.d_model);
        put("fc_norm.bias", 1, c.d_model);
    }
    put("head.weight", c.d_model, c.n_labels);
    put("head.bias", 1, c.n_labels);

    if (scope == CountScope::pretrain_model) {
        put("decoder.embed.weight", c.d_model, c.d_decoder);
        put("decoder.embed.bias", 1, c.d_decoder);
        put("mask_token", 1, c.d_decoder);
        put("decoder.pos_embed", c.t_len, c.d_decoder);
        put_block("decoder.block", c.d_decoder, c.decoder_mlp_hidden());
        put("decoder.norm.weight", 1, c.d_decoder);
        put("decoder.norm.bias", 1, c.d_decoder);
        put("decoder.pred.weight", c.d_decoder, c.d_seg);
        put("decoder.pred.bias", 1, c.d_seg);
    }
    return out;
}

std::int64_t count_parameters(const ModelConfig& config, CountScope scope) {
    std::int64_t n = 0;
    for (const auto& [name, shape] : parameter_shapes(config, scope)) {
        n += static_cast<std::int64_t>(shape.first) * shape.second;
    }
    return n;
}

ParameterStore init_parameters(const ModelConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    ParameterStore store;
    for (const auto& [name, shape] : parameter_shapes(config, CountScope::pretrain_model)) {
        Tensor t(shape.first, shape.second);
        const bool is_norm_scale = name.ends_with("norm.weight") || name.ends_with("norm1.weight") ||
                                   name.ends_with("norm2.weight");
        const bool is_bias = name.ends_with(".bias");
        const bool is_head = name == "head.weight";
        if (is_norm_scale) {
            t.fill(1.0);
        } else if (!is_bias && !is_head) {
            double* p = t.data();
            for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = rng.truncated_normal(0.02);
        }
        store.add(name, std::move(t));
    }
    return store;
}

ForwardTrace encode(const ParameterStore& params, const ModelConfig& config,
                    const Tensor& segments, const std::vector<int>& indices,
                    bool train_mode, Rng* rng) {
    config.validate();
    ForwardTrace trace;
    ParamBinder P{trace.graph, params, trace, {}};
    trace.output = encoder_tokens(trace.graph, P, config, segments, indices, train_mode, rng);
    return trace;
}

ForwardTrace decode(const ParameterStore& params, const ModelConfig& config,
                    const Tensor& encoded_unmasked, const MaskPlan& plan) {
    config.validate();
    check_plan(plan, config);
    if (encoded_unmasked.rows() != static_cast<int>(plan.unmasked.size()) ||
        encoded_unmasked.cols() != config.d_model) {
        throw std::invalid_argument("decode: encoded token shape does not match plan");
    }
    ForwardTrace trace;
    ParamBinder P{trace.graph, params, trace, {}};
    const NodeId enc = trace.graph.leaf(encoded_unmasked);
    trace.output = decoder_recon(trace.graph, P, config, enc, plan);
    return trace;
}

ForwardTrace classify_with_indices(const ParameterStore& params, const ModelConfig& config,
                                   const Tensor& segments, const std::vector<int>& indices,
                                   bool train_mode, Rng* rng) {
    config.validate();
    if (segments.rows() != config.t_len) {
        throw std::invalid_argument("classify: expected all " + std::to_string(config.t_len) +
                                    " segments, got " + std::to_string(segments.rows()));
    }
    ForwardTrace trace;
    ParamBinder P{trace.graph, params, trace, {}};
    const NodeId tokens =
        encoder_tokens(trace.graph, P, config, segments, indices, train_mode, rng);
    trace.output = classifier_logits(trace.graph, P, config, tokens, config.t_len);
    return trace;
}

ForwardTrace forward_classify(const ParameterStore& params, const ModelConfig& config,
                              const SegmentSequence& seq, bool train_mode, Rng* rng) {
    std::vector<int> indices(static_cast<std::size_t>(seq.t_len));
    for (int i = 0; i < seq.t_len; ++i) indices[static_cast<std::size_t>(i)] = i;
    return classify_with_indices(params, config, seq.segments, indices, train_mode, rng);
}

ForwardTrace pretrain_forward(const ParameterStore& params, const ModelConfig& config,
                              const SegmentSequence& seq, const MaskPlan& plan,
                              const TargetConfig& target, bool train_mode, Rng* rng) {
    config.validate();
    check_plan(plan, config);
    if (seq.t_len != config.t_len || seq.segments.rows() != config.t_len) {
        throw std::invalid_argument("pretrain_forward: sequence length does not match config");
    }
    ForwardTrace trace;
    if (plan.masked.empty()) {
        trace.output = trace.graph.leaf(Tensor(1, 1, 0.0));
        return trace;
    }

    Graph& g = trace.graph;
    ParamBinder P{g, params, trace, {}};

    Tensor unmasked_segs(static_cast<int>(plan.unmasked.size()), seq.d_seg());
    for (std::size_t i = 0; i < plan.unmasked.size(); ++i) {
        const double* src = seq.segments.row_ptr(plan.unmasked[i]);
        double* dst = unmasked_segs.row_ptr(static_cast<int>(i));
        for (int j = 0; j < seq.d_seg(); ++j) dst[j] = src[j];
    }
    Tensor masked_segs(static_cast<int>(plan.masked.size()), seq.d_seg());
    for (std::size_t i = 0; i < plan.masked.size(); ++i) {
        const double* src = seq.segments.row_ptr(plan.masked[i]);
        double* dst = masked_segs.row_ptr(static_cast<int>(i));
        for (int j = 0; j < seq.d_seg(); ++j) dst[j] = src[j];
    }

    const NodeId tokens = encoder_tokens(g, P, config, unmasked_segs, plan.unmasked,
                                         train_mode, rng);
    const NodeId enc_segs = g.slice_rows(tokens, 1, static_cast<int>(plan.unmasked.size()));
    const NodeId recon = decoder_recon(g, P, config, enc_segs, plan);
    const NodeId diff = g.sub_const(recon, apply_target(masked_segs, target));
    trace.output = g.scale(g.sum_squares(diff), 1.0 / static_cast<double>(plan.masked.size()));
    return trace;
}

ForwardTrace finetune_forward(const ParameterStore& params, const ModelConfig& config,
                              const SegmentSequence& seq, const Tensor& labels,
                              bool train_mode, Rng* rng) {
    if (labels.rows() != 1 || labels.cols() != config.n_labels) {
        throw std::invalid_argument("finetune_forward: labels must be 1 x n_labels");
    }
    ForwardTrace trace = forward_classify(params, config, seq, train_mode, rng);
    trace.output = trace.graph.bce_with_logits_mean(trace.output, labels);
    return trace;
}

ParameterStore backward(ForwardTrace& trace, const Tensor& upstream) {
    trace.graph.backward(trace.output, upstream);
    ParameterStore grads;
    for (std::size_t i = 0; i < trace.param_names.size(); ++i) {
        grads.add(trace.param_names[i], trace.graph.grad(trace.param_nodes[i]));
    }
    return grads;
}

void backward_accumulate(ForwardTrace& trace, const Tensor& upstream, ParameterStore& into) {
    trace.graph.backward(trace.output, upstream);
    for (std::size_t i = 0; i < trace.param_names.size(); ++i) {
        const Tensor& g = trace.graph.grad(trace.param_nodes[i]);
        if (!into.has(trace.param_names[i])) {
            into.add(trace.param_names[i], g);
            continue;
        }
        Tensor& acc = into.at(trace.param_names[i]);
        if (!acc.same_shape(g)) {
            throw std::invalid_argument("backward_accumulate: shape drift on " +
                                        trace.param_names[i]);
        }
        double* p = acc.data();
        const double* q = g.data();
        for (std::int64_t j = 0; j < g.numel(); ++j) p[j] += q[j];
    }
}

} // namespace mtecg
