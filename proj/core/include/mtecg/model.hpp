#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mtecg/graph.hpp"
#include "mtecg/rng.hpp"
#include "mtecg/segmentation.hpp"
#include "mtecg/targets.hpp"
#include "mtecg/tensor.hpp"

namespace mtecg {

enum class ClassifierKind {
    global_pool, // mean over segment tokens, layer norm, linear head
    aux_token,   // encoded auxiliary token through the linear head
};

// Accepts "pool" | "token".
ClassifierKind parse_classifier(const std::string& name);
const char* classifier_name(ClassifierKind kind);

struct ModelConfig {
    int t_len = 200;
    int d_seg = 300;
    int d_model = 192;
    int n_heads = 3;
    int n_layers = 12;
    int d_decoder = 128;
    int decoder_heads = 4;
    double mlp_ratio = 4.0;
    double droppath_rate = 0.0; // fine-tuning regularizer; keep 0 for pre-training
    int n_labels = 28;
    ClassifierKind classifier = ClassifierKind::global_pool;
    double ln_eps = 1e-6;

    int mlp_hidden() const;
    int decoder_mlp_hidden() const;
    void validate() const;
};

// Named sizes A/M/T/S/B: width 64/128/192/384/768, heads sized for a 64-wide
// head dim, 12 blocks, shared lightweight decoder (128 wide, 4 heads).
ModelConfig variant_config(char variant);

enum class CountScope {
    finetune_model, // encoder, embeddings, aux token, classifier
    pretrain_model, // finetune_model plus all decoder-side tensors
};

// Ordered named tensor collection; also reused for gradients and optimizer
// moments. Order is creation order and defines serialization layout.
class ParameterStore {
public:
    void add(const std::string& name, Tensor t);
    bool has(const std::string& name) const { return tensors_.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    const std::vector<std::string>& names() const { return names_; }
    std::int64_t total_parameters() const;
    bool all_finite() const;

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, Tensor> tensors_;
};

// Store layout for a scope as (name, (rows, cols)) in creation order.
std::vector<std::pair<std::string, std::pair<int, int>>>
parameter_shapes(const ModelConfig& config, CountScope scope);

std::int64_t count_parameters(const ModelConfig& config, CountScope scope);

// Full (pretrain-scope) store. Truncated normal (std 0.02) for projection
// weights and embeddings, ones for norm scales, zeros for every bias and the
// classifier head. Only the truncated-normal tensors consume rng draws.
ParameterStore init_parameters(const ModelConfig& config, std::uint64_t seed);

// One recorded forward pass. Holds leaf references into the ParameterStore it
// was built from, so the store must outlive the trace. backward() may run
// once per trace.
struct ForwardTrace {
    Graph graph;
    NodeId output = -1;
    std::vector<std::string> param_names;
    std::vector<NodeId> param_nodes;

    const Tensor& value() const { return graph.value(output); }
};

// Encoder over a subset of segments: output row 0 is the encoded auxiliary
// token, row 1+s the encoded segment indices[s]. Indices must be distinct and
// in range but may arrive in any order; outputs follow the supplied order.
// rng is consumed only when train_mode is set and droppath_rate > 0.
ForwardTrace encode(const ParameterStore& params, const ModelConfig& config,
                    const Tensor& segments, const std::vector<int>& indices,
                    bool train_mode, Rng* rng);

// Lightweight decoder: projected encoded tokens for plan.unmasked followed by
// mask embeddings for plan.masked, positions attached by original index, one
// block, final norm, output projection of the masked rows (S' x d_seg).
ForwardTrace decode(const ParameterStore& params, const ModelConfig& config,
                    const Tensor& encoded_unmasked, const MaskPlan& plan);

// Classifier logits (1 x C) over the full segment sequence.
ForwardTrace forward_classify(const ParameterStore& params, const ModelConfig& config,
                              const SegmentSequence& seq, bool train_mode, Rng* rng);

// classification with caller-supplied (segments, indices) pairing; used by the
// permutation-equivariance checks.
ForwardTrace classify_with_indices(const ParameterStore& params, const ModelConfig& config,
                                   const Tensor& segments, const std::vector<int>& indices,
                                   bool train_mode, Rng* rng);

// Masked-reconstruction loss (1 x 1): sum of squared errors between decoded
// masked segments and target-transformed originals, divided by the masked
// count. A plan with no masked segments yields a constant-0 loss and binds no
// parameters.
ForwardTrace pretrain_forward(const ParameterStore& params, const ModelConfig& config,
                              const SegmentSequence& seq, const MaskPlan& plan,
                              const TargetConfig& target, bool train_mode, Rng* rng);

// Mean binary cross entropy with logits over the C labels (1 x 1).
ForwardTrace finetune_forward(const ParameterStore& params, const ModelConfig& config,
                              const SegmentSequence& seq, const Tensor& labels,
                              bool train_mode, Rng* rng);

// Reverse-mode gradients for every parameter the trace touched; tensors the
// output does not reach get zero gradients of their own shape.
ParameterStore backward(ForwardTrace& trace, const Tensor& upstream);

// As backward(), but sums into an accumulator (creating entries as needed).
void backward_accumulate(ForwardTrace& trace, const Tensor& upstream, ParameterStore& into);

} // namespace mtecg
