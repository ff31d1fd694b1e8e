#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mtecg/metrics.hpp"
#include "mtecg/model.hpp"
#include "mtecg/signal.hpp"
#include "mtecg/targets.hpp"

namespace mtecg {

struct OptimizerConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.05;
    double base_lr = 1e-3;
    int batch_size = 256;
    double eps = 1e-8;

    void validate() const;
};

struct ScheduleConfig {
    int total_epochs = 0;
    int warmup_epochs = 0;
    int steps_per_epoch = 1; // training loops derive this from dataset/batch
    double min_lr = 0.0;

    void validate() const;
    std::int64_t warmup_steps() const;
    std::int64_t total_steps() const;
};

// Linear warmup 0 -> base_lr over the warmup steps, then cosine decay to
// min_lr; exact at the warmup boundary and the final step.
double cosine_lr(std::int64_t step, const ScheduleConfig& schedule, double base_lr);

// depth 0 = embeddings/aux token/positional, 1..L = encoder blocks,
// L+1 = final norm and classifier.
double layerwise_lr_scale(int depth_index, int n_layers, double decay);
int depth_index_for(const std::string& param_name, int n_layers);

// Norm scales, all biases, the aux token, and both positional embeddings skip
// decoupled weight decay; everything else (mask embedding included) decays.
bool weight_decay_exempt(const std::string& param_name);

struct AdamWState {
    ParameterStore m;
    ParameterStore v;
    std::int64_t step = 0; // completed optimizer steps
};

// One AdamW update over train_names. Decay is applied multiplicatively before
// the moment update; missing gradient tensors count as zero. lr_scale maps a
// parameter name to its layer-wise multiplier (null: all 1).
void adamw_step(ParameterStore& params, const ParameterStore& grads, AdamWState& state,
                const std::vector<std::string>& train_names, const OptimizerConfig& opt,
                double lr_now,
                const std::function<double(const std::string&)>& lr_scale = {});

struct EpochLog {
    int epoch = 0; // 1-based
    double lr = 0.0;
    double train_loss = 0.0;
    std::optional<double> val_loss;
    std::optional<double> val_macro_f1;
    std::optional<double> test_macro_f1; // in-memory only, not part of the CSV
};

std::string epoch_log_csv(const std::vector<EpochLog>& history);

// Serializable training state; save/load live in checkpoint.hpp.
struct Checkpoint {
    std::string stage; // "pretrain" | "finetune"
    ModelConfig model;
    TargetConfig target;
    double masking_ratio = 0.25;
    OptimizerConfig optimizer;
    ScheduleConfig schedule;
    ParameterStore params;
    AdamWState opt_state;
    int epochs_done = 0;
    std::string rng_state;
};

struct PretrainConfig {
    ModelConfig model; // droppath_rate expected 0 here
    TargetConfig target;
    double masking_ratio = 0.25;
    OptimizerConfig optimizer;                  // betas (0.9, 0.95), wd 0.05, lr 1e-3, batch 256
    ScheduleConfig schedule{1600, 40, 1, 0.0};  // steps_per_epoch is derived at run time
    std::uint64_t seed = 0;
};

struct FinetuneConfig {
    ModelConfig model; // droppath_rate/classifier as configured
    OptimizerConfig optimizer{0.9, 0.999, 0.05, 1e-3, 256, 1e-8};
    ScheduleConfig schedule{50, 5, 1, 1e-6};
    double layer_decay = 0.6;
    std::uint64_t seed = 0;

    void validate() const;
};

// Reference fine-tuning defaults, including DropPath 0.4 on the model.
FinetuneConfig default_finetune_config();

// Pre-training scope: every tensor except the classifier (head, fc_norm).
std::vector<std::string> pretrain_trainable(const ModelConfig& config);
// Fine-tuning scope: every finetune-model tensor; decoder tensors excluded.
std::vector<std::string> finetune_trainable(const ModelConfig& config);

// Masked-reconstruction training. resume continues a prior pretrain
// checkpoint exactly; on_epoch (if set) observes the state after each epoch.
Checkpoint pretrain(const Dataset& data, const PretrainConfig& cfg, const Checkpoint* resume,
                    std::vector<EpochLog>* history = nullptr,
                    const std::function<void(const Checkpoint&, const EpochLog&)>& on_epoch = {});

struct FinetuneResult {
    Checkpoint best;       // parameters of the best-validation epoch
    int best_epoch = 0;    // 1-based
    double best_val_f1 = -1.0;
    std::vector<EpochLog> history;
};

// Supervised training with per-epoch validation; selects the epoch with the
// highest validation macro F1 (first on ties). init_from: pretrain checkpoint
// to start from, or null for training from scratch. track_test fills
// EpochLog.test_macro_f1 when given.
FinetuneResult finetune(const Dataset& train, const Dataset& val, const FinetuneConfig& cfg,
                        const Checkpoint* init_from, const Dataset* track_test = nullptr);

struct EvalOutcome {
    EvalResult metrics;
    double mean_loss = 0.0;
};

// Eval-mode classification of every record at threshold 0.5.
EvalOutcome evaluate_classifier(const ParameterStore& params, const ModelConfig& config,
                                const Dataset& data);

} // namespace mtecg
