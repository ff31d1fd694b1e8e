#include "mtecg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "mtecg/segmentation.hpp"

namespace mtecg {

namespace {

Tensor labels_row(const EcgRecord& rec) {
    Tensor t(1, static_cast<int>(rec.labels.size()));
    for (std::size_t j = 0; j < rec.labels.size(); ++j) t(0, j) = rec.labels[j];
    return t;
}

void check_geometry(const Dataset& data, const ModelConfig& model, const char* who) {
    if (data.records.empty()) throw std::invalid_argument(std::string(who) + ": empty dataset");
    const auto& r = data.records[0];
    if (r.q_samples % model.t_len != 0) {
        throw std::invalid_argument(std::string(who) + ": Q=" + std::to_string(r.q_samples) +
                                    " not divisible by T=" + std::to_string(model.t_len));
    }
    if (r.k_leads * (r.q_samples / model.t_len) != model.d_seg) {
        throw std::invalid_argument(std::string(who) + ": dataset K*Q/T = " +
                                    std::to_string(r.k_leads * (r.q_samples / model.t_len)) +
                                    " does not match configured d_seg " +
                                    std::to_string(model.d_seg));
    }
}

void check_labels(const Dataset& data, const ModelConfig& model, const char* who) {
    if (data.n_labels() != model.n_labels) {
        throw std::invalid_argument(std::string(who) + ": dataset has " +
                                    std::to_string(data.n_labels()) + " labels, model head has " +
                                    std::to_string(model.n_labels));
    }
}

std::vector<int> shuffled_order(int n, Rng& rng) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1));
        std::swap(order[i], order[j]);
    }
    return order;
}

void zero_moments(AdamWState& state, const std::vector<std::string>& names,
                  const ParameterStore& params) {
    for (const auto& name : names) {
        const Tensor& p = params.at(name);
        state.m.add(name, Tensor(p.rows(), p.cols()));
        state.v.add(name, Tensor(p.rows(), p.cols()));
    }
}

void require_same_model(const ModelConfig& a, const ModelConfig& b, const char* who) {
    const bool same = a.t_len == b.t_len && a.d_seg == b.d_seg && a.d_model == b.d_model &&
                      a.n_heads == b.n_heads && a.n_layers == b.n_layers &&
                      a.d_decoder == b.d_decoder && a.decoder_heads == b.decoder_heads &&
                      a.mlp_ratio == b.mlp_ratio && a.droppath_rate == b.droppath_rate &&
                      a.n_labels == b.n_labels && a.classifier == b.classifier &&
                      a.ln_eps == b.ln_eps;
    if (!same) {
        throw std::invalid_argument(std::string(who) + ": model config does not match checkpoint");
    }
}

} // namespace

void OptimizerConfig::validate() const {
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("OptimizerConfig: betas must lie in (0,1)");
    }
    if (weight_decay < 0.0) throw std::invalid_argument("OptimizerConfig: negative weight decay");
    if (!(base_lr > 0.0)) throw std::invalid_argument("OptimizerConfig: base_lr must be positive");
    if (batch_size < 1) throw std::invalid_argument("OptimizerConfig: batch_size must be positive");
    if (!(eps > 0.0)) throw std::invalid_argument("OptimizerConfig: eps must be positive");
}

void ScheduleConfig::validate() const {
    if (total_epochs < 0 || warmup_epochs < 0) {
        throw std::invalid_argument("ScheduleConfig: negative epoch count");
    }
    if (warmup_epochs > total_epochs) {
        throw std::invalid_argument("ScheduleConfig: warmup exceeds total epochs");
    }
    if (steps_per_epoch < 1) {
        throw std::invalid_argument("ScheduleConfig: steps_per_epoch must be positive");
    }
    if (min_lr < 0.0) throw std::invalid_argument("ScheduleConfig: negative min_lr");
}

std::int64_t ScheduleConfig::warmup_steps() const {
    return static_cast<std::int64_t>(warmup_epochs) * steps_per_epoch;
}

std::int64_t ScheduleConfig::total_steps() const {
    return static_cast<std::int64_t>(total_epochs) * steps_per_epoch;
}

double cosine_lr(std::int64_t step, const ScheduleConfig& schedule, double base_lr) {
    schedule.validate();
    const std::int64_t warm = schedule.warmup_steps();
    const std::int64_t total = schedule.total_steps();
    if (step < 0 || step > total) {
        throw std::invalid_argument("cosine_lr: step " + std::to_string(step) +
                                    " outside [0, " + std::to_string(total) + "]");
    }
    if (step < warm) {
        return base_lr * static_cast<double>(step) / static_cast<double>(warm);
    }
    if (step == warm || total == warm) return base_lr;
    if (step == total) return schedule.min_lr;
    const double progress = static_cast<double>(step - warm) / static_cast<double>(total - warm);
    return schedule.min_lr +
           0.5 * (base_lr - schedule.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

double layerwise_lr_scale(int depth_index, int n_layers, double decay) {
    if (depth_index < 0 || depth_index > n_layers + 1) {
        throw std::invalid_argument("layerwise_lr_scale: depth index out of range");
    }
    if (!(decay > 0.0 && decay <= 1.0)) {
        throw std::invalid_argument("layerwise_lr_scale: decay must lie in (0,1]");
    }
    return std::pow(decay, n_layers + 1 - depth_index);
}

int depth_index_for(const std::string& name, int n_layers) {
    if (name.rfind("blocks.", 0) == 0) {
        const std::size_t dot = name.find('.', 7);
        const int layer = std::stoi(name.substr(7, dot - 7));
        if (layer < 0 || layer >= n_layers) {
            throw std::invalid_argument("depth_index_for: block index out of range in " + name);
        }
        return layer + 1;
    }
    if (name.rfind("embed.", 0) == 0 || name == "cls_token" || name == "pos_embed") return 0;
    if (name.rfind("norm.", 0) == 0 || name.rfind("fc_norm.", 0) == 0 ||
        name.rfind("head.", 0) == 0) {
        return n_layers + 1;
    }
    throw std::invalid_argument("depth_index_for: " + name + " is not a fine-tune parameter");
}

bool weight_decay_exempt(const std::string& name) {
    if (name.ends_with(".bias")) return true;
    if (name.ends_with("norm.weight") || name.ends_with("norm1.weight") ||
        name.ends_with("norm2.weight")) {
        return true;
    }
    return name == "cls_token" || name == "pos_embed" || name == "decoder.pos_embed";
}

void adamw_step(ParameterStore& params, const ParameterStore& grads, AdamWState& state,
                const std::vector<std::string>& train_names, const OptimizerConfig& opt,
                double lr_now,
                const std::function<double(const std::string&)>& lr_scale) {
    opt.validate();
    if (!(lr_now >= 0.0)) throw std::invalid_argument("adamw_step: negative learning rate");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));

    for (const auto& name : train_names) {
        Tensor& p = params.at(name);
        Tensor& m = state.m.at(name);
        Tensor& v = state.v.at(name);
        const Tensor* g = grads.has(name) ? &grads.at(name) : nullptr;
        if (g != nullptr) {
            if (!g->same_shape(p)) {
                throw std::invalid_argument("adamw_step: gradient shape mismatch on " + name);
            }
            if (!g->all_finite()) {
                throw std::runtime_error("adamw_step: non-finite gradient in " + name +
                                         " at step " + std::to_string(state.step));
            }
        }
        const double scale = lr_scale ? lr_scale(name) : 1.0;
        const double lr = lr_now * scale;
        if (opt.weight_decay > 0.0 && !weight_decay_exempt(name)) {
            const double shrink = 1.0 - lr * opt.weight_decay;
            double* pp = p.data();
            for (std::int64_t i = 0; i < p.numel(); ++i) pp[i] *= shrink;
        }
        double* pp = p.data();
        double* mp = m.data();
        double* vp = v.data();
        const double* gp = g ? g->data() : nullptr;
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const double gi = gp ? gp[i] : 0.0;
            mp[i] = opt.beta1 * mp[i] + (1.0 - opt.beta1) * gi;
            vp[i] = opt.beta2 * vp[i] + (1.0 - opt.beta2) * gi * gi;
            pp[i] -= lr * (mp[i] / bc1) / (std::sqrt(vp[i] / bc2) + opt.eps);
        }
    }
}

std::string epoch_log_csv(const std::vector<EpochLog>& history) {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,lr,train_loss,val_loss,val_macro_f1\n";
    for (const auto& e : history) {
        os << e.epoch << ',' << e.lr << ',' << e.train_loss << ',';
        if (e.val_loss) os << *e.val_loss;
        os << ',';
        if (e.val_macro_f1) os << *e.val_macro_f1;
        os << '\n';
    }
    return os.str();
}

void FinetuneConfig::validate() const {
    model.validate();
    optimizer.validate();
    if (!(layer_decay > 0.0 && layer_decay <= 1.0)) {
        throw std::invalid_argument("FinetuneConfig: layer_decay must lie in (0,1]");
    }
}

FinetuneConfig default_finetune_config() {
    FinetuneConfig cfg;
    cfg.model.droppath_rate = 0.4;
    return cfg;
}

std::vector<std::string> pretrain_trainable(const ModelConfig& config) {
    std::vector<std::string> names;
    for (const auto& [name, shape] : parameter_shapes(config, CountScope::pretrain_model)) {
        (void)shape;
        if (name.rfind("head.", 0) == 0 || name.rfind("fc_norm.", 0) == 0) continue;
        names.push_back(name);
    }
    return names;
}

std::vector<std::string> finetune_trainable(const ModelConfig& config) {
    std::vector<std::string> names;
    for (const auto& [name, shape] : parameter_shapes(config, CountScope::finetune_model)) {
        (void)shape;
        names.push_back(name);
    }
    return names;
}

Checkpoint pretrain(const Dataset& data, const PretrainConfig& cfg, const Checkpoint* resume,
                    std::vector<EpochLog>* history,
                    const std::function<void(const Checkpoint&, const EpochLog&)>& on_epoch) {
    cfg.model.validate();
    cfg.optimizer.validate();
    data.validate();
    check_geometry(data, cfg.model, "pretrain");
    if (!(cfg.masking_ratio > 0.0 && cfg.masking_ratio < 1.0)) {
        throw std::invalid_argument("pretrain: masking ratio must lie in (0,1)");
    }

    const int n = static_cast<int>(data.records.size());
    ScheduleConfig sched = cfg.schedule;
    sched.steps_per_epoch = (n + cfg.optimizer.batch_size - 1) / cfg.optimizer.batch_size;
    sched.validate();

    Checkpoint ck;
    Rng rng(cfg.seed);
    const std::vector<std::string> train_names = pretrain_trainable(cfg.model);
    if (resume != nullptr) {
        if (resume->stage != "pretrain") {
            throw std::invalid_argument("pretrain: checkpoint stage is '" + resume->stage +
                                        "', expected 'pretrain'");
        }
        require_same_model(resume->model, cfg.model, "pretrain");
        if (resume->masking_ratio != cfg.masking_ratio ||
            resume->target.kind != cfg.target.kind ||
            resume->target.epsilon != cfg.target.epsilon) {
            throw std::invalid_argument("pretrain: masking/target settings do not match checkpoint");
        }
        const OptimizerConfig& ro = resume->optimizer;
        if (ro.beta1 != cfg.optimizer.beta1 || ro.beta2 != cfg.optimizer.beta2 ||
            ro.weight_decay != cfg.optimizer.weight_decay || ro.base_lr != cfg.optimizer.base_lr ||
            ro.batch_size != cfg.optimizer.batch_size || ro.eps != cfg.optimizer.eps) {
            throw std::invalid_argument("pretrain: optimizer settings do not match checkpoint");
        }
        const ScheduleConfig& rs = resume->schedule;
        if (rs.total_epochs != sched.total_epochs || rs.warmup_epochs != sched.warmup_epochs ||
            rs.steps_per_epoch != sched.steps_per_epoch || rs.min_lr != sched.min_lr) {
            throw std::invalid_argument("pretrain: schedule settings do not match checkpoint");
        }
        ck = *resume;
        rng.set_state(ck.rng_state);
    } else {
        ck.stage = "pretrain";
        ck.model = cfg.model;
        ck.target = cfg.target;
        ck.masking_ratio = cfg.masking_ratio;
        ck.optimizer = cfg.optimizer;
        ck.schedule = sched;
        ck.params = init_parameters(cfg.model, cfg.seed);
        zero_moments(ck.opt_state, train_names, ck.params);
        ck.rng_state = rng.state();
    }

    if (masked_count(cfg.model.t_len, cfg.masking_ratio) == 0) {
        std::fprintf(stderr,
                     "warning: masking ratio %g at T=%d masks no segments; loss is fixed at 0\n",
                     cfg.masking_ratio, cfg.model.t_len);
    }

    for (int epoch = ck.epochs_done; epoch < sched.total_epochs; ++epoch) {
        const std::vector<int> order = shuffled_order(n, rng);
        double loss_sum = 0.0;
        double last_lr = 0.0;
        for (int start = 0; start < n; start += cfg.optimizer.batch_size) {
            const int bn = std::min(cfg.optimizer.batch_size, n - start);
            const Tensor upstream(1, 1, 1.0 / bn);
            ParameterStore grads;
            for (int i = start; i < start + bn; ++i) {
                const EcgRecord& rec = data.records[order[i]];
                const SegmentSequence seq = segment(rec.signal_matrix(), cfg.model.t_len);
                const MaskPlan plan = sample_mask(cfg.model.t_len, cfg.masking_ratio, rng);
                ForwardTrace trace =
                    pretrain_forward(ck.params, cfg.model, seq, plan, cfg.target, true, &rng);
                const double loss = trace.value()(0, 0);
                if (!std::isfinite(loss)) {
                    throw std::runtime_error("pretrain: non-finite loss on record " + rec.id +
                                             " at step " + std::to_string(ck.opt_state.step));
                }
                loss_sum += loss;
                backward_accumulate(trace, upstream, grads);
            }
            last_lr = cosine_lr(ck.opt_state.step, sched, cfg.optimizer.base_lr);
            adamw_step(ck.params, grads, ck.opt_state, train_names, cfg.optimizer, last_lr);
        }
        ck.epochs_done = epoch + 1;
        ck.rng_state = rng.state();
        EpochLog log;
        log.epoch = epoch + 1;
        log.lr = last_lr;
        log.train_loss = loss_sum / n;
        if (history != nullptr) history->push_back(log);
        if (on_epoch) on_epoch(ck, log);
    }
    return ck;
}

EvalOutcome evaluate_classifier(const ParameterStore& params, const ModelConfig& config,
                                const Dataset& data) {
    check_geometry(data, config, "evaluate");
    check_labels(data, config, "evaluate");
    const int n = static_cast<int>(data.records.size());
    Tensor preds(n, config.n_labels);
    Tensor truths(n, config.n_labels);
    double loss_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const EcgRecord& rec = data.records[i];
        const SegmentSequence seq = segment(rec.signal_matrix(), config.t_len);
        const ForwardTrace trace = forward_classify(params, config, seq, false, nullptr);
        const Tensor& logits = trace.value();
        loss_sum += bce_with_logits(logits, labels_row(rec));
        const Tensor row = threshold_logits(logits, 0.5);
        for (int j = 0; j < config.n_labels; ++j) {
            preds(i, j) = row(0, j);
            truths(i, j) = rec.labels[j];
        }
    }
    EvalOutcome out;
    out.metrics = macro_f1(preds, truths);
    out.mean_loss = loss_sum / n;
    return out;
}

FinetuneResult finetune(const Dataset& train, const Dataset& val, const FinetuneConfig& cfg,
                        const Checkpoint* init_from, const Dataset* track_test) {
    cfg.validate();
    train.validate();
    val.validate();
    check_geometry(train, cfg.model, "finetune");
    check_geometry(val, cfg.model, "finetune");
    check_labels(train, cfg.model, "finetune");
    check_labels(val, cfg.model, "finetune");
    if (track_test != nullptr) {
        track_test->validate();
        check_geometry(*track_test, cfg.model, "finetune");
        check_labels(*track_test, cfg.model, "finetune");
    }

    const int n = static_cast<int>(train.records.size());
    ScheduleConfig sched = cfg.schedule;
    sched.steps_per_epoch = (n + cfg.optimizer.batch_size - 1) / cfg.optimizer.batch_size;
    sched.validate();

    // Fine-tune parameter set: encoder + classifier only. Classifier tensors
    // are rebuilt fresh when the checkpoint disagrees on labels or pooling;
    // any other mismatch is a real incompatibility.
    ParameterStore params;
    if (init_from != nullptr) {
        for (const auto& [name, shape] : parameter_shapes(cfg.model, CountScope::finetune_model)) {
            const bool classifier_tensor =
                name.rfind("head.", 0) == 0 || name.rfind("fc_norm.", 0) == 0;
            if (init_from->params.has(name)) {
                const Tensor& src = init_from->params.at(name);
                if (src.rows() == shape.first && src.cols() == shape.second) {
                    params.add(name, src);
                    continue;
                }
                if (!classifier_tensor) {
                    throw std::invalid_argument("finetune: checkpoint tensor " + name +
                                                " has shape " + src.shape_str());
                }
            } else if (!classifier_tensor) {
                throw std::invalid_argument("finetune: checkpoint lacks tensor " + name);
            }
            Tensor t(shape.first, shape.second);
            if (name.ends_with("norm.weight")) t.fill(1.0);
            params.add(name, std::move(t));
        }
    } else {
        ParameterStore full = init_parameters(cfg.model, cfg.seed);
        for (const auto& [name, shape] : parameter_shapes(cfg.model, CountScope::finetune_model)) {
            (void)shape;
            params.add(name, full.at(name));
        }
    }

    const std::vector<std::string> train_names = finetune_trainable(cfg.model);
    std::unordered_map<std::string, double> scale_of;
    for (const auto& name : train_names) {
        scale_of[name] = layerwise_lr_scale(depth_index_for(name, cfg.model.n_layers),
                                            cfg.model.n_layers, cfg.layer_decay);
    }
    auto lr_scale = [&scale_of](const std::string& name) { return scale_of.at(name); };

    AdamWState state;
    zero_moments(state, train_names, params);
    Rng rng(cfg.seed);

    FinetuneResult result;
    ParameterStore best_params = params;
    for (int epoch = 0; epoch < sched.total_epochs; ++epoch) {
        const std::vector<int> order = shuffled_order(n, rng);
        double loss_sum = 0.0;
        double last_lr = 0.0;
        for (int start = 0; start < n; start += cfg.optimizer.batch_size) {
            const int bn = std::min(cfg.optimizer.batch_size, n - start);
            const Tensor upstream(1, 1, 1.0 / bn);
            ParameterStore grads;
            for (int i = start; i < start + bn; ++i) {
                const EcgRecord& rec = train.records[order[i]];
                const SegmentSequence seq = segment(rec.signal_matrix(), cfg.model.t_len);
                ForwardTrace trace =
                    finetune_forward(params, cfg.model, seq, labels_row(rec), true, &rng);
                const double loss = trace.value()(0, 0);
                if (!std::isfinite(loss)) {
                    throw std::runtime_error("finetune: non-finite loss on record " + rec.id +
                                             " at step " + std::to_string(state.step));
                }
                loss_sum += loss;
                backward_accumulate(trace, upstream, grads);
            }
            last_lr = cosine_lr(state.step, sched, cfg.optimizer.base_lr);
            adamw_step(params, grads, state, train_names, cfg.optimizer, last_lr, lr_scale);
        }

        const EvalOutcome vo = evaluate_classifier(params, cfg.model, val);
        EpochLog log;
        log.epoch = epoch + 1;
        log.lr = last_lr;
        log.train_loss = loss_sum / n;
        log.val_loss = vo.mean_loss;
        log.val_macro_f1 = vo.metrics.macro;
        if (track_test != nullptr) {
            log.test_macro_f1 = evaluate_classifier(params, cfg.model, *track_test).metrics.macro;
        }
        result.history.push_back(log);

        if (vo.metrics.macro > result.best_val_f1) {
            result.best_val_f1 = vo.metrics.macro;
            result.best_epoch = epoch + 1;
            best_params = params;
        }
    }

    result.best.stage = "finetune";
    result.best.model = cfg.model;
    result.best.optimizer = cfg.optimizer;
    result.best.schedule = sched;
    result.best.params = std::move(best_params);
    result.best.epochs_done = result.best_epoch;
    return result;
}

} // namespace mtecg
