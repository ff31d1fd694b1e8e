#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mtecg/checkpoint.hpp"
#include "mtecg/metrics.hpp"
#include "mtecg/model.hpp"
#include "mtecg/segmentation.hpp"
#include "mtecg/signal.hpp"
#include "mtecg/targets.hpp"
#include "mtecg/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mtecg;

namespace {

json read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("bad config " + path + ": " + std::string(e.what()));
    }
    if (!j.is_object()) throw std::runtime_error("bad config " + path + ": expected a JSON object");
    return j;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : allowed) ok = ok || item.key() == k;
        if (!ok) throw std::runtime_error(std::string("unknown ") + where + " config key '" + item.key() + "'");
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("short write on " + path.string());
}

json model_json(const ModelConfig& m) {
    return json{{"t_len", m.t_len},
                {"d_seg", m.d_seg},
                {"d_model", m.d_model},
                {"n_heads", m.n_heads},
                {"n_layers", m.n_layers},
                {"d_decoder", m.d_decoder},
                {"decoder_heads", m.decoder_heads},
                {"mlp_ratio", m.mlp_ratio},
                {"droppath_rate", m.droppath_rate},
                {"n_labels", m.n_labels},
                {"classifier", classifier_name(m.classifier)},
                {"ln_eps", m.ln_eps}};
}

void apply_model_overrides(ModelConfig& m, const json& mj) {
    check_keys(mj,
               {"t_len", "d_seg", "d_model", "n_heads", "n_layers", "d_decoder", "decoder_heads",
                "mlp_ratio", "droppath_rate", "n_labels", "classifier", "ln_eps"},
               "model");
    if (mj.contains("t_len")) m.t_len = mj.at("t_len").get<int>();
    if (mj.contains("d_seg")) m.d_seg = mj.at("d_seg").get<int>();
    if (mj.contains("d_model")) m.d_model = mj.at("d_model").get<int>();
    if (mj.contains("n_heads")) m.n_heads = mj.at("n_heads").get<int>();
    if (mj.contains("n_layers")) m.n_layers = mj.at("n_layers").get<int>();
    if (mj.contains("d_decoder")) m.d_decoder = mj.at("d_decoder").get<int>();
    if (mj.contains("decoder_heads")) m.decoder_heads = mj.at("decoder_heads").get<int>();
    if (mj.contains("mlp_ratio")) m.mlp_ratio = mj.at("mlp_ratio").get<double>();
    if (mj.contains("droppath_rate")) m.droppath_rate = mj.at("droppath_rate").get<double>();
    if (mj.contains("n_labels")) m.n_labels = mj.at("n_labels").get<int>();
    if (mj.contains("classifier")) m.classifier = parse_classifier(mj.at("classifier").get<std::string>());
    if (mj.contains("ln_eps")) m.ln_eps = mj.at("ln_eps").get<double>();
}

char parse_variant(const std::string& v) {
    if (v.size() == 1 && std::string("AMTSB").find(v[0]) != std::string::npos) return v[0];
    throw std::runtime_error("unknown variant '" + v + "' (expected one of A,M,T,S,B)");
}

std::string require_string(const json& user, const char* key, const char* flag) {
    const std::string v = user.value(key, std::string());
    if (v.empty()) throw std::runtime_error(std::string("missing ") + flag + " (or \"" + key + "\" in the config file)");
    return v;
}

// Capacity comes from the variant/config, geometry and label count from the
// data unless the config pins them explicitly.
ModelConfig resolve_model(const json& user, const Dataset& data) {
    ModelConfig m;
    const std::string variant = user.value("variant", std::string());
    if (!variant.empty()) m = variant_config(parse_variant(variant));
    const json mj = user.contains("model") ? user.at("model") : json::object();
    apply_model_overrides(m, mj);
    if (data.records.empty()) throw std::runtime_error("dataset has no records");
    const EcgRecord& r0 = data.records.front();
    if (!mj.contains("d_seg")) {
        if (m.t_len <= 0 || r0.q_samples % m.t_len != 0) {
            throw std::runtime_error("q_samples " + std::to_string(r0.q_samples) +
                                     " is not divisible by t_len " + std::to_string(m.t_len));
        }
        m.d_seg = r0.k_leads * (r0.q_samples / m.t_len);
    }
    if (!mj.contains("n_labels")) m.n_labels = static_cast<int>(data.label_names.size());
    return m;
}

std::string log_row(const EpochLog& log) {
    const std::string s = epoch_log_csv({log});
    return s.substr(s.find('\n') + 1);
}

// ---------------------------------------------------------------- synth ----

struct SynthOpts {
    std::string config, out;
    int records = 512, leads = 12, samples = 5000, labels = 28;
    std::uint64_t seed = 0;
    bool split = false;
};

int run_synth(const CLI::App& sub, const SynthOpts& o) {
    json user = o.config.empty() ? json::object() : read_config(o.config);
    if (sub.count("--records")) user["records"] = o.records;
    if (sub.count("--leads")) user["leads"] = o.leads;
    if (sub.count("--samples")) user["samples"] = o.samples;
    if (sub.count("--labels")) user["labels"] = o.labels;
    if (sub.count("--seed")) user["seed"] = o.seed;
    if (sub.count("--out")) user["out"] = o.out;
    if (sub.count("--split")) user["split"] = true;
    check_keys(user, {"command", "records", "leads", "samples", "labels", "seed", "out", "split"}, "synth");

    const int records = user.value("records", 512);
    const int leads = user.value("leads", 12);
    const int samples = user.value("samples", 5000);
    const int labels = user.value("labels", 28);
    const std::uint64_t seed = user.value("seed", std::uint64_t{0});
    const bool split = user.value("split", false);
    const std::string out = require_string(user, "out", "--out");

    Dataset ds = generate_synthetic(records, leads, samples, labels, seed);
    fs::create_directories(out);
    const json resolved{{"command", "synth"}, {"records", records}, {"leads", leads},
                        {"samples", samples}, {"labels", labels},   {"seed", seed},
                        {"split", split},     {"out", out}};
    write_text(fs::path(out) / "config.json", resolved.dump(2) + "\n");

    if (split) {
        SplitSpec spec;
        spec.seed = seed;
        const SplitResult parts = split_dataset(ds, spec);
        save_dataset(parts.train, fs::path(out) / "train");
        save_dataset(parts.val, fs::path(out) / "val");
        save_dataset(parts.test, fs::path(out) / "test");
        std::printf("wrote %zu/%zu/%zu train/val/test records under %s\n", parts.train.records.size(),
                    parts.val.records.size(), parts.test.records.size(), out.c_str());
    } else {
        save_dataset(ds, out);
        std::printf("wrote %d records (%d leads x %d samples, %d labels) to %s\n", records, leads,
                    samples, labels, out.c_str());
    }
    return 0;
}

// ------------------------------------------------------------- pretrain ----

struct PretrainOpts {
    std::string config, data, out, target, variant, resume, classifier;
    std::uint64_t seed = 0;
    double mask_ratio = 0.25, lr = 1e-3, droppath = 0.0;
    int epochs = 1600, warmup = 40, batch = 256, save_every = 1, labels = 0;
};

int run_pretrain(const CLI::App& sub, const PretrainOpts& o) {
    json user = o.config.empty() ? json::object() : read_config(o.config);
    if (sub.count("--data")) user["data"] = o.data;
    if (sub.count("--out")) user["out"] = o.out;
    if (sub.count("--seed")) user["seed"] = o.seed;
    if (sub.count("--variant")) user["variant"] = o.variant;
    if (sub.count("--mask-ratio")) user["mask_ratio"] = o.mask_ratio;
    if (sub.count("--target")) user["target"] = o.target;
    if (sub.count("--epochs")) user["epochs"] = o.epochs;
    if (sub.count("--warmup-epochs")) user["warmup_epochs"] = o.warmup;
    if (sub.count("--batch-size")) user["batch_size"] = o.batch;
    if (sub.count("--lr")) user["base_lr"] = o.lr;
    if (sub.count("--save-every")) user["save_every"] = o.save_every;
    if (sub.count("--resume")) user["resume"] = o.resume;
    if (sub.count("--droppath")) user["model"]["droppath_rate"] = o.droppath;
    if (sub.count("--classifier")) user["model"]["classifier"] = o.classifier;
    if (sub.count("--labels")) user["model"]["n_labels"] = o.labels;
    check_keys(user,
               {"command", "data", "out", "seed", "variant", "model", "target", "epsilon",
                "mask_ratio", "epochs", "warmup_epochs", "min_lr", "batch_size", "base_lr",
                "weight_decay", "beta1", "beta2", "save_every", "resume"},
               "pretrain");

    const std::string data_path = require_string(user, "data", "--data");
    const std::string out = require_string(user, "out", "--out");
    const Dataset data = load_dataset(data_path);

    PretrainConfig cfg;
    cfg.model = resolve_model(user, data);
    cfg.target.kind = parse_target_kind(user.value("target", std::string("psn")));
    cfg.target.epsilon = user.value("epsilon", 1e-6);
    cfg.masking_ratio = user.value("mask_ratio", 0.25);
    cfg.optimizer.base_lr = user.value("base_lr", 1e-3);
    cfg.optimizer.batch_size = user.value("batch_size", 256);
    cfg.optimizer.weight_decay = user.value("weight_decay", 0.05);
    cfg.optimizer.beta1 = user.value("beta1", 0.9);
    cfg.optimizer.beta2 = user.value("beta2", 0.95);
    cfg.schedule.total_epochs = user.value("epochs", 1600);
    cfg.schedule.warmup_epochs = user.value("warmup_epochs", 40);
    cfg.schedule.min_lr = user.value("min_lr", 0.0);
    cfg.seed = user.value("seed", std::uint64_t{0});
    const int save_every = std::max(1, user.value("save_every", 1));
    const std::string resume_path = user.value("resume", std::string());

    std::optional<Checkpoint> resume_ck;
    if (!resume_path.empty()) resume_ck = load_checkpoint(resume_path);

    fs::create_directories(fs::path(out) / "checkpoints");
    json resolved{{"command", "pretrain"},
                  {"data", data_path},
                  {"out", out},
                  {"seed", cfg.seed},
                  {"model", model_json(cfg.model)},
                  {"target", target_kind_name(cfg.target.kind)},
                  {"epsilon", cfg.target.epsilon},
                  {"mask_ratio", cfg.masking_ratio},
                  {"epochs", cfg.schedule.total_epochs},
                  {"warmup_epochs", cfg.schedule.warmup_epochs},
                  {"min_lr", cfg.schedule.min_lr},
                  {"batch_size", cfg.optimizer.batch_size},
                  {"base_lr", cfg.optimizer.base_lr},
                  {"weight_decay", cfg.optimizer.weight_decay},
                  {"beta1", cfg.optimizer.beta1},
                  {"beta2", cfg.optimizer.beta2},
                  {"save_every", save_every},
                  {"resume", resume_path}};
    write_text(fs::path(out) / "config.json", resolved.dump(2) + "\n");

    const fs::path logs_path = fs::path(out) / "logs.csv";
    const bool append = resume_ck.has_value() && fs::exists(logs_path);
    std::ofstream logs(logs_path, append ? (std::ios::binary | std::ios::app) : std::ios::binary);
    if (!logs) throw std::runtime_error("cannot write " + logs_path.string());
    if (!append) logs << "epoch,lr,train_loss,val_loss,val_macro_f1\n";

    const fs::path ck_path = fs::path(out) / "checkpoints" / "last.ckpt";
    const auto on_epoch = [&](const Checkpoint& ck, const EpochLog& log) {
        logs << log_row(log);
        logs.flush();
        if (log.epoch % save_every == 0 || log.epoch == cfg.schedule.total_epochs) {
            save_checkpoint(ck, ck_path);
        }
        std::printf("epoch %d/%d  lr %.4g  loss %.6g\n", log.epoch, cfg.schedule.total_epochs,
                    log.lr, log.train_loss);
        std::fflush(stdout);
    };
    const Checkpoint final_ck =
        pretrain(data, cfg, resume_ck ? &*resume_ck : nullptr, nullptr, on_epoch);
    save_checkpoint(final_ck, ck_path);
    std::printf("saved %s (%d epochs done)\n", ck_path.string().c_str(), final_ck.epochs_done);
    return 0;
}

// ------------------------------------------------------------- finetune ----

struct FinetuneOpts {
    std::string config, data, val, test, out, init, variant, classifier;
    bool from_scratch = false, track_test = false;
    std::uint64_t seed = 0;
    double layer_decay = 0.6, droppath = 0.4, lr = 1e-3;
    int epochs = 50, warmup = 5, batch = 256, labels = 0;
};

int run_finetune(const CLI::App& sub, const FinetuneOpts& o) {
    json user = o.config.empty() ? json::object() : read_config(o.config);
    if (sub.count("--data")) user["data"] = o.data;
    if (sub.count("--val")) user["val"] = o.val;
    if (sub.count("--test")) user["test"] = o.test;
    if (sub.count("--out")) user["out"] = o.out;
    if (sub.count("--seed")) user["seed"] = o.seed;
    if (sub.count("--init")) user["init"] = o.init;
    if (sub.count("--from-scratch")) user["from_scratch"] = true;
    if (sub.count("--track-test")) user["track_test"] = true;
    if (sub.count("--variant")) user["variant"] = o.variant;
    if (sub.count("--epochs")) user["epochs"] = o.epochs;
    if (sub.count("--warmup-epochs")) user["warmup_epochs"] = o.warmup;
    if (sub.count("--batch-size")) user["batch_size"] = o.batch;
    if (sub.count("--lr")) user["base_lr"] = o.lr;
    if (sub.count("--layer-decay")) user["layer_decay"] = o.layer_decay;
    if (sub.count("--droppath")) user["model"]["droppath_rate"] = o.droppath;
    if (sub.count("--classifier")) user["model"]["classifier"] = o.classifier;
    if (sub.count("--labels")) user["model"]["n_labels"] = o.labels;
    check_keys(user,
               {"command", "data", "val", "test", "out", "seed", "init", "from_scratch",
                "track_test", "variant", "model", "epochs", "warmup_epochs", "min_lr",
                "batch_size", "base_lr", "weight_decay", "beta1", "beta2", "layer_decay"},
               "finetune");

    const std::string data_path = require_string(user, "data", "--data");
    const std::string val_path = require_string(user, "val", "--val");
    const std::string test_path = user.value("test", std::string());
    const std::string out = require_string(user, "out", "--out");
    const Dataset train = load_dataset(data_path);
    const Dataset val = load_dataset(val_path);
    std::optional<Dataset> test;
    if (!test_path.empty()) test = load_dataset(test_path);

    const bool from_scratch = user.value("from_scratch", false);
    const std::string init_path = user.value("init", std::string());
    if (from_scratch && !init_path.empty()) {
        throw std::runtime_error("--from-scratch and --init are mutually exclusive");
    }
    if (!from_scratch && init_path.empty()) {
        throw std::runtime_error("pass --init <checkpoint> or --from-scratch");
    }

    FinetuneConfig cfg = default_finetune_config();
    std::optional<Checkpoint> init_ck;
    if (!init_path.empty()) {
        if (user.contains("variant")) {
            throw std::runtime_error("--variant conflicts with --init; the checkpoint fixes the architecture");
        }
        init_ck = load_checkpoint(init_path);
        if (init_ck->stage != "pretrain") {
            throw std::runtime_error("--init expects a pretrain-stage checkpoint, got stage '" +
                                     init_ck->stage + "'");
        }
        const json mj = user.contains("model") ? user.at("model") : json::object();
        ModelConfig want = init_ck->model;
        apply_model_overrides(want, mj);
        // the head and its regularizer are free; the encoder is fixed by the checkpoint
        const ModelConfig& locked = init_ck->model;
        const auto conflict = [](bool bad, const char* field) {
            if (bad) {
                throw std::runtime_error(std::string("model.") + field +
                                         " in the config conflicts with the --init checkpoint");
            }
        };
        conflict(want.t_len != locked.t_len, "t_len");
        conflict(want.d_seg != locked.d_seg, "d_seg");
        conflict(want.d_model != locked.d_model, "d_model");
        conflict(want.n_heads != locked.n_heads, "n_heads");
        conflict(want.n_layers != locked.n_layers, "n_layers");
        conflict(want.d_decoder != locked.d_decoder, "d_decoder");
        conflict(want.decoder_heads != locked.decoder_heads, "decoder_heads");
        conflict(want.mlp_ratio != locked.mlp_ratio, "mlp_ratio");
        conflict(want.ln_eps != locked.ln_eps, "ln_eps");
        cfg.model = want;
        if (!mj.contains("droppath_rate")) cfg.model.droppath_rate = 0.4;
        if (!mj.contains("n_labels")) cfg.model.n_labels = static_cast<int>(train.label_names.size());
    } else {
        cfg.model = resolve_model(user, train);
        const json mj = user.contains("model") ? user.at("model") : json::object();
        if (!mj.contains("droppath_rate")) cfg.model.droppath_rate = 0.4;
    }

    cfg.optimizer.base_lr = user.value("base_lr", 1e-3);
    cfg.optimizer.batch_size = user.value("batch_size", 256);
    cfg.optimizer.weight_decay = user.value("weight_decay", 0.05);
    cfg.optimizer.beta1 = user.value("beta1", 0.9);
    cfg.optimizer.beta2 = user.value("beta2", 0.999);
    cfg.schedule.total_epochs = user.value("epochs", 50);
    cfg.schedule.warmup_epochs = user.value("warmup_epochs", 5);
    cfg.schedule.min_lr = user.value("min_lr", 1e-6);
    cfg.layer_decay = user.value("layer_decay", 0.6);
    cfg.seed = user.value("seed", std::uint64_t{0});
    const bool track_test = user.value("track_test", false) && test.has_value();

    fs::create_directories(fs::path(out) / "checkpoints");
    json resolved{{"command", "finetune"},
                  {"data", data_path},
                  {"val", val_path},
                  {"test", test_path},
                  {"out", out},
                  {"seed", cfg.seed},
                  {"init", init_path},
                  {"from_scratch", from_scratch},
                  {"track_test", track_test},
                  {"model", model_json(cfg.model)},
                  {"epochs", cfg.schedule.total_epochs},
                  {"warmup_epochs", cfg.schedule.warmup_epochs},
                  {"min_lr", cfg.schedule.min_lr},
                  {"batch_size", cfg.optimizer.batch_size},
                  {"base_lr", cfg.optimizer.base_lr},
                  {"weight_decay", cfg.optimizer.weight_decay},
                  {"beta1", cfg.optimizer.beta1},
                  {"beta2", cfg.optimizer.beta2},
                  {"layer_decay", cfg.layer_decay}};
    write_text(fs::path(out) / "config.json", resolved.dump(2) + "\n");

    const FinetuneResult res = finetune(train, val, cfg, init_ck ? &*init_ck : nullptr,
                                        track_test ? &*test : nullptr);

    write_text(fs::path(out) / "logs.csv", epoch_log_csv(res.history));
    for (const EpochLog& e : res.history) {
        std::printf("epoch %d/%d  lr %.4g  train %.6g  val %.6g  f1 %.4f", e.epoch,
                    cfg.schedule.total_epochs, e.lr, e.train_loss, e.val_loss.value_or(0.0),
                    e.val_macro_f1.value_or(0.0));
        if (e.test_macro_f1) std::printf("  test_f1 %.4f", *e.test_macro_f1);
        std::printf("\n");
    }

    const fs::path ck_path = fs::path(out) / "checkpoints" / "best.ckpt";
    save_checkpoint(res.best, ck_path);

    const Dataset& report_on = test ? *test : val;
    const EvalOutcome rep = evaluate_classifier(res.best.params, cfg.model, report_on);
    write_text(fs::path(out) / "report.csv", eval_report_csv(rep.metrics, report_on.label_names));

    std::printf("best epoch %d  val macro F1 %.4f  (saved %s)\n", res.best_epoch, res.best_val_f1,
                ck_path.string().c_str());
    std::printf("report.csv: %s split, macro F1 %.4f, mean BCE %.6g\n", test ? "test" : "val",
                rep.metrics.macro, rep.mean_loss);
    return 0;
}

// ----------------------------------------------------------------- eval ----

struct EvalOpts {
    std::string config, ckpt, data, out;
};

int run_eval(const CLI::App& sub, const EvalOpts& o) {
    json user = o.config.empty() ? json::object() : read_config(o.config);
    if (sub.count("--ckpt")) user["ckpt"] = o.ckpt;
    if (sub.count("--data")) user["data"] = o.data;
    if (sub.count("--out")) user["out"] = o.out;
    check_keys(user, {"command", "ckpt", "data", "out"}, "eval");

    const std::string ckpt_path = require_string(user, "ckpt", "--ckpt");
    const std::string data_path = require_string(user, "data", "--data");
    const std::string out = user.value("out", std::string());

    const Checkpoint ck = load_checkpoint(ckpt_path);
    if (ck.stage != "finetune") {
        std::fprintf(stderr, "note: %s is a %s-stage checkpoint; its classifier head is untrained\n",
                     ckpt_path.c_str(), ck.stage.c_str());
    }
    const Dataset data = load_dataset(data_path);
    const EvalOutcome res = evaluate_classifier(ck.params, ck.model, data);
    const std::string csv = eval_report_csv(res.metrics, data.label_names);

    if (!out.empty()) {
        fs::create_directories(out);
        const json resolved{{"command", "eval"}, {"ckpt", ckpt_path}, {"data", data_path}, {"out", out}};
        write_text(fs::path(out) / "config.json", resolved.dump(2) + "\n");
        write_text(fs::path(out) / "report.csv", csv);
    } else {
        std::fputs(csv.c_str(), stdout);
    }
    std::printf("macro_f1 %.6f  mean_bce %.6g  records %zu\n", res.metrics.macro, res.mean_loss,
                data.records.size());
    return 0;
}

// ---------------------------------------------------------- reconstruct ----

struct ReconOpts {
    std::string config, ckpt, data, out;
    std::vector<std::string> ids;
    std::uint64_t seed = 0;
    double mask_ratio = 0.25;
};

std::string signal_csv(const EcgRecord& rec) {
    std::ostringstream os;
    os.precision(17);
    os << "sample";
    for (int k = 0; k < rec.k_leads; ++k) os << ",lead_" << k;
    os << '\n';
    for (int t = 0; t < rec.q_samples; ++t) {
        os << t;
        for (int k = 0; k < rec.k_leads; ++k) {
            os << ',' << rec.samples[static_cast<size_t>(k) * rec.q_samples + t];
        }
        os << '\n';
    }
    return os.str();
}

std::string mask_csv(const MaskPlan& plan) {
    std::vector<int> masked(plan.t_len, 0);
    for (int t : plan.masked) masked[t] = 1;
    std::ostringstream os;
    os << "segment,masked\n";
    for (int t = 0; t < plan.t_len; ++t) os << t << ',' << masked[t] << '\n';
    return os.str();
}

std::string recon_csv(const MaskPlan& plan, const Tensor& target, const Tensor& recon, int w) {
    std::ostringstream os;
    os.precision(17);
    os << "segment,lead,sample,target,reconstruction\n";
    for (int s = 0; s < target.rows(); ++s) {
        const int seg = plan.masked[s];
        for (int o = 0; o < target.cols(); ++o) {
            os << seg << ',' << o / w << ',' << seg * w + o % w << ',' << target(s, o) << ','
               << recon(s, o) << '\n';
        }
    }
    return os.str();
}

int run_reconstruct(const CLI::App& sub, const ReconOpts& o) {
    json user = o.config.empty() ? json::object() : read_config(o.config);
    if (sub.count("--ckpt")) user["ckpt"] = o.ckpt;
    if (sub.count("--data")) user["data"] = o.data;
    if (sub.count("--out")) user["out"] = o.out;
    if (sub.count("--seed")) user["seed"] = o.seed;
    if (sub.count("--mask-ratio")) user["mask_ratio"] = o.mask_ratio;
    if (sub.count("--ids")) user["ids"] = o.ids;
    check_keys(user, {"command", "ckpt", "data", "out", "seed", "mask_ratio", "ids"}, "reconstruct");

    const std::string ckpt_path = require_string(user, "ckpt", "--ckpt");
    const std::string data_path = require_string(user, "data", "--data");
    const std::string out = require_string(user, "out", "--out");
    const std::vector<std::string> ids = user.value("ids", std::vector<std::string>{});
    if (ids.empty()) throw std::runtime_error("missing --ids (comma-separated record ids)");

    const Checkpoint ck = load_checkpoint(ckpt_path);
    if (ck.stage != "pretrain") {
        throw std::runtime_error("reconstruct needs a pretrain-stage checkpoint; stage '" +
                                 ck.stage + "' has no decoder");
    }
    const Dataset data = load_dataset(data_path);
    const std::uint64_t seed = user.value("seed", std::uint64_t{0});
    const double ratio = user.value("mask_ratio", ck.masking_ratio);
    if (masked_count(ck.model.t_len, ratio) == 0) {
        throw std::runtime_error("mask ratio " + std::to_string(ratio) + " masks no segments");
    }

    fs::create_directories(out);
    const json resolved{{"command", "reconstruct"}, {"ckpt", ckpt_path}, {"data", data_path},
                        {"out", out},              {"seed", seed},      {"mask_ratio", ratio},
                        {"ids", ids}};
    write_text(fs::path(out) / "config.json", resolved.dump(2) + "\n");

    std::unordered_map<std::string, int> index;
    for (int i = 0; i < static_cast<int>(data.records.size()); ++i) index[data.records[i].id] = i;

    Rng rng(seed);
    for (const std::string& id : ids) {
        const auto it = index.find(id);
        if (it == index.end()) throw std::runtime_error("record id '" + id + "' is not in the manifest");
        const EcgRecord& rec = data.records[it->second];
        if (rec.q_samples % ck.model.t_len != 0 ||
            rec.k_leads * (rec.q_samples / ck.model.t_len) != ck.model.d_seg) {
            throw std::runtime_error("record " + id + " geometry does not match the checkpoint");
        }
        const SegmentSequence seq = segment(rec.signal_matrix(), ck.model.t_len);
        const MaskPlan plan = sample_mask(ck.model.t_len, ratio, rng);

        const int s_keep = static_cast<int>(plan.unmasked.size());
        Tensor keep_rows(s_keep, seq.d_seg());
        for (int r = 0; r < s_keep; ++r) {
            for (int c = 0; c < seq.d_seg(); ++c) keep_rows(r, c) = seq.segments(plan.unmasked[r], c);
        }
        const ForwardTrace enc = encode(ck.params, ck.model, keep_rows, plan.unmasked, false, nullptr);
        const Tensor& tokens = enc.value();
        Tensor enc_seg(s_keep, ck.model.d_model);
        for (int r = 0; r < s_keep; ++r) {
            for (int c = 0; c < ck.model.d_model; ++c) enc_seg(r, c) = tokens(r + 1, c);
        }
        const ForwardTrace dec = decode(ck.params, ck.model, enc_seg, plan);
        const Tensor& recon = dec.value();

        const int sp = static_cast<int>(plan.masked.size());
        Tensor masked_rows(sp, seq.d_seg());
        for (int s = 0; s < sp; ++s) {
            for (int c = 0; c < seq.d_seg(); ++c) masked_rows(s, c) = seq.segments(plan.masked[s], c);
        }
        const Tensor target = apply_target(masked_rows, ck.target);

        const int w = rec.q_samples / ck.model.t_len;
        write_text(fs::path(out) / (id + ".signal.csv"), signal_csv(rec));
        write_text(fs::path(out) / (id + ".mask.csv"), mask_csv(plan));
        write_text(fs::path(out) / (id + ".recon.csv"), recon_csv(plan, target, recon, w));

        double sq = 0.0;
        for (int s = 0; s < sp; ++s) {
            for (int c = 0; c < target.cols(); ++c) {
                const double d = recon(s, c) - target(s, c);
                sq += d * d;
            }
        }
        std::printf("%s: masked %d/%d segments, reconstruction loss %.6g\n", id.c_str(), sp,
                    ck.model.t_len, sq / sp);
    }
    return 0;
}

// -------------------------------------------------------------- inspect ----

struct InspectOpts {
    std::string variant, classifier;
    int labels = 28, t_len = 200, d_seg = 300, d_model = 192, heads = 3, layers = 12;
};

void print_counts(const ModelConfig& m, const std::string& name) {
    const long long pre = count_parameters(m, CountScope::pretrain_model);
    const long long fin = count_parameters(m, CountScope::finetune_model);
    std::printf("%s: d_model=%d heads=%d layers=%d t_len=%d d_seg=%d labels=%d classifier=%s\n",
                name.c_str(), m.d_model, m.n_heads, m.n_layers, m.t_len, m.d_seg, m.n_labels,
                classifier_name(m.classifier));
    std::printf("  pretrain parameters: %lld (%.1fM)\n", pre, pre / 1e6);
    std::printf("  finetune parameters: %lld (%.1fM)\n", fin, fin / 1e6);
}

int run_inspect(const CLI::App& sub, const InspectOpts& o) {
    const bool custom = sub.count("--labels") || sub.count("--t-len") || sub.count("--d-seg") ||
                        sub.count("--d-model") || sub.count("--heads") ||
                        sub.count("--layers") || sub.count("--classifier");
    if (sub.count("--variant") == 0 && !custom) {
        for (char v : {'A', 'M', 'T', 'S', 'B'}) {
            print_counts(variant_config(v), std::string("MTECG-") + v);
        }
        return 0;
    }
    ModelConfig m;
    std::string name = "custom";
    if (sub.count("--variant")) {
        m = variant_config(parse_variant(o.variant));
        name = "MTECG-" + o.variant;
    }
    if (sub.count("--labels")) m.n_labels = o.labels;
    if (sub.count("--t-len")) m.t_len = o.t_len;
    if (sub.count("--d-seg")) m.d_seg = o.d_seg;
    if (sub.count("--d-model")) m.d_model = o.d_model;
    if (sub.count("--heads")) m.n_heads = o.heads;
    if (sub.count("--layers")) m.n_layers = o.layers;
    if (sub.count("--classifier")) m.classifier = parse_classifier(o.classifier);
    m.validate();
    print_counts(m, name);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked ECG transformers: synthetic data, masked pre-training, fine-tuning, evaluation"};
    app.require_subcommand(1);
    int rc = 0;

    SynthOpts so;
    CLI::App* synth = app.add_subcommand("synth", "generate a labeled synthetic ECG dataset");
    synth->add_option("--config", so.config, "JSON config file; flags override file values");
    synth->add_option("--records", so.records, "record count [512]");
    synth->add_option("--leads", so.leads, "leads per record [12]");
    synth->add_option("--samples", so.samples, "samples per lead [5000]");
    synth->add_option("--labels", so.labels, "label count [28]");
    synth->add_option("--seed", so.seed, "generator seed [0]");
    synth->add_option("--out", so.out, "output directory");
    synth->add_flag("--split", so.split, "write grouped 0.8/0.1/0.1 train/val/test subsets");
    synth->callback([&] { rc = run_synth(*synth, so); });

    PretrainOpts po;
    CLI::App* pre = app.add_subcommand("pretrain", "masked-reconstruction pre-training");
    pre->add_option("--config", po.config, "JSON config file; flags override file values");
    pre->add_option("--data", po.data, "training manifest");
    pre->add_option("--out", po.out, "output directory (config.json, checkpoints/, logs.csv)");
    pre->add_option("--seed", po.seed, "run seed [0]");
    pre->add_option("--variant", po.variant, "size preset A|M|T|S|B")
        ->check(CLI::IsMember({"A", "M", "T", "S", "B"}));
    pre->add_option("--mask-ratio", po.mask_ratio, "fraction of segments to hide [0.25]");
    pre->add_option("--target", po.target, "reconstruction target: identity|psn|ssqrt [psn]")
        ->check(CLI::IsMember({"identity", "psn", "ssqrt"}));
    pre->add_option("--epochs", po.epochs, "total epochs [1600]");
    pre->add_option("--warmup-epochs", po.warmup, "linear warmup epochs [40]");
    pre->add_option("--batch-size", po.batch, "records per optimizer step [256]");
    pre->add_option("--lr", po.lr, "base learning rate [1e-3]");
    pre->add_option("--droppath", po.droppath, "stochastic depth rate [0]");
    pre->add_option("--classifier", po.classifier, "head kind: pool|token [pool]")
        ->check(CLI::IsMember({"pool", "token"}));
    pre->add_option("--labels", po.labels, "head width; defaults to the dataset label count");
    pre->add_option("--save-every", po.save_every, "checkpoint every N epochs [1]");
    pre->add_option("--resume", po.resume, "continue from a pretrain checkpoint");
    pre->callback([&] { rc = run_pretrain(*pre, po); });

    FinetuneOpts fo;
    CLI::App* fin = app.add_subcommand("finetune", "supervised fine-tuning with per-epoch validation");
    fin->add_option("--config", fo.config, "JSON config file; flags override file values");
    fin->add_option("--data", fo.data, "training manifest");
    fin->add_option("--val", fo.val, "validation manifest (selects the best epoch)");
    fin->add_option("--test", fo.test, "held-out manifest for the final report");
    fin->add_option("--out", fo.out, "output directory (config.json, checkpoints/, logs.csv, report.csv)");
    fin->add_option("--seed", fo.seed, "run seed [0]");
    fin->add_option("--init", fo.init, "pretrain checkpoint to start from");
    fin->add_flag("--from-scratch", fo.from_scratch, "random initialization instead of --init");
    fin->add_flag("--track-test", fo.track_test, "also evaluate the --test split every epoch");
    fin->add_option("--variant", fo.variant, "size preset A|M|T|S|B (only with --from-scratch)")
        ->check(CLI::IsMember({"A", "M", "T", "S", "B"}));
    fin->add_option("--epochs", fo.epochs, "total epochs [50]");
    fin->add_option("--warmup-epochs", fo.warmup, "linear warmup epochs [5]");
    fin->add_option("--batch-size", fo.batch, "records per optimizer step [256]");
    fin->add_option("--lr", fo.lr, "base learning rate [1e-3]");
    fin->add_option("--layer-decay", fo.layer_decay, "layer-wise lr decay [0.6]");
    fin->add_option("--droppath", fo.droppath, "stochastic depth rate [0.4]");
    fin->add_option("--classifier", fo.classifier, "head kind: pool|token [pool]")
        ->check(CLI::IsMember({"pool", "token"}));
    fin->add_option("--labels", fo.labels, "head width; defaults to the dataset label count");
    fin->callback([&] { rc = run_finetune(*fin, fo); });

    EvalOpts eo;
    CLI::App* ev = app.add_subcommand("eval", "metrics report for a checkpoint on a dataset");
    ev->add_option("--config", eo.config, "JSON config file; flags override file values");
    ev->add_option("--ckpt", eo.ckpt, "checkpoint to evaluate");
    ev->add_option("--data", eo.data, "manifest to evaluate on");
    ev->add_option("--out", eo.out, "output directory; omit to print the report");
    ev->callback([&] { rc = run_eval(*ev, eo); });

    ReconOpts ro;
    CLI::App* rec = app.add_subcommand("reconstruct", "dump per-record reconstruction series as CSV");
    rec->add_option("--config", ro.config, "JSON config file; flags override file values");
    rec->add_option("--ckpt", ro.ckpt, "pretrain checkpoint");
    rec->add_option("--data", ro.data, "manifest holding the records");
    rec->add_option("--ids", ro.ids, "record ids to dump")->delimiter(',');
    rec->add_option("--seed", ro.seed, "mask sampling seed [0]");
    rec->add_option("--mask-ratio", ro.mask_ratio, "override the checkpoint's masking ratio");
    rec->add_option("--out", ro.out, "output directory");
    rec->callback([&] { rc = run_reconstruct(*rec, ro); });

    InspectOpts io;
    CLI::App* ins = app.add_subcommand("inspect", "print parameter counts for a preset or custom size");
    ins->add_option("--variant", io.variant, "size preset A|M|T|S|B; omit for the full table")
        ->check(CLI::IsMember({"A", "M", "T", "S", "B"}));
    ins->add_option("--labels", io.labels, "head width [28]");
    ins->add_option("--t-len", io.t_len, "segments per record [200]");
    ins->add_option("--d-seg", io.d_seg, "flattened segment length [300]");
    ins->add_option("--d-model", io.d_model, "encoder width [192]");
    ins->add_option("--heads", io.heads, "attention heads [3]");
    ins->add_option("--layers", io.layers, "encoder depth [12]");
    ins->add_option("--classifier", io.classifier, "head kind: pool|token [pool]")
        ->check(CLI::IsMember({"pool", "token"}));
    ins->callback([&] { rc = run_inspect(*ins, io); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return rc;
}
