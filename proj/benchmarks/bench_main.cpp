#include <benchmark/benchmark.h>

#include "mtecg/model.hpp"
#include "mtecg/rng.hpp"
#include "mtecg/segmentation.hpp"
#include "mtecg/signal.hpp"
#include "mtecg/targets.hpp"
#include "mtecg/training.hpp"

using namespace mtecg;

namespace {

ModelConfig bench_model(int d_model, int n_layers) {
    ModelConfig m;
    m.t_len = 50;
    m.d_seg = 40; // 2 leads x 1000 samples
    m.d_model = d_model;
    m.n_heads = d_model / 16;
    m.n_layers = n_layers;
    m.d_decoder = d_model / 2;
    m.decoder_heads = 2;
    m.n_labels = 8;
    return m;
}

SegmentSequence bench_sequence(const ModelConfig& m) {
    Rng rng(1);
    SegmentSequence seq;
    seq.segments = Tensor(m.t_len, m.d_seg);
    for (std::int64_t i = 0; i < seq.segments.numel(); ++i) {
        seq.segments.data()[i] = rng.normal();
    }
    seq.t_len = m.t_len;
    seq.k_leads = 2;
    return seq;
}

} // namespace

static void BM_EncodeForward(benchmark::State& state) {
    const ModelConfig m = bench_model(static_cast<int>(state.range(0)), 2);
    const ParameterStore params = init_parameters(m, 2);
    const SegmentSequence seq = bench_sequence(m);
    std::vector<int> all(m.t_len);
    for (int i = 0; i < m.t_len; ++i) all[i] = i;
    for (auto _ : state) {
        const ForwardTrace trace = encode(params, m, seq.segments, all, false, nullptr);
        benchmark::DoNotOptimize(trace.value()(0, 0));
    }
}
BENCHMARK(BM_EncodeForward)->Arg(32)->Arg(64)->Arg(128);

static void BM_PretrainStep(benchmark::State& state) {
    const ModelConfig m = bench_model(64, 2);
    ParameterStore params = init_parameters(m, 3);
    const SegmentSequence seq = bench_sequence(m);
    const TargetConfig target;
    Rng rng(4);
    for (auto _ : state) {
        const MaskPlan plan = sample_mask(m.t_len, 0.25, rng);
        ForwardTrace trace = pretrain_forward(params, m, seq, plan, target, false, nullptr);
        const ParameterStore grads = backward(trace, Tensor(1, 1, 1.0));
        benchmark::DoNotOptimize(grads.at("embed.weight")(0, 0));
    }
}
BENCHMARK(BM_PretrainStep);

static void BM_ClassifyStep(benchmark::State& state) {
    const ModelConfig m = bench_model(64, 2);
    ParameterStore params = init_parameters(m, 5);
    const SegmentSequence seq = bench_sequence(m);
    Tensor labels(1, m.n_labels);
    labels(0, 1) = 1;
    for (auto _ : state) {
        ForwardTrace trace = finetune_forward(params, m, seq, labels, false, nullptr);
        const ParameterStore grads = backward(trace, Tensor(1, 1, 1.0));
        benchmark::DoNotOptimize(grads.at("head.weight")(0, 0));
    }
}
BENCHMARK(BM_ClassifyStep);

static void BM_AdamWStep(benchmark::State& state) {
    const ModelConfig m = bench_model(128, 4);
    ParameterStore params = init_parameters(m, 6);
    const std::vector<std::string> names = pretrain_trainable(m);
    AdamWState st;
    ParameterStore grads;
    Rng rng(7);
    for (const auto& name : names) {
        const Tensor& p = params.at(name);
        st.m.add(name, Tensor(p.rows(), p.cols()));
        st.v.add(name, Tensor(p.rows(), p.cols()));
        Tensor g(p.rows(), p.cols());
        for (std::int64_t i = 0; i < g.numel(); ++i) g.data()[i] = 0.01 * rng.normal();
        grads.add(name, std::move(g));
    }
    OptimizerConfig opt;
    for (auto _ : state) {
        adamw_step(params, grads, st, names, opt, 1e-4);
        benchmark::DoNotOptimize(params.at("embed.weight")(0, 0));
    }
}
BENCHMARK(BM_AdamWStep);

static void BM_ApplyTarget(benchmark::State& state) {
    Rng rng(8);
    Tensor rows(50, 300);
    for (std::int64_t i = 0; i < rows.numel(); ++i) rows.data()[i] = rng.normal();
    const TargetConfig target;
    for (auto _ : state) {
        const Tensor out = apply_target(rows, target);
        benchmark::DoNotOptimize(out(0, 0));
    }
}
BENCHMARK(BM_ApplyTarget);

static void BM_SynthesizeRecord(benchmark::State& state) {
    const std::vector<std::uint8_t> labels{1, 0, 1};
    for (auto _ : state) {
        const auto samples = synthesize_signal(12, 5000, labels, 11);
        benchmark::DoNotOptimize(samples[0]);
    }
}
BENCHMARK(BM_SynthesizeRecord);

BENCHMARK_MAIN();
