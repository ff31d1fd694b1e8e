#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtecg/checkpoint.hpp"
#include "mtecg/rng.hpp"

using namespace mtecg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static const fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "mtecg_ck_test";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

Checkpoint sample_checkpoint() {
    Checkpoint ck;
    ck.stage = "pretrain";
    ck.model.t_len = 4;
    ck.model.d_seg = 3;
    ck.model.d_model = 8;
    ck.model.n_heads = 2;
    ck.model.n_layers = 2;
    ck.model.d_decoder = 4;
    ck.model.decoder_heads = 2;
    ck.model.n_labels = 5;
    ck.model.droppath_rate = 0.1;
    ck.model.classifier = ClassifierKind::aux_token;
    ck.target.kind = TargetKind::signed_sqrt;
    ck.masking_ratio = 0.375;
    ck.optimizer.base_lr = 2.5e-4;
    ck.optimizer.batch_size = 17;
    ck.schedule.total_epochs = 9;
    ck.schedule.warmup_epochs = 2;
    ck.schedule.steps_per_epoch = 3;
    ck.schedule.min_lr = 1e-6;
    ck.epochs_done = 4;

    Rng rng(99);
    ck.params = init_parameters(ck.model, 99);
    for (const auto& name : ck.params.names()) {
        const Tensor& p = ck.params.at(name);
        Tensor m(p.rows(), p.cols()), v(p.rows(), p.cols());
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            m.data()[i] = rng.normal() * 0.01;
            v.data()[i] = rng.uniform() * 0.001;
        }
        ck.opt_state.m.add(name, std::move(m));
        ck.opt_state.v.add(name, std::move(v));
    }
    ck.opt_state.step = 123;
    rng.uniform();
    ck.rng_state = rng.state();
    return ck;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_CASE("checkpoint round-trips every field") {
    const Checkpoint ck = sample_checkpoint();
    const fs::path f = temp_dir() / "roundtrip.ckpt";
    save_checkpoint(ck, f);
    const Checkpoint got = load_checkpoint(f);

    CHECK(got.stage == ck.stage);
    CHECK(got.model.t_len == ck.model.t_len);
    CHECK(got.model.d_seg == ck.model.d_seg);
    CHECK(got.model.d_model == ck.model.d_model);
    CHECK(got.model.n_heads == ck.model.n_heads);
    CHECK(got.model.n_layers == ck.model.n_layers);
    CHECK(got.model.d_decoder == ck.model.d_decoder);
    CHECK(got.model.decoder_heads == ck.model.decoder_heads);
    CHECK(got.model.mlp_ratio == ck.model.mlp_ratio);
    CHECK(got.model.droppath_rate == ck.model.droppath_rate);
    CHECK(got.model.n_labels == ck.model.n_labels);
    CHECK(got.model.classifier == ck.model.classifier);
    CHECK(got.model.ln_eps == ck.model.ln_eps);
    CHECK(got.target.kind == ck.target.kind);
    CHECK(got.target.epsilon == ck.target.epsilon);
    CHECK(got.masking_ratio == ck.masking_ratio);
    CHECK(got.optimizer.beta1 == ck.optimizer.beta1);
    CHECK(got.optimizer.beta2 == ck.optimizer.beta2);
    CHECK(got.optimizer.weight_decay == ck.optimizer.weight_decay);
    CHECK(got.optimizer.base_lr == ck.optimizer.base_lr);
    CHECK(got.optimizer.batch_size == ck.optimizer.batch_size);
    CHECK(got.optimizer.eps == ck.optimizer.eps);
    CHECK(got.schedule.total_epochs == ck.schedule.total_epochs);
    CHECK(got.schedule.warmup_epochs == ck.schedule.warmup_epochs);
    CHECK(got.schedule.steps_per_epoch == ck.schedule.steps_per_epoch);
    CHECK(got.schedule.min_lr == ck.schedule.min_lr);
    CHECK(got.epochs_done == ck.epochs_done);
    CHECK(got.rng_state == ck.rng_state);
    CHECK(got.opt_state.step == ck.opt_state.step);

    CHECK(got.params.names() == ck.params.names());
    for (const auto& name : ck.params.names()) {
        CHECK(got.params.at(name) == ck.params.at(name));
        CHECK(got.opt_state.m.at(name) == ck.opt_state.m.at(name));
        CHECK(got.opt_state.v.at(name) == ck.opt_state.v.at(name));
    }

    // a restored rng state continues the original stream
    Rng a(0), b(0);
    a.set_state(got.rng_state);
    b.set_state(ck.rng_state);
    for (int i = 0; i < 10; ++i) CHECK(a.uniform() == b.uniform());
}

TEST_CASE("save is byte-deterministic and save(load(f)) == f") {
    const Checkpoint ck = sample_checkpoint();
    const fs::path f1 = temp_dir() / "det1.ckpt";
    const fs::path f2 = temp_dir() / "det2.ckpt";
    save_checkpoint(ck, f1);
    save_checkpoint(ck, f2);
    const auto b1 = slurp(f1);
    CHECK(b1 == slurp(f2));

    const Checkpoint loaded = load_checkpoint(f1);
    const fs::path f3 = temp_dir() / "det3.ckpt";
    save_checkpoint(loaded, f3);
    CHECK(b1 == slurp(f3));
}

TEST_CASE("special float values survive the payload") {
    Checkpoint ck = sample_checkpoint();
    Tensor& t = ck.params.at("embed.weight");
    t(0, 0) = -0.0;
    t(0, 1) = 1e-308; // subnormal territory
    t(0, 2) = 0x1.fffffffffffffp+1023;
    const fs::path f = temp_dir() / "special.ckpt";
    save_checkpoint(ck, f);
    const Checkpoint got = load_checkpoint(f);
    CHECK(std::signbit(got.params.at("embed.weight")(0, 0)));
    CHECK(got.params.at("embed.weight")(0, 1) == 1e-308);
    CHECK(got.params.at("embed.weight")(0, 2) == 0x1.fffffffffffffp+1023);
}

TEST_CASE("flipping any byte trips the checksum") {
    const Checkpoint ck = sample_checkpoint();
    const fs::path f = temp_dir() / "corrupt.ckpt";
    save_checkpoint(ck, f);
    const auto orig = slurp(f);

    // flip a payload byte, a header byte, and a trailer byte
    for (const std::size_t at : {orig.size() / 2, static_cast<std::size_t>(24), orig.size() - 2}) {
        auto bytes = orig;
        bytes[at] = static_cast<char>(bytes[at] ^ 0x40);
        const fs::path g = temp_dir() / "corrupt_mod.ckpt";
        spit(g, bytes);
        CHECK_THROWS_WITH_AS(load_checkpoint(g), doctest::Contains("checksum mismatch"),
                             std::runtime_error);
    }
}

TEST_CASE("truncation and foreign files are rejected") {
    const Checkpoint ck = sample_checkpoint();
    const fs::path f = temp_dir() / "trunc_src.ckpt";
    save_checkpoint(ck, f);
    const auto orig = slurp(f);

    auto head = orig;
    head.resize(10);
    const fs::path g = temp_dir() / "trunc10.ckpt";
    spit(g, head);
    CHECK_THROWS_WITH_AS(load_checkpoint(g), doctest::Contains("truncated"), std::runtime_error);

    auto most = orig;
    most.resize(orig.size() - 9);
    const fs::path h = temp_dir() / "trunc_tail.ckpt";
    spit(h, most);
    CHECK_THROWS_AS(load_checkpoint(h), std::runtime_error);

    const fs::path j = temp_dir() / "foreign.ckpt";
    spit(j, std::vector<char>(64, 'x'));
    CHECK_THROWS_WITH_AS(load_checkpoint(j), doctest::Contains("not a checkpoint file"),
                         std::runtime_error);

    CHECK_THROWS_WITH_AS(load_checkpoint(temp_dir() / "nope.ckpt"),
                         doctest::Contains("cannot open"), std::runtime_error);
}

TEST_CASE("an unsupported version is refused up front") {
    const Checkpoint ck = sample_checkpoint();
    const fs::path f = temp_dir() / "version_src.ckpt";
    save_checkpoint(ck, f);
    auto bytes = slurp(f);
    bytes[8] = 9; // version field sits right after the magic, checked before the crc
    const fs::path g = temp_dir() / "version_mod.ckpt";
    spit(g, bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(g), doctest::Contains("unsupported version 9"),
                         std::runtime_error);
}

TEST_CASE("finetune-stage checkpoints round-trip without decoder tensors") {
    Checkpoint ck = sample_checkpoint();
    ck.stage = "finetune";
    ParameterStore fin;
    for (const auto& [name, shape] : parameter_shapes(ck.model, CountScope::finetune_model)) {
        Tensor t(shape.first, shape.second, 0.25);
        fin.add(name, std::move(t));
    }
    ck.params = fin;
    ck.opt_state = AdamWState{};
    const fs::path f = temp_dir() / "finetune.ckpt";
    save_checkpoint(ck, f);
    const Checkpoint got = load_checkpoint(f);
    CHECK(got.stage == "finetune");
    CHECK(got.params.names() == ck.params.names());
    CHECK(got.opt_state.m.names().empty());
    CHECK(got.opt_state.step == 0);
}
