#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mtecg/rng.hpp"
#include "mtecg/targets.hpp"

using namespace mtecg;

TEST_CASE("kind names parse and print") {
    CHECK(parse_target_kind("identity") == TargetKind::identity);
    CHECK(parse_target_kind("psn") == TargetKind::per_segment_norm);
    CHECK(parse_target_kind("ssqrt") == TargetKind::signed_sqrt);
    CHECK(std::string(target_kind_name(TargetKind::per_segment_norm)) == "psn");
    CHECK_THROWS_AS(parse_target_kind("none"), std::invalid_argument);
}

TEST_CASE("identity passes through") {
    Tensor x = Tensor::from(2, 2, {1.5, -2, 0, 7});
    TargetConfig cfg;
    cfg.kind = TargetKind::identity;
    CHECK(apply_target(x, cfg) == x);
}

TEST_CASE("signed sqrt is exact on perfect squares") {
    TargetConfig cfg;
    cfg.kind = TargetKind::signed_sqrt;
    const Tensor out = apply_target(Tensor::from(1, 3, {4, -9, 0}), cfg);
    CHECK(out(0, 0) == 2.0);
    CHECK(out(0, 1) == -3.0);
    CHECK(out(0, 2) == 0.0);

    const Tensor frac = apply_target(Tensor::from(1, 2, {0.25, -0.25}), cfg);
    CHECK(frac(0, 0) == 0.5);
    CHECK(frac(0, 1) == -0.5);
}

TEST_CASE("signed sqrt amplifies small magnitudes") {
    TargetConfig cfg;
    cfg.kind = TargetKind::signed_sqrt;
    const Tensor out = apply_target(Tensor::from(1, 2, {0.01, -0.0001}), cfg);
    CHECK(out(0, 0) == doctest::Approx(0.1));
    CHECK(out(0, 1) == doctest::Approx(-0.01));
}

TEST_CASE("per-segment norm on a hand row") {
    TargetConfig cfg; // psn default
    const double eps = 1e-6;
    const Tensor out = apply_target(Tensor::from(1, 3, {1, 2, 3}), cfg);
    const double s = std::sqrt(2.0 / 3.0 + eps);
    CHECK(out(0, 0) == doctest::Approx(-1.0 / s).epsilon(1e-14));
    CHECK(out(0, 1) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(out(0, 2) == doctest::Approx(1.0 / s).epsilon(1e-14));
}

TEST_CASE("per-segment norm maps constant rows to exact zeros") {
    TargetConfig cfg;
    for (double v : {0.0, 1.0, -3.25, 1e-9}) {
        const Tensor out = apply_target(Tensor(3, 8, v), cfg);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 8; ++c) CHECK(out(r, c) == 0.0);
        }
    }
}

TEST_CASE("per-segment norm output is centered, rows independent") {
    Rng rng(50);
    TargetConfig cfg;
    Tensor x(6, 40);
    for (int r = 0; r < 6; ++r) {
        for (int c = 0; c < 40; ++c) x(r, c) = 3.0 * rng.normal() + r;
    }
    const Tensor out = apply_target(x, cfg);
    for (int r = 0; r < 6; ++r) {
        double mean = 0.0;
        for (int c = 0; c < 40; ++c) mean += out(r, c);
        mean /= 40;
        CHECK(std::abs(mean) < 1e-10);
        double var = 0.0;
        for (int c = 0; c < 40; ++c) var += out(r, c) * out(r, c);
        var /= 40;
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4)); // eps shrinks it slightly
    }
}

TEST_CASE("per-segment norm scales rows to unit spread regardless of offset") {
    TargetConfig cfg;
    const Tensor a = apply_target(Tensor::from(1, 4, {0, 1, 2, 3}), cfg);
    const Tensor b = apply_target(Tensor::from(1, 4, {100, 101, 102, 103}), cfg);
    for (int c = 0; c < 4; ++c) CHECK(a(0, c) == doctest::Approx(b(0, c)).epsilon(1e-12));
}

TEST_CASE("validation") {
    TargetConfig bad;
    bad.epsilon = 0.0;
    CHECK_THROWS_AS(apply_target(Tensor(1, 2, 1.0), bad), std::invalid_argument);

    TargetConfig cfg;
    Tensor nonfinite(1, 2, 1.0);
    nonfinite(0, 1) = std::nan("");
    CHECK_THROWS_AS(apply_target(nonfinite, cfg), std::invalid_argument);
}
