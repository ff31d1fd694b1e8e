#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtecg/metrics.hpp"

using namespace mtecg;

TEST_CASE("per-label counts and f1 from hand-tallied confusion") {
    // label 0: tp=2 fp=1 fn=1 tn=0 -> f1 = 4/6
    // label 1: all negative        -> f1 = 0 (empty denominator)
    // label 2: perfect             -> f1 = 1
    Tensor pred = Tensor::from(4, 3,
                               {1, 0, 1,
                                1, 0, 0,
                                1, 0, 1,
                                0, 0, 0});
    Tensor truth = Tensor::from(4, 3,
                                {1, 0, 1,
                                 0, 0, 0,
                                 1, 0, 1,
                                 1, 0, 0});
    const EvalResult res = macro_f1(pred, truth);
    CHECK(res.counts[0].tp == 2);
    CHECK(res.counts[0].fp == 1);
    CHECK(res.counts[0].fn == 1);
    CHECK(res.counts[0].tn == 0);
    CHECK(res.per_label_f1[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(res.counts[1].tn == 4);
    CHECK(res.per_label_f1[1] == 0.0);
    CHECK(res.per_label_f1[2] == 1.0);
    CHECK(res.macro == doctest::Approx((2.0 / 3.0 + 0.0 + 1.0) / 3.0).epsilon(1e-15));
}

TEST_CASE("macro f1 rejects bad input") {
    Tensor a(2, 2), b(2, 3);
    CHECK_THROWS_AS(macro_f1(a, b), std::invalid_argument);
    Tensor c(1, 2);
    c(0, 0) = 0.5;
    CHECK_THROWS_AS(macro_f1(c, Tensor(1, 2)), std::invalid_argument);
    Tensor d(1, 2);
    Tensor e(1, 2);
    e(0, 1) = 2.0;
    CHECK_THROWS_AS(macro_f1(d, e), std::invalid_argument);
}

TEST_CASE("thresholding is strict on the sigmoid") {
    Tensor z = Tensor::from(1, 4, {0.0, 1e-9, -1e-9, 40.0});
    const Tensor at_half = threshold_logits(z, 0.5);
    // sigmoid(0) == 0.5 exactly, strict > means negative
    CHECK(at_half(0, 0) == 0.0);
    CHECK(at_half(0, 1) == 1.0);
    CHECK(at_half(0, 2) == 0.0);
    CHECK(at_half(0, 3) == 1.0);

    const Tensor low = threshold_logits(z, 0.1);
    CHECK(low(0, 0) == 1.0);
    CHECK(low(0, 2) == 1.0);

    Tensor bad(1, 1);
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(threshold_logits(bad, 0.5), std::invalid_argument);
}

TEST_CASE("bce matches the naive formula where it is stable") {
    Tensor z = Tensor::from(1, 3, {0.3, -1.2, 2.0});
    Tensor y = Tensor::from(1, 3, {1, 0, 1});
    double naive = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double p = 1.0 / (1.0 + std::exp(-z(0, c)));
        naive += -(y(0, c) * std::log(p) + (1 - y(0, c)) * std::log(1 - p));
    }
    naive /= 3.0;
    CHECK(bce_with_logits(z, y) == doctest::Approx(naive).epsilon(1e-12));
}

TEST_CASE("bce survives saturated logits") {
    Tensor z = Tensor::from(1, 2, {5000.0, -5000.0});
    Tensor y = Tensor::from(1, 2, {1, 0});
    CHECK(bce_with_logits(z, y) == 0.0); // log1p(exp(-5000)) underflows to +0

    Tensor flip = Tensor::from(1, 2, {0, 1});
    const double v = bce_with_logits(z, flip);
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(5000.0).epsilon(1e-12));

    CHECK(bce_with_logits(Tensor(1, 1), Tensor(1, 1)) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK_THROWS_AS(bce_with_logits(Tensor(1, 2), Tensor(2, 1)), std::invalid_argument);
    CHECK_THROWS_AS(bce_with_logits(Tensor(0, 2), Tensor(0, 2)), std::invalid_argument);
}

TEST_CASE("report csv carries one row per label plus the macro summary") {
    Tensor pred = Tensor::from(2, 2, {1, 0, 1, 1});
    Tensor truth = Tensor::from(2, 2, {1, 0, 0, 1});
    const EvalResult res = macro_f1(pred, truth);
    const std::string csv = eval_report_csv(res, {"af", "lbbb"});

    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < csv.size()) {
        const std::size_t nl = csv.find('\n', start);
        lines.push_back(csv.substr(start, nl - start));
        start = nl + 1;
    }
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == "label,tp,fp,fn,tn,f1");
    CHECK(lines[1].substr(0, 3) == "af,");
    CHECK(lines[1].find(",1,1,0,0,") != std::string::npos); // tp,fp,fn,tn
    CHECK(lines[2].substr(0, 5) == "lbbb,");
    CHECK(lines[3].substr(0, 13) == "macro_f1,,,,,");
    CHECK(csv.back() == '\n');

    CHECK_THROWS_AS(eval_report_csv(res, {"only_one"}), std::invalid_argument);
}
