#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "mtecg/tensor.hpp"

using mtecg::Tensor;

TEST_CASE("construction and fill") {
    Tensor t(2, 3);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.numel() == 6);
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 3; ++c) CHECK(t(r, c) == 0.0);
    }

    Tensor u(2, 2, 1.5);
    CHECK(u(1, 1) == 1.5);
    u.fill(-2.0);
    CHECK(u(0, 1) == -2.0);

    Tensor empty;
    CHECK(empty.empty());
    CHECK(empty.numel() == 0);
}

TEST_CASE("negative dimensions throw") {
    CHECK_THROWS_AS(Tensor(-1, 2), std::invalid_argument);
    CHECK_THROWS_AS(Tensor(2, -1), std::invalid_argument);
}

TEST_CASE("row-major layout") {
    Tensor t = Tensor::from(2, 3, {1, 2, 3, 4, 5, 6});
    CHECK(t(0, 0) == 1);
    CHECK(t(0, 2) == 3);
    CHECK(t(1, 0) == 4);
    CHECK(t.data()[4] == 5);
    CHECK(t.row_ptr(1)[2] == 6);
}

TEST_CASE("from rejects wrong element count") {
    CHECK_THROWS_AS(Tensor::from(2, 2, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("row builder") {
    Tensor r = Tensor::row({7, 8, 9});
    CHECK(r.rows() == 1);
    CHECK(r.cols() == 3);
    CHECK(r(0, 2) == 9);
}

TEST_CASE("equality is exact") {
    Tensor a = Tensor::from(1, 2, {1.0, 2.0});
    Tensor b = Tensor::from(1, 2, {1.0, 2.0});
    CHECK(a == b);
    b(0, 1) = 2.0 + 1e-16;
    CHECK(a == b); // 2 + 1e-16 rounds back to 2
    b(0, 1) = 2.0000001;
    CHECK(a != b);
    CHECK(a != Tensor(2, 1));
}

TEST_CASE("max_abs_diff") {
    Tensor a = Tensor::from(1, 3, {1, 2, 3});
    Tensor b = Tensor::from(1, 3, {1, 2.5, 2});
    CHECK(mtecg::max_abs_diff(a, b) == doctest::Approx(1.0));
    CHECK_THROWS_AS(mtecg::max_abs_diff(a, Tensor(1, 2)), std::invalid_argument);
}

TEST_CASE("all_finite") {
    Tensor a(2, 2, 1.0);
    CHECK(a.all_finite());
    a(0, 1) = std::nan("");
    CHECK(!a.all_finite());
    a(0, 1) = INFINITY;
    CHECK(!a.all_finite());
}

TEST_CASE("same_shape and shape_str") {
    Tensor a(2, 3), b(2, 3), c(3, 2);
    CHECK(a.same_shape(b));
    CHECK(!a.same_shape(c));
    CHECK(a.shape_str() == "[2 x 3]");
}
