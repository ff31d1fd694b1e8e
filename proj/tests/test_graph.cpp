#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "mtecg/graph.hpp"
#include "mtecg/rng.hpp"
#include "mtecg/tensor.hpp"

using mtecg::Graph;
using mtecg::NodeId;
using mtecg::Rng;
using mtecg::Tensor;

namespace {

Tensor random_tensor(int rows, int cols, Rng& rng, double scl = 1.0) {
    Tensor t(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) t(r, c) = scl * rng.normal();
    }
    return t;
}

// Central finite differences of a scalar-valued rebuildable computation with
// respect to every entry of every input, compared against one backward pass.
// tol floor: central differences carry ~eps*|f|/(2h) of rounding noise, which
// reaches the 1e-7 decade relative to O(1e-2) gradient entries.
void check_gradients(std::vector<Tensor> inputs,
                     const std::function<NodeId(Graph&, const std::vector<NodeId>&)>& build,
                     double tol = 5e-7) {
    Graph g;
    std::vector<NodeId> ids;
    for (auto& t : inputs) ids.push_back(g.leaf_ref(&t));
    const NodeId out = build(g, ids);
    REQUIRE(g.value(out).rows() == 1);
    REQUIRE(g.value(out).cols() == 1);
    g.backward(out, Tensor(1, 1, 1.0));

    const double h = 1e-6;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor analytic = g.grad(ids[i]);
        for (int r = 0; r < inputs[i].rows(); ++r) {
            for (int c = 0; c < inputs[i].cols(); ++c) {
                const double keep = inputs[i](r, c);

                inputs[i](r, c) = keep + h;
                Graph gp;
                std::vector<NodeId> idp;
                for (auto& t : inputs) idp.push_back(gp.leaf_ref(&t));
                const double fp = gp.value(build(gp, idp))(0, 0);

                inputs[i](r, c) = keep - h;
                Graph gm;
                std::vector<NodeId> idm;
                for (auto& t : inputs) idm.push_back(gm.leaf_ref(&t));
                const double fm = gm.value(build(gm, idm))(0, 0);

                inputs[i](r, c) = keep;
                const double fd = (fp - fm) / (2 * h);
                const double an = analytic(r, c);
                const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
                CHECK(std::abs(fd - an) / denom < tol);
            }
        }
    }
}

} // namespace

TEST_CASE("matmul forward") {
    Graph g;
    const NodeId a = g.leaf(Tensor::from(2, 3, {1, 2, 3, 4, 5, 6}));
    const NodeId b = g.leaf(Tensor::from(3, 2, {7, 8, 9, 10, 11, 12}));
    const Tensor& m = g.value(g.matmul(a, b));
    CHECK(m(0, 0) == 58);
    CHECK(m(0, 1) == 64);
    CHECK(m(1, 0) == 139);
    CHECK(m(1, 1) == 154);
}

TEST_CASE("matmul shape mismatch throws") {
    Graph g;
    const NodeId a = g.leaf(Tensor(2, 3));
    const NodeId b = g.leaf(Tensor(2, 2));
    CHECK_THROWS_AS(g.matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul_nt matches transposed matmul") {
    Rng rng(10);
    Tensor a = random_tensor(3, 4, rng);
    Tensor b = random_tensor(2, 4, rng);
    Graph g;
    const Tensor& out = g.value(g.matmul_nt(g.leaf(a), g.leaf(b)));
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 2; ++j) {
            double dot = 0;
            for (int k = 0; k < 4; ++k) dot += a(i, k) * b(j, k);
            CHECK(out(i, j) == doctest::Approx(dot).epsilon(1e-12));
        }
    }
}

TEST_CASE("add_rowvec broadcasts") {
    Graph g;
    const NodeId a = g.leaf(Tensor::from(2, 2, {1, 2, 3, 4}));
    const NodeId b = g.leaf(Tensor::row({10, 20}));
    const Tensor& out = g.value(g.add_rowvec(a, b));
    CHECK(out(0, 0) == 11);
    CHECK(out(1, 1) == 24);
}

TEST_CASE("layer_norm forward on a hand row") {
    Graph g;
    const double eps = 1e-6;
    const NodeId x = g.leaf(Tensor::row({1, 2, 3}));
    const NodeId gamma = g.leaf(Tensor::row({1, 1, 1}));
    const NodeId beta = g.leaf(Tensor::row({0, 0, 0}));
    const Tensor& out = g.value(g.layer_norm(x, gamma, beta, eps));
    const double s = std::sqrt(2.0 / 3.0 + eps);
    CHECK(out(0, 0) == doctest::Approx(-1.0 / s).epsilon(1e-12));
    CHECK(out(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(out(0, 2) == doctest::Approx(1.0 / s).epsilon(1e-12));
}

TEST_CASE("layer_norm applies scale and shift") {
    Graph g;
    const NodeId x = g.leaf(Tensor::row({1, 2, 3}));
    const NodeId gamma = g.leaf(Tensor::row({2, 2, 2}));
    const NodeId beta = g.leaf(Tensor::row({5, 5, 5}));
    const Tensor& out = g.value(g.layer_norm(x, gamma, beta, 1e-6));
    CHECK(out(0, 1) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(out(0, 2) - 5.0 == doctest::Approx(-(out(0, 0) - 5.0)).epsilon(1e-12));
}

TEST_CASE("gelu values") {
    Graph g;
    const NodeId x = g.leaf(Tensor::row({0.0, 10.0, -10.0, 1.0}));
    const Tensor& out = g.value(g.gelu(x));
    CHECK(out(0, 0) == 0.0);
    CHECK(out(0, 1) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(out(0, 2) == doctest::Approx(0.0).epsilon(1e-9));
    // 0.5 * (1 + erf(1/sqrt(2))) = Phi(1)
    CHECK(out(0, 3) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and shift-invariant") {
    Rng rng(11);
    Tensor x = random_tensor(3, 5, rng, 3.0);
    Graph g;
    const Tensor& s = g.value(g.softmax_rows(g.leaf(x)));
    for (int r = 0; r < 3; ++r) {
        double sum = 0;
        for (int c = 0; c < 5; ++c) {
            CHECK(s(r, c) > 0);
            sum += s(r, c);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    Tensor shifted = x;
    for (int c = 0; c < 5; ++c) shifted(1, c) += 100.0;
    Graph g2;
    const Tensor& s2 = g2.value(g2.softmax_rows(g2.leaf(shifted)));
    for (int c = 0; c < 5; ++c) CHECK(s2(1, c) == doctest::Approx(s(1, c)).epsilon(1e-9));
}

TEST_CASE("slice concat gather repeat mean") {
    Graph g;
    const NodeId x = g.leaf(Tensor::from(3, 2, {1, 2, 3, 4, 5, 6}));
    CHECK(g.value(g.slice_rows(x, 1, 2))(0, 0) == 3);
    CHECK(g.value(g.slice_cols(x, 1, 1))(2, 0) == 6);
    const NodeId cat = g.concat_rows({x, x});
    CHECK(g.value(cat).rows() == 6);
    CHECK(g.value(cat)(4, 1) == 4);
    const NodeId cc = g.concat_cols({x, x});
    CHECK(g.value(cc).cols() == 4);
    CHECK(g.value(cc)(1, 3) == 4);
    const NodeId gat = g.gather_rows(x, {2, 0, 2});
    CHECK(g.value(gat)(0, 0) == 5);
    CHECK(g.value(gat)(1, 0) == 1);
    CHECK(g.value(gat)(2, 1) == 6);
    const NodeId rep = g.repeat_row(g.leaf(Tensor::row({7, 8})), 3);
    CHECK(g.value(rep).rows() == 3);
    CHECK(g.value(rep)(2, 1) == 8);
    const Tensor& mean = g.value(g.mean_rows(x));
    CHECK(mean.rows() == 1);
    CHECK(mean(0, 0) == doctest::Approx(3.0));
    CHECK(mean(0, 1) == doctest::Approx(4.0));
}

TEST_CASE("gather_rows rejects bad indices") {
    Graph g;
    const NodeId x = g.leaf(Tensor(2, 2));
    CHECK_THROWS_AS(g.gather_rows(x, {0, 2}), std::invalid_argument);
    CHECK_THROWS_AS(g.gather_rows(x, {-1}), std::invalid_argument);
}

TEST_CASE("sum_squares and sub_const") {
    Graph g;
    const NodeId x = g.leaf(Tensor::from(1, 3, {1, 2, 2}));
    const NodeId d = g.sub_const(x, Tensor::from(1, 3, {0, 0, 1}));
    const Tensor& ss = g.value(g.sum_squares(d));
    CHECK(ss.rows() == 1);
    CHECK(ss(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("bce matches the stable formula and saturates safely") {
    Graph g;
    Tensor labels = Tensor::from(1, 3, {1, 0, 1});
    const NodeId z = g.leaf(Tensor::from(1, 3, {0.3, -0.7, 2.0}));
    const Tensor& loss = g.value(g.bce_with_logits_mean(z, labels));
    auto ref = [](double zz, double yy) {
        return std::max(zz, 0.0) - zz * yy + std::log1p(std::exp(-std::abs(zz)));
    };
    const double want = (ref(0.3, 1) + ref(-0.7, 0) + ref(2.0, 1)) / 3.0;
    CHECK(loss(0, 0) == doctest::Approx(want).epsilon(1e-12));

    Graph g2;
    const NodeId big = g2.leaf(Tensor::from(1, 2, {5000.0, -5000.0}));
    const Tensor& l2 = g2.value(g2.bce_with_logits_mean(big, Tensor::from(1, 2, {1, 0})));
    CHECK(l2(0, 0) == 0.0);
    Graph g3;
    const NodeId worst = g3.leaf(Tensor::from(1, 1, {-5000.0}));
    const Tensor& l3 = g3.value(g3.bce_with_logits_mean(worst, Tensor::from(1, 1, {1})));
    CHECK(l3(0, 0) == doctest::Approx(5000.0).epsilon(1e-12));
}

TEST_CASE("gradients: matmul chain") {
    Rng rng(20);
    check_gradients({random_tensor(2, 3, rng), random_tensor(3, 4, rng)},
                    [](Graph& g, const std::vector<NodeId>& in) {
                        return g.sum_squares(g.matmul(in[0], in[1]));
                    });
}

TEST_CASE("gradients: matmul_nt") {
    Rng rng(21);
    check_gradients({random_tensor(2, 3, rng), random_tensor(4, 3, rng)},
                    [](Graph& g, const std::vector<NodeId>& in) {
                        return g.sum_squares(g.matmul_nt(in[0], in[1]));
                    });
}

TEST_CASE("gradients: add add_rowvec scale") {
    Rng rng(22);
    check_gradients({random_tensor(3, 4, rng), random_tensor(3, 4, rng), random_tensor(1, 4, rng)},
                    [](Graph& g, const std::vector<NodeId>& in) {
                        return g.sum_squares(g.scale(g.add_rowvec(g.add(in[0], in[1]), in[2]), 0.7));
                    });
}

TEST_CASE("gradients: layer_norm") {
    Rng rng(23);
    check_gradients({random_tensor(3, 5, rng), random_tensor(1, 5, rng), random_tensor(1, 5, rng)},
                    [](Graph& g, const std::vector<NodeId>& in) {
                        return g.sum_squares(g.layer_norm(in[0], in[1], in[2], 1e-6));
                    },
                    1e-6);
}

TEST_CASE("gradients: gelu") {
    Rng rng(24);
    check_gradients({random_tensor(2, 6, rng)}, [](Graph& g, const std::vector<NodeId>& in) {
        return g.sum_squares(g.gelu(in[0]));
    });
}

TEST_CASE("gradients: softmax_rows") {
    Rng rng(25);
    check_gradients({random_tensor(3, 4, rng), random_tensor(4, 3, rng)},
                    [](Graph& g, const std::vector<NodeId>& in) {
                        return g.sum_squares(g.matmul(g.softmax_rows(in[0]), in[1]));
                    });
}

TEST_CASE("gradients: slicing and concatenation") {
    Rng rng(26);
    check_gradients({random_tensor(4, 4, rng), random_tensor(2, 4, rng)},
                    [](Graph& g, const std::vector<NodeId>& in) {
                        const NodeId top = g.slice_rows(in[0], 0, 2);
                        const NodeId cat = g.concat_rows({top, in[1]});
                        const NodeId cols = g.concat_cols({g.slice_cols(cat, 0, 2), g.slice_cols(cat, 2, 2)});
                        return g.sum_squares(cols);
                    });
}

TEST_CASE("gradients: gather with repeated index accumulates") {
    Rng rng(27);
    check_gradients({random_tensor(3, 3, rng)}, [](Graph& g, const std::vector<NodeId>& in) {
        return g.sum_squares(g.gather_rows(in[0], {0, 2, 0, 0}));
    });
}

TEST_CASE("gradients: repeat_row mean_rows sub_const") {
    Rng rng(28);
    check_gradients({random_tensor(1, 5, rng), random_tensor(4, 5, rng)},
                    [](Graph& g, const std::vector<NodeId>& in) {
                        const NodeId rep = g.repeat_row(in[0], 4);
                        const NodeId m = g.mean_rows(g.add(rep, in[1]));
                        return g.sum_squares(g.sub_const(m, Tensor(1, 5, 0.3)));
                    });
}

TEST_CASE("gradients: bce") {
    Rng rng(29);
    Tensor labels(1, 6);
    for (int c = 0; c < 6; ++c) labels(0, c) = c % 2;
    check_gradients({random_tensor(1, 6, rng, 2.0)},
                    [labels](Graph& g, const std::vector<NodeId>& in) {
                        return g.bce_with_logits_mean(in[0], labels);
                    });
}

TEST_CASE("backward only once") {
    Graph g;
    const NodeId x = g.leaf(Tensor(1, 2, 1.0));
    const NodeId out = g.sum_squares(x);
    g.backward(out, Tensor(1, 1, 1.0));
    CHECK(g.backward_done());
    CHECK_THROWS_AS(g.backward(out, Tensor(1, 1, 1.0)), std::logic_error);
}

TEST_CASE("upstream shape must match root") {
    Graph g;
    const NodeId x = g.leaf(Tensor(2, 2, 1.0));
    const NodeId out = g.sum_squares(x);
    CHECK_THROWS_AS(g.backward(out, Tensor(2, 1, 1.0)), std::invalid_argument);
}

TEST_CASE("zero upstream gives zero gradients") {
    Graph g;
    const NodeId x = g.leaf(Tensor(2, 2, 3.0));
    const NodeId out = g.sum_squares(g.gelu(x));
    g.backward(out, Tensor(1, 1, 0.0));
    const Tensor& grad = g.grad(x);
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 2; ++c) CHECK(grad(r, c) == 0.0);
    }
}

TEST_CASE("nodes unreachable from the root get zero gradients") {
    Graph g;
    const NodeId a = g.leaf(Tensor(2, 2, 1.0));
    const NodeId b = g.leaf(Tensor(2, 2, 5.0));
    (void)g.add(a, b); // side branch, not part of the root
    const NodeId out = g.sum_squares(a);
    g.backward(out, Tensor(1, 1, 1.0));
    const Tensor& gb = g.grad(b);
    CHECK(gb.same_shape(g.value(b)));
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 2; ++c) CHECK(gb(r, c) == 0.0);
    }
}

TEST_CASE("replay reproduces values bit-exactly") {
    Rng rng(30);
    Tensor a = random_tensor(3, 3, rng);
    Tensor w = random_tensor(3, 3, rng);
    Graph g;
    const NodeId out = g.sum_squares(g.gelu(g.matmul(g.leaf_ref(&a), g.leaf_ref(&w))));
    const double before = g.value(out)(0, 0);
    g.replay();
    CHECK(g.value(out)(0, 0) == before);
}

TEST_CASE("leaf_ref sees caller updates on replay") {
    Tensor a(1, 1, 2.0);
    Graph g;
    const NodeId out = g.sum_squares(g.leaf_ref(&a));
    CHECK(g.value(out)(0, 0) == 4.0);
    a(0, 0) = 3.0;
    g.replay();
    CHECK(g.value(out)(0, 0) == 9.0);
}
