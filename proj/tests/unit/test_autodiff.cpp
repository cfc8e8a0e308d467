#include <gtest/gtest.h>

#include <cmath>

#include "jam/autodiff.hpp"
#include "jam/error.hpp"
#include "jam/grad_check.hpp"
#include "jam/rng.hpp"

namespace {

using namespace jam;
using namespace jam::ad;

constexpr double kTol = 1e-7;

// Reduces any op output to a scalar with fixed random weights so every
// output element influences the loss differently.
Var weighted_sum(Var y, std::uint64_t seed) {
    Rng rng(seed);
    Var w = y.graph().constant(Tensor::randn(y.shape(), 1.0, rng));
    return sum(mul(y, w));
}

double check(const LossFn& f, const std::vector<Tensor>& params) {
    return grad_check(f, params).max_relative_error;
}

TEST(Autodiff, ElementwiseOpsGradients) {
    Rng rng(1);
    const Tensor a = Tensor::randn({3, 4}, 1.0, rng);
    const Tensor b = Tensor::randn({3, 4}, 1.0, rng);
    auto f = [](Graph&, const std::vector<Var>& p) {
        Var y = add(mul(p[0], p[1]), scale(sub(p[0], p[1]), 0.7));
        return weighted_sum(gelu(y), 5);
    };
    EXPECT_LT(check(f, {a, b}), kTol);
}

TEST(Autodiff, MatmulGradients) {
    Rng rng(2);
    const Tensor a = Tensor::randn({3, 5}, 1.0, rng);
    const Tensor b = Tensor::randn({5, 2}, 1.0, rng);
    const Tensor c = Tensor::randn({4, 5}, 1.0, rng);
    auto f = [](Graph&, const std::vector<Var>& p) {
        return add(weighted_sum(matmul(p[0], p[1]), 1), weighted_sum(matmul_nt(p[0], p[2]), 2));
    };
    EXPECT_LT(check(f, {a, b, c}), kTol);
    auto g = [](Graph&, const std::vector<Var>& p) { return weighted_sum(transpose(p[0]), 3); };
    EXPECT_LT(check(g, {a}), kTol);
}

TEST(Autodiff, LayerNormMatchesFormulaAndGradient) {
    Rng rng(3);
    const Tensor x = Tensor::randn({4, 6}, 2.0, rng);
    Graph g(false);
    const Tensor y = layer_norm(g.constant(x), 1e-5).value();
    for (std::size_t r = 0; r < 4; ++r) {
        double mu = 0.0, var = 0.0;
        for (std::size_t c = 0; c < 6; ++c) mu += x(r, c) / 6.0;
        for (std::size_t c = 0; c < 6; ++c) var += (x(r, c) - mu) * (x(r, c) - mu) / 6.0;
        for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(y(r, c), (x(r, c) - mu) / std::sqrt(var + 1e-5), 1e-12);
    }
    auto f = [](Graph&, const std::vector<Var>& p) { return weighted_sum(layer_norm(p[0], 1e-5), 4); };
    EXPECT_LT(check(f, {x}), kTol);
}

TEST(Autodiff, SoftmaxMatchesFormulaAndGradient) {
    Rng rng(4);
    const Tensor x = Tensor::randn({3, 5}, 1.5, rng);
    Graph g(false);
    const Tensor rows = softmax(g.constant(x), 1).value();
    const Tensor cols = softmax(g.constant(x), 0).value();
    for (std::size_t r = 0; r < 3; ++r) {
        double z = 0.0;
        for (std::size_t c = 0; c < 5; ++c) z += std::exp(x(r, c));
        for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(rows(r, c), std::exp(x(r, c)) / z, 1e-14);
    }
    for (std::size_t c = 0; c < 5; ++c) {
        double z = 0.0;
        for (std::size_t r = 0; r < 3; ++r) z += std::exp(x(r, c));
        for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(cols(r, c), std::exp(x(r, c)) / z, 1e-14);
    }
    for (int axis : {0, 1}) {
        auto f = [axis](Graph&, const std::vector<Var>& p) { return weighted_sum(softmax(p[0], axis), 6); };
        EXPECT_LT(check(f, {x}), kTol) << "axis " << axis;
    }
}

TEST(Autodiff, CrossEntropyMatchesFormulaAndIgnoresRows) {
    Rng rng(5);
    const Tensor x = Tensor::randn({4, 7}, 1.0, rng);
    const std::vector<std::int32_t> targets{3, kIgnoreTarget, 0, 6};
    Graph g(false);
    const double loss = cross_entropy(g.constant(x), targets).value().item();
    double expected = 0.0;
    for (std::size_t r : {0u, 2u, 3u}) {
        double z = 0.0;
        for (std::size_t c = 0; c < 7; ++c) z += std::exp(x(r, c));
        expected += std::log(z) - x(r, static_cast<std::size_t>(targets[r]));
    }
    EXPECT_NEAR(loss, expected / 3.0, 1e-12);

    auto f = [targets](Graph&, const std::vector<Var>& p) { return cross_entropy(p[0], targets); };
    const auto report = grad_check(f, {x});
    EXPECT_LT(report.max_relative_error, kTol);

    Graph rec;
    Var leaf = rec.leaf(x);
    rec.backward(cross_entropy(leaf, targets));
    const Tensor grad = rec.grad(leaf);
    for (std::size_t c = 0; c < 7; ++c) EXPECT_EQ(grad(1, c), 0.0);
}

TEST(Autodiff, CrossEntropyRejectsAllIgnored) {
    Graph g(false);
    const std::vector<std::int32_t> targets{kIgnoreTarget, kIgnoreTarget};
    EXPECT_THROW(cross_entropy(g.constant(Tensor({2, 3})), targets), DomainError);
}

TEST(Autodiff, AttentionGradientsAndCausality) {
    Rng rng(6);
    const Tensor q = Tensor::randn({5, 8}, 1.0, rng);
    const Tensor k = Tensor::randn({5, 8}, 1.0, rng);
    const Tensor v = Tensor::randn({5, 8}, 1.0, rng);
    for (bool causal : {true, false}) {
        auto f = [causal](Graph&, const std::vector<Var>& p) {
            return weighted_sum(attention(p[0], p[1], p[2], 2, causal), 7);
        };
        EXPECT_LT(check(f, {q, k, v}), kTol);
    }
    // Perturbing the last key/value leaves earlier causal outputs unchanged.
    Graph g(false);
    const Tensor before = attention(g.constant(q), g.constant(k), g.constant(v), 2, true).value();
    Tensor k2 = k, v2 = v;
    for (std::size_t c = 0; c < 8; ++c) {
        k2(4, c) += 1.0;
        v2(4, c) -= 1.0;
    }
    const Tensor after = attention(g.constant(q), g.constant(k2), g.constant(v2), 2, true).value();
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(before(r, c), after(r, c));
    }
}

TEST(Autodiff, AttentionMatchesPerHeadFormula) {
    Rng rng(7);
    const std::size_t T = 4, D = 6, H = 2, dh = 3;
    const Tensor q = Tensor::randn({T, D}, 1.0, rng);
    const Tensor k = Tensor::randn({T, D}, 1.0, rng);
    const Tensor v = Tensor::randn({T, D}, 1.0, rng);
    Graph g(false);
    const Tensor out = attention(g.constant(q), g.constant(k), g.constant(v), H, true).value();
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t i = 0; i < T; ++i) {
            std::vector<double> s(i + 1);
            double m = -1e300;
            for (std::size_t j = 0; j <= i; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < dh; ++c) dot += q(i, h * dh + c) * k(j, h * dh + c);
                s[j] = dot / std::sqrt(static_cast<double>(dh));
                m = std::max(m, s[j]);
            }
            double z = 0.0;
            for (auto& x : s) z += (x = std::exp(x - m));
            for (std::size_t c = 0; c < dh; ++c) {
                double y = 0.0;
                for (std::size_t j = 0; j <= i; ++j) y += s[j] / z * v(j, h * dh + c);
                EXPECT_NEAR(out(i, h * dh + c), y, 1e-12);
            }
        }
    }
}

TEST(Autodiff, GatherSliceConcatGradients) {
    Rng rng(8);
    const Tensor table = Tensor::randn({6, 3}, 1.0, rng);
    const Tensor other = Tensor::randn({4, 2}, 1.0, rng);
    auto f = [](Graph&, const std::vector<Var>& p) {
        const std::vector<std::size_t> ids{2, 0, 2, 5};
        Var rows = gather_rows(p[0], ids);
        Var joined = concat_cols(rows, p[1]);
        std::vector<Var> parts{slice_rows(joined, 1, 2), slice_rows(joined, 0, 1)};
        return weighted_sum(concat_rows(parts), 9);
    };
    EXPECT_LT(check(f, {table, other}), kTol);
}

TEST(Autodiff, ReusedNodesAccumulateGradients) {
    Graph g;
    Var x = g.leaf(Tensor({1}, std::vector<double>{3.0}));
    Var y = mul(x, x);  // x^2
    Var z = add(y, scale(x, 2.0));
    g.backward(sum(z));
    EXPECT_DOUBLE_EQ(g.grad(x)[0], 2 * 3.0 + 2.0);
}

TEST(Autodiff, BackwardRequiresScalar) {
    Graph g;
    Var x = g.leaf(Tensor({2, 2}));
    EXPECT_THROW(g.backward(x), ShapeError);
}

TEST(Autodiff, NonFiniteValuesAreRejected) {
    Graph g;
    Var x = g.leaf(Tensor({1, 1}, std::vector<double>{1e308}));
    EXPECT_THROW(scale(x, 1e10), NumericError);
}

TEST(Autodiff, ConstantsGetNoGradient) {
    Graph g;
    Var c = g.constant(Tensor({1}, std::vector<double>{2.0}));
    Var x = g.leaf(Tensor({1}, std::vector<double>{5.0}));
    g.backward(sum(mul(c, x)));
    EXPECT_DOUBLE_EQ(g.grad(x)[0], 2.0);
    EXPECT_FALSE(g.requires_grad(c.id()));
}

TEST(GradCheck, DetectsAWrongGradient) {
    // A custom op whose backward is off by 1% must be flagged.
    auto f = [](Graph& g, const std::vector<Var>& p) {
        Tensor y = p[0].value();
        for (double& v : y.data()) v = v * v;
        Var out = g.emit(std::move(y), {p[0]}, [in = p[0].id()](Graph& gr, std::size_t self) {
            const Tensor& up = gr.upstream(self);
            Tensor& dx = gr.grad_buffer(in);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += up[i] * 2.02 * gr.value(in)[i];
        }, "bad_square");
        return sum(out);
    };
    Rng rng(9);
    EXPECT_GT(grad_check(f, {Tensor::randn({3}, 1.0, rng)}).max_relative_error, 1e-3);
}

TEST(GradCheck, RelativeErrorFloor) {
    EXPECT_NEAR(relative_error(1.0, 1.1, 1e-4), 0.1 / 1.1, 1e-15);
    EXPECT_DOUBLE_EQ(relative_error(1e-9, 2e-9, 1e-4), 1e-9 / 1e-4);
}

}  // namespace
