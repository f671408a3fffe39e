#include <gtest/gtest.h>

#include <cmath>

#include "attncap/errors.hpp"
#include "attncap/ops.hpp"
#include "support.hpp"

using namespace attncap;
using testing_support::random_shape;
using testing_support::random_tensor;

namespace {

// sum(out ⊙ R) for a fixed random R, so every output entry gets a distinct
// upstream gradient.
Tensor probe(Tape& tape, const Tensor& out, std::uint64_t seed) {
    Rng rng(seed);
    Tensor r = random_tensor(out.shape(), rng, false);
    return sum(tape, mul(tape, out, r));
}

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

constexpr int kTrials = 10;
constexpr double kTol = 1e-4;

} // namespace

TEST(Tensor, ConstructorChecksElementCount) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
    Tensor t({2, 3}, std::vector<double>(6, 1.0));
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t.size(), 6u);
}

TEST(Tensor, HandlesAliasStorage) {
    Tensor a = Tensor::zeros({2});
    Tensor b = a;
    b.mutable_values()[1] = 4.0;
    EXPECT_EQ(a.at(1), 4.0);
    Tensor c = a.detach();
    c.mutable_values()[0] = 9.0;
    EXPECT_EQ(a.at(0), 0.0);
}

TEST(Matmul, HandExamples) {
    Tape tape;
    Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    Tensor ones = Tensor::matrix(2, 1, {1, 1});
    EXPECT_EQ(vals(matmul(tape, a, ones)), (std::vector<double>{3, 7}));
    Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
    EXPECT_EQ(vals(matmul(tape, a, eye)), vals(a));
    Rng rng(3);
    Tensor z = matmul(tape, Tensor::zeros({3, 4}), random_tensor({4, 2}, rng, false));
    EXPECT_EQ(z.shape(), (Shape{3, 2}));
    for (double v : z.values()) {
        EXPECT_EQ(v, 0.0);
    }
    EXPECT_THROW(matmul(tape, a, Tensor::zeros({3, 1})), DimensionError);
}

TEST(Elementwise, SymmetryPointsAndOracle) {
    Tape tape;
    EXPECT_EQ(tanh(tape, Tensor::scalar(0)).item(), 0.0);
    EXPECT_EQ(sigmoid(tape, Tensor::scalar(0)).item(), 0.5);
    EXPECT_EQ(vals(relu(tape, Tensor::vector({-1, 2}))), (std::vector<double>{0, 2}));
    EXPECT_NEAR(sigmoid(tape, Tensor::scalar(1)).item(), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
    EXPECT_NEAR(sigmoid(tape, Tensor::scalar(1)).item(), 0.7310585786300049, 1e-15);
}

TEST(Elementwise, LogOfNonPositiveIsDomainError) {
    Tape tape;
    try {
        log(tape, Tensor::vector({1.0, 0.0}));
        FAIL() << "expected DomainError";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find('1'), std::string::npos);
    }
}

TEST(Softmax, Examples) {
    Tape tape;
    for (double v : vals(softmax(tape, Tensor::vector({0, 0, 0})))) {
        EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
    }
    EXPECT_EQ(vals(softmax(tape, Tensor::vector({1000, 1000}))), (std::vector<double>{0.5, 0.5}));
    auto p = vals(softmax(tape, Tensor::vector({std::log(1.0), std::log(3.0)})));
    EXPECT_NEAR(p[0], 0.25, 1e-15);
    EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
    Rng rng(11);
    Tape tape(false);
    for (int trial = 0; trial < 200; ++trial) {
        Shape shape = random_shape(rng, 2);
        Tensor x = random_tensor(shape, rng, false, -20, 20);
        const double c = rng.uniform(-500, 500);
        Tensor y = softmax(tape, x);
        Tensor ys = softmax(tape, add_const(tape, x, c));
        const std::size_t cols = shape[1];
        for (std::size_t r = 0; r < shape[0]; ++r) {
            double total = 0;
            for (std::size_t j = 0; j < cols; ++j) {
                total += y.at(r * cols + j);
                EXPECT_NEAR(y.at(r * cols + j), ys.at(r * cols + j), 1e-12);
            }
            EXPECT_NEAR(total, 1.0, 1e-12);
        }
    }
}

TEST(Reduce, Examples) {
    Tape tape;
    EXPECT_EQ(sum(tape, Tensor::vector({1, 2, 3})).item(), 6.0);
    EXPECT_EQ(mean(tape, Tensor::zeros({4, 4})).item(), 0.0);
    EXPECT_EQ(vals(sum(tape, Tensor::matrix(2, 2, {1, 2, 3, 4}), 0)), (std::vector<double>{4, 6}));
    EXPECT_THROW(sum(tape, Tensor::zeros({2, 2}), 2), DimensionError);
}

TEST(Backward, AnalyticExamples) {
    {
        Tape tape;
        Tensor x = Tensor::zeros({2, 3}, true);
        tape.backward(sum(tape, x));
        for (double g : x.grad()) {
            EXPECT_EQ(g, 1.0);
        }
    }
    {
        Tape tape;
        Tensor x = Tensor::scalar(3.0, true);
        tape.backward(mul(tape, x, x));
        EXPECT_EQ(x.grad()[0], 6.0);
    }
    {
        Tape tape;
        Tensor w = Tensor::matrix(1, 1, {0.0}, true);
        Tensor x = Tensor::matrix(1, 1, {1.0});
        tape.backward(sum(tape, sigmoid(tape, matmul(tape, w, x))));
        EXPECT_DOUBLE_EQ(w.grad()[0], 0.25);
        const double fd = gradient_check([&](Tape& t) { return sum(t, sigmoid(t, matmul(t, w, x))); }, {w});
        EXPECT_LE(fd, 1e-8);
    }
}

TEST(Backward, FanOutAccumulatesExactly) {
    Rng rng(5);
    Tensor x = random_tensor({3, 2}, rng);
    Tape tape;
    tape.backward(sum(tape, add(tape, x, x)));
    for (double g : x.grad()) {
        EXPECT_EQ(g, 2.0);
    }
}

TEST(Backward, NeedsScalarLoss) {
    Tape tape;
    Tensor x = Tensor::zeros({2}, true);
    Tensor y = scale(tape, x, 2.0);
    EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, NonRecordingTapeStaysEmpty) {
    Tape tape(false);
    Tensor x = Tensor::zeros({2, 2}, true);
    tanh(tape, matmul(tape, x, x));
    EXPECT_EQ(tape.size(), 0u);
}

TEST(GradientCheck, ContractExamples) {
    Rng rng(17);
    Tensor x = random_tensor({4, 3}, rng);
    EXPECT_LE(gradient_check([](Tape& t, const Tensor& v) { return sum(t, v); }, x), 1e-10);
    Tensor x9 = random_tensor({9}, rng);
    EXPECT_LE(gradient_check([](Tape& t, const Tensor& v) { return sum(t, tanh(t, v)); }, x9), 1e-4);

    // d softmax(x)_0 / dx at x = [0, 0] is [0.25, -0.25].
    Tensor z = Tensor::vector({0, 0}, true);
    Tape tape;
    Tensor s = softmax(tape, z);
    Tensor first = sum(tape, slice_cols(tape, reshape(tape, s, {1, 2}), 0, 1));
    tape.backward(first);
    EXPECT_NEAR(z.grad()[0], 0.25, 1e-15);
    EXPECT_NEAR(z.grad()[1], -0.25, 1e-15);
    EXPECT_LE(gradient_check(
                  [](Tape& t, const Tensor& v) {
                      return sum(t, slice_cols(t, reshape(t, softmax(t, v), {1, 2}), 0, 1));
                  },
                  Tensor::vector({0, 0}, true)),
              1e-8);
}

// Every differentiable op, on 10 random small inputs each.
TEST(GradientCheck, EveryOpOnRandomTensors) {
    Rng rng(2024);
    for (int trial = 0; trial < kTrials; ++trial) {
        const std::uint64_t seed = rng.next_u64();
        const std::size_t m = 1 + rng.below(6), k = 1 + rng.below(6), n = 1 + rng.below(6);
        Tensor a = random_tensor({m, k}, rng);
        Tensor b = random_tensor({k, n}, rng);
        Tensor w = random_tensor({n, k}, rng);
        Tensor bias = random_tensor({n}, rng);
        Tensor c = random_tensor({m, k}, rng);
        Tensor pos = random_tensor({m, k}, rng, true, 0.2, 1.0);
        Tensor r3 = random_tensor({m, k, n}, rng);
        Tensor r2 = random_tensor({m, n}, rng);
        Tensor weights = random_tensor({m, k}, rng);
        SCOPED_TRACE("trial " + std::to_string(trial));

        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, matmul(t, a, b), seed); }, {a, b}), kTol);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, affine(t, a, w, bias), seed); }, {a, w, bias}), kTol);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, affine(t, a, w, Tensor()), seed); }, {a, w}), kTol);
        for (Unary f : {Unary::tanh, Unary::sigmoid, Unary::exp, Unary::add_const, Unary::scale}) {
            EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, elementwise(t, a, f, 0.7), seed); }, {a}), kTol);
        }
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, log(t, pos), seed); }, {pos}), kTol);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, relu(t, a), seed); }, {a}), kTol);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, add(t, a, c), seed); }, {a, c}), kTol);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, sub(t, a, c), seed); }, {a, c}), kTol);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, mul(t, a, c), seed); }, {a, c}), kTol);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, mul(t, a, a), seed); }, {a}), kTol);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, add_expand(t, r3, r2, 1), seed); }, {r3, r2}),
                  kTol);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, add_expand(t, r3, c, 2), seed); }, {r3, c}), kTol);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, softmax(t, r3), seed); }, {r3}), kTol);
        for (std::size_t axis = 0; axis < 3; ++axis) {
            EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, sum(t, r3, axis), seed); }, {r3}), kTol);
            EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, mean(t, r3, axis), seed); }, {r3}), kTol);
        }
        EXPECT_LE(gradient_check([&](Tape& t) { return mean(t, tanh(t, r3)); }, {r3}), kTol);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, reshape(t, r3, {m * k, n}), seed); }, {r3}), kTol);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, concat_last(t, {a, c, a}), seed); }, {a, c}), kTol);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, concat_rows(t, {a, c}), seed); }, {a, c}), kTol);
        const std::size_t lo = rng.below(k);
        const std::size_t hi = lo + 1 + rng.below(k - lo);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, slice_cols(t, a, lo, hi), seed); }, {a}), kTol);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, weighted_sum(t, weights, r3), seed); },
                                 {weights, r3}),
                  kTol);
    }
}

TEST(Ops, FiniteInputsGiveFiniteOutputs) {
    Rng rng(8);
    Tape tape(false);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor x = random_tensor(random_shape(rng, 2), rng, false, -700, 700);
        for (const Tensor& y : {tanh(tape, x), sigmoid(tape, x), relu(tape, x), softmax(tape, x), mean(tape, x)}) {
            for (double v : y.values()) {
                EXPECT_TRUE(std::isfinite(v));
            }
        }
    }
}

TEST(Ops, ShapeErrors) {
    Tape tape;
    EXPECT_THROW(add(tape, Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
    EXPECT_THROW(reshape(tape, Tensor::zeros({2, 3}), {4}), DimensionError);
    EXPECT_THROW(concat_last(tape, {Tensor::zeros({2, 3}), Tensor::zeros({3, 3})}), DimensionError);
    EXPECT_THROW(slice_cols(tape, Tensor::zeros({2, 3}), 2, 4), DimensionError);
    EXPECT_THROW(affine(tape, Tensor::zeros({2, 3}), Tensor::zeros({4, 2}), Tensor()), DimensionError);
}
