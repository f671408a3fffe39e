#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "attncap/errors.hpp"
#include "attncap/layers.hpp"
#include "support.hpp"

using namespace attncap;
using testing_support::random_tensor;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor probe(Tape& tape, const Tensor& out, std::uint64_t seed) {
    Rng rng(seed);
    return sum(tape, mul(tape, out, random_tensor(out.shape(), rng, false)));
}

// −ln softmax(z)[t], evaluated directly in extended precision.
double direct_nll(std::span<const double> z, int t) {
    long double m = z[0];
    for (double v : z) {
        m = std::max<long double>(m, v);
    }
    long double total = 0;
    for (double v : z) {
        total += std::exp(static_cast<long double>(v) - m);
    }
    return static_cast<double>(std::log(total) + m - static_cast<long double>(z[static_cast<std::size_t>(t)]));
}

} // namespace

TEST(Xavier, BoundAndRange) {
    EXPECT_EQ(xavier_bound(3, 3), 1.0);
    EXPECT_EQ(xavier_bound(10, 20), std::sqrt(6.0 / 30.0));
    Tensor w = xavier_init(3, 3, 9);
    EXPECT_EQ(w.shape(), (Shape{3, 3}));
    for (double v : w.values()) {
        EXPECT_LE(std::abs(v), 1.0);
    }
    EXPECT_THROW(xavier_bound(0, 0), ContractError);
}

TEST(Xavier, VarianceMatchesUniformOracle) {
    // 100k samples in total from 128x128 draws.
    Rng rng(31);
    double sum = 0, sq = 0;
    std::size_t n = 0;
    const double bound = xavier_bound(128, 128);
    while (n < 100000) {
        Tensor w = xavier_init(128, 128, rng);
        for (double v : w.values()) {
            EXPECT_LE(std::abs(v), bound);
            sum += v;
            sq += v * v;
            ++n;
        }
    }
    const double mean = sum / static_cast<double>(n);
    const double var = sq / static_cast<double>(n) - mean * mean;
    EXPECT_NEAR(var, 1.0 / 128.0, 0.1 / 128.0);
}

TEST(Xavier, SameSeedSameTensor) { EXPECT_EQ(vals(xavier_init(5, 7, 42)), vals(xavier_init(5, 7, 42))); }

TEST(Dense, Examples) {
    Tape tape;
    DenseLayer id{Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor::vector({0, 0})};
    EXPECT_EQ(vals(dense_forward(tape, id, Tensor::matrix(1, 2, {2, 3}))), (std::vector<double>{2, 3}));
    DenseLayer constant{Tensor::matrix(1, 2, {0, 0}), Tensor::vector({5})};
    EXPECT_EQ(vals(dense_forward(tape, constant, Tensor::matrix(2, 2, {1, 2, 3, 4}))), (std::vector<double>{5, 5}));
    DenseLayer hand{Tensor::matrix(1, 2, {1, 1}), Tensor::vector({1})};
    EXPECT_EQ(vals(dense_forward(tape, hand, Tensor::matrix(1, 2, {2, 3}))), (std::vector<double>{6}));
    // Leading extents are kept.
    Rng rng(1);
    DenseLayer d = DenseLayer::init(3, 4, rng);
    EXPECT_EQ(dense_forward(tape, d, Tensor::zeros({2, 5, 3})).shape(), (Shape{2, 5, 4}));
}

TEST(Embedding, LookupAndScatter) {
    Rng rng(2);
    EmbeddingTable emb = EmbeddingTable::init(5, 3, rng);
    Tape tape;
    const int first[] = {0};
    auto row = vals(embedding_lookup(tape, emb, first));
    EXPECT_EQ(row, std::vector<double>(emb.table.values().begin(), emb.table.values().begin() + 3));

    const int twice[] = {3, 3};
    tape.backward(sum(tape, embedding_lookup(tape, emb, twice)));
    for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_EQ(emb.table.grad()[3 * 3 + j], 2.0);
        EXPECT_EQ(emb.table.grad()[0 * 3 + j], 0.0);
    }
    EXPECT_EQ(embedding_lookup(tape, emb, std::span<const int>()).shape(), (Shape{0, 3}));
    const int bad[] = {5};
    try {
        embedding_lookup(tape, emb, bad);
        FAIL();
    } catch (const IndexError& e) {
        EXPECT_NE(std::string(e.what()).find('5'), std::string::npos);
    }
}

TEST(Embedding, GradientCheck) {
    Rng rng(3);
    EmbeddingTable emb = EmbeddingTable::init(6, 4, rng);
    const int ids[] = {1, 4, 1, 0};
    EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, embedding_lookup(t, emb, ids), 7); }, {emb.table}), 1e-4);
}

TEST(Lstm, ZeroWeightsHandEvaluation) {
    Rng rng(4);
    LSTMCell cell = LSTMCell::init(2, 1, rng);
    for (Tensor* t : {&cell.w_input, &cell.w_forget, &cell.w_output, &cell.w_cell, &cell.b_input, &cell.b_forget,
                      &cell.b_output, &cell.b_cell}) {
        std::fill(t->mutable_values().begin(), t->mutable_values().end(), 0.0);
    }
    Tape tape;
    Tensor x = Tensor::matrix(1, 2, {0.3, -0.7});
    LSTMState s0 = lstm_step(tape, cell, x, Tensor::zeros({1, 1}), Tensor::zeros({1, 1}));
    EXPECT_EQ(s0.c.item(), 0.0);
    EXPECT_EQ(s0.h.item(), 0.0);
    LSTMState s1 = lstm_step(tape, cell, x, Tensor::zeros({1, 1}), Tensor::matrix(1, 1, {1.0}));
    EXPECT_DOUBLE_EQ(s1.c.item(), 0.5);
    EXPECT_DOUBLE_EQ(s1.h.item(), 0.5 * std::tanh(0.5));
    EXPECT_NEAR(s1.h.item(), 0.231, 5e-4);
}

TEST(Lstm, GradientCheckAllParametersAndStates) {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t d = 1 + rng.below(4), h = 1 + rng.below(4), b = 1 + rng.below(3);
        LSTMCell cell = LSTMCell::init(d, h, rng);
        // Biases start at zero; randomize them so their gradients are generic.
        for (Tensor* t : {&cell.b_input, &cell.b_forget, &cell.b_output, &cell.b_cell}) {
            for (double& v : t->mutable_values()) {
                v = rng.uniform(-1, 1);
            }
        }
        Tensor x = random_tensor({b, d}, rng);
        Tensor h0 = random_tensor({b, h}, rng);
        Tensor c0 = random_tensor({b, h}, rng);
        auto f = [&](Tape& t) {
            LSTMState s = lstm_step(t, cell, x, h0, c0);
            return add(t, probe(t, s.h, 1), probe(t, s.c, 2));
        };
        EXPECT_LE(gradient_check(f, {cell.w_input, cell.w_forget, cell.w_output, cell.w_cell, cell.b_input,
                                     cell.b_forget, cell.b_output, cell.b_cell, h0, c0, x}),
                  1e-4);
    }
}

TEST(Conv, HandExamples) {
    Tape tape;
    Tensor img = Tensor({1, 2, 2}, {1, 2, 3, 4});
    Conv2D ident{Tensor({1, 1, 1, 1}, {1.0}), Tensor::vector({0})};
    EXPECT_EQ(vals(conv2d_forward(tape, ident, img)), vals(img));
    Conv2D ones{Tensor::full({1, 1, 2, 2}, 1.0), Tensor::vector({0})};
    EXPECT_EQ(vals(conv2d_forward(tape, ones, img)), (std::vector<double>{10}));
    Conv2D zero{Tensor::zeros({1, 1, 2, 2}), Tensor::vector({7})};
    Tensor seven = conv2d_forward(tape, zero, Tensor::zeros({1, 4, 4}));
    EXPECT_EQ(seven.shape(), (Shape{1, 3, 3}));
    for (double v : seven.values()) {
        EXPECT_EQ(v, 7.0);
    }
}

TEST(Conv, OutputShapeArithmetic) {
    Rng rng(6);
    Tape tape(false);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t c = 1 + rng.below(3), oc = 1 + rng.below(3), k = 1 + rng.below(3), pad = rng.below(2);
        const std::size_t side = k + rng.below(5);
        Conv2D conv = Conv2D::init(c, oc, k, pad, rng);
        Tensor out = conv2d_forward(tape, conv, Tensor::zeros({2, c, side, side}));
        const std::size_t expect = side + 2 * pad - k + 1;
        EXPECT_EQ(out.shape(), (Shape{2, oc, expect, expect}));
    }
    Conv2D strided = Conv2D::init(1, 1, 2, 0, rng);
    strided.stride = 2;
    EXPECT_THROW(conv2d_forward(tape, strided, Tensor::zeros({1, 5, 5})), DimensionError);
    EXPECT_THROW(conv2d_forward(tape, strided, Tensor::zeros({2, 4, 4})), DimensionError);
}

TEST(Conv, GradientCheck) {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t c = 1 + rng.below(2), oc = 1 + rng.below(3), k = 1 + rng.below(3), pad = rng.below(2);
        const std::size_t side = k + rng.below(3);
        Conv2D conv = Conv2D::init(c, oc, k, pad, rng);
        for (double& v : conv.bias.mutable_values()) {
            v = rng.uniform(-1, 1);
        }
        Tensor img = random_tensor({2, c, side, side}, rng);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, conv2d_forward(t, conv, img), 3); },
                                 {conv.kernels, conv.bias, img}),
                  1e-4);
    }
}

TEST(MaxPool, ExamplesAndTieRule) {
    Tape tape;
    EXPECT_EQ(vals(maxpool2d(tape, Tensor({1, 2, 2}, {1, 2, 3, 4}))), (std::vector<double>{4}));
    Tensor flat = Tensor::full({1, 2, 2}, 3.0, true);
    Tensor y = maxpool2d(tape, flat);
    EXPECT_EQ(y.item(), 3.0);
    tape.backward(sum(tape, y));
    EXPECT_EQ(vals(Tensor({4}, Buffer(flat.grad().begin(), flat.grad().end()))), (std::vector<double>{1, 0, 0, 0}));
    EXPECT_THROW(maxpool2d(tape, Tensor::zeros({1, 3, 4})), DimensionError);
}

TEST(MaxPool, GradientCheckAtUniqueMaxima) {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        // Distinct values spaced far wider than the finite-difference step.
        std::vector<double> v(16);
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = 0.05 * static_cast<double>(i) - 0.4;
        }
        rng.shuffle(v);
        Tensor x({1, 4, 4}, v, true);
        EXPECT_LE(gradient_check([&](Tape& t) { return probe(t, maxpool2d(t, x), 4); }, {x}), 1e-4);
    }
}

TEST(CrossEntropy, Examples) {
    Tape tape;
    const int target[] = {2};
    Tensor sure = Tensor::matrix(1, 4, {-1e3, -1e3, 1e3, -1e3});
    EXPECT_EQ(cross_entropy_masked(tape, sure, target, 0).item(), 0.0);
    EXPECT_NEAR(cross_entropy_masked(tape, Tensor::zeros({1, 4}), target, 0).item(), std::log(4.0), 1e-15);
    const int pads[] = {0, 0};
    EXPECT_THROW(cross_entropy_masked(tape, Tensor::zeros({2, 4}), pads, 0), ContractError);
    const int oob[] = {4};
    EXPECT_THROW(cross_entropy_masked(tape, Tensor::zeros({1, 4}), oob, 0), IndexError);
}

TEST(CrossEntropy, MatchesDirectEvaluationAndOneHotForm) {
    Rng rng(9);
    Tape tape(false);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t v = 2 + rng.below(8);
        Tensor z = random_tensor({1, v}, rng, false, -10, 10);
        const int t = 1 + static_cast<int>(rng.below(v - 1));
        const int target[] = {t};
        const double loss = cross_entropy_masked(tape, z, target, 0).item();
        EXPECT_NEAR(loss, direct_nll(z.values(), t), 1e-12);
        // −Σ_k t_k ln p_k with a one-hot t.
        Tensor p = softmax(tape, z);
        double onehot = 0;
        for (std::size_t k = 0; k < v; ++k) {
            onehot -= (static_cast<int>(k) == t ? 1.0 : 0.0) * std::log(p.at(k));
        }
        EXPECT_NEAR(loss, onehot, 1e-12);
    }
}

TEST(CrossEntropy, PadExtensionIsBitExact) {
    Rng rng(10);
    Tape tape(false);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t rows = 1 + rng.below(6), v = 2 + rng.below(6), extra = 1 + rng.below(4);
        Tensor z = random_tensor({rows, v}, rng, false, -5, 5);
        std::vector<int> targets(rows);
        for (auto& t : targets) {
            t = 1 + static_cast<int>(rng.below(v - 1));
        }
        const double base = cross_entropy_masked(tape, z, targets, 0).item();
        Tensor padded = concat_rows(tape, {z, random_tensor({extra, v}, rng, false, -5, 5)});
        std::vector<int> padded_targets = targets;
        padded_targets.resize(rows + extra, 0);
        const double ext = cross_entropy_masked(tape, padded, padded_targets, 0).item();
        EXPECT_EQ(std::memcmp(&base, &ext, sizeof base), 0);
    }
}

TEST(CrossEntropy, GradientCheck) {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t rows = 1 + rng.below(5), v = 2 + rng.below(5);
        Tensor z = random_tensor({rows, v}, rng);
        std::vector<int> targets(rows);
        for (auto& t : targets) {
            t = static_cast<int>(rng.below(v));
        }
        targets[0] = 1;
        EXPECT_LE(gradient_check([&](Tape& t) { return cross_entropy_masked(t, z, targets, 0); }, {z}), 1e-4);
    }
}
