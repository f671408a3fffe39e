#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "attncap/tensor.hpp"

namespace attncap {

// Differentiable tensor operations. Each records itself on the tape when any
// input requires a gradient.

// [m×k]·[k×n] -> [m×n].
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// x·Wᵀ + b for x [rows×in], W [out×in], b [out] (b may be undefined).
Tensor affine(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);

enum class Unary { tanh, sigmoid, relu, exp, log, add_const, scale };

// Entrywise f(x). `param` is the constant for add_const and the factor for scale.
Tensor elementwise(Tape& tape, const Tensor& x, Unary f, double param = 0.0);

inline Tensor tanh(Tape& t, const Tensor& x) { return elementwise(t, x, Unary::tanh); }
inline Tensor sigmoid(Tape& t, const Tensor& x) { return elementwise(t, x, Unary::sigmoid); }
inline Tensor relu(Tape& t, const Tensor& x) { return elementwise(t, x, Unary::relu); }
inline Tensor exp(Tape& t, const Tensor& x) { return elementwise(t, x, Unary::exp); }
inline Tensor log(Tape& t, const Tensor& x) { return elementwise(t, x, Unary::log); }
inline Tensor add_const(Tape& t, const Tensor& x, double c) { return elementwise(t, x, Unary::add_const, c); }
inline Tensor scale(Tape& t, const Tensor& x, double s) { return elementwise(t, x, Unary::scale, s); }

// Same-shape binary ops.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);

// x + y where y has x's shape with `axis` removed; y is repeated along that axis.
Tensor add_expand(Tape& tape, const Tensor& x, const Tensor& y, std::size_t axis);

// Softmax over the last axis, max-subtracted.
Tensor softmax(Tape& tape, const Tensor& x);

enum class Reduce { sum, mean };

// Reduction over one axis (removing it) or, with no axis, over everything (scalar).
Tensor reduce(Tape& tape, const Tensor& x, Reduce kind, std::optional<std::size_t> axis = std::nullopt);
inline Tensor sum(Tape& t, const Tensor& x, std::optional<std::size_t> axis = std::nullopt) {
    return reduce(t, x, Reduce::sum, axis);
}
inline Tensor mean(Tape& t, const Tensor& x, std::optional<std::size_t> axis = std::nullopt) {
    return reduce(t, x, Reduce::mean, axis);
}

// Same values, new shape of equal element count.
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

// Concatenation along the last axis; leading extents must agree.
Tensor concat_last(Tape& tape, const std::vector<Tensor>& parts);

// Concatenation along axis 0; trailing extents must agree.
Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts);

// Columns [begin, end) of a rank-2 tensor.
Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end);

// out[b, :] = Σ_i weights[b, i] · values[b, i, :].
// weights [B×n], values [B×n×D] -> [B×D]; also accepts weights [n], values [n×D] -> [D].
Tensor weighted_sum(Tape& tape, const Tensor& weights, const Tensor& values);

// Finite-difference gradient check with central differences.
//
// Returns max over entries of |g_auto − g_fd| / max(1e-8, |g_auto| + |g_fd|),
// taken over every entry of every tensor in `inputs`. `f` must build a scalar
// on the tape it is given; it is called once for the analytic gradient and
// twice per entry for the numeric one. Input values are restored afterwards.
using ScalarFn = std::function<Tensor(Tape&)>;
double gradient_check(const ScalarFn& f, std::vector<Tensor> inputs, double epsilon = 1e-5);

// Single-input form: f receives x.
double gradient_check(const std::function<Tensor(Tape&, const Tensor&)>& f, Tensor x, double epsilon = 1e-5);

} // namespace attncap
