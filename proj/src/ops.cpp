#include "attncap/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "attncap/errors.hpp"

namespace attncap {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap cmap(std::span<const double> s, std::size_t rows, std::size_t cols) {
    return ConstMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap mmap(std::span<double> s, std::size_t rows, std::size_t cols) {
    return MutMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

bool wants_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                             shape_string(b.shape()) + " differ");
    }
}

} // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    mmap(out.mutable_values(), m, n).noalias() = cmap(a.values(), m, k) * cmap(b.values(), k, n);
    if (Tape::tracks({&a, &b})) {
        tape.record({a, b}, out, [a, b, out, m, k, n]() mutable {
            auto dC = cmap(out.grad(), m, n);
            if (wants_grad(a)) {
                mmap(a.mutable_grad(), m, k).noalias() += dC * cmap(b.values(), k, n).transpose();
            }
            if (wants_grad(b)) {
                mmap(b.mutable_grad(), k, n).noalias() += cmap(a.values(), m, k).transpose() * dC;
            }
        });
    }
    return out;
}

Tensor affine(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
        throw DimensionError("affine: input " + shape_string(x.shape()) + " does not fit weight " +
                             shape_string(weight.shape()));
    }
    const std::size_t rows = x.dim(0), in = x.dim(1), outw = weight.dim(0);
    if (bias.defined() && bias.shape() != Shape{outw}) {
        throw DimensionError("affine: bias " + shape_string(bias.shape()) + " does not fit weight " +
                             shape_string(weight.shape()));
    }
    Tensor out = Tensor::zeros({rows, outw});
    auto y = mmap(out.mutable_values(), rows, outw);
    y.noalias() = cmap(x.values(), rows, in) * cmap(weight.values(), outw, in).transpose();
    if (bias.defined()) {
        y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), static_cast<Eigen::Index>(outw));
    }
    if (Tape::tracks({&x, &weight, &bias})) {
        tape.record({x, weight, bias}, out, [x, weight, bias, out, rows, in, outw]() mutable {
            auto dy = cmap(out.grad(), rows, outw);
            if (wants_grad(x)) {
                mmap(x.mutable_grad(), rows, in).noalias() += dy * cmap(weight.values(), outw, in);
            }
            if (wants_grad(weight)) {
                mmap(weight.mutable_grad(), outw, in).noalias() += dy.transpose() * cmap(x.values(), rows, in);
            }
            if (wants_grad(bias)) {
                mmap(bias.mutable_grad(), 1, outw) += dy.colwise().sum();
            }
        });
    }
    return out;
}

Tensor elementwise(Tape& tape, const Tensor& x, Unary f, double param) {
    const auto xs = x.values();
    Buffer ys(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double v = xs[i];
        switch (f) {
        case Unary::tanh: ys[i] = std::tanh(v); break;
        case Unary::sigmoid: ys[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); break;
        case Unary::relu: ys[i] = v > 0 ? v : 0.0; break;
        case Unary::exp: ys[i] = std::exp(v); break;
        case Unary::log:
            if (!(v > 0)) {
                throw DomainError("log: entry " + std::to_string(i) + " is nonpositive (" + std::to_string(v) + ")");
            }
            ys[i] = std::log(v);
            break;
        case Unary::add_const: ys[i] = v + param; break;
        case Unary::scale: ys[i] = v * param; break;
        }
    }
    Tensor out(x.shape(), std::move(ys));
    if (Tape::tracks({&x})) {
        tape.record({x}, out, [x, out, f, param]() mutable {
            const auto xv = x.values();
            const auto yv = out.values();
            const auto dy = out.grad();
            auto dx = x.mutable_grad();
            for (std::size_t i = 0; i < dx.size(); ++i) {
                double d = 0.0;
                switch (f) {
                case Unary::tanh: d = 1.0 - yv[i] * yv[i]; break;
                case Unary::sigmoid: d = yv[i] * (1.0 - yv[i]); break;
                case Unary::relu: d = xv[i] > 0 ? 1.0 : 0.0; break;
                case Unary::exp: d = yv[i]; break;
                case Unary::log: d = 1.0 / xv[i]; break;
                case Unary::add_const: d = 1.0; break;
                case Unary::scale: d = param; break;
                }
                dx[i] += d * dy[i];
            }
        });
    }
    return out;
}

namespace {

enum class BinaryKind { add, sub, mul };

Tensor binary(Tape& tape, const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
    require_same_shape(name, a, b);
    const auto av = a.values();
    const auto bv = b.values();
    Buffer ys(av.size());
    for (std::size_t i = 0; i < ys.size(); ++i) {
        switch (kind) {
        case BinaryKind::add: ys[i] = av[i] + bv[i]; break;
        case BinaryKind::sub: ys[i] = av[i] - bv[i]; break;
        case BinaryKind::mul: ys[i] = av[i] * bv[i]; break;
        }
    }
    Tensor out(a.shape(), std::move(ys));
    if (Tape::tracks({&a, &b})) {
        tape.record({a, b}, out, [a, b, out, kind]() mutable {
            const auto dy = out.grad();
            // Read values before touching gradients: a and b may alias.
            if (wants_grad(a)) {
                auto da = a.mutable_grad();
                const auto bv = b.values();
                for (std::size_t i = 0; i < dy.size(); ++i) {
                    da[i] += kind == BinaryKind::mul ? dy[i] * bv[i] : dy[i];
                }
            }
            if (wants_grad(b)) {
                auto db = b.mutable_grad();
                const auto av = a.values();
                for (std::size_t i = 0; i < dy.size(); ++i) {
                    db[i] += kind == BinaryKind::mul ? dy[i] * av[i] : (kind == BinaryKind::sub ? -dy[i] : dy[i]);
                }
            }
        });
    }
    return out;
}

} // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) { return binary(tape, a, b, BinaryKind::add, "add"); }
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) { return binary(tape, a, b, BinaryKind::sub, "sub"); }
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) { return binary(tape, a, b, BinaryKind::mul, "mul"); }

Tensor add_expand(Tape& tape, const Tensor& x, const Tensor& y, std::size_t axis) {
    if (axis >= x.rank()) {
        throw DimensionError("add_expand: axis " + std::to_string(axis) + " out of range for " +
                             shape_string(x.shape()));
    }
    Shape expect = x.shape();
    expect.erase(expect.begin() + static_cast<std::ptrdiff_t>(axis));
    if (y.shape() != expect) {
        throw DimensionError("add_expand: cannot expand " + shape_string(y.shape()) + " along axis " +
                             std::to_string(axis) + " of " + shape_string(x.shape()));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= x.dim(i);
    }
    for (std::size_t i = axis + 1; i < x.rank(); ++i) {
        inner *= x.dim(i);
    }
    const std::size_t mid = x.dim(axis);
    Buffer ys(x.values().begin(), x.values().end());
    const auto yv = y.values();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t m = 0; m < mid; ++m) {
            double* row = ys.data() + (o * mid + m) * inner;
            const double* src = yv.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                row[i] += src[i];
            }
        }
    }
    Tensor out(x.shape(), std::move(ys));
    if (Tape::tracks({&x, &y})) {
        tape.record({x, y}, out, [x, y, out, outer, mid, inner]() mutable {
            const auto dout = out.grad();
            if (wants_grad(x)) {
                auto dx = x.mutable_grad();
                for (std::size_t i = 0; i < dx.size(); ++i) {
                    dx[i] += dout[i];
                }
            }
            if (wants_grad(y)) {
                auto dy = y.mutable_grad();
                for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t m = 0; m < mid; ++m) {
                        const double* row = dout.data() + (o * mid + m) * inner;
                        double* dst = dy.data() + o * inner;
                        for (std::size_t i = 0; i < inner; ++i) {
                            dst[i] += row[i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor softmax(Tape& tape, const Tensor& x) {
    if (x.rank() == 0 || x.dim(x.rank() - 1) == 0) {
        throw DimensionError("softmax: needs a nonempty last axis, got " + shape_string(x.shape()));
    }
    const std::size_t n = x.dim(x.rank() - 1);
    const std::size_t rows = x.size() / n;
    const auto xv = x.values();
    Buffer ys(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * n;
        double* out = ys.data() + r * n;
        const double mx = *std::max_element(in, in + n);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = std::exp(in[i] - mx);
            total += out[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            out[i] /= total;
        }
    }
    Tensor out(x.shape(), std::move(ys));
    if (Tape::tracks({&x})) {
        tape.record({x}, out, [x, out, rows, n]() mutable {
            const auto y = out.values();
            const auto dy = out.grad();
            auto dx = x.mutable_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    dot += dy[r * n + i] * y[r * n + i];
                }
                for (std::size_t i = 0; i < n; ++i) {
                    dx[r * n + i] += y[r * n + i] * (dy[r * n + i] - dot);
                }
            }
        });
    }
    return out;
}

Tensor reduce(Tape& tape, const Tensor& x, Reduce kind, std::optional<std::size_t> axis) {
    std::size_t outer = 1, mid = x.size(), inner = 1;
    Shape out_shape;
    if (axis) {
        if (*axis >= x.rank()) {
            throw DimensionError("reduce: axis " + std::to_string(*axis) + " out of range for " +
                                 shape_string(x.shape()));
        }
        outer = 1;
        inner = 1;
        for (std::size_t i = 0; i < *axis; ++i) {
            outer *= x.dim(i);
        }
        for (std::size_t i = *axis + 1; i < x.rank(); ++i) {
            inner *= x.dim(i);
        }
        mid = x.dim(*axis);
        out_shape = x.shape();
        out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(*axis));
    }
    if (kind == Reduce::mean && mid == 0) {
        throw DimensionError("reduce: mean over an empty axis of " + shape_string(x.shape()));
    }
    const double factor = kind == Reduce::mean ? 1.0 / static_cast<double>(mid) : 1.0;
    const auto xv = x.values();
    Buffer ys(outer * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t m = 0; m < mid; ++m) {
            const double* row = xv.data() + (o * mid + m) * inner;
            double* dst = ys.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                dst[i] += row[i];
            }
        }
    }
    if (kind == Reduce::mean) {
        for (double& v : ys) {
            v *= factor;
        }
    }
    Tensor out(std::move(out_shape), std::move(ys));
    if (Tape::tracks({&x})) {
        tape.record({x}, out, [x, out, outer, mid, inner, factor]() mutable {
            const auto dy = out.grad();
            auto dx = x.mutable_grad();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t m = 0; m < mid; ++m) {
                    double* row = dx.data() + (o * mid + m) * inner;
                    const double* src = dy.data() + o * inner;
                    for (std::size_t i = 0; i < inner; ++i) {
                        row[i] += factor * src[i];
                    }
                }
            }
        });
    }
    return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
    }
    Tensor out(std::move(shape), Buffer(x.values().begin(), x.values().end()));
    if (Tape::tracks({&x})) {
        tape.record({x}, out, [x, out]() mutable {
            const auto dy = out.grad();
            auto dx = x.mutable_grad();
            for (std::size_t i = 0; i < dx.size(); ++i) {
                dx[i] += dy[i];
            }
        });
    }
    return out;
}

Tensor concat_last(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw DimensionError("concat_last: no inputs");
    }
    Shape lead = parts[0].shape();
    if (lead.empty()) {
        throw DimensionError("concat_last: scalar input");
    }
    lead.pop_back();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        Shape s = p.shape();
        if (s.empty()) {
            throw DimensionError("concat_last: scalar input");
        }
        widths.push_back(s.back());
        s.pop_back();
        if (s != lead) {
            throw DimensionError("concat_last: leading extents of " + shape_string(p.shape()) + " differ from " +
                                 shape_string(parts[0].shape()));
        }
        total += widths.back();
    }
    const std::size_t rows = numel(lead);
    Buffer ys(rows * total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto pv = parts[k].values();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(pv.data() + r * widths[k], widths[k], ys.data() + r * total + offset);
        }
        offset += widths[k];
    }
    Shape out_shape = lead;
    out_shape.push_back(total);
    Tensor out(std::move(out_shape), std::move(ys));
    if (Tape::tracks(parts)) {
        tape.record(parts, out, [parts, out, widths, rows, total]() mutable {
            const auto dy = out.grad();
            std::size_t off = 0;
            for (std::size_t k = 0; k < parts.size(); ++k) {
                if (wants_grad(parts[k])) {
                    auto dp = parts[k].mutable_grad();
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < widths[k]; ++j) {
                            dp[r * widths[k] + j] += dy[r * total + off + j];
                        }
                    }
                }
                off += widths[k];
            }
        });
    }
    return out;
}

Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw DimensionError("concat_rows: no inputs");
    }
    Shape tail = parts[0].shape();
    if (tail.empty()) {
        throw DimensionError("concat_rows: scalar input");
    }
    tail.erase(tail.begin());
    std::size_t rows = 0;
    Buffer ys;
    for (const Tensor& p : parts) {
        Shape s = p.shape();
        if (s.empty() || Shape(s.begin() + 1, s.end()) != tail) {
            throw DimensionError("concat_rows: trailing extents of " + shape_string(p.shape()) + " differ from " +
                                 shape_string(parts[0].shape()));
        }
        rows += s[0];
        ys.insert(ys.end(), p.values().begin(), p.values().end());
    }
    Shape out_shape = tail;
    out_shape.insert(out_shape.begin(), rows);
    Tensor out(std::move(out_shape), std::move(ys));
    if (Tape::tracks(parts)) {
        tape.record(parts, out, [parts, out]() mutable {
            const auto dy = out.grad();
            std::size_t off = 0;
            for (const Tensor& p : parts) {
                if (wants_grad(p)) {
                    auto dp = p.mutable_grad();
                    for (std::size_t i = 0; i < dp.size(); ++i) {
                        dp[i] += dy[off + i];
                    }
                }
                off += p.size();
            }
        });
    }
    return out;
}

Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end) {
    if (x.rank() != 2 || begin > end || end > x.dim(1)) {
        throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of range for " + shape_string(x.shape()));
    }
    const std::size_t rows = x.dim(0), cols = x.dim(1), w = end - begin;
    Buffer ys(rows * w);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(x.values().data() + r * cols + begin, w, ys.data() + r * w);
    }
    Tensor out({rows, w}, std::move(ys));
    if (Tape::tracks({&x})) {
        tape.record({x}, out, [x, out, rows, cols, w, begin]() mutable {
            const auto dy = out.grad();
            auto dx = x.mutable_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < w; ++j) {
                    dx[r * cols + begin + j] += dy[r * w + j];
                }
            }
        });
    }
    return out;
}

Tensor weighted_sum(Tape& tape, const Tensor& weights, const Tensor& values) {
    const bool single = weights.rank() == 1;
    const bool ok = single ? (values.rank() == 2 && values.dim(0) == weights.dim(0))
                           : (weights.rank() == 2 && values.rank() == 3 && values.dim(0) == weights.dim(0) &&
                              values.dim(1) == weights.dim(1));
    if (!ok) {
        throw DimensionError("weighted_sum: weights " + shape_string(weights.shape()) + " do not fit values " +
                             shape_string(values.shape()));
    }
    const std::size_t batch = single ? 1 : weights.dim(0);
    const std::size_t n = single ? weights.dim(0) : weights.dim(1);
    const std::size_t d = values.dim(values.rank() - 1);
    Buffer ys(batch * d, 0.0);
    const auto wv = weights.values();
    const auto vv = values.values();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < n; ++i) {
            const double w = wv[b * n + i];
            const double* row = vv.data() + (b * n + i) * d;
            double* dst = ys.data() + b * d;
            for (std::size_t j = 0; j < d; ++j) {
                dst[j] += w * row[j];
            }
        }
    }
    Tensor out(single ? Shape{d} : Shape{batch, d}, std::move(ys));
    if (Tape::tracks({&weights, &values})) {
        tape.record({weights, values}, out, [weights, values, out, batch, n, d]() mutable {
            const auto dy = out.grad();
            const auto wv = weights.values();
            const auto vv = values.values();
            if (wants_grad(weights)) {
                auto dw = weights.mutable_grad();
                for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t i = 0; i < n; ++i) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < d; ++j) {
                            acc += dy[b * d + j] * vv[(b * n + i) * d + j];
                        }
                        dw[b * n + i] += acc;
                    }
                }
            }
            if (wants_grad(values)) {
                auto dv = values.mutable_grad();
                for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t i = 0; i < n; ++i) {
                        const double w = wv[b * n + i];
                        for (std::size_t j = 0; j < d; ++j) {
                            dv[(b * n + i) * d + j] += w * dy[b * d + j];
                        }
                    }
                }
            }
        });
    }
    return out;
}

double gradient_check(const ScalarFn& f, std::vector<Tensor> inputs, double epsilon) {
    std::vector<bool> had_flag;
    for (Tensor& t : inputs) {
        had_flag.push_back(t.requires_grad());
        t.set_requires_grad(true);
    }
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        Tensor y = f(tape);
        tape.backward(y);
        for (Tensor& t : inputs) {
            t.ensure_grad();
            analytic.emplace_back(t.grad().begin(), t.grad().end());
        }
    }
    auto eval = [&f]() {
        Tape tape;
        return f(tape).item();
    };
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto vals = inputs[k].mutable_values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + epsilon;
            const double up = eval();
            vals[i] = orig - epsilon;
            const double down = eval();
            vals[i] = orig;
            const double fd = (up - down) / (2.0 * epsilon);
            const double ga = analytic[k][i];
            const double rel = std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
            worst = std::max(worst, rel);
        }
    }
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        inputs[k].set_requires_grad(had_flag[k]);
    }
    return worst;
}

double gradient_check(const std::function<Tensor(Tape&, const Tensor&)>& f, Tensor x, double epsilon) {
    return gradient_check([&f, &x](Tape& tape) { return f(tape, x); }, std::vector<Tensor>{x}, epsilon);
}

} // namespace attncap
