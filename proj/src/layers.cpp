#include "attncap/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "attncap/errors.hpp"

namespace attncap {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Tensor xavier_fill(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = xavier_bound(fan_in, fan_out);
    Buffer v(numel(shape));
    for (double& x : v) {
        x = rng.uniform(-bound, bound);
    }
    return Tensor(std::move(shape), std::move(v), true);
}

} // namespace

double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
    if (fan_in == 0 || fan_out == 0) {
        throw ContractError("xavier_init: fans must be positive (fan_in=" + std::to_string(fan_in) +
                            ", fan_out=" + std::to_string(fan_out) + ")");
    }
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor xavier_init(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
    Rng rng(seed);
    return xavier_init(fan_in, fan_out, rng);
}

Tensor xavier_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    xavier_bound(fan_in, fan_out);
    return xavier_fill({fan_out, fan_in}, fan_in, fan_out, rng);
}

DenseLayer DenseLayer::init(std::size_t in, std::size_t out, Rng& rng) {
    return DenseLayer{xavier_init(in, out, rng), Tensor::zeros({out}, true)};
}

Tensor dense_forward(Tape& tape, const DenseLayer& layer, const Tensor& x) {
    const std::size_t in = layer.in_features();
    if (x.rank() == 0 || x.dim(x.rank() - 1) != in) {
        throw DimensionError("dense: input " + shape_string(x.shape()) + " does not end in " + std::to_string(in));
    }
    if (x.rank() == 2) {
        return affine(tape, x, layer.weight, layer.bias);
    }
    Shape out_shape = x.shape();
    out_shape.back() = layer.out_features();
    Tensor flat = reshape(tape, x, {x.size() / in, in});
    return reshape(tape, affine(tape, flat, layer.weight, layer.bias), out_shape);
}

EmbeddingTable EmbeddingTable::init(std::size_t vocab, std::size_t width, Rng& rng) {
    return EmbeddingTable{xavier_init(width, vocab, rng)};
}

Tensor embedding_lookup(Tape& tape, const EmbeddingTable& emb, std::span<const int> ids) {
    const std::size_t vocab = emb.vocab_size();
    const std::size_t d = emb.width();
    Buffer ys(ids.size() * d);
    const auto tv = emb.table.values();
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
            throw IndexError("embedding: token id " + std::to_string(ids[r]) + " outside vocabulary of size " +
                             std::to_string(vocab));
        }
        std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * d, d, ys.data() + r * d);
    }
    Tensor out({ids.size(), d}, std::move(ys));
    const Tensor& table = emb.table;
    if (Tape::tracks({&table})) {
        std::vector<int> idv(ids.begin(), ids.end());
        tape.record({table}, out, [table, out, idv = std::move(idv), d]() mutable {
            const auto dy = out.grad();
            auto dt = table.mutable_grad();
            for (std::size_t r = 0; r < idv.size(); ++r) {
                double* dst = dt.data() + static_cast<std::size_t>(idv[r]) * d;
                for (std::size_t j = 0; j < d; ++j) {
                    dst[j] += dy[r * d + j];
                }
            }
        });
    }
    return out;
}

LSTMCell LSTMCell::init(std::size_t input_width, std::size_t hidden, Rng& rng) {
    const std::size_t fan_in = input_width + hidden;
    LSTMCell cell;
    cell.w_input = xavier_init(fan_in, hidden, rng);
    cell.w_forget = xavier_init(fan_in, hidden, rng);
    cell.w_output = xavier_init(fan_in, hidden, rng);
    cell.w_cell = xavier_init(fan_in, hidden, rng);
    cell.b_input = Tensor::zeros({hidden}, true);
    cell.b_forget = Tensor::zeros({hidden}, true);
    cell.b_output = Tensor::zeros({hidden}, true);
    cell.b_cell = Tensor::zeros({hidden}, true);
    return cell;
}

LSTMState lstm_step(Tape& tape, const LSTMCell& cell, const Tensor& x, const Tensor& h_prev, const Tensor& c_prev) {
    const std::size_t hidden = cell.hidden();
    if (x.rank() != 2 || h_prev.rank() != 2 || x.dim(1) != cell.input_width() || h_prev.dim(1) != hidden ||
        c_prev.shape() != h_prev.shape() || x.dim(0) != h_prev.dim(0)) {
        throw DimensionError("lstm_step: x " + shape_string(x.shape()) + ", h " + shape_string(h_prev.shape()) +
                             ", c " + shape_string(c_prev.shape()) + " do not fit a cell with input " +
                             std::to_string(cell.input_width()) + " and hidden " + std::to_string(hidden));
    }
    const Tensor xh = concat_last(tape, {x, h_prev});
    const Tensor i = sigmoid(tape, affine(tape, xh, cell.w_input, cell.b_input));
    const Tensor f = sigmoid(tape, affine(tape, xh, cell.w_forget, cell.b_forget));
    const Tensor o = sigmoid(tape, affine(tape, xh, cell.w_output, cell.b_output));
    const Tensor g = tanh(tape, affine(tape, xh, cell.w_cell, cell.b_cell));
    const Tensor c = add(tape, mul(tape, f, c_prev), mul(tape, i, g));
    const Tensor h = mul(tape, o, tanh(tape, c));
    return {h, c};
}

Conv2D Conv2D::init(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t padding,
                    Rng& rng) {
    Conv2D conv;
    conv.kernels = xavier_fill({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel,
                               out_channels * kernel * kernel, rng);
    conv.bias = Tensor::zeros({out_channels}, true);
    conv.padding = padding;
    return conv;
}

namespace {

struct ImageDims {
    bool batched;
    std::size_t batch, channels, height, width;
};

ImageDims image_dims(const Tensor& x, const char* op) {
    if (x.rank() == 3) {
        return {false, 1, x.dim(0), x.dim(1), x.dim(2)};
    }
    if (x.rank() == 4) {
        return {true, x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
    }
    throw DimensionError(std::string(op) + ": expected [C x H x W] or [B x C x H x W], got " +
                         shape_string(x.shape()));
}

std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad, const Tensor& image,
                        const Tensor& kernels) {
    const std::size_t padded = in + 2 * pad;
    if (stride == 0 || padded < k || (padded - k) % stride != 0) {
        throw DimensionError("conv2d: input " + shape_string(image.shape()) + " with kernel " +
                             shape_string(kernels.shape()) + ", stride " + std::to_string(stride) + ", padding " +
                             std::to_string(pad) + " does not tile exactly");
    }
    return (padded - k) / stride + 1;
}

} // namespace

Tensor conv2d_forward(Tape& tape, const Conv2D& conv, const Tensor& image) {
    const ImageDims d = image_dims(image, "conv2d");
    if (conv.kernels.rank() != 4 || conv.kernels.dim(1) != d.channels || conv.bias.shape() != Shape{conv.kernels.dim(0)}) {
        throw DimensionError("conv2d: kernels " + shape_string(conv.kernels.shape()) + " / bias " +
                             shape_string(conv.bias.shape()) + " do not fit input " + shape_string(image.shape()));
    }
    const std::size_t oc = conv.kernels.dim(0), kh = conv.kernels.dim(2), kw = conv.kernels.dim(3);
    const std::size_t s = conv.stride, p = conv.padding;
    const std::size_t ho = conv_extent(d.height, kh, s, p, image, conv.kernels);
    const std::size_t wo = conv_extent(d.width, kw, s, p, image, conv.kernels);
    const std::size_t patch = d.channels * kh * kw;
    const std::size_t positions = ho * wo;
    const std::size_t rows = d.batch * positions;

    // im2col: one row per (batch, output position), one column per (channel, ky, kx).
    auto cols = std::make_shared<RowMat>(RowMat::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(patch)));
    const auto xv = image.values();
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double* row = cols->data() + ((b * ho + oy) * wo + ox) * patch;
                for (std::size_t c = 0; c < d.channels; ++c) {
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) - static_cast<std::ptrdiff_t>(p);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.height)) {
                            continue;
                        }
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * s + kx) - static_cast<std::ptrdiff_t>(p);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.width)) {
                                continue;
                            }
                            row[(c * kh + ky) * kw + kx] =
                                xv[((b * d.channels + c) * d.height + static_cast<std::size_t>(iy)) * d.width +
                                   static_cast<std::size_t>(ix)];
                        }
                    }
                }
            }
        }
    }
    Eigen::Map<const RowMat> kmat(conv.kernels.values().data(), static_cast<Eigen::Index>(oc),
                                  static_cast<Eigen::Index>(patch));
    RowMat prod = (*cols) * kmat.transpose(); // [rows x oc]
    Buffer ys(d.batch * oc * positions);
    const auto bv = conv.bias.values();
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t o = 0; o < oc; ++o) {
            double* dst = ys.data() + (b * oc + o) * positions;
            for (std::size_t q = 0; q < positions; ++q) {
                dst[q] = prod(static_cast<Eigen::Index>(b * positions + q), static_cast<Eigen::Index>(o)) + bv[o];
            }
        }
    }
    Tensor out(d.batched ? Shape{d.batch, oc, ho, wo} : Shape{oc, ho, wo}, std::move(ys));
    const Tensor& kernels = conv.kernels;
    const Tensor& bias = conv.bias;
    if (Tape::tracks({&image, &kernels, &bias})) {
        tape.record({image, kernels, bias}, out, [image, kernels, bias, out, cols, d, oc, kh, kw, s, p, ho, wo, patch,
                                                  positions, rows]() mutable {
            const auto dy = out.grad();
            RowMat drows(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(oc));
            for (std::size_t b = 0; b < d.batch; ++b) {
                for (std::size_t o = 0; o < oc; ++o) {
                    const double* src = dy.data() + (b * oc + o) * positions;
                    for (std::size_t q = 0; q < positions; ++q) {
                        drows(static_cast<Eigen::Index>(b * positions + q), static_cast<Eigen::Index>(o)) = src[q];
                    }
                }
            }
            if (bias.requires_grad()) {
                Eigen::Map<RowMat>(bias.mutable_grad().data(), 1, static_cast<Eigen::Index>(oc)) += drows.colwise().sum();
            }
            Eigen::Map<const RowMat> kmat(kernels.values().data(), static_cast<Eigen::Index>(oc),
                                          static_cast<Eigen::Index>(patch));
            if (kernels.requires_grad()) {
                Eigen::Map<RowMat>(kernels.mutable_grad().data(), static_cast<Eigen::Index>(oc),
                                   static_cast<Eigen::Index>(patch))
                    .noalias() += drows.transpose() * (*cols);
            }
            if (image.requires_grad()) {
                RowMat dcols = drows * kmat; // [rows x patch]
                auto dx = image.mutable_grad();
                for (std::size_t b = 0; b < d.batch; ++b) {
                    for (std::size_t oy = 0; oy < ho; ++oy) {
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            const double* row = dcols.data() + ((b * ho + oy) * wo + ox) * patch;
                            for (std::size_t c = 0; c < d.channels; ++c) {
                                for (std::size_t ky = 0; ky < kh; ++ky) {
                                    const std::ptrdiff_t iy =
                                        static_cast<std::ptrdiff_t>(oy * s + ky) - static_cast<std::ptrdiff_t>(p);
                                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.height)) {
                                        continue;
                                    }
                                    for (std::size_t kx = 0; kx < kw; ++kx) {
                                        const std::ptrdiff_t ix =
                                            static_cast<std::ptrdiff_t>(ox * s + kx) - static_cast<std::ptrdiff_t>(p);
                                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.width)) {
                                            continue;
                                        }
                                        dx[((b * d.channels + c) * d.height + static_cast<std::size_t>(iy)) * d.width +
                                           static_cast<std::size_t>(ix)] += row[(c * kh + ky) * kw + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor maxpool2d(Tape& tape, const Tensor& x) {
    const ImageDims d = image_dims(x, "maxpool2d");
    if (d.height % 2 != 0 || d.width % 2 != 0) {
        throw DimensionError("maxpool2d: 2x2 window with stride 2 needs even extents, got " + shape_string(x.shape()));
    }
    const std::size_t ho = d.height / 2, wo = d.width / 2;
    const std::size_t planes = d.batch * d.channels;
    Buffer ys(planes * ho * wo);
    std::vector<std::size_t> argmax(ys.size());
    const auto xv = x.values();
    for (std::size_t pl = 0; pl < planes; ++pl) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                std::size_t best = (pl * d.height + 2 * oy) * d.width + 2 * ox;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = (pl * d.height + 2 * oy + dy) * d.width + 2 * ox + dx;
                        if (xv[idx] > xv[best]) {
                            best = idx;
                        }
                    }
                }
                const std::size_t o = (pl * ho + oy) * wo + ox;
                ys[o] = xv[best];
                argmax[o] = best;
            }
        }
    }
    Shape out_shape = x.shape();
    out_shape[out_shape.size() - 2] = ho;
    out_shape[out_shape.size() - 1] = wo;
    Tensor out(std::move(out_shape), std::move(ys));
    if (Tape::tracks({&x})) {
        tape.record({x}, out, [x, out, argmax = std::move(argmax)]() mutable {
            const auto dy = out.grad();
            auto dx = x.mutable_grad();
            for (std::size_t o = 0; o < argmax.size(); ++o) {
                dx[argmax[o]] += dy[o];
            }
        });
    }
    return out;
}

Tensor cross_entropy_masked(Tape& tape, const Tensor& logits, std::span<const int> targets, int pad_id) {
    if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
        throw DimensionError("cross_entropy: logits " + shape_string(logits.shape()) + " vs " +
                             std::to_string(targets.size()) + " targets");
    }
    const std::size_t steps = logits.dim(0), vocab = logits.dim(1);
    const auto lv = logits.values();
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < steps; ++t) {
        if (targets[t] == pad_id) {
            continue;
        }
        if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab) {
            throw IndexError("cross_entropy: target id " + std::to_string(targets[t]) + " outside vocabulary of size " +
                             std::to_string(vocab));
        }
        const double* row = lv.data() + t * vocab;
        const double mx = *std::max_element(row, row + vocab);
        double z = 0.0;
        for (std::size_t v = 0; v < vocab; ++v) {
            z += std::exp(row[v] - mx);
        }
        total += (mx + std::log(z)) - row[targets[t]];
        ++count;
    }
    if (count == 0) {
        throw ContractError("cross_entropy: every target is padding, loss is empty");
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(count));
    if (Tape::tracks({&logits})) {
        std::vector<int> tg(targets.begin(), targets.end());
        tape.record({logits}, out, [logits, out, tg = std::move(tg), pad_id, steps, vocab, count]() mutable {
            const double g = out.grad()[0] / static_cast<double>(count);
            const auto lv = logits.values();
            auto dl = logits.mutable_grad();
            for (std::size_t t = 0; t < steps; ++t) {
                if (tg[t] == pad_id) {
                    continue;
                }
                const double* row = lv.data() + t * vocab;
                const double mx = *std::max_element(row, row + vocab);
                double z = 0.0;
                for (std::size_t v = 0; v < vocab; ++v) {
                    z += std::exp(row[v] - mx);
                }
                for (std::size_t v = 0; v < vocab; ++v) {
                    const double p = std::exp(row[v] - mx) / z;
                    dl[t * vocab + v] += g * (p - (static_cast<int>(v) == tg[t] ? 1.0 : 0.0));
                }
            }
        });
    }
    return out;
}

} // namespace attncap
