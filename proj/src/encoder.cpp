#include "attncap/encoder.hpp"

#include "attncap/errors.hpp"

namespace attncap {

void EncoderConfig::validate() const {
    if (channels.empty() || feature_dim == 0 || grid_side == 0) {
        throw ContractError("encoder config needs at least one stage, feature_dim > 0 and grid_side > 0");
    }
    for (std::size_t c : channels) {
        if (c == 0) {
            throw ContractError("encoder config: stage channel counts must be positive");
        }
    }
}

EncoderParams EncoderParams::init(const EncoderConfig& config, Rng& rng) {
    config.validate();
    EncoderParams p;
    std::size_t in = 3;
    for (std::size_t c : config.channels) {
        p.stages.push_back(Conv2D::init(in, c, 3, 1, rng));
        in = c;
    }
    p.projection = Conv2D::init(in, config.feature_dim, 1, 0, rng);
    p.projection.bias.set_requires_grad(false);
    p.cell_bias = Tensor::zeros({config.cells(), config.feature_dim}, true);
    return p;
}

namespace {

// [B x D x g x g] -> [B x (g*g) x D]
Tensor channels_last(Tape& tape, const Tensor& x) {
    const std::size_t batch = x.dim(0), depth = x.dim(1), cells = x.dim(2) * x.dim(3);
    const auto xv = x.values();
    Buffer ys(x.size());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < depth; ++c) {
            for (std::size_t q = 0; q < cells; ++q) {
                ys[(b * cells + q) * depth + c] = xv[(b * depth + c) * cells + q];
            }
        }
    }
    Tensor out({batch, cells, depth}, std::move(ys));
    if (Tape::tracks({&x})) {
        tape.record({x}, out, [x, out, batch, depth, cells]() mutable {
            const auto dy = out.grad();
            auto dx = x.mutable_grad();
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t c = 0; c < depth; ++c) {
                    for (std::size_t q = 0; q < cells; ++q) {
                        dx[(b * depth + c) * cells + q] += dy[(b * cells + q) * depth + c];
                    }
                }
            }
        });
    }
    return out;
}

} // namespace

FeatureGrid encode(Tape& tape, const EncoderConfig& config, const EncoderParams& params, const Tensor& images) {
    const std::size_t side = config.input_side();
    Tensor x = images;
    if (x.rank() == 3) {
        x = reshape(tape, x, {1, x.dim(0), x.dim(1), x.dim(2)});
    }
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != side || x.dim(3) != side) {
        throw DimensionError("encode: expected RGB images of side " + std::to_string(side) + ", got " +
                             shape_string(images.shape()));
    }
    if (params.stages.size() != config.stages() || params.cell_bias.shape() != Shape{config.cells(), config.feature_dim}) {
        throw DimensionError("encode: parameters do not match the encoder config");
    }
    for (const Conv2D& stage : params.stages) {
        x = maxpool2d(tape, relu(tape, conv2d_forward(tape, stage, x)));
    }
    x = conv2d_forward(tape, params.projection, x);
    Tensor annotations = add_expand(tape, channels_last(tape, x), params.cell_bias, 0);
    Tensor global = global_pool(tape, annotations);
    return FeatureGrid{annotations, global};
}

Tensor global_pool(Tape& tape, const Tensor& annotations) {
    if (annotations.rank() == 2) {
        return mean(tape, annotations, 0);
    }
    if (annotations.rank() != 3) {
        throw DimensionError("global_pool: expected [B x n x D], got " + shape_string(annotations.shape()));
    }
    return mean(tape, annotations, 1);
}

} // namespace attncap
