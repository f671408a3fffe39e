#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "attncap/ops.hpp"
#include "attncap/rng.hpp"
#include "attncap/tensor.hpp"

namespace attncap {

// Glorot/Xavier uniform initialization: entries i.i.d. on [-b, b] with
// b = sqrt(6 / (fan_in + fan_out)). Result has shape [fan_out x fan_in].
Tensor xavier_init(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed);
Tensor xavier_init(std::size_t fan_in, std::size_t fan_out, Rng& rng);
double xavier_bound(std::size_t fan_in, std::size_t fan_out);

struct DenseLayer {
    Tensor weight; // [out x in]
    Tensor bias;   // [out]

    static DenseLayer init(std::size_t in, std::size_t out, Rng& rng);
    std::size_t in_features() const { return weight.dim(1); }
    std::size_t out_features() const { return weight.dim(0); }
};

// W·x + b applied to every row of x [... x in]; leading extents are kept.
Tensor dense_forward(Tape& tape, const DenseLayer& layer, const Tensor& x);

struct EmbeddingTable {
    Tensor table; // [V x d]

    static EmbeddingTable init(std::size_t vocab, std::size_t width, Rng& rng);
    std::size_t vocab_size() const { return table.dim(0); }
    std::size_t width() const { return table.dim(1); }
};

// Row gather -> [len x d]. Backward scatters additively into the table.
Tensor embedding_lookup(Tape& tape, const EmbeddingTable& emb, std::span<const int> ids);

// Standard LSTM cell. Each gate weight acts on concat(x, h_prev).
struct LSTMCell {
    Tensor w_input, w_forget, w_output, w_cell; // [h x (d + h)]
    Tensor b_input, b_forget, b_output, b_cell; // [h]

    static LSTMCell init(std::size_t input_width, std::size_t hidden, Rng& rng);
    std::size_t hidden() const { return w_input.dim(0); }
    std::size_t input_width() const { return w_input.dim(1) - w_input.dim(0); }
};

struct LSTMState {
    Tensor h;
    Tensor c;
};

// One step on a batch: x [B x d], h_prev and c_prev [B x h].
//   i, f, o = sigmoid(W·[x, h_prev] + b), g = tanh(W_g·[x, h_prev] + b_g)
//   c = f*c_prev + i*g,  h = o*tanh(c)
LSTMState lstm_step(Tape& tape, const LSTMCell& cell, const Tensor& x, const Tensor& h_prev, const Tensor& c_prev);

struct Conv2D {
    Tensor kernels; // [outC x inC x kH x kW]
    Tensor bias;    // [outC]
    std::size_t stride = 1;
    std::size_t padding = 0; // zero padding on every side

    static Conv2D init(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t padding,
                       Rng& rng);
};

// Cross-correlation plus bias. image is [C x H x W] or [B x C x H x W]; the
// output keeps the same rank. Output side = (in + 2·pad − k) / stride + 1 and
// the division must be exact.
Tensor conv2d_forward(Tape& tape, const Conv2D& conv, const Tensor& image);

// 2x2 max pooling with stride 2 over [C x H x W] or [B x C x H x W]; H and W
// must be even. Gradient goes to the first maximum in row-major window order.
Tensor maxpool2d(Tape& tape, const Tensor& x);

// Mean over non-pad positions of −ln softmax(logits_t)[target_t].
// logits [T x V]; targets has T entries. Throws ContractError if every
// position is padding.
Tensor cross_entropy_masked(Tape& tape, const Tensor& logits, std::span<const int> targets, int pad_id);

} // namespace attncap
