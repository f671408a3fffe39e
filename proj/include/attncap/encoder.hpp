#pragma once

#include <vector>

#include "attncap/layers.hpp"

namespace attncap {

struct EncoderConfig {
    std::vector<std::size_t> channels{8, 16, 32}; // one conv/relu/pool stage each
    std::size_t feature_dim = 128;                 // D; 2048 reproduces the pretrained width
    std::size_t grid_side = 6;                     // g, so n = g*g annotation vectors

    std::size_t stages() const { return channels.size(); }
    std::size_t cells() const { return grid_side * grid_side; }
    // Required input side: g * 2^stages.
    std::size_t input_side() const { return grid_side << channels.size(); }
    void validate() const;
};

// Scratch CNN parameters. The 1x1 projection carries one bias vector per grid
// cell (an untied bias), which lets annotation vectors carry their location.
struct EncoderParams {
    std::vector<Conv2D> stages; // 3x3, same padding
    Conv2D projection;          // 1x1 to feature_dim, bias unused
    Tensor cell_bias;           // [n x D]

    static EncoderParams init(const EncoderConfig& config, Rng& rng);
};

// Annotation vectors h_1..h_n and their mean, batched.
struct FeatureGrid {
    Tensor annotations; // [B x n x D]
    Tensor global;      // [B x D]

    std::size_t batch() const { return annotations.dim(0); }
    std::size_t cells() const { return annotations.dim(1); }
    std::size_t feature_dim() const { return annotations.dim(2); }
};

// images: [3 x H x W] or [B x 3 x H x W] with H = W = config.input_side().
// Each stage is conv3x3(same) -> relu -> maxpool2x2, then a 1x1 projection to
// D channels; the g x g x D map becomes n = g*g annotation rows.
FeatureGrid encode(Tape& tape, const EncoderConfig& config, const EncoderParams& params, const Tensor& images);

// Mean over annotation rows: [B x n x D] -> [B x D].
Tensor global_pool(Tape& tape, const Tensor& annotations);

} // namespace attncap
