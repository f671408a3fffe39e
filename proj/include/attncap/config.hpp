#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attncap/decoders.hpp"

namespace attncap {

enum class OptimizerKind { adam, sgd };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct TrainConfig {
    ModelKind model = ModelKind::attention;
    std::size_t embed_dim = 256;
    std::size_t hidden_dim = 256;
    std::size_t feature_dim = 128;
    std::size_t attention_dim = 64;
    std::size_t grid_side = 6;
    std::vector<std::size_t> channels{8, 16, 32};
    std::size_t vocab_cap = 5000;
    double learning_rate = 4e-4;
    std::size_t batch_size = 64;
    std::size_t epochs = 30;
    double lambda = 0.0; // doubly-stochastic penalty weight
    std::uint64_t param_seed = 1;
    std::uint64_t shuffle_seed = 2;
    std::size_t t_max = 16;
    OptimizerKind optimizer = OptimizerKind::adam;
    double clip_norm = 5.0;

    // Paths are run plumbing and are not echoed into checkpoints or reports.
    std::filesystem::path data_dir;
    std::filesystem::path vocab_path;
    std::filesystem::path out_dir;

    void validate() const;
    EncoderConfig encoder_config() const;
    ModelConfig model_config(std::size_t vocab_size) const;
    // Greedy decodes stop after this many tokens: a caption that fills t_max.
    std::size_t max_decode_len() const { return t_max - 2; }

    nlohmann::ordered_json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

} // namespace attncap
