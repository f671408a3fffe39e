#include "attncap/config.hpp"

#include <cmath>

#include "attncap/errors.hpp"

namespace attncap {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer_kind(const std::string& name) {
    if (name == "adam") {
        return OptimizerKind::adam;
    }
    if (name == "sgd") {
        return OptimizerKind::sgd;
    }
    throw ContractError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) {
            throw ContractError(std::string("config: ") + name + " must be positive");
        }
    };
    positive(embed_dim, "embed_dim");
    positive(hidden_dim, "hidden_dim");
    positive(feature_dim, "feature_dim");
    positive(attention_dim, "attention_dim");
    positive(grid_side, "grid_side");
    positive(vocab_cap, "vocab_cap");
    positive(batch_size, "batch_size");
    positive(epochs, "epochs");
    if (channels.empty()) {
        throw ContractError("config: channels needs at least one stage");
    }
    for (std::size_t c : channels) {
        positive(c, "channels");
    }
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
        throw ContractError("config: learning_rate must be positive");
    }
    if (lambda < 0 || !std::isfinite(lambda)) {
        throw ContractError("config: lambda must be nonnegative");
    }
    if (t_max < 3) {
        throw ContractError("config: t_max must be at least 3");
    }
    if (clip_norm < 0) {
        throw ContractError("config: clip_norm must be nonnegative");
    }
}

EncoderConfig TrainConfig::encoder_config() const { return EncoderConfig{channels, feature_dim, grid_side}; }

ModelConfig TrainConfig::model_config(std::size_t vocab_size) const {
    ModelConfig m;
    m.kind = model;
    m.encoder = encoder_config();
    m.vocab_size = vocab_size;
    m.embed_dim = embed_dim;
    m.hidden_dim = hidden_dim;
    m.attention_dim = attention_dim;
    return m;
}

nlohmann::ordered_json TrainConfig::to_json() const {
    nlohmann::ordered_json j;
    j["model"] = to_string(model);
    j["embed_dim"] = embed_dim;
    j["hidden_dim"] = hidden_dim;
    j["feature_dim"] = feature_dim;
    j["attention_dim"] = attention_dim;
    j["grid_side"] = grid_side;
    j["channels"] = channels;
    j["vocab_cap"] = vocab_cap;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["lambda"] = lambda;
    j["param_seed"] = param_seed;
    j["shuffle_seed"] = shuffle_seed;
    j["t_max"] = t_max;
    j["optimizer"] = to_string(optimizer);
    j["clip_norm"] = clip_norm;
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    try {
        TrainConfig c;
        c.model = parse_model_kind(j.at("model").get<std::string>());
        c.embed_dim = j.at("embed_dim").get<std::size_t>();
        c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
        c.feature_dim = j.at("feature_dim").get<std::size_t>();
        c.attention_dim = j.at("attention_dim").get<std::size_t>();
        c.grid_side = j.at("grid_side").get<std::size_t>();
        c.channels = j.at("channels").get<std::vector<std::size_t>>();
        c.vocab_cap = j.at("vocab_cap").get<std::size_t>();
        c.learning_rate = j.at("learning_rate").get<double>();
        c.batch_size = j.at("batch_size").get<std::size_t>();
        c.epochs = j.at("epochs").get<std::size_t>();
        c.lambda = j.at("lambda").get<double>();
        c.param_seed = j.at("param_seed").get<std::uint64_t>();
        c.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
        c.t_max = j.at("t_max").get<std::size_t>();
        c.optimizer = parse_optimizer_kind(j.at("optimizer").get<std::string>());
        c.clip_norm = j.at("clip_norm").get<double>();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed config echo: ") + e.what());
    }
}

} // namespace attncap
