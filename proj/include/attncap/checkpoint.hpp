#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "attncap/config.hpp"
#include "attncap/decoders.hpp"

namespace attncap {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers little-endian):
//   "ATNC" | u32 version | u64 n + n bytes config JSON | u64 epoch
//   | u64 n + n bytes rng state | u32 tensor count
//   | per tensor: u32 n + name, u32 rank, rank x u64 extents, f64 values
struct Checkpoint {
    nlohmann::ordered_json config; // train config echo, vocab size and fingerprint
    std::uint64_t epoch = 0;
    std::string rng_state;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);

// Writes through a temporary file and a rename, so readers never see a
// partial checkpoint.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::ordered_json checkpoint_config(const TrainConfig& config, std::size_t vocab_size,
                                         std::uint64_t vocab_fingerprint);

Checkpoint make_checkpoint(const CaptionModel& model, const TrainConfig& config, std::uint64_t vocab_fingerprint,
                           std::uint64_t epoch, const std::string& rng_state);

// A loaded model with everything needed to run it.
struct LoadedModel {
    CaptionModel model;
    TrainConfig config;
    std::uint64_t vocab_fingerprint = 0;
    std::uint64_t epoch = 0;
};

LoadedModel model_from_checkpoint(const Checkpoint& ckpt);
LoadedModel load_model(const std::filesystem::path& path);

} // namespace attncap
