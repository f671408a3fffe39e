#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attncap/checkpoint.hpp"
#include "attncap/config.hpp"
#include "attncap/data.hpp"
#include "attncap/decoders.hpp"
#include "attncap/metrics.hpp"
#include "attncap/optimizer.hpp"

namespace attncap {

// ---------------------------------------------------------------------------
// Loss

struct BatchLoss {
    Tensor loss;          // cross_entropy + λ·penalty
    Tensor cross_entropy; // mean over non-pad targets
    Tensor penalty;       // undefined for the vanilla model or λ = 0
    std::vector<Tensor> alphas;
};

// Teacher-forced loss of one batch: a caption of effective length L (START and
// END included) contributes L−1 predictions.
BatchLoss batch_loss(Tape& tape, const CaptionModel& model, const Batch& batch, double lambda);

// −ln p(token j | tokens before j) for j = 1..L−1 of a single caption, without
// recording. Entry j−1 scores token j.
std::vector<double> token_losses(const CaptionModel& model, const Tensor& image, std::span<const int> tokens);

// ---------------------------------------------------------------------------
// Training

struct RunLogRow {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double val_bleu4 = 0.0; // NaN when no validation split was given
    double wall_seconds = 0.0;
};

class RunLog {
  public:
    // Epochs must be strictly increasing.
    void append(const RunLogRow& row);
    const std::vector<RunLogRow>& rows() const { return rows_; }
    // The first `epochs` rows.
    RunLog prefix(std::size_t epochs) const;

    // Deterministic columns only; wall time lives in timing_tsv().
    std::string tsv() const;
    std::string timing_tsv() const;
    nlohmann::ordered_json to_json() const;

  private:
    std::vector<RunLogRow> rows_;
};

using AlphaHook = std::function<void(const Tensor&)>;

class Trainer {
  public:
    Trainer(const TrainConfig& config, const Vocabulary& vocab);

    // One optimizer update; returns the batch loss. Throws DivergenceError on a
    // non-finite loss or gradient.
    double step(const Batch& batch, const AlphaHook& on_alpha = {});

    const CaptionModel& model() const { return model_; }
    const TrainConfig& config() const { return config_; }
    std::uint64_t vocab_fingerprint() const { return fingerprint_; }
    std::size_t steps_taken() const { return steps_; }

  private:
    TrainConfig config_;
    std::uint64_t fingerprint_;
    CaptionModel model_;
    std::vector<Tensor> params_;
    std::unique_ptr<Optimizer> optimizer_;
    std::size_t steps_ = 0;
};

struct TrainHooks {
    AlphaHook on_alpha;
    // Called after each epoch's checkpoint with the epoch number (from 1).
    std::function<void(std::size_t, const CaptionModel&)> on_epoch;
    // Without an output directory nothing is written.
    bool write_files = true;
};

struct TrainResult {
    CaptionModel model;
    RunLog log;
    std::vector<std::filesystem::path> checkpoints;
};

// Writes <out_dir>/epoch_<NNN>.atnc every epoch, <out_dir>/model.atnc for the
// last one, and <out_dir>/runlog.tsv plus timing.tsv.
TrainResult train(const TrainConfig& config, const DatasetManifest& train_split, const DatasetManifest* val_split,
                  const Vocabulary& vocab, const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------
// Evaluation and captioning

// Greedy-decodes every image of the split (one caption each) and scores it
// against all of its references.
EvalReport evaluate(const CaptionModel& model, const nlohmann::ordered_json& config_echo,
                    const DatasetManifest& split, const Vocabulary& vocab, const AlphaHook& on_alpha = {});

// Same, checking that the vocabulary is the one the checkpoint was trained on.
EvalReport evaluate(const LoadedModel& loaded, const DatasetManifest& split, const Vocabulary& vocab);

struct AttentionTrace {
    std::vector<std::string> tokens;
    std::size_t grid_side = 0;
    std::vector<std::vector<double>> steps; // one α per emitted token
};

nlohmann::ordered_json to_json(const AttentionTrace& trace);
AttentionTrace trace_from_json(const nlohmann::json& j);
void write_trace(const std::filesystem::path& path, const AttentionTrace& trace);
AttentionTrace read_trace(const std::filesystem::path& path);

struct CaptionResult {
    std::string text;
    std::vector<std::string> tokens;
    std::optional<AttentionTrace> trace; // attention models only
};

CaptionResult caption_image(const LoadedModel& loaded, const RgbImage& image, const Vocabulary& vocab);
CaptionResult caption_image(const LoadedModel& loaded, const std::filesystem::path& image, const Vocabulary& vocab);

// One binary PGM per token, <index>_<token>.pgm: α_t laid out on the g×g grid,
// min-max scaled to 0..255 (a constant map becomes 128), each cell blown up to
// upscale×upscale pixels.
GrayImage attention_map(std::span<const double> alpha, std::size_t grid_side, std::size_t upscale);
std::vector<std::filesystem::path> export_attention_maps(const AttentionTrace& trace, std::size_t upscale,
                                                         const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Sweep and comparison

struct SweepRow {
    std::size_t vocab_cap = 0;
    std::size_t epochs = 0;
    std::size_t images = 0;
    ScoreRow scores;
    RunLog log;
};

struct SweepSpec {
    std::vector<std::size_t> vocab_caps;
    std::vector<std::size_t> epochs;
    std::vector<std::size_t> image_counts;
};

// Trains and evaluates every (cap, epochs, images) setting on the first
// `images` training records, scoring on eval_split. Rows come in cap, epochs,
// images order. Settings that share a training run (same vocabulary and image
// count) are read off that run's per-epoch snapshots, which are exactly what a
// separate shorter run would produce.
std::vector<SweepRow> sweep(const TrainConfig& base, const SweepSpec& spec, const DatasetManifest& train_split,
                            const DatasetManifest& eval_split, const std::filesystem::path& out_dir = {});

nlohmann::ordered_json sweep_json(const std::vector<SweepRow>& rows);
std::string sweep_tsv(const std::vector<SweepRow>& rows);

struct MetricTally {
    std::size_t a_wins = 0;
    std::size_t b_wins = 0;
    std::size_t ties = 0;
};

struct Disagreement {
    std::int64_t id = 0;
    std::string candidate_a, candidate_b;
    double bleu4_a = 0, bleu4_b = 0, wer_a = 0, wer_b = 0;
};

struct Comparison {
    EvalReport a, b;
    std::array<MetricTally, 7> tallies; // bleu1..4, gleu, meteor, wer
    // Sentences where BLEU-4 prefers one model and WER strictly prefers the other.
    std::vector<Disagreement> disagreements;
};

inline constexpr std::array<const char*, 7> kMetricNames{"bleu1", "bleu2", "bleu3", "bleu4", "gleu", "meteor", "wer"};
double metric_value(const ScoreRow& row, std::size_t metric);

// Both reports must cover the same sentence ids in the same order.
Comparison compare_reports(const EvalReport& a, const EvalReport& b);
nlohmann::ordered_json to_json(const Comparison& c);

} // namespace attncap
