#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "attncap/encoder.hpp"
#include "attncap/layers.hpp"

namespace attncap {

// Reserved vocabulary ids.
inline constexpr int kPadId = 0;
inline constexpr int kStartId = 1;
inline constexpr int kEndId = 2;
inline constexpr int kUnkId = 3;

enum class ModelKind { vanilla, attention };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct ModelConfig {
    ModelKind kind = ModelKind::attention;
    EncoderConfig encoder;
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 256;
    std::size_t hidden_dim = 256;
    std::size_t attention_dim = 64;

    // LSTM input: the word embedding, plus the context vector for attention.
    std::size_t lstm_input() const {
        return kind == ModelKind::attention ? embed_dim + encoder.feature_dim : embed_dim;
    }
    void validate() const;
};

// Additive attention: e_i = vᵀ tanh(W_h h_i + W_s s_prev).
struct AttentionParams {
    Tensor w_annotation; // [A x D]
    Tensor w_state;      // [A x hidden]
    Tensor score;        // [A]

    static AttentionParams init(std::size_t feature_dim, std::size_t hidden, std::size_t width, Rng& rng);
};

struct CaptionModel {
    ModelConfig config;
    EncoderParams encoder;
    EmbeddingTable embedding;
    LSTMCell lstm;
    DenseLayer init_hidden;      // global feature -> h0
    DenseLayer image_projection; // vanilla only: global feature -> embedding width
    AttentionParams attention;   // attention only
    DenseLayer output;           // hidden -> vocabulary logits

    static CaptionModel init(const ModelConfig& config, std::uint64_t seed);

    // Every parameter the configured model kind uses, in a fixed order with
    // stable names. Handles alias the model's storage.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

struct DecoderState {
    Tensor h;                     // [B x hidden]
    Tensor c;                     // [B x hidden]
    std::vector<int> last_tokens; // B entries
};

// h0 = init_hidden(global), c0 = 0, last token START.
DecoderState initial_state(Tape& tape, const CaptionModel& model, const FeatureGrid& grid);

// Annotation projections W_h·h_i are step-invariant; computing them once per
// grid keeps a decode at one projection of the state per step.
struct AttendedGrid {
    FeatureGrid grid;
    Tensor keys; // [B x n x A]
};

AttendedGrid prepare_attention(Tape& tape, const AttentionParams& params, const FeatureGrid& grid);

// Raw alignment scores [B x n] for previous decoder states s_prev [B x hidden].
Tensor bahdanau_alignment(Tape& tape, const AttentionParams& params, const Tensor& s_prev, const FeatureGrid& grid);
Tensor alignment_scores(Tape& tape, const AttentionParams& params, const Tensor& s_prev, const AttendedGrid& attended);

// Softmax over the n scores of each row.
Tensor attention_weights(Tape& tape, const Tensor& scores);

// c = Σ_i α_i h_i. weights [B x n] with annotations [B x n x D] -> [B x D];
// unbatched [n] with [n x D] -> [D].
Tensor context_vector(Tape& tape, const Tensor& weights, const Tensor& annotations);

struct StepOutput {
    Tensor logits; // [B x V]
    DecoderState state;
    Tensor alpha; // [B x n]; undefined for the vanilla model
};

StepOutput attention_step(Tape& tape, const CaptionModel& model, const DecoderState& state,
                          const AttendedGrid& attended);

// Input = image_projection(global) + embedding(last token).
StepOutput vanilla_step(Tape& tape, const CaptionModel& model, const DecoderState& state, const Tensor& global);

// Σ_p (1 − Σ_t mask_t α_{p,t})², averaged over the batch. steps are [B x n]
// (or [n] for a single trace); step_mask, if nonempty, holds one 0/1 weight
// per (step, batch row) in step-major order.
Tensor doubly_stochastic_penalty(Tape& tape, const std::vector<Tensor>& steps,
                                 const std::vector<double>& step_mask = {});

// Teacher-forced pass. tokens is [B x T] row-major; step s feeds token s of
// each row and predicts token s+1. Runs T−1 steps, or fewer when every row is
// shorter (lengths count START and END).
struct ForcedPass {
    std::vector<Tensor> logits; // per step, [B x V]
    std::vector<Tensor> alphas; // per step, [B x n]; attention only
};

ForcedPass teacher_forced(Tape& tape, const CaptionModel& model, const FeatureGrid& grid,
                          std::span<const int> tokens, std::size_t t_max, std::size_t steps);

struct Decoded {
    std::vector<int> tokens;                // without START/END
    std::vector<std::vector<double>> trace; // one α per emitted token (attention only)
};

// Greedy decoding from START: argmax (lowest id on ties) is fed back until END
// or max_len emitted tokens.
std::vector<Decoded> greedy_decode(const CaptionModel& model, const FeatureGrid& grid, std::size_t max_len,
                                   const std::function<void(const Tensor&)>& on_alpha = {});

// Convenience: encode images ([3xHxW] or [Bx3xHxW]) without recording, then decode.
std::vector<Decoded> greedy_decode_images(const CaptionModel& model, const Tensor& images, std::size_t max_len,
                                          const std::function<void(const Tensor&)>& on_alpha = {});

} // namespace attncap
