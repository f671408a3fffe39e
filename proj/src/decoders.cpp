#include "attncap/decoders.hpp"

#include <algorithm>

#include "attncap/errors.hpp"

namespace attncap {

std::string to_string(ModelKind kind) { return kind == ModelKind::attention ? "attention" : "vanilla"; }

ModelKind parse_model_kind(const std::string& name) {
    if (name == "attention") {
        return ModelKind::attention;
    }
    if (name == "vanilla") {
        return ModelKind::vanilla;
    }
    throw ContractError("unknown model kind '" + name + "' (expected vanilla or attention)");
}

void ModelConfig::validate() const {
    encoder.validate();
    if (vocab_size <= static_cast<std::size_t>(kUnkId) || embed_dim == 0 || hidden_dim == 0 || attention_dim == 0) {
        throw ContractError("model config: vocabulary must extend past the reserved ids and widths must be positive");
    }
}

AttentionParams AttentionParams::init(std::size_t feature_dim, std::size_t hidden, std::size_t width, Rng& rng) {
    AttentionParams p;
    p.w_annotation = xavier_init(feature_dim, width, rng);
    p.w_state = xavier_init(hidden, width, rng);
    Tensor v = xavier_init(width, 1, rng);
    p.score = Tensor({width}, Buffer(v.values().begin(), v.values().end()), true);
    return p;
}

CaptionModel CaptionModel::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(mix_seed(seed, 0xA11C));
    CaptionModel m;
    m.config = config;
    m.encoder = EncoderParams::init(config.encoder, rng);
    m.embedding = EmbeddingTable::init(config.vocab_size, config.embed_dim, rng);
    m.lstm = LSTMCell::init(config.lstm_input(), config.hidden_dim, rng);
    m.init_hidden = DenseLayer::init(config.encoder.feature_dim, config.hidden_dim, rng);
    if (config.kind == ModelKind::vanilla) {
        m.image_projection = DenseLayer::init(config.encoder.feature_dim, config.embed_dim, rng);
    } else {
        m.attention = AttentionParams::init(config.encoder.feature_dim, config.hidden_dim, config.attention_dim, rng);
    }
    m.output = DenseLayer::init(config.hidden_dim, config.vocab_size, rng);
    return m;
}

std::vector<std::pair<std::string, Tensor>> CaptionModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t k = 0; k < encoder.stages.size(); ++k) {
        const std::string prefix = "encoder.stage" + std::to_string(k);
        out.emplace_back(prefix + ".kernels", encoder.stages[k].kernels);
        out.emplace_back(prefix + ".bias", encoder.stages[k].bias);
    }
    out.emplace_back("encoder.projection.kernels", encoder.projection.kernels);
    out.emplace_back("encoder.cell_bias", encoder.cell_bias);
    out.emplace_back("embedding.table", embedding.table);
    out.emplace_back("lstm.w_input", lstm.w_input);
    out.emplace_back("lstm.w_forget", lstm.w_forget);
    out.emplace_back("lstm.w_output", lstm.w_output);
    out.emplace_back("lstm.w_cell", lstm.w_cell);
    out.emplace_back("lstm.b_input", lstm.b_input);
    out.emplace_back("lstm.b_forget", lstm.b_forget);
    out.emplace_back("lstm.b_output", lstm.b_output);
    out.emplace_back("lstm.b_cell", lstm.b_cell);
    out.emplace_back("init_hidden.weight", init_hidden.weight);
    out.emplace_back("init_hidden.bias", init_hidden.bias);
    if (config.kind == ModelKind::vanilla) {
        out.emplace_back("image_projection.weight", image_projection.weight);
        out.emplace_back("image_projection.bias", image_projection.bias);
    } else {
        out.emplace_back("attention.w_annotation", attention.w_annotation);
        out.emplace_back("attention.w_state", attention.w_state);
        out.emplace_back("attention.score", attention.score);
    }
    out.emplace_back("output.weight", output.weight);
    out.emplace_back("output.bias", output.bias);
    return out;
}

DecoderState initial_state(Tape& tape, const CaptionModel& model, const FeatureGrid& grid) {
    const std::size_t batch = grid.batch();
    DecoderState s;
    s.h = dense_forward(tape, model.init_hidden, grid.global);
    s.c = Tensor::zeros({batch, model.config.hidden_dim});
    s.last_tokens.assign(batch, kStartId);
    return s;
}

AttendedGrid prepare_attention(Tape& tape, const AttentionParams& params, const FeatureGrid& grid) {
    const std::size_t batch = grid.batch(), n = grid.cells(), d = grid.feature_dim();
    if (params.w_annotation.rank() != 2 || params.w_annotation.dim(1) != d) {
        throw DimensionError("attention: W_h " + shape_string(params.w_annotation.shape()) +
                             " does not fit annotations " + shape_string(grid.annotations.shape()));
    }
    const std::size_t width = params.w_annotation.dim(0);
    Tensor flat = reshape(tape, grid.annotations, {batch * n, d});
    Tensor keys = reshape(tape, affine(tape, flat, params.w_annotation, Tensor()), {batch, n, width});
    return AttendedGrid{grid, keys};
}

Tensor alignment_scores(Tape& tape, const AttentionParams& params, const Tensor& s_prev, const AttendedGrid& attended) {
    const std::size_t batch = attended.keys.dim(0), n = attended.keys.dim(1), width = attended.keys.dim(2);
    if (params.score.shape() != Shape{width} || s_prev.rank() != 2 || s_prev.dim(0) != batch) {
        throw DimensionError("attention: state " + shape_string(s_prev.shape()) + " / score vector " +
                             shape_string(params.score.shape()) + " do not fit keys " +
                             shape_string(attended.keys.shape()));
    }
    Tensor query = affine(tape, s_prev, params.w_state, Tensor());
    Tensor pre = tanh(tape, add_expand(tape, attended.keys, query, 1));
    Tensor e = matmul(tape, reshape(tape, pre, {batch * n, width}), reshape(tape, params.score, {width, 1}));
    return reshape(tape, e, {batch, n});
}

Tensor bahdanau_alignment(Tape& tape, const AttentionParams& params, const Tensor& s_prev, const FeatureGrid& grid) {
    return alignment_scores(tape, params, s_prev, prepare_attention(tape, params, grid));
}

Tensor attention_weights(Tape& tape, const Tensor& scores) { return softmax(tape, scores); }

Tensor context_vector(Tape& tape, const Tensor& weights, const Tensor& annotations) {
    return weighted_sum(tape, weights, annotations);
}

namespace {

Tensor embed_tokens(Tape& tape, const CaptionModel& model, const DecoderState& state) {
    return embedding_lookup(tape, model.embedding, state.last_tokens);
}

} // namespace

StepOutput attention_step(Tape& tape, const CaptionModel& model, const DecoderState& state,
                          const AttendedGrid& attended) {
    Tensor alpha = attention_weights(tape, alignment_scores(tape, model.attention, state.h, attended));
    Tensor context = context_vector(tape, alpha, attended.grid.annotations);
    Tensor x = concat_last(tape, {embed_tokens(tape, model, state), context});
    LSTMState next = lstm_step(tape, model.lstm, x, state.h, state.c);
    Tensor logits = dense_forward(tape, model.output, next.h);
    return StepOutput{logits, DecoderState{next.h, next.c, state.last_tokens}, alpha};
}

StepOutput vanilla_step(Tape& tape, const CaptionModel& model, const DecoderState& state, const Tensor& global) {
    Tensor x = add(tape, dense_forward(tape, model.image_projection, global), embed_tokens(tape, model, state));
    LSTMState next = lstm_step(tape, model.lstm, x, state.h, state.c);
    Tensor logits = dense_forward(tape, model.output, next.h);
    return StepOutput{logits, DecoderState{next.h, next.c, state.last_tokens}, Tensor()};
}

Tensor doubly_stochastic_penalty(Tape& tape, const std::vector<Tensor>& steps, const std::vector<double>& step_mask) {
    if (steps.empty()) {
        throw ContractError("doubly_stochastic_penalty: empty attention trace");
    }
    const bool single = steps[0].rank() == 1;
    const std::size_t batch = single ? 1 : steps[0].dim(0);
    const std::size_t n = steps[0].dim(steps[0].rank() - 1);
    if (!step_mask.empty() && step_mask.size() != steps.size() * batch) {
        throw DimensionError("doubly_stochastic_penalty: mask has " + std::to_string(step_mask.size()) +
                             " entries, expected " + std::to_string(steps.size() * batch));
    }
    Tensor mass;
    for (std::size_t t = 0; t < steps.size(); ++t) {
        Tensor a = single ? reshape(tape, steps[t], {1, n}) : steps[t];
        if (a.shape() != Shape{batch, n}) {
            throw DimensionError("doubly_stochastic_penalty: step " + std::to_string(t) + " has shape " +
                                 shape_string(steps[t].shape()));
        }
        if (!step_mask.empty()) {
            Buffer m(batch * n);
            for (std::size_t b = 0; b < batch; ++b) {
                std::fill_n(m.begin() + static_cast<std::ptrdiff_t>(b * n), n, step_mask[t * batch + b]);
            }
            a = mul(tape, a, Tensor({batch, n}, std::move(m)));
        }
        mass = mass.defined() ? add(tape, mass, a) : a;
    }
    Tensor gap = add_const(tape, scale(tape, mass, -1.0), 1.0);
    return scale(tape, sum(tape, mul(tape, gap, gap)), 1.0 / static_cast<double>(batch));
}

ForcedPass teacher_forced(Tape& tape, const CaptionModel& model, const FeatureGrid& grid,
                          std::span<const int> tokens, std::size_t t_max, std::size_t steps) {
    const std::size_t batch = grid.batch();
    if (tokens.size() != batch * t_max || steps + 1 > t_max) {
        throw DimensionError("teacher_forced: token matrix of " + std::to_string(tokens.size()) + " entries does not fit " +
                             std::to_string(batch) + " rows of width " + std::to_string(t_max) + " for " +
                             std::to_string(steps) + " steps");
    }
    ForcedPass pass;
    DecoderState state = initial_state(tape, model, grid);
    const bool attend = model.config.kind == ModelKind::attention;
    AttendedGrid attended;
    if (attend) {
        attended = prepare_attention(tape, model.attention, grid);
    }
    for (std::size_t s = 0; s < steps; ++s) {
        for (std::size_t b = 0; b < batch; ++b) {
            state.last_tokens[b] = tokens[b * t_max + s];
        }
        StepOutput out = attend ? attention_step(tape, model, state, attended)
                                : vanilla_step(tape, model, state, grid.global);
        pass.logits.push_back(out.logits);
        if (attend) {
            pass.alphas.push_back(out.alpha);
        }
        state = std::move(out.state);
    }
    return pass;
}

std::vector<Decoded> greedy_decode(const CaptionModel& model, const FeatureGrid& grid, std::size_t max_len,
                                   const std::function<void(const Tensor&)>& on_alpha) {
    if (max_len == 0) {
        throw ContractError("greedy_decode: max_len must be at least 1");
    }
    Tape tape(false);
    const std::size_t batch = grid.batch();
    const bool attend = model.config.kind == ModelKind::attention;
    DecoderState state = initial_state(tape, model, grid);
    AttendedGrid attended;
    if (attend) {
        attended = prepare_attention(tape, model.attention, grid);
    }
    std::vector<Decoded> result(batch);
    std::vector<bool> done(batch, false);
    std::size_t remaining = batch;
    for (std::size_t step = 0; step < max_len && remaining > 0; ++step) {
        StepOutput out = attend ? attention_step(tape, model, state, attended)
                                : vanilla_step(tape, model, state, grid.global);
        if (attend && on_alpha) {
            on_alpha(out.alpha);
        }
        const std::size_t vocab = out.logits.dim(1);
        const auto lv = out.logits.values();
        state = std::move(out.state);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* row = lv.data() + b * vocab;
            const int token = static_cast<int>(std::max_element(row, row + vocab) - row);
            state.last_tokens[b] = token;
            if (done[b]) {
                continue;
            }
            if (token == kEndId) {
                done[b] = true;
                --remaining;
                continue;
            }
            result[b].tokens.push_back(token);
            if (attend) {
                const std::size_t n = out.alpha.dim(1);
                const auto av = out.alpha.values();
                result[b].trace.emplace_back(av.begin() + static_cast<std::ptrdiff_t>(b * n),
                                             av.begin() + static_cast<std::ptrdiff_t>((b + 1) * n));
            }
        }
    }
    return result;
}

std::vector<Decoded> greedy_decode_images(const CaptionModel& model, const Tensor& images, std::size_t max_len,
                                          const std::function<void(const Tensor&)>& on_alpha) {
    Tape tape(false);
    FeatureGrid grid = encode(tape, model.config.encoder, model.encoder, images);
    return greedy_decode(model, grid, max_len, on_alpha);
}

} // namespace attncap
