#include "attncap/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "attncap/errors.hpp"
#include "attncap/layers.hpp"
#include "attncap/ops.hpp"

namespace attncap {

namespace {

constexpr std::size_t kEvalBatch = 50;

std::string format_double(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw DataError("failed writing " + path.string());
    }
}

std::vector<std::string> id_tokens(const Vocabulary& vocab, const std::vector<int>& ids) {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) {
        out.push_back(vocab.token(id));
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Loss

BatchLoss batch_loss(Tape& tape, const CaptionModel& model, const Batch& batch, double lambda) {
    const std::size_t rows = batch.size();
    const std::size_t steps = batch.max_length() - 1;
    FeatureGrid grid = encode(tape, model.config.encoder, model.encoder, batch.images);
    ForcedPass pass = teacher_forced(tape, model, grid, batch.tokens, batch.t_max, steps);

    std::vector<int> targets;
    std::vector<double> mask;
    targets.reserve(steps * rows);
    mask.reserve(steps * rows);
    for (std::size_t s = 0; s < steps; ++s) {
        for (std::size_t r = 0; r < rows; ++r) {
            const int t = batch.tokens[r * batch.t_max + s + 1];
            targets.push_back(t);
            mask.push_back(t == kPadId ? 0.0 : 1.0);
        }
    }
    BatchLoss out;
    out.cross_entropy = cross_entropy_masked(tape, concat_rows(tape, pass.logits), targets, kPadId);
    out.loss = out.cross_entropy;
    if (model.config.kind == ModelKind::attention && lambda > 0.0) {
        out.penalty = doubly_stochastic_penalty(tape, pass.alphas, mask);
        out.loss = add(tape, out.cross_entropy, scale(tape, out.penalty, lambda));
    }
    out.alphas = std::move(pass.alphas);
    return out;
}

std::vector<double> token_losses(const CaptionModel& model, const Tensor& image, std::span<const int> tokens) {
    auto end = std::find(tokens.begin(), tokens.end(), kEndId);
    const std::size_t length = end == tokens.end() ? tokens.size() : static_cast<std::size_t>(end - tokens.begin()) + 1;
    if (length < 2) {
        throw ContractError("token_losses: caption needs at least START and one more token");
    }
    Tape tape(false);
    Tensor batch_image = image.rank() == 3 ? reshape(tape, image, {1, image.dim(0), image.dim(1), image.dim(2)}) : image;
    FeatureGrid grid = encode(tape, model.config.encoder, model.encoder, batch_image);
    ForcedPass pass = teacher_forced(tape, model, grid, tokens, tokens.size(), length - 1);
    std::vector<double> out;
    for (std::size_t s = 0; s + 1 < length; ++s) {
        auto z = pass.logits[s].values();
        const double m = *std::max_element(z.begin(), z.end());
        double total = 0.0;
        for (double v : z) {
            total += std::exp(v - m);
        }
        const int target = tokens[s + 1];
        out.push_back(m + std::log(total) - z[static_cast<std::size_t>(target)]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// RunLog

void RunLog::append(const RunLogRow& row) {
    if (!rows_.empty() && row.epoch <= rows_.back().epoch) {
        throw ContractError("run log epochs must increase: " + std::to_string(row.epoch) + " after " +
                            std::to_string(rows_.back().epoch));
    }
    rows_.push_back(row);
}

RunLog RunLog::prefix(std::size_t epochs) const {
    RunLog out;
    for (const auto& r : rows_) {
        if (r.epoch <= epochs) {
            out.rows_.push_back(r);
        }
    }
    return out;
}

std::string RunLog::tsv() const {
    std::string s = "epoch\tmean_loss\tval_bleu4\n";
    for (const auto& r : rows_) {
        s += std::to_string(r.epoch) + "\t" + format_double(r.mean_loss) + "\t" + format_double(r.val_bleu4) + "\n";
    }
    return s;
}

std::string RunLog::timing_tsv() const {
    std::string s = "epoch\twall_seconds\n";
    for (const auto& r : rows_) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", r.wall_seconds);
        s += std::to_string(r.epoch) + "\t" + buf + "\n";
    }
    return s;
}

nlohmann::ordered_json RunLog::to_json() const {
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : rows_) {
        nlohmann::ordered_json j;
        j["epoch"] = r.epoch;
        j["mean_loss"] = r.mean_loss;
        j["val_bleu4"] = std::isnan(r.val_bleu4) ? nlohmann::ordered_json() : nlohmann::ordered_json(r.val_bleu4);
        rows.push_back(j);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(const TrainConfig& config, const Vocabulary& vocab)
    : config_(config), fingerprint_(vocab.fingerprint()) {
    config_.validate();
    model_ = CaptionModel::init(config_.model_config(vocab.size()), config_.param_seed);
    for (auto& [name, t] : model_.named_parameters()) {
        params_.push_back(t);
    }
    if (config_.optimizer == OptimizerKind::adam) {
        optimizer_ = std::make_unique<Adam>(params_, config_.learning_rate);
    } else {
        optimizer_ = std::make_unique<Sgd>(params_, config_.learning_rate);
    }
}

double Trainer::step(const Batch& batch, const AlphaHook& on_alpha) {
    Tape tape;
    BatchLoss parts = batch_loss(tape, model_, batch, config_.lambda);
    if (on_alpha) {
        for (const Tensor& a : parts.alphas) {
            on_alpha(a);
        }
    }
    const double loss = parts.loss.item();
    if (!std::isfinite(loss)) {
        throw DivergenceError("loss became " + format_double(loss) + " at update " + std::to_string(steps_ + 1));
    }
    tape.backward(parts.loss);
    const double norm = clip_grad_norm(params_, config_.clip_norm > 0 ? config_.clip_norm
                                                                       : std::numeric_limits<double>::infinity());
    if (!std::isfinite(norm)) {
        throw DivergenceError("gradient norm became " + format_double(norm) + " at update " +
                              std::to_string(steps_ + 1));
    }
    optimizer_->step();
    ++steps_;
    return loss;
}

TrainResult train(const TrainConfig& config, const DatasetManifest& train_split, const DatasetManifest* val_split,
                  const Vocabulary& vocab, const TrainHooks& hooks) {
    config.validate();
    if (train_split.records.empty()) {
        throw DataError("training split is empty");
    }
    const bool write = hooks.write_files && !config.out_dir.empty();
    if (write) {
        std::error_code ec;
        std::filesystem::create_directories(config.out_dir, ec);
        if (ec) {
            throw DataError("cannot create " + config.out_dir.string() + ": " + ec.message());
        }
    }
    const ImageStore images(train_split);
    if (images.side() != config.encoder_config().input_side()) {
        throw DataError("training images are " + std::to_string(images.side()) + " pixels wide, the encoder expects " +
                        std::to_string(config.encoder_config().input_side()));
    }
    std::optional<ImageStore> val_images;
    if (val_split != nullptr && !val_split->records.empty()) {
        val_images.emplace(*val_split);
    }

    Trainer trainer(config, vocab);
    Rng shuffle(mix_seed(config.shuffle_seed));
    TrainResult result;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        const auto plan = plan_batches(train_split, config.batch_size, shuffle.next_u64());
        double total = 0.0;
        for (const auto& examples : plan) {
            const Batch batch = assemble_batch(train_split, images, vocab, examples, config.t_max);
            try {
                total += trainer.step(batch, hooks.on_alpha);
            } catch (const DivergenceError& e) {
                throw DivergenceError("epoch " + std::to_string(epoch) + ": " + e.what());
            }
        }
        RunLogRow row;
        row.epoch = epoch;
        row.mean_loss = total / static_cast<double>(plan.size());
        row.val_bleu4 = std::numeric_limits<double>::quiet_NaN();
        if (val_images) {
            EvalReport r = evaluate(trainer.model(), checkpoint_config(config, vocab.size(), vocab.fingerprint()),
                                    *val_split, vocab, hooks.on_alpha);
            row.val_bleu4 = r.corpus.bleu[3];
        }
        row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.log.append(row);

        if (write) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%03zu.atnc", epoch);
            const auto path = config.out_dir / name;
            save_checkpoint(path, make_checkpoint(trainer.model(), config, vocab.fingerprint(), epoch, shuffle.state()));
            result.checkpoints.push_back(path);
            write_text(config.out_dir / "runlog.tsv", result.log.tsv());
            write_text(config.out_dir / "timing.tsv", result.log.timing_tsv());
        }
        if (hooks.on_epoch) {
            hooks.on_epoch(epoch, trainer.model());
        }
    }
    if (write) {
        const auto final_path = config.out_dir / "model.atnc";
        std::error_code ec;
        std::filesystem::copy_file(result.checkpoints.back(), final_path,
                                   std::filesystem::copy_options::overwrite_existing, ec);
        if (ec) {
            throw DataError("cannot write " + final_path.string() + ": " + ec.message());
        }
    }
    result.model = trainer.model();
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation and captioning

EvalReport evaluate(const CaptionModel& model, const nlohmann::ordered_json& config_echo,
                    const DatasetManifest& split, const Vocabulary& vocab, const AlphaHook& on_alpha) {
    if (split.records.empty()) {
        throw DataError("split '" + split.split + "' has no records");
    }
    if (vocab.size() != model.config.vocab_size) {
        throw ContractError("vocabulary has " + std::to_string(vocab.size()) + " entries, the model was built for " +
                            std::to_string(model.config.vocab_size));
    }
    const ImageStore images(split);
    if (images.side() != model.config.encoder.input_side()) {
        throw DataError("split '" + split.split + "' images are " + std::to_string(images.side()) +
                        " pixels wide, the encoder expects " + std::to_string(model.config.encoder.input_side()));
    }
    // A caption that fills the training width: t_max minus START and END.
    std::size_t max_len = 14;
    if (config_echo.contains("train")) {
        max_len = config_echo["train"].value("t_max", std::size_t{16}) - 2;
    }
    std::vector<EvalPair> pairs;
    pairs.reserve(split.records.size());
    for (std::size_t begin = 0; begin < split.records.size(); begin += kEvalBatch) {
        const std::size_t end = std::min(split.records.size(), begin + kEvalBatch);
        std::vector<std::size_t> idx;
        for (std::size_t i = begin; i < end; ++i) {
            idx.push_back(i);
        }
        const auto decoded = greedy_decode_images(model, images.batch(idx), max_len, on_alpha);
        for (std::size_t i = begin; i < end; ++i) {
            const ManifestRecord& rec = split.records[i];
            EvalPair p;
            p.id = rec.id;
            // A stray START emitted mid-sequence is not a word; UNK stays and simply never matches.
            p.candidate = decode_caption(vocab, decoded[i - begin].tokens);
            for (const auto& c : rec.captions) {
                p.references.push_back(tokenize(c));
            }
            pairs.push_back(std::move(p));
        }
    }
    EvalReport report = corpus_evaluate(pairs);
    report.model = to_string(model.config.kind);
    report.config = config_echo;
    report.config["split"] = split.split;
    return report;
}

EvalReport evaluate(const LoadedModel& loaded, const DatasetManifest& split, const Vocabulary& vocab) {
    if (vocab.fingerprint() != loaded.vocab_fingerprint) {
        throw ContractError("vocabulary does not match the one the checkpoint was trained with");
    }
    return evaluate(loaded.model, checkpoint_config(loaded.config, loaded.model.config.vocab_size, loaded.vocab_fingerprint),
                    split, vocab);
}

nlohmann::ordered_json to_json(const AttentionTrace& trace) {
    nlohmann::ordered_json j;
    j["tokens"] = trace.tokens;
    j["grid_side"] = trace.grid_side;
    j["steps"] = trace.steps;
    return j;
}

AttentionTrace trace_from_json(const nlohmann::json& j) {
    AttentionTrace t;
    try {
        t.tokens = j.at("tokens").get<std::vector<std::string>>();
        t.grid_side = j.at("grid_side").get<std::size_t>();
        t.steps = j.at("steps").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed attention trace: ") + e.what());
    }
    if (t.tokens.size() != t.steps.size()) {
        throw FormatError("attention trace has " + std::to_string(t.tokens.size()) + " tokens but " +
                          std::to_string(t.steps.size()) + " steps");
    }
    return t;
}

void write_trace(const std::filesystem::path& path, const AttentionTrace& trace) {
    write_text(path, to_json(trace).dump(2) + "\n");
}

AttentionTrace read_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open trace " + path.string());
    }
    try {
        return trace_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

CaptionResult caption_image(const LoadedModel& loaded, const RgbImage& image, const Vocabulary& vocab) {
    if (vocab.fingerprint() != loaded.vocab_fingerprint) {
        throw ContractError("vocabulary does not match the one the checkpoint was trained with");
    }
    const std::size_t side = loaded.model.config.encoder.input_side();
    if (image.width != side || image.height != side) {
        throw DataError("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                        ", the encoder expects " + std::to_string(side) + "x" + std::to_string(side));
    }
    const auto decoded = greedy_decode_images(loaded.model, image_to_tensor(image), loaded.config.max_decode_len());
    CaptionResult out;
    out.tokens = id_tokens(vocab, decoded.front().tokens);
    out.text = join_tokens(out.tokens);
    if (loaded.model.config.kind == ModelKind::attention) {
        AttentionTrace trace;
        trace.tokens = out.tokens;
        trace.grid_side = loaded.model.config.encoder.grid_side;
        trace.steps = decoded.front().trace;
        out.trace = std::move(trace);
    }
    return out;
}

CaptionResult caption_image(const LoadedModel& loaded, const std::filesystem::path& image, const Vocabulary& vocab) {
    return caption_image(loaded, read_ppm(image), vocab);
}

GrayImage attention_map(std::span<const double> alpha, std::size_t grid_side, std::size_t upscale) {
    if (alpha.size() != grid_side * grid_side) {
        throw DimensionError("attention map: " + std::to_string(alpha.size()) + " weights do not fill a " +
                             std::to_string(grid_side) + "x" + std::to_string(grid_side) + " grid");
    }
    if (upscale == 0) {
        throw ContractError("attention map: upscale must be at least 1");
    }
    const auto [lo, hi] = std::minmax_element(alpha.begin(), alpha.end());
    const double range = *hi - *lo;
    GrayImage img;
    img.width = img.height = grid_side * upscale;
    img.pixels.resize(img.width * img.height);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            const double a = alpha[(y / upscale) * grid_side + x / upscale];
            const double v = range > 0.0 ? std::round(255.0 * (a - *lo) / range) : 128.0;
            img.pixels[y * img.width + x] = static_cast<std::uint8_t>(v);
        }
    }
    return img;
}

std::vector<std::filesystem::path> export_attention_maps(const AttentionTrace& trace, std::size_t upscale,
                                                         const std::filesystem::path& out_dir) {
    if (trace.steps.empty()) {
        throw ContractError("attention trace is empty (END was decoded first); nothing to render");
    }
    if (trace.tokens.size() != trace.steps.size()) {
        throw ContractError("attention trace has " + std::to_string(trace.tokens.size()) + " tokens but " +
                            std::to_string(trace.steps.size()) + " steps");
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) {
        throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
    }
    std::vector<std::filesystem::path> files;
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        std::string token;
        for (char ch : trace.tokens[i]) {
            if (std::isalnum(static_cast<unsigned char>(ch))) {
                token += ch;
            }
        }
        const auto path = out_dir / (std::to_string(i) + "_" + token + ".pgm");
        write_pgm(path, attention_map(trace.steps[i], trace.grid_side, upscale));
        files.push_back(path);
    }
    return files;
}

// ---------------------------------------------------------------------------
// Sweep

std::vector<SweepRow> sweep(const TrainConfig& base, const SweepSpec& spec, const DatasetManifest& train_split,
                            const DatasetManifest& eval_split, const std::filesystem::path& out_dir) {
    if (spec.vocab_caps.empty() || spec.epochs.empty() || spec.image_counts.empty()) {
        throw ContractError("sweep needs at least one vocabulary cap, epoch count and image count");
    }
    for (std::size_t n : spec.image_counts) {
        if (n == 0 || n > train_split.records.size()) {
            throw DataError("sweep asks for " + std::to_string(n) + " training images, the split has " +
                            std::to_string(train_split.records.size()));
        }
    }
    const std::size_t max_epochs = *std::max_element(spec.epochs.begin(), spec.epochs.end());
    if (std::find(spec.epochs.begin(), spec.epochs.end(), std::size_t{0}) != spec.epochs.end()) {
        throw ContractError("sweep epoch counts must be positive");
    }

    struct RunKey {
        std::uint64_t fingerprint;
        std::size_t images;
        auto operator<=>(const RunKey&) const = default;
    };
    struct RunOutcome {
        std::map<std::size_t, ScoreRow> scores; // by epoch
        RunLog log;
    };
    std::map<RunKey, RunOutcome> runs;
    std::vector<SweepRow> rows;
    for (std::size_t cap : spec.vocab_caps) {
        for (std::size_t epochs : spec.epochs) {
            for (std::size_t images : spec.image_counts) {
                DatasetManifest subset = train_split;
                subset.records.resize(images);
                const Vocabulary vocab = Vocabulary::build(all_captions(subset), cap);
                const RunKey key{vocab.fingerprint(), images};
                auto it = runs.find(key);
                if (it == runs.end()) {
                    TrainConfig cfg = base;
                    cfg.vocab_cap = cap;
                    cfg.epochs = max_epochs;
                    cfg.out_dir.clear();
                    if (!out_dir.empty()) {
                        cfg.out_dir = out_dir / ("k" + std::to_string(cap) + "_n" + std::to_string(images));
                    }
                    std::set<std::size_t> wanted(spec.epochs.begin(), spec.epochs.end());
                    RunOutcome outcome;
                    TrainHooks hooks;
                    hooks.on_epoch = [&](std::size_t e, const CaptionModel& model) {
                        if (wanted.count(e) != 0) {
                            outcome.scores[e] =
                                evaluate(model, checkpoint_config(cfg, vocab.size(), vocab.fingerprint()), eval_split, vocab)
                                    .corpus;
                        }
                    };
                    if (!cfg.out_dir.empty()) {
                        std::error_code ec;
                        std::filesystem::create_directories(cfg.out_dir, ec);
                        vocab.save(cfg.out_dir / "vocab.tsv");
                    }
                    TrainResult result = train(cfg, subset, nullptr, vocab, hooks);
                    outcome.log = result.log;
                    it = runs.emplace(key, std::move(outcome)).first;
                }
                SweepRow row;
                row.vocab_cap = cap;
                row.epochs = epochs;
                row.images = images;
                row.scores = it->second.scores.at(epochs);
                row.log = it->second.log.prefix(epochs);
                rows.push_back(std::move(row));
            }
        }
    }
    return rows;
}

double metric_value(const ScoreRow& row, std::size_t metric) {
    switch (metric) {
    case 0:
    case 1:
    case 2:
    case 3:
        return row.bleu[metric];
    case 4:
        return row.gleu;
    case 5:
        return row.meteor;
    case 6:
        return row.wer;
    default:
        throw IndexError("metric index " + std::to_string(metric) + " out of range");
    }
}

nlohmann::ordered_json sweep_json(const std::vector<SweepRow>& rows) {
    auto out = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json j;
        j["vocab_cap"] = r.vocab_cap;
        j["epochs"] = r.epochs;
        j["images"] = r.images;
        for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
            j[kMetricNames[m]] = metric_value(r.scores, m);
        }
        j["runlog"] = r.log.to_json();
        out.push_back(j);
    }
    return out;
}

std::string sweep_tsv(const std::vector<SweepRow>& rows) {
    std::string s = "vocab_cap\tepochs\timages";
    for (const char* m : kMetricNames) {
        s += std::string("\t") + m;
    }
    s += "\n";
    for (const auto& r : rows) {
        s += std::to_string(r.vocab_cap) + "\t" + std::to_string(r.epochs) + "\t" + std::to_string(r.images);
        for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
            s += "\t" + format_double(metric_value(r.scores, m));
        }
        s += "\n";
    }
    return s;
}

// ---------------------------------------------------------------------------
// Comparison

Comparison compare_reports(const EvalReport& a, const EvalReport& b) {
    if (a.per_sentence.size() != b.per_sentence.size()) {
        throw ContractError("reports cover different splits: " + std::to_string(a.per_sentence.size()) + " vs " +
                            std::to_string(b.per_sentence.size()) + " sentences");
    }
    Comparison c;
    c.a = a;
    c.b = b;
    for (std::size_t i = 0; i < a.per_sentence.size(); ++i) {
        const SentenceScores& sa = a.per_sentence[i];
        const SentenceScores& sb = b.per_sentence[i];
        if (sa.id != sb.id) {
            throw ContractError("reports cover different splits: sentence " + std::to_string(i) + " is id " +
                                std::to_string(sa.id) + " vs " + std::to_string(sb.id));
        }
        for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
            double va = metric_value(sa.scores, m);
            double vb = metric_value(sb.scores, m);
            if (m == 6) {
                std::swap(va, vb); // lower WER wins
            }
            MetricTally& t = c.tallies[m];
            if (va > vb) {
                ++t.a_wins;
            } else if (vb > va) {
                ++t.b_wins;
            } else {
                ++t.ties;
            }
        }
        const double db = sa.scores.bleu[3] - sb.scores.bleu[3];
        const double dw = sb.scores.wer - sa.scores.wer; // positive: WER prefers a
        if ((db > 0 && dw < 0) || (db < 0 && dw > 0)) {
            c.disagreements.push_back(Disagreement{sa.id, sa.candidate, sb.candidate, sa.scores.bleu[3],
                                                   sb.scores.bleu[3], sa.scores.wer, sb.scores.wer});
        }
    }
    return c;
}

nlohmann::ordered_json to_json(const Comparison& c) {
    nlohmann::ordered_json j;
    j["models"] = {c.a.model, c.b.model};
    j["sentences"] = c.a.per_sentence.size();
    nlohmann::ordered_json corpus;
    nlohmann::ordered_json tallies;
    for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
        corpus[kMetricNames[m]] = {{"a", metric_value(c.a.corpus, m)}, {"b", metric_value(c.b.corpus, m)}};
        tallies[kMetricNames[m]] = {
            {"a_wins", c.tallies[m].a_wins}, {"b_wins", c.tallies[m].b_wins}, {"ties", c.tallies[m].ties}};
    }
    j["corpus"] = corpus;
    j["per_sentence"] = tallies;
    auto table = nlohmann::ordered_json::array();
    for (const auto& d : c.disagreements) {
        table.push_back({{"id", d.id},
                         {"candidate_a", d.candidate_a},
                         {"candidate_b", d.candidate_b},
                         {"bleu4_a", d.bleu4_a},
                         {"bleu4_b", d.bleu4_b},
                         {"wer_a", d.wer_a},
                         {"wer_b", d.wer_b}});
    }
    j["bleu4_wer_disagreements"] = table;
    return j;
}

} // namespace attncap
