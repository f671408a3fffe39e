#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "attncap/checkpoint.hpp"
#include "attncap/errors.hpp"
#include "attncap/trainer.hpp"
#include "support.hpp"

using namespace attncap;
using testing_support::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TrainConfig tiny_config(ModelKind kind) {
    TrainConfig c;
    c.model = kind;
    c.embed_dim = 8;
    c.hidden_dim = 8;
    c.feature_dim = 8;
    c.attention_dim = 4;
    c.grid_side = 4;
    c.channels = {4, 4};
    c.batch_size = 8;
    c.epochs = 2;
    c.learning_rate = 1e-2;
    return c;
}

// A small generated corpus shared by the tests in this file.
class TrainerTest : public ::testing::Test {
  protected:
    static void SetUpTestSuite() {
        dir_ = new TempDir("trainer");
        generate_dataset(21, SplitCounts{12, 4, 5}, 16, dir_->path());
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }
    DatasetManifest split(const std::string& name) const { return load_split(dir_->path(), name); }
    Vocabulary vocab() const { return Vocabulary::build(all_captions(split("train")), 5000); }

    static TempDir* dir_;
};

TempDir* TrainerTest::dir_ = nullptr;

} // namespace

TEST(TrainConfig, ValidationAndJson) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(TrainConfig::from_json(c.to_json()).to_json().dump(), c.to_json().dump());
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), ContractError);
    c = TrainConfig{};
    c.learning_rate = -1;
    EXPECT_THROW(c.validate(), ContractError);
    EXPECT_THROW(parse_optimizer_kind("rmsprop"), ContractError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    for (ModelKind kind : {ModelKind::vanilla, ModelKind::attention}) {
        TrainConfig cfg = tiny_config(kind);
        CaptionModel m = CaptionModel::init(cfg.model_config(9), 77);
        cfg.param_seed = 77;
        TempDir dir("ckpt");
        save_checkpoint(dir / "m.atnc", make_checkpoint(m, cfg, 1234, 3, "state"));
        LoadedModel back = load_model(dir / "m.atnc");
        EXPECT_EQ(back.epoch, 3u);
        EXPECT_EQ(back.vocab_fingerprint, 1234u);
        EXPECT_EQ(back.config.to_json().dump(), cfg.to_json().dump());
        auto a = m.named_parameters();
        auto b = back.model.named_parameters();
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_EQ(a[i].first, b[i].first);
            ASSERT_EQ(a[i].second.shape(), b[i].second.shape());
            EXPECT_EQ(std::memcmp(a[i].second.values().data(), b[i].second.values().data(),
                                  a[i].second.size() * sizeof(double)),
                      0);
        }
        EXPECT_EQ(serialize_checkpoint(load_checkpoint(dir / "m.atnc")), slurp(dir / "m.atnc"));
        EXPECT_FALSE(std::filesystem::exists(dir / "m.atnc.tmp"));
    }
}

TEST(Checkpoint, CorruptFilesAreFormatErrors) {
    TrainConfig cfg = tiny_config(ModelKind::attention);
    CaptionModel m = CaptionModel::init(cfg.model_config(9), cfg.param_seed);
    const std::string bytes = serialize_checkpoint(make_checkpoint(m, cfg, 1, 1, ""));
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
        EXPECT_THROW(parse_checkpoint(std::string_view(bytes).substr(0, cut)), FormatError) << cut;
    }
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(parse_checkpoint(bad_magic), FormatError);
    std::string bumped = bytes;
    bumped[4] = 2;
    try {
        parse_checkpoint(bumped);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("unsupported checkpoint version 2"), std::string::npos);
    }
    EXPECT_THROW(parse_checkpoint(bytes + "x"), FormatError);
}

TEST_F(TrainerTest, TeacherForcingCausality) {
    const auto train_split = split("train");
    const Vocabulary v = vocab();
    TrainConfig cfg = tiny_config(ModelKind::attention);
    CaptionModel m = CaptionModel::init(cfg.model_config(v.size()), 5);
    const ImageStore images(train_split);
    const std::size_t rec[] = {0};
    const Tensor img = images.batch(rec);
    const auto tokens = encode_caption(v, train_split.records[0].captions[0], 16);
    const auto base = token_losses(m, img, tokens);
    const std::size_t length = static_cast<std::size_t>(std::find(tokens.begin(), tokens.end(), kEndId) - tokens.begin()) + 1;
    ASSERT_EQ(base.size(), length - 1);
    for (std::size_t t = 1; t + 1 < length; ++t) {
        auto perturbed = tokens;
        perturbed[t] = tokens[t] == 4 ? 5 : 4;
        ASSERT_NE(perturbed[t], tokens[t]);
        const auto losses = token_losses(m, img, perturbed);
        // Entry j scores token j + 1.
        for (std::size_t j = 0; j + 1 < t; ++j) {
            EXPECT_EQ(losses[j], base[j]) << "t=" << t << " j=" << j;
        }
        EXPECT_NE(losses[t - 1], base[t - 1]);
    }
}

TEST_F(TrainerTest, StepCountMatchesLongestCaption) {
    const auto train_split = split("train");
    const Vocabulary v = vocab();
    const auto batches = make_batches(train_split, v, 4, 16, 1);
    TrainConfig cfg = tiny_config(ModelKind::attention);
    CaptionModel m = CaptionModel::init(cfg.model_config(v.size()), 5);
    Tape tape;
    BatchLoss loss = batch_loss(tape, m, batches[0], 0.0);
    EXPECT_EQ(loss.alphas.size(), batches[0].max_length() - 1);
    EXPECT_FALSE(loss.penalty.defined());
    Tape tape2;
    BatchLoss with_penalty = batch_loss(tape2, m, batches[0], 0.5);
    EXPECT_TRUE(with_penalty.penalty.defined());
    EXPECT_DOUBLE_EQ(with_penalty.loss.item(), loss.loss.item() + 0.5 * with_penalty.penalty.item());
}

TEST_F(TrainerTest, TrainingIsDeterministicAndCheckpointed) {
    const auto train_split = split("train");
    const auto val = split("val");
    const Vocabulary v = vocab();
    TempDir a("run_a"), b("run_b");
    TrainConfig cfg = tiny_config(ModelKind::attention);
    cfg.lambda = 0.1;
    cfg.out_dir = a.path();
    TrainResult ra = train(cfg, train_split, &val, v);
    cfg.out_dir = b.path();
    TrainResult rb = train(cfg, train_split, &val, v);
    EXPECT_EQ(ra.log.tsv(), rb.log.tsv());
    EXPECT_EQ(slurp(a / "model.atnc"), slurp(b / "model.atnc"));
    EXPECT_EQ(slurp(a / "runlog.tsv"), slurp(b / "runlog.tsv"));
    EXPECT_EQ(slurp(a / "model.atnc"), slurp(a / "epoch_002.atnc"));
    EXPECT_TRUE(std::filesystem::exists(a / "epoch_001.atnc"));
    EXPECT_TRUE(std::filesystem::exists(a / "timing.tsv"));
    ASSERT_EQ(ra.log.rows().size(), 2u);
    EXPECT_EQ(ra.log.rows()[0].epoch, 1u);
    EXPECT_FALSE(std::isnan(ra.log.rows()[1].val_bleu4));
    EXPECT_EQ(load_model(a / "epoch_001.atnc").epoch, 1u);
}

TEST_F(TrainerTest, AlphasStayNormalizedDuringTraining) {
    const auto train_split = split("train");
    const Vocabulary v = vocab();
    TrainConfig cfg = tiny_config(ModelKind::attention);
    cfg.epochs = 1;
    std::size_t checked = 0, violations = 0;
    TrainHooks hooks;
    hooks.on_alpha = [&](const Tensor& a) {
        for (std::size_t b = 0; b < a.dim(0); ++b) {
            double total = 0;
            for (std::size_t i = 0; i < a.dim(1); ++i) {
                const double x = a.at(b * a.dim(1) + i);
                violations += x < 0 ? 1 : 0;
                total += x;
            }
            violations += std::abs(total - 1.0) > 1e-9 ? 1 : 0;
            ++checked;
        }
    };
    train(cfg, train_split, nullptr, v, hooks);
    EXPECT_GT(checked, 0u);
    EXPECT_EQ(violations, 0u);
}

TEST(RunLog, EpochsStrictlyIncrease) {
    RunLog log;
    log.append({1, 2.0, 0.1, 0.5});
    log.append({2, 1.0, 0.2, 0.5});
    EXPECT_THROW(log.append({2, 0.5, 0.3, 0.5}), ContractError);
    EXPECT_EQ(log.prefix(1).rows().size(), 1u);
    EXPECT_EQ(log.tsv().find("0.5\t"), std::string::npos); // no wall time in the deterministic log
}

TEST_F(TrainerTest, OverfitsOneExample) {
    DatasetManifest one = split("train");
    one.records.resize(1);
    one.records[0].captions.assign(5, one.records[0].captions[0]);
    const Vocabulary v = Vocabulary::build(all_captions(one), 5000);
    for (ModelKind kind : {ModelKind::vanilla, ModelKind::attention}) {
        TrainConfig cfg = tiny_config(kind);
        cfg.embed_dim = 32; // width 8 memorizes too slowly for 200 steps
        cfg.hidden_dim = 32;
        cfg.learning_rate = 1e-2;
        Trainer trainer(cfg, v);
        const ImageStore images(one);
        const Example ex[] = {{0, 0}};
        const Batch batch = assemble_batch(one, images, v, ex, cfg.t_max);
        double loss = 0;
        for (int step = 0; step < 200; ++step) {
            loss = trainer.step(batch);
        }
        EXPECT_LT(loss, 0.05) << to_string(kind);
    }
}

TEST_F(TrainerTest, DivergenceIsReported) {
    const auto train_split = split("train");
    const Vocabulary v = vocab();
    TrainConfig cfg = tiny_config(ModelKind::vanilla);
    Trainer trainer(cfg, v);
    auto params = trainer.model().named_parameters();
    // The output layer's bias: a NaN here reaches every logit. (A NaN conv
    // weight can be swallowed by relu and max pooling.)
    params.back().second.mutable_values()[0] = std::nan("");
    const auto batches = make_batches(train_split, v, 4, 16, 1);
    EXPECT_THROW(trainer.step(batches[0]), DivergenceError);
}

TEST_F(TrainerTest, EvaluateFixedPointAndDeterminism) {
    const auto test_split = split("test");
    const Vocabulary v = vocab();
    TrainConfig cfg = tiny_config(ModelKind::attention);
    CaptionModel m = CaptionModel::init(cfg.model_config(v.size()), 9);
    const auto echo = checkpoint_config(cfg, v.size(), v.fingerprint());
    EvalReport r1 = evaluate(m, echo, test_split, v);
    EvalReport r2 = evaluate(m, echo, test_split, v);
    EXPECT_EQ(to_json(r1).dump(), to_json(r2).dump());
    EXPECT_EQ(r1.per_sentence.size(), test_split.records.size());

    // References replaced by the model's own decodes. Needs decodes of at
    // least four words with no UNK (which cannot survive tokenization), so
    // search initial seeds for such a model.
    bool checked = false;
    for (std::uint64_t seed = 1; seed <= 200 && !checked; ++seed) {
        CaptionModel cand = CaptionModel::init(cfg.model_config(v.size()), seed);
        const EvalReport base = evaluate(cand, echo, test_split, v);
        DatasetManifest own = test_split;
        bool usable = true;
        for (std::size_t i = 0; i < own.records.size(); ++i) {
            const std::string text = base.per_sentence[i].candidate;
            usable = usable && tokenize(text).size() >= 4 && text.find('<') == std::string::npos;
            own.records[i].captions.assign(5, text);
        }
        if (!usable) {
            continue;
        }
        const EvalReport fixed = evaluate(cand, echo, own, v);
        EXPECT_EQ(fixed.corpus.bleu[3], 1.0);
        EXPECT_EQ(fixed.corpus.wer, 0.0);
        checked = true;
    }
    EXPECT_TRUE(checked);
    LoadedModel loaded{m, cfg, v.fingerprint() + 1, 0};
    EXPECT_THROW(evaluate(loaded, test_split, v), ContractError);
}

TEST_F(TrainerTest, CaptionAndTrace) {
    const auto test_split = split("test");
    const Vocabulary v = vocab();
    TrainConfig cfg = tiny_config(ModelKind::attention);
    LoadedModel loaded{CaptionModel::init(cfg.model_config(v.size()), 4), cfg, v.fingerprint(), 0};
    const RgbImage img = read_ppm(test_split.image_path(test_split.records[0]));
    CaptionResult r = caption_image(loaded, img, v);
    ASSERT_TRUE(r.trace.has_value());
    EXPECT_EQ(r.trace->steps.size(), r.tokens.size());
    EXPECT_EQ(r.text, join_tokens(r.tokens));
    for (const auto& t : r.tokens) {
        EXPECT_TRUE(t != "<pad>" && t != "<start>" && t != "<end>");
    }

    // END-forcing output layer.
    auto& out = loaded.model.output;
    std::fill(out.weight.mutable_values().begin(), out.weight.mutable_values().end(), 0.0);
    std::fill(out.bias.mutable_values().begin(), out.bias.mutable_values().end(), 0.0);
    out.bias.mutable_values()[kEndId] = 100.0;
    CaptionResult empty = caption_image(loaded, img, v);
    EXPECT_EQ(empty.text, "");
    EXPECT_TRUE(empty.trace->steps.empty());

    EXPECT_THROW(caption_image(loaded, render_scene(make_scene(1, 1), 24), v), DataError);
    TrainConfig van = tiny_config(ModelKind::vanilla);
    LoadedModel vanilla{CaptionModel::init(van.model_config(v.size()), 4), van, v.fingerprint(), 0};
    EXPECT_FALSE(caption_image(vanilla, img, v).trace.has_value());

    TempDir dir("trace");
    write_trace(dir / "t.json", *r.trace);
    AttentionTrace back = read_trace(dir / "t.json");
    EXPECT_EQ(back.tokens, r.trace->tokens);
    EXPECT_EQ(back.steps, r.trace->steps);
}

TEST(AttentionMaps, OneHotUniformAndFiles) {
    std::vector<double> onehot(9, 0.0);
    onehot[4] = 1.0;
    GrayImage hot = attention_map(onehot, 3, 2);
    EXPECT_EQ(hot.width, 6u);
    for (std::size_t y = 0; y < 6; ++y) {
        for (std::size_t x = 0; x < 6; ++x) {
            const bool centre = y / 2 == 1 && x / 2 == 1;
            EXPECT_EQ(hot.pixels[y * 6 + x], centre ? 255 : 0);
        }
    }
    GrayImage flat = attention_map(std::vector<double>(9, 1.0 / 9.0), 3, 1);
    for (auto p : flat.pixels) {
        EXPECT_EQ(p, 128);
    }
    EXPECT_THROW(attention_map(onehot, 2, 1), DimensionError);

    TempDir dir("maps");
    AttentionTrace trace{{"a", "red", "<unk>"}, 3, {onehot, onehot, std::vector<double>(9, 1.0 / 9.0)}};
    const auto files = export_attention_maps(trace, 4, dir / "maps");
    ASSERT_EQ(files.size(), 3u);
    EXPECT_EQ(files[1].filename(), "1_red.pgm");
    EXPECT_EQ(files[2].filename(), "2_unk.pgm");
    EXPECT_EQ(read_pgm(files[0]).width, 12u);
    trace.tokens.pop_back();
    EXPECT_THROW(export_attention_maps(trace, 4, dir / "maps"), ContractError);
    EXPECT_THROW(export_attention_maps(AttentionTrace{{}, 3, {}}, 4, dir / "maps"), ContractError);
}

TEST_F(TrainerTest, CompareIsReflexiveAndConsistent) {
    const auto test_split = split("test");
    const Vocabulary v = vocab();
    TrainConfig cfg = tiny_config(ModelKind::attention);
    const auto echo = checkpoint_config(cfg, v.size(), v.fingerprint());
    EvalReport a = evaluate(CaptionModel::init(cfg.model_config(v.size()), 1), echo, test_split, v);
    TrainConfig vcfg = tiny_config(ModelKind::vanilla);
    EvalReport b = evaluate(CaptionModel::init(vcfg.model_config(v.size()), 2), echo, test_split, v);

    Comparison self = compare_reports(a, a);
    for (const auto& t : self.tallies) {
        EXPECT_EQ(t.ties, a.per_sentence.size());
    }
    EXPECT_TRUE(self.disagreements.empty());

    Comparison ab = compare_reports(a, b);
    auto j = to_json(ab);
    for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
        EXPECT_EQ(j["corpus"][kMetricNames[m]]["a"].get<double>(), metric_value(a.corpus, m));
        EXPECT_EQ(j["corpus"][kMetricNames[m]]["b"].get<double>(), metric_value(b.corpus, m));
        const auto& t = ab.tallies[m];
        EXPECT_EQ(t.a_wins + t.b_wins + t.ties, a.per_sentence.size());
    }

    DatasetManifest shorter = test_split;
    shorter.records.pop_back();
    EvalReport c = evaluate(CaptionModel::init(cfg.model_config(v.size()), 1), echo, shorter, v);
    EXPECT_THROW(compare_reports(a, c), ContractError);
}

TEST(Compare, DominatingModelHasNoDisagreements) {
    std::vector<EvalPair> good, bad;
    Rng rng(6);
    for (int i = 0; i < 10; ++i) {
        Tokens ref{"a", "red", "circle", "above", "a", "blue", "square"};
        good.push_back(EvalPair{i, ref, {ref}});
        Tokens worse = ref;
        worse[2 + rng.below(4)] = "zzz";
        bad.push_back(EvalPair{i, worse, {ref}});
    }
    Comparison c = compare_reports(corpus_evaluate(good), corpus_evaluate(bad));
    EXPECT_TRUE(c.disagreements.empty());
    EXPECT_EQ(c.tallies[3].a_wins, 10u);
    EXPECT_EQ(c.tallies[6].a_wins, 10u);
}

TEST_F(TrainerTest, SweepShapeAndDegenerateCase) {
    const auto train_split = split("train");
    const auto test_split = split("test");
    TrainConfig base = tiny_config(ModelKind::attention);
    const auto rows = sweep(base, SweepSpec{{5, 50}, {1, 2}, {6}}, train_split, test_split);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0].vocab_cap, 5u);
    EXPECT_EQ(rows[1].epochs, 2u);
    for (const auto& r : rows) {
        EXPECT_EQ(r.log.rows().size(), r.epochs);
        for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
            EXPECT_FALSE(std::isnan(metric_value(r.scores, m)));
        }
    }
    EXPECT_EQ(sweep_tsv(rows), sweep_tsv(sweep(base, SweepSpec{{5, 50}, {1, 2}, {6}}, train_split, test_split)));

    // A single setting equals a direct train + evaluate.
    const auto single = sweep(base, SweepSpec{{50}, {2}, {6}}, train_split, test_split);
    DatasetManifest subset = train_split;
    subset.records.resize(6);
    const Vocabulary v = Vocabulary::build(all_captions(subset), 50);
    TrainConfig direct = base;
    direct.vocab_cap = 50;
    TrainResult r = train(direct, subset, nullptr, v);
    EvalReport rep = evaluate(r.model, checkpoint_config(direct, v.size(), v.fingerprint()), test_split, v);
    ASSERT_EQ(single.size(), 1u);
    for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
        EXPECT_EQ(metric_value(single[0].scores, m), metric_value(rep.corpus, m));
    }
    EXPECT_EQ(single[0].log.tsv(), r.log.tsv());
    EXPECT_THROW(sweep(base, SweepSpec{{}, {1}, {6}}, train_split, test_split), ContractError);
    EXPECT_THROW(sweep(base, SweepSpec{{5}, {1}, {600}}, train_split, test_split), DataError);
}
