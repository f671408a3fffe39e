// attncap: generate data, train, evaluate and inspect caption models.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "attncap/checkpoint.hpp"
#include "attncap/config.hpp"
#include "attncap/data.hpp"
#include "attncap/errors.hpp"
#include "attncap/trainer.hpp"

namespace fs = std::filesystem;
using namespace attncap;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kDiverged = 3 };

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << text;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// key = value lines; '#' or ';' starts a comment, [sections] are ignored.
// Keys are flag names, with '_' accepted for '-'.
std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ContractError("cannot read config file " + path.string());
    }
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';' || line[0] == '[') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ContractError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        std::replace(key.begin(), key.end(), '_', '-');
        if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
            value = value.substr(1, value.size() - 2);
        }
        if (value.size() >= 2 && value.front() == '[' && value.back() == ']') {
            value = value.substr(1, value.size() - 2);
        }
        out.emplace_back(key, value);
    }
    return out;
}

// Splices --config file entries in front of the command line so explicit
// flags win.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::vector<std::string> rest;
    fs::path config;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (config.empty()) {
        return rest;
    }
    std::set<std::string> given;
    for (const auto& a : rest) {
        if (a.rfind("--", 0) == 0) {
            given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));
        }
    }
    std::vector<std::string> from_file;
    for (const auto& [key, value] : read_config_file(config)) {
        if (given.count(key) == 0) {
            from_file.push_back("--" + key);
            from_file.push_back(value);
        }
    }
    // The subcommand name has to stay first.
    std::vector<std::string> out;
    if (!rest.empty() && rest[0].rfind("-", 0) != 0) {
        out.push_back(rest[0]);
        rest.erase(rest.begin());
    }
    out.insert(out.end(), from_file.begin(), from_file.end());
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

struct TrainFlags {
    TrainConfig cfg;
    std::string model = "attention";
    std::string optimizer = "adam";
    std::string data_dir, vocab, out_dir;

    void add(CLI::App* app, bool need_vocab) {
        app->add_option("--model", model, "vanilla | attention")->capture_default_str();
        app->add_option("--embed-dim", cfg.embed_dim)->capture_default_str();
        app->add_option("--hidden-dim", cfg.hidden_dim)->capture_default_str();
        app->add_option("--feature-dim", cfg.feature_dim)->capture_default_str();
        app->add_option("--attention-dim", cfg.attention_dim)->capture_default_str();
        app->add_option("--grid-side", cfg.grid_side)->capture_default_str();
        app->add_option("--channels", cfg.channels, "conv stage widths")->delimiter(',')->capture_default_str();
        app->add_option("--vocab-cap", cfg.vocab_cap)->capture_default_str();
        app->add_option("--learning-rate", cfg.learning_rate)->capture_default_str();
        app->add_option("--batch-size", cfg.batch_size)->capture_default_str();
        app->add_option("--epochs", cfg.epochs)->capture_default_str();
        app->add_option("--lambda", cfg.lambda, "doubly-stochastic penalty weight")->capture_default_str();
        app->add_option("--param-seed", cfg.param_seed)->capture_default_str();
        app->add_option("--shuffle-seed", cfg.shuffle_seed)->capture_default_str();
        app->add_option("--t-max", cfg.t_max, "padded caption width incl. START/END")->capture_default_str();
        app->add_option("--optimizer", optimizer, "adam | sgd")->capture_default_str();
        app->add_option("--clip-norm", cfg.clip_norm, "0 disables clipping")->capture_default_str();
        app->add_option("--data-dir", data_dir)->required();
        auto* v = app->add_option("--vocab", vocab, "vocabulary file");
        if (need_vocab) {
            v->required();
        }
        app->add_option("--out-dir", out_dir)->required();
    }

    TrainConfig resolve() {
        cfg.model = parse_model_kind(model);
        cfg.optimizer = parse_optimizer_kind(optimizer);
        cfg.data_dir = data_dir;
        cfg.vocab_path = vocab;
        cfg.out_dir = out_dir;
        cfg.validate();
        return cfg;
    }
};

void print_scores(const ScoreRow& s) {
    std::printf("BLEU-1 %.4f  BLEU-2 %.4f  BLEU-3 %.4f  BLEU-4 %.4f  GLEU %.4f  METEOR %.4f  WER %.4f\n", s.bleu[0],
                s.bleu[1], s.bleu[2], s.bleu[3], s.gleu, s.meteor, s.wer);
}

int run(int argc, char** argv) {
    CLI::App app{"Image captioning with and without additive attention"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "render the synthetic shapes corpus");
    std::string gen_out;
    std::uint64_t gen_seed = 7;
    SplitCounts counts;
    std::size_t side = 48;
    gen->add_option("--out-dir", gen_out)->required();
    gen->add_option("--seed", gen_seed)->capture_default_str();
    gen->add_option("--train", counts.train)->capture_default_str();
    gen->add_option("--val", counts.val)->capture_default_str();
    gen->add_option("--test", counts.test)->capture_default_str();
    gen->add_option("--side", side, "image side in pixels")->capture_default_str();

    // build-vocab
    auto* bv = app.add_subcommand("build-vocab", "build a vocabulary from the training captions");
    std::string bv_data, bv_out;
    std::size_t bv_cap = 5000;
    bv->add_option("--data-dir", bv_data)->required();
    bv->add_option("--vocab-cap", bv_cap)->capture_default_str();
    bv->add_option("--vocab", bv_out, "output file")->required();

    // train
    auto* tr = app.add_subcommand("train", "train a model");
    TrainFlags train_flags;
    train_flags.add(tr, true);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "score a checkpoint on a split");
    std::string ev_ckpt, ev_data, ev_split = "test", ev_vocab, ev_report;
    ev->add_option("--checkpoint", ev_ckpt)->required();
    ev->add_option("--data-dir", ev_data)->required();
    ev->add_option("--split", ev_split)->capture_default_str();
    ev->add_option("--vocab", ev_vocab)->required();
    ev->add_option("--report", ev_report, "report file (JSON)")->required();

    // caption
    auto* cap = app.add_subcommand("caption", "caption one image");
    std::string cap_ckpt, cap_image, cap_vocab, cap_trace;
    cap->add_option("--checkpoint", cap_ckpt)->required();
    cap->add_option("--image", cap_image, "binary PPM")->required();
    cap->add_option("--vocab", cap_vocab)->required();
    cap->add_option("--trace", cap_trace, "attention trace output (attention models)");

    // attention-maps
    auto* am = app.add_subcommand("attention-maps", "render an attention trace as PGM heatmaps");
    std::string am_trace, am_out;
    std::size_t upscale = 8;
    am->add_option("--trace", am_trace)->required();
    am->add_option("--out-dir", am_out)->required();
    am->add_option("--upscale", upscale)->capture_default_str();

    // sweep
    auto* sw = app.add_subcommand("sweep", "train and score a grid of settings");
    TrainFlags sweep_flags;
    sweep_flags.add(sw, false);
    std::vector<std::size_t> caps{50, 200}, epoch_counts{5, 15}, image_counts{300};
    std::string sw_split = "test";
    sw->add_option("--caps", caps, "vocabulary caps")->delimiter(',')->capture_default_str();
    sw->add_option("--epoch-counts", epoch_counts)->delimiter(',')->capture_default_str();
    sw->add_option("--image-counts", image_counts)->delimiter(',')->capture_default_str();
    sw->add_option("--eval-split", sw_split)->capture_default_str();

    // compare
    auto* cmp = app.add_subcommand("compare", "compare two checkpoints on one split");
    std::string ca, cb, cmp_data, cmp_split = "test", cmp_vocab, cmp_vocab_b, cmp_report;
    cmp->add_option("--checkpoint-a", ca)->required();
    cmp->add_option("--checkpoint-b", cb)->required();
    cmp->add_option("--data-dir", cmp_data)->required();
    cmp->add_option("--split", cmp_split)->capture_default_str();
    cmp->add_option("--vocab", cmp_vocab, "vocabulary of A (and B unless --vocab-b)")->required();
    cmp->add_option("--vocab-b", cmp_vocab_b);
    cmp->add_option("--report", cmp_report, "comparison file (JSON)")->required();

    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    if (gen->parsed()) {
        const auto splits = generate_dataset(gen_seed, counts, side, gen_out);
        for (const auto& [name, m] : splits) {
            std::printf("%s: %zu images\n", name.c_str(), m.records.size());
        }
    } else if (bv->parsed()) {
        const auto vocab = Vocabulary::build(all_captions(load_split(bv_data, "train")), bv_cap);
        vocab.save(bv_out);
        std::printf("%zu tokens (%zu reserved)\n", vocab.size(), Vocabulary::kReserved.size());
    } else if (tr->parsed()) {
        const TrainConfig cfg = train_flags.resolve();
        const auto vocab = Vocabulary::load(cfg.vocab_path);
        const auto train_split = load_split(cfg.data_dir, "train");
        std::optional<DatasetManifest> val;
        if (fs::exists(manifest_path(cfg.data_dir, "val"))) {
            val = load_split(cfg.data_dir, "val");
        }
        TrainHooks hooks;
        hooks.on_epoch = [&](std::size_t e, const CaptionModel&) {
            std::fprintf(stderr, "epoch %zu/%zu done\n", e, cfg.epochs);
        };
        const TrainResult result = train(cfg, train_split, val ? &*val : nullptr, vocab, hooks);
        for (const auto& r : result.log.rows()) {
            std::printf("epoch %3zu  loss %.5f  val BLEU-4 %.4f\n", r.epoch, r.mean_loss, r.val_bleu4);
        }
        std::printf("checkpoint: %s\n", (cfg.out_dir / "model.atnc").string().c_str());
    } else if (ev->parsed()) {
        const auto loaded = load_model(ev_ckpt);
        const auto vocab = Vocabulary::load(ev_vocab);
        const auto split = load_split(ev_data, ev_split);
        const EvalReport report = evaluate(loaded, split, vocab);
        write_report(ev_report, report);
        print_scores(report.corpus);
    } else if (cap->parsed()) {
        const auto loaded = load_model(cap_ckpt);
        const auto vocab = Vocabulary::load(cap_vocab);
        const CaptionResult r = caption_image(loaded, fs::path(cap_image), vocab);
        std::cout << r.text << "\n";
        if (r.trace && !cap_trace.empty()) {
            write_trace(cap_trace, *r.trace);
        }
    } else if (am->parsed()) {
        const auto trace = read_trace(am_trace);
        const auto files = export_attention_maps(trace, upscale, am_out);
        std::printf("%zu heatmaps in %s\n", files.size(), am_out.c_str());
    } else if (sw->parsed()) {
        const TrainConfig base = sweep_flags.resolve();
        const auto train_split = load_split(base.data_dir, "train");
        const auto eval_split = load_split(base.data_dir, sw_split);
        const auto rows =
            sweep(base, SweepSpec{caps, epoch_counts, image_counts}, train_split, eval_split, base.out_dir);
        write_file(base.out_dir / "sweep.json", sweep_json(rows).dump(2) + "\n");
        write_file(base.out_dir / "sweep.tsv", sweep_tsv(rows));
        std::cout << sweep_tsv(rows);
    } else if (cmp->parsed()) {
        const auto a = load_model(ca);
        const auto b = load_model(cb);
        const auto va = Vocabulary::load(cmp_vocab);
        const auto vb = cmp_vocab_b.empty() ? va : Vocabulary::load(cmp_vocab_b);
        const auto split = load_split(cmp_data, cmp_split);
        const Comparison c = compare_reports(evaluate(a, split, va), evaluate(b, split, vb));
        write_file(cmp_report, to_json(c).dump(2) + "\n");
        std::printf("A (%s): ", c.a.model.c_str());
        print_scores(c.a.corpus);
        std::printf("B (%s): ", c.b.model.c_str());
        print_scores(c.b.corpus);
        std::printf("BLEU-4/WER disagreements: %zu of %zu sentences\n", c.disagreements.size(),
                    c.a.per_sentence.size());
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const DivergenceError& e) {
        std::cerr << "attncap: diverged: " << e.what() << "\n";
        return kDiverged;
    } catch (const DataError& e) {
        std::cerr << "attncap: " << e.what() << "\n";
        return kData;
    } catch (const FormatError& e) {
        std::cerr << "attncap: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "attncap: " << e.what() << "\n";
        return kUsage;
    }
}
