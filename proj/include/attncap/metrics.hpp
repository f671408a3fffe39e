#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace attncap {

using Tokens = std::vector<std::string>;
using NGram = std::vector<std::string>;
using NGramCounts = std::map<NGram, std::size_t>;

// Multiset of the order-n n-grams of a sentence; empty when the sentence is
// shorter than n.
NGramCounts ngram_counts(const Tokens& sentence, std::size_t n);

struct ClippedCount {
    std::size_t matches = 0;
    std::size_t total = 0;
};

// Candidate n-gram counts clipped at their maximum count in any one reference.
ClippedCount modified_precision(const Tokens& candidate, const std::vector<Tokens>& references, std::size_t n);

// Reference length closest to `candidate_length`, shorter on ties.
std::size_t closest_reference_length(std::size_t candidate_length, const std::vector<Tokens>& references);

// Sentence BLEU of orders 1..max_n, no smoothing: any zero precision gives 0.
double bleu(const Tokens& candidate, const std::vector<Tokens>& references, std::size_t max_n = 4);

// min(precision, recall) over pooled 1..4-grams, maximized over references.
double gleu(const Tokens& candidate, const std::vector<Tokens>& references);

// Exact-match METEOR: F_mean = 10PR/(R+9P) times (1 − 0.5·(chunks/matches)³),
// maximized over references.
double meteor_lite(const Tokens& candidate, const std::vector<Tokens>& references);

// Word-level Levenshtein distance with unit costs.
std::size_t edit_distance(const Tokens& a, const Tokens& b);

// edit_distance / |reference|.
double wer(const Tokens& reference, const Tokens& hypothesis);
// Minimum over references.
double wer(const std::vector<Tokens>& references, const Tokens& hypothesis);

struct MetricSet {
    bool bleu = true;
    bool gleu = true;
    bool meteor = true;
    bool wer = true;
};

struct EvalPair {
    std::int64_t id = 0;
    Tokens candidate;
    std::vector<Tokens> references;
};

struct ScoreRow {
    std::array<double, 4> bleu{}; // BLEU-1..4
    double gleu = 0.0;
    double meteor = 0.0;
    double wer = 0.0;
};

struct SentenceScores {
    std::int64_t id = 0;
    std::string candidate;
    ScoreRow scores;
};

struct EvalReport {
    std::string model;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    std::vector<SentenceScores> per_sentence;
    ScoreRow corpus;
    MetricSet metrics;
};

// Per-sentence scores in input order plus corpus aggregates: BLEU from pooled
// counts, GLEU/METEOR/WER as arithmetic means. Unselected metrics are NaN.
EvalReport corpus_evaluate(const std::vector<EvalPair>& pairs, const MetricSet& which = {});

// Corpus BLEU-n from counts pooled over all pairs.
double corpus_bleu(const std::vector<EvalPair>& pairs, std::size_t max_n);

nlohmann::ordered_json metric_variants_json();
nlohmann::ordered_json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::ordered_json& j);
void write_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report(const std::filesystem::path& path);

std::string join_tokens(const Tokens& tokens);

} // namespace attncap
