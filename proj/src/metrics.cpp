#include "attncap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "attncap/errors.hpp"

namespace attncap {

namespace {

void require_references(const std::vector<Tokens>& references, const char* metric) {
    const bool any = std::any_of(references.begin(), references.end(), [](const Tokens& r) { return !r.empty(); });
    if (!any) {
        throw ContractError(std::string(metric) + ": needs at least one nonempty reference");
    }
}

std::size_t ngram_total(std::size_t length, std::size_t n) { return length >= n ? length - n + 1 : 0; }

// Permutation-invariant mean: sums in sorted order.
double stable_mean(std::vector<double> v) {
    if (v.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

double bleu_from_counts(const std::vector<ClippedCount>& counts, std::size_t cand_len, std::size_t ref_len) {
    double log_sum = 0.0;
    for (const ClippedCount& c : counts) {
        if (c.total == 0 || c.matches == 0) {
            return 0.0;
        }
        log_sum += std::log(static_cast<double>(c.matches) / static_cast<double>(c.total));
    }
    const double bp =
        cand_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    return bp * std::exp(log_sum / static_cast<double>(counts.size()));
}

} // namespace

NGramCounts ngram_counts(const Tokens& sentence, std::size_t n) {
    NGramCounts counts;
    if (n == 0) {
        return counts;
    }
    for (std::size_t i = 0; i + n <= sentence.size(); ++i) {
        ++counts[NGram(sentence.begin() + static_cast<std::ptrdiff_t>(i),
                       sentence.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

ClippedCount modified_precision(const Tokens& candidate, const std::vector<Tokens>& references, std::size_t n) {
    if (n < 1 || n > 4) {
        throw ContractError("modified_precision: order must be in 1..4, got " + std::to_string(n));
    }
    ClippedCount out;
    out.total = ngram_total(candidate.size(), n);
    if (out.total == 0) {
        return out;
    }
    NGramCounts max_ref;
    for (const Tokens& r : references) {
        for (const auto& [g, c] : ngram_counts(r, n)) {
            auto& slot = max_ref[g];
            slot = std::max(slot, c);
        }
    }
    for (const auto& [g, c] : ngram_counts(candidate, n)) {
        const auto it = max_ref.find(g);
        if (it != max_ref.end()) {
            out.matches += std::min(c, it->second);
        }
    }
    return out;
}

std::size_t closest_reference_length(std::size_t candidate_length, const std::vector<Tokens>& references) {
    std::size_t best = 0;
    std::size_t best_gap = std::numeric_limits<std::size_t>::max();
    for (const Tokens& r : references) {
        const std::size_t len = r.size();
        const std::size_t gap = len > candidate_length ? len - candidate_length : candidate_length - len;
        if (gap < best_gap || (gap == best_gap && len < best)) {
            best = len;
            best_gap = gap;
        }
    }
    return best;
}

double bleu(const Tokens& candidate, const std::vector<Tokens>& references, std::size_t max_n) {
    require_references(references, "bleu");
    if (max_n < 1 || max_n > 4) {
        throw ContractError("bleu: max_n must be in 1..4, got " + std::to_string(max_n));
    }
    std::vector<ClippedCount> counts;
    for (std::size_t n = 1; n <= max_n; ++n) {
        counts.push_back(modified_precision(candidate, references, n));
    }
    return bleu_from_counts(counts, candidate.size(), closest_reference_length(candidate.size(), references));
}

double gleu(const Tokens& candidate, const std::vector<Tokens>& references) {
    require_references(references, "gleu");
    std::size_t cand_total = 0;
    std::array<NGramCounts, 4> cand_counts;
    for (std::size_t n = 1; n <= 4; ++n) {
        cand_counts[n - 1] = ngram_counts(candidate, n);
        cand_total += ngram_total(candidate.size(), n);
    }
    double best = 0.0;
    for (const Tokens& ref : references) {
        std::size_t matches = 0, ref_total = 0;
        for (std::size_t n = 1; n <= 4; ++n) {
            ref_total += ngram_total(ref.size(), n);
            const NGramCounts rc = ngram_counts(ref, n);
            for (const auto& [g, c] : cand_counts[n - 1]) {
                const auto it = rc.find(g);
                if (it != rc.end()) {
                    matches += std::min(c, it->second);
                }
            }
        }
        if (cand_total == 0 || ref_total == 0) {
            continue;
        }
        const double precision = static_cast<double>(matches) / static_cast<double>(cand_total);
        const double recall = static_cast<double>(matches) / static_cast<double>(ref_total);
        best = std::max(best, std::min(precision, recall));
    }
    return best;
}

double meteor_lite(const Tokens& candidate, const std::vector<Tokens>& references) {
    require_references(references, "meteor");
    double best = 0.0;
    for (const Tokens& ref : references) {
        std::vector<bool> used(ref.size(), false);
        std::vector<std::pair<std::size_t, std::size_t>> alignment; // (candidate pos, reference pos)
        for (std::size_t i = 0; i < candidate.size(); ++i) {
            for (std::size_t j = 0; j < ref.size(); ++j) {
                if (!used[j] && ref[j] == candidate[i]) {
                    used[j] = true;
                    alignment.emplace_back(i, j);
                    break;
                }
            }
        }
        const std::size_t matches = alignment.size();
        if (matches == 0) {
            continue;
        }
        std::size_t chunks = 1;
        for (std::size_t k = 1; k < alignment.size(); ++k) {
            if (alignment[k].first != alignment[k - 1].first + 1 || alignment[k].second != alignment[k - 1].second + 1) {
                ++chunks;
            }
        }
        const double p = static_cast<double>(matches) / static_cast<double>(candidate.size());
        const double r = static_cast<double>(matches) / static_cast<double>(ref.size());
        const double fmean = 10.0 * p * r / (r + 9.0 * p);
        const double frag = static_cast<double>(chunks) / static_cast<double>(matches);
        const double penalty = 0.5 * frag * frag * frag;
        best = std::max(best, fmean * (1.0 - penalty));
    }
    return best;
}

std::size_t edit_distance(const Tokens& a, const Tokens& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    std::iota(prev.begin(), prev.end(), std::size_t{0});
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double wer(const Tokens& reference, const Tokens& hypothesis) {
    if (reference.empty()) {
        throw ContractError("wer: reference is empty");
    }
    return static_cast<double>(edit_distance(reference, hypothesis)) / static_cast<double>(reference.size());
}

double wer(const std::vector<Tokens>& references, const Tokens& hypothesis) {
    double best = std::numeric_limits<double>::infinity();
    for (const Tokens& r : references) {
        if (!r.empty()) {
            best = std::min(best, wer(r, hypothesis));
        }
    }
    if (std::isinf(best)) {
        throw ContractError("wer: every reference is empty");
    }
    return best;
}

double corpus_bleu(const std::vector<EvalPair>& pairs, std::size_t max_n) {
    std::vector<ClippedCount> pooled(max_n);
    std::size_t cand_len = 0, ref_len = 0;
    for (const EvalPair& p : pairs) {
        require_references(p.references, "corpus bleu");
        for (std::size_t n = 1; n <= max_n; ++n) {
            const ClippedCount c = modified_precision(p.candidate, p.references, n);
            pooled[n - 1].matches += c.matches;
            pooled[n - 1].total += c.total;
        }
        cand_len += p.candidate.size();
        ref_len += closest_reference_length(p.candidate.size(), p.references);
    }
    return bleu_from_counts(pooled, cand_len, ref_len);
}

EvalReport corpus_evaluate(const std::vector<EvalPair>& pairs, const MetricSet& which) {
    if (pairs.empty()) {
        throw ContractError("corpus_evaluate: no sentence pairs");
    }
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    EvalReport report;
    report.metrics = which;
    std::vector<double> g, m, w;
    for (const EvalPair& p : pairs) {
        SentenceScores row;
        row.id = p.id;
        row.candidate = join_tokens(p.candidate);
        for (std::size_t n = 1; n <= 4; ++n) {
            row.scores.bleu[n - 1] = which.bleu ? bleu(p.candidate, p.references, n) : nan;
        }
        row.scores.gleu = which.gleu ? gleu(p.candidate, p.references) : nan;
        row.scores.meteor = which.meteor ? meteor_lite(p.candidate, p.references) : nan;
        row.scores.wer = which.wer ? wer(p.references, p.candidate) : nan;
        g.push_back(row.scores.gleu);
        m.push_back(row.scores.meteor);
        w.push_back(row.scores.wer);
        report.per_sentence.push_back(std::move(row));
    }
    for (std::size_t n = 1; n <= 4; ++n) {
        report.corpus.bleu[n - 1] = which.bleu ? corpus_bleu(pairs, n) : nan;
    }
    report.corpus.gleu = which.gleu ? stable_mean(g) : nan;
    report.corpus.meteor = which.meteor ? stable_mean(m) : nan;
    report.corpus.wer = which.wer ? stable_mean(w) : nan;
    return report;
}

std::string join_tokens(const Tokens& tokens) {
    std::string s;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) {
            s += ' ';
        }
        s += tokens[i];
    }
    return s;
}

namespace {

nlohmann::ordered_json score_json(const ScoreRow& s, const MetricSet& which) {
    nlohmann::ordered_json j;
    if (which.bleu) {
        for (std::size_t n = 0; n < 4; ++n) {
            j["bleu" + std::to_string(n + 1)] = s.bleu[n];
        }
    }
    if (which.gleu) {
        j["gleu"] = s.gleu;
    }
    if (which.meteor) {
        j["meteor"] = s.meteor;
    }
    if (which.wer) {
        j["wer"] = s.wer;
    }
    return j;
}

ScoreRow score_from_json(const nlohmann::ordered_json& j, MetricSet& which) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    ScoreRow s;
    which.bleu = j.contains("bleu1");
    for (std::size_t n = 0; n < 4; ++n) {
        s.bleu[n] = which.bleu ? j.at("bleu" + std::to_string(n + 1)).get<double>() : nan;
    }
    which.gleu = j.contains("gleu");
    which.meteor = j.contains("meteor");
    which.wer = j.contains("wer");
    s.gleu = which.gleu ? j.at("gleu").get<double>() : nan;
    s.meteor = which.meteor ? j.at("meteor").get<double>() : nan;
    s.wer = which.wer ? j.at("wer").get<double>() : nan;
    return s;
}

} // namespace

nlohmann::ordered_json metric_variants_json() {
    nlohmann::ordered_json j;
    j["bleu"] = "BLEU-n for n = 1..4, uniform weights, clipped n-gram precision, brevity penalty against the "
                "closest reference length (ties to the shorter). Sentence level is unsmoothed: a zero precision "
                "makes the score 0. Corpus level pools n-gram counts and lengths before the geometric mean.";
    j["gleu"] = "Pooled 1..4-gram matches clipped against one reference; min(precision, recall); maximum over "
                "references. Corpus value is the mean of sentence values.";
    j["meteor"] = "METEOR-lite: exact unigram matches only (no stemming or synonyms), greedy left-to-right "
                  "alignment, F_mean = 10PR/(R+9P), penalty 0.5*(chunks/matches)^3, maximum over references. "
                  "Corpus value is the mean of sentence values.";
    j["wer"] = "Word-level Levenshtein distance with unit costs divided by reference length, minimum over "
               "references. Corpus value is the mean of sentence values.";
    return j;
}

nlohmann::ordered_json to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["model"] = report.model;
    j["config"] = report.config;
    auto rows = nlohmann::ordered_json::array();
    for (const SentenceScores& s : report.per_sentence) {
        nlohmann::ordered_json r;
        r["id"] = s.id;
        r["candidate"] = s.candidate;
        const auto scores = score_json(s.scores, report.metrics);
        for (const auto& [k, v] : scores.items()) {
            r[k] = v;
        }
        rows.push_back(std::move(r));
    }
    j["per_sentence"] = std::move(rows);
    j["corpus"] = score_json(report.corpus, report.metrics);
    j["metric_variants"] = metric_variants_json();
    return j;
}

EvalReport report_from_json(const nlohmann::ordered_json& j) {
    try {
        EvalReport r;
        r.model = j.at("model").get<std::string>();
        r.config = j.at("config");
        r.corpus = score_from_json(j.at("corpus"), r.metrics);
        for (const auto& row : j.at("per_sentence")) {
            SentenceScores s;
            s.id = row.at("id").get<std::int64_t>();
            s.candidate = row.at("candidate").get<std::string>();
            MetricSet ignored;
            s.scores = score_from_json(row, ignored);
            r.per_sentence.push_back(std::move(s));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed report: ") + e.what());
    }
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write report " + path.string());
    }
    out << to_json(report).dump(2) << '\n';
}

EvalReport read_report(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read report " + path.string());
    }
    try {
        return report_from_json(nlohmann::ordered_json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

} // namespace attncap
