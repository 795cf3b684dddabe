#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcd/errors.hpp"
#include "lcd/vocab.hpp"

namespace lcd {

/// Count non-overlapping occurrences of a word-level phrase, greedy leftmost.
/// Word-boundary matching: "winding" never matches inside "windings".
inline int count_phrase_occurrences(const std::vector<std::string>& words,
                                    const std::vector<std::string>& phrase) {
    if (phrase.empty() || phrase.size() > words.size()) return 0;
    int count = 0;
    std::size_t i = 0;
    while (i + phrase.size() <= words.size()) {
        if (std::equal(phrase.begin(), phrase.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) {
            ++count;
            i += phrase.size();
        } else {
            ++i;
        }
    }
    return count;
}

/// Per-listed-constraint match flags for one sentence. Duplicated constraints
/// each need a distinct non-overlapping occurrence; credited copies are
/// assigned to listed indices in order.
inline std::vector<bool> constraint_hits(const std::string& hypothesis,
                                         const std::vector<std::string>& constraints) {
    const auto words = split_words(hypothesis);
    std::map<std::vector<std::string>, int> available;
    for (const auto& c : constraints) {
        const auto phrase = split_words(c);
        if (!available.count(phrase)) available[phrase] = count_phrase_occurrences(words, phrase);
    }
    std::vector<bool> hits;
    hits.reserve(constraints.size());
    for (const auto& c : constraints) {
        auto& left = available[split_words(c)];
        if (left > 0) {
            --left;
            hits.push_back(true);
        } else {
            hits.push_back(false);
        }
    }
    return hits;
}

/// term% = matched constraints / total listed constraints; sent% = sentences
/// containing all their constraints. Sentences without constraints count as
/// compliant.
inline std::pair<double, double> consistency(const std::vector<std::string>& hyps,
                                             const std::vector<std::vector<std::string>>& constraint_lists) {
    if (hyps.size() != constraint_lists.size())
        throw DataError("consistency: hypothesis/constraint list length mismatch");
    long total = 0, matched = 0, sentences_ok = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const auto hits = constraint_hits(hyps[i], constraint_lists[i]);
        total += static_cast<long>(hits.size());
        long m = static_cast<long>(std::count(hits.begin(), hits.end(), true));
        matched += m;
        if (m == static_cast<long>(hits.size())) ++sentences_ok;
    }
    const double term_pct = total == 0 ? 100.0 : 100.0 * static_cast<double>(matched) / static_cast<double>(total);
    const double sent_pct =
        hyps.empty() ? 100.0 : 100.0 * static_cast<double>(sentences_ok) / static_cast<double>(hyps.size());
    return {term_pct, sent_pct};
}

/// Corpus BLEU-4: geometric mean of modified n-gram precisions (n = 1..4)
/// times the brevity penalty, whitespace tokens, no smoothing.
inline double corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
    if (hyps.size() != refs.size() || hyps.empty())
        throw DataError("corpus_bleu: aligned non-empty hypothesis/reference lists required");
    constexpr int kMaxN = 4;
    long match[kMaxN] = {0, 0, 0, 0};
    long total[kMaxN] = {0, 0, 0, 0};
    long hyp_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const auto h = split_words(hyps[i]);
        const auto r = split_words(refs[i]);
        hyp_len += static_cast<long>(h.size());
        ref_len += static_cast<long>(r.size());
        for (int n = 1; n <= kMaxN; ++n) {
            std::map<std::vector<std::string>, long> ref_counts;
            for (std::size_t j = 0; j + static_cast<std::size_t>(n) <= r.size(); ++j)
                ++ref_counts[{r.begin() + static_cast<std::ptrdiff_t>(j),
                              r.begin() + static_cast<std::ptrdiff_t>(j) + n}];
            std::map<std::vector<std::string>, long> hyp_counts;
            for (std::size_t j = 0; j + static_cast<std::size_t>(n) <= h.size(); ++j)
                ++hyp_counts[{h.begin() + static_cast<std::ptrdiff_t>(j),
                              h.begin() + static_cast<std::ptrdiff_t>(j) + n}];
            for (const auto& [gram, c] : hyp_counts) {
                total[n - 1] += c;
                auto it = ref_counts.find(gram);
                if (it != ref_counts.end()) match[n - 1] += std::min(c, it->second);
            }
        }
    }
    double log_precision_sum = 0.0;
    for (int n = 0; n < kMaxN; ++n) {
        if (total[n] == 0 || match[n] == 0) return 0.0;
        log_precision_sum += std::log(static_cast<double>(match[n]) / static_cast<double>(total[n]));
    }
    const double bp = hyp_len >= ref_len
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    return 100.0 * bp * std::exp(log_precision_sum / kMaxN);
}

/// Task final score: empty every non-compliant hypothesis, then corpus BLEU.
inline double combined_score(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                             const std::vector<std::vector<std::string>>& constraint_lists) {
    if (hyps.size() != constraint_lists.size())
        throw DataError("combined_score: hypothesis/constraint list length mismatch");
    std::vector<std::string> modified = hyps;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const auto hits = constraint_hits(hyps[i], constraint_lists[i]);
        if (std::find(hits.begin(), hits.end(), false) != hits.end()) modified[i].clear();
    }
    return corpus_bleu(modified, refs);
}

struct SentenceDiagnostic {
    std::string id;
    std::vector<bool> hits;
    bool emptied = false;
};

struct EvalReport {
    double bleu = 0.0;
    double term_pct = 0.0;
    double sent_pct = 0.0;
    double combined = 0.0;
    std::vector<SentenceDiagnostic> per_sentence;
};

inline EvalReport evaluate(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                           const std::vector<std::vector<std::string>>& constraint_lists,
                           const std::vector<std::string>& ids = {}) {
    if (hyps.size() != refs.size() || hyps.size() != constraint_lists.size())
        throw DataError("evaluate: aligned lists required");
    EvalReport rep;
    rep.bleu = corpus_bleu(hyps, refs);
    auto [term, sent] = consistency(hyps, constraint_lists);
    rep.term_pct = term;
    rep.sent_pct = sent;
    rep.combined = combined_score(hyps, refs, constraint_lists);
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        SentenceDiagnostic d;
        d.id = i < ids.size() ? ids[i] : std::to_string(i);
        d.hits = constraint_hits(hyps[i], constraint_lists[i]);
        d.emptied = std::find(d.hits.begin(), d.hits.end(), false) != d.hits.end();
        rep.per_sentence.push_back(std::move(d));
    }
    return rep;
}

inline nlohmann::json report_to_json(const EvalReport& rep) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& d : rep.per_sentence) {
        std::vector<int> hits(d.hits.begin(), d.hits.end());
        per.push_back({{"id", d.id}, {"hits", hits}, {"emptied", d.emptied}});
    }
    return nlohmann::json{{"bleu", rep.bleu},
                          {"term_pct", rep.term_pct},
                          {"sent_pct", rep.sent_pct},
                          {"combined", rep.combined},
                          {"per_sentence", per}};
}

/// Fixed-width results table, one row per setting.
inline std::string render_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(28) << "Setting" << std::right << std::setw(8) << "BLEU"
       << std::setw(9) << "Term%" << std::setw(9) << "Sent%" << std::setw(10) << "Combined" << '\n';
    os << std::string(64, '-') << '\n';
    os << std::fixed << std::setprecision(2);
    for (const auto& [name, rep] : rows) {
        os << std::left << std::setw(28) << name << std::right << std::setw(8) << rep.bleu
           << std::setw(9) << rep.term_pct << std::setw(9) << rep.sent_pct << std::setw(10)
           << rep.combined << '\n';
    }
    return os.str();
}

}  // namespace lcd
