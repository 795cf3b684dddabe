#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "lcd/constraints.hpp"
#include "lcd/errors.hpp"
#include "lcd/scorer.hpp"
#include "lcd/vocab.hpp"

namespace lcd {

struct Hypothesis {
    TokenSeq tokens;  // generated tokens, eos last when finished
    double score = 0.0;
    ConstraintState cstate;
    bool finished = false;
};

enum class DecodeMode { plain, gbs, dba };

struct DecodeConfig {
    int beam_size = 10;
    double max_len_a = 2.0;  // max_len = a * source_len + b
    int max_len_b = 5;
    double length_norm = 0.6;
    DecodeMode mode = DecodeMode::plain;

    int max_len(int source_len) const {
        return std::max(1, static_cast<int>(max_len_a * source_len) + max_len_b);
    }
};

enum class DecodeStatus {
    ok,
    truncated,           // plain search ran out of length; best unfinished returned
    constraint_failure,  // no constraint-complete finished hypothesis; best partial returned
    infeasible,          // brute force: no sequence can contain the constraints
};

struct DecodeResult {
    Hypothesis best;
    DecodeStatus status = DecodeStatus::ok;
};

inline double normalized_score(const Hypothesis& h, double alpha) {
    const double len = static_cast<double>(std::max<std::size_t>(1, h.tokens.size()));
    return h.score / std::pow(len, alpha);
}

namespace detail {

// Total order for reproducibility: higher score first, then lexicographically
// smaller token sequence, then shorter.
inline bool hyp_better(const Hypothesis& a, const Hypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    const auto cmp = std::lexicographical_compare_three_way(a.tokens.begin(), a.tokens.end(),
                                                            b.tokens.begin(), b.tokens.end());
    if (cmp != 0) return cmp < 0;
    return a.tokens.size() < b.tokens.size();
}

inline bool hyp_better_normalized(const Hypothesis& a, const Hypothesis& b, double alpha) {
    const double na = normalized_score(a, alpha);
    const double nb = normalized_score(b, alpha);
    if (na != nb) return na > nb;
    return hyp_better(a, b);
}

inline void keep_top(std::vector<Hypothesis>& hyps, std::size_t k) {
    std::sort(hyps.begin(), hyps.end(), hyp_better);
    if (hyps.size() > k) hyps.resize(k);
}

// Indices of the k best entries of lp, ties broken by lower token id.
inline std::vector<int> top_k_tokens(const Eigen::VectorXd& lp, int k) {
    std::vector<int> idx(static_cast<std::size_t>(lp.size()));
    for (int i = 0; i < lp.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
    const auto better = [&lp](int a, int b) {
        if (lp(a) != lp(b)) return lp(a) > lp(b);
        return a < b;
    };
    if (k < static_cast<int>(idx.size())) {
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), better);
        idx.resize(static_cast<std::size_t>(k));
    } else {
        std::sort(idx.begin(), idx.end(), better);
    }
    return idx;
}

}  // namespace detail

/// Token ids the decoder may never emit (pad, sep). eos admissibility is
/// mode-dependent and handled separately.
struct GenerationMask {
    int pad = -1;
    int sep = -1;
    int eos = -1;

    bool banned(int token) const { return token == pad || token == sep; }
};

/// Standard beam search with length-normalized final ranking; ignores
/// constraints. Returns the best finished hypothesis, or the best unfinished
/// one flagged truncated if nothing finished within max length.
inline DecodeResult beam_search(const StepScorer& scorer, int source_len, const DecodeConfig& cfg,
                                const GenerationMask& mask) {
    if (cfg.beam_size < 1) throw ConfigError("beam_search: beam_size must be >= 1");
    const int max_len = cfg.max_len(source_len);
    std::vector<Hypothesis> beam{Hypothesis{}};
    std::vector<Hypothesis> finished;
    for (int step = 0; step < max_len && !beam.empty(); ++step) {
        std::vector<Hypothesis> candidates;
        for (const auto& h : beam) {
            const Eigen::VectorXd lp = scorer.log_probs(h.tokens);
            for (int tok : detail::top_k_tokens(lp, std::min<int>(cfg.beam_size + 2, static_cast<int>(lp.size())))) {
                if (mask.banned(tok)) continue;
                Hypothesis next = h;
                next.tokens.push_back(tok);
                next.score += lp(tok);
                if (tok == mask.eos) {
                    next.finished = true;
                    finished.push_back(std::move(next));
                } else {
                    candidates.push_back(std::move(next));
                }
            }
        }
        detail::keep_top(candidates, static_cast<std::size_t>(cfg.beam_size));
        beam = std::move(candidates);
    }
    if (!finished.empty()) {
        auto best = std::min_element(finished.begin(), finished.end(), [&](const auto& a, const auto& b) {
            return detail::hyp_better_normalized(a, b, cfg.length_norm);
        });
        return {*best, DecodeStatus::ok};
    }
    if (beam.empty()) throw DataError("beam_search: empty beam with no finished hypothesis");
    auto best = std::min_element(beam.begin(), beam.end(), [&](const auto& a, const auto& b) {
        return detail::hyp_better_normalized(a, b, cfg.length_norm);
    });
    return {*best, DecodeStatus::truncated};
}

namespace detail {

// Shared candidate generation for GBS and DBA: model top-k expansions plus
// every constraint-advancing token, deduplicated; eos admissible only when
// the hypothesis has met all constraint tokens.
inline void expand_constrained(const StepScorer& scorer, const ConstraintAutomaton& aut,
                               const Hypothesis& h, const DecodeConfig& cfg,
                               const GenerationMask& mask, std::vector<Hypothesis>& candidates,
                               std::vector<Hypothesis>& finished) {
    const Eigen::VectorXd lp = scorer.log_probs(h.tokens);
    std::vector<int> tokens =
        top_k_tokens(lp, std::min<int>(cfg.beam_size + 2, static_cast<int>(lp.size())));
    for (int tok : aut.forced_tokens(h.cstate))
        if (std::find(tokens.begin(), tokens.end(), tok) == tokens.end()) tokens.push_back(tok);
    const bool complete = aut.complete(h.cstate);
    for (int tok : tokens) {
        if (mask.banned(tok)) continue;
        if (tok == mask.eos) {
            if (!complete) continue;
            Hypothesis next = h;
            next.tokens.push_back(tok);
            next.score += lp(tok);
            next.finished = true;
            finished.push_back(std::move(next));
            continue;
        }
        Hypothesis next = h;
        next.tokens.push_back(tok);
        next.score += lp(tok);
        next.cstate = aut.advance(h.cstate, tok);
        candidates.push_back(std::move(next));
    }
}

inline DecodeResult finish_constrained(std::vector<Hypothesis>& finished,
                                       std::vector<Hypothesis>& partials, const DecodeConfig& cfg) {
    if (!finished.empty()) {
        auto best = std::min_element(finished.begin(), finished.end(), [&](const auto& a, const auto& b) {
            return hyp_better_normalized(a, b, cfg.length_norm);
        });
        return {*best, DecodeStatus::ok};
    }
    if (partials.empty()) throw DataError("constrained decode: no hypotheses at all");
    auto best = std::min_element(partials.begin(), partials.end(), [&](const auto& a, const auto& b) {
        return hyp_better_normalized(a, b, cfg.length_norm);
    });
    return {*best, DecodeStatus::constraint_failure};
}

}  // namespace detail

/// Grid Beam Search: one beam of size beam_size per count of constraint
/// tokens met. eos is admissible only in the full bank; the result is the
/// best finished hypothesis there.
inline DecodeResult gbs_decode(const StepScorer& scorer, int source_len, const ConstraintAutomaton& aut,
                               const DecodeConfig& cfg, const GenerationMask& mask) {
    if (cfg.beam_size < 1) throw ConfigError("gbs_decode: beam_size must be >= 1");
    const int max_len = cfg.max_len(source_len);
    const int n_banks = aut.total_tokens() + 1;
    std::vector<std::vector<Hypothesis>> banks(static_cast<std::size_t>(n_banks));
    Hypothesis init;
    init.cstate = aut.start();
    banks[0].push_back(init);
    std::vector<Hypothesis> finished;
    for (int step = 0; step < max_len; ++step) {
        std::vector<Hypothesis> candidates;
        for (const auto& bank : banks)
            for (const auto& h : bank)
                detail::expand_constrained(scorer, aut, h, cfg, mask, candidates, finished);
        std::vector<std::vector<Hypothesis>> next(static_cast<std::size_t>(n_banks));
        for (auto& c : candidates)
            next[static_cast<std::size_t>(c.cstate.tokens_met)].push_back(std::move(c));
        for (auto& bank : next) detail::keep_top(bank, static_cast<std::size_t>(cfg.beam_size));
        banks = std::move(next);
        bool any = false;
        for (const auto& bank : banks) any = any || !bank.empty();
        if (!any) break;
    }
    std::vector<Hypothesis> partials;
    for (auto& bank : banks) partials.insert(partials.end(), bank.begin(), bank.end());
    return detail::finish_constrained(finished, partials, cfg);
}

/// Dynamic Beam Allocation: one fixed-size beam partitioned each step into
/// banks by tokens_met. Slots are divided evenly over reachable banks,
/// leftovers go to the banks holding the best-scoring candidates, and surplus
/// slots of thin banks are donated to the nearest nonempty lower bank (then
/// upward).
inline DecodeResult dba_decode(const StepScorer& scorer, int source_len, const ConstraintAutomaton& aut,
                               const DecodeConfig& cfg, const GenerationMask& mask,
                               std::vector<int>* allocation_trace = nullptr) {
    if (cfg.beam_size < 1) throw ConfigError("dba_decode: beam_size must be >= 1");
    const int max_len = cfg.max_len(source_len);
    Hypothesis init;
    init.cstate = aut.start();
    std::vector<Hypothesis> beam{init};
    std::vector<Hypothesis> finished;
    for (int step = 0; step < max_len && !beam.empty(); ++step) {
        std::vector<Hypothesis> candidates;
        for (const auto& h : beam)
            detail::expand_constrained(scorer, aut, h, cfg, mask, candidates, finished);
        if (candidates.empty()) break;
        std::map<int, std::vector<Hypothesis>> by_bank;
        for (auto& c : candidates) by_bank[c.cstate.tokens_met].push_back(std::move(c));
        std::vector<int> bank_ids;
        for (auto& [bank, hyps] : by_bank) {
            detail::keep_top(hyps, static_cast<std::size_t>(cfg.beam_size));
            bank_ids.push_back(bank);
        }
        // even split over reachable banks; leftover slots follow the model,
        // going to the banks whose best candidate scores highest
        const int n = static_cast<int>(bank_ids.size());
        std::map<int, int> alloc;
        const int base = cfg.beam_size / n;
        const int rem = cfg.beam_size % n;
        for (int bank : bank_ids) alloc[bank] = base;
        std::vector<int> by_best = bank_ids;
        std::sort(by_best.begin(), by_best.end(), [&](int a, int b) {
            return detail::hyp_better(by_bank[a].front(), by_bank[b].front());
        });
        for (int i = 0; i < rem; ++i) ++alloc[by_best[static_cast<std::size_t>(i)]];
        if (allocation_trace) {
            int total = 0;
            for (auto& [bank, a] : alloc) total += a;
            allocation_trace->push_back(total);
        }
        // donate surplus downward first, then upward
        int surplus = 0;
        for (auto it = bank_ids.rbegin(); it != bank_ids.rend(); ++it) {
            const int have = static_cast<int>(by_bank[*it].size());
            alloc[*it] += surplus;
            surplus = std::max(0, alloc[*it] - have);
            alloc[*it] = std::min(alloc[*it], have);
        }
        for (int bank : bank_ids) {
            if (surplus == 0) break;
            const int have = static_cast<int>(by_bank[bank].size());
            const int extra = std::min(surplus, have - alloc[bank]);
            alloc[bank] += extra;
            surplus -= extra;
        }
        std::vector<Hypothesis> next;
        for (int bank : bank_ids) {
            auto& hyps = by_bank[bank];
            for (int i = 0; i < alloc[bank] && i < static_cast<int>(hyps.size()); ++i)
                next.push_back(std::move(hyps[static_cast<std::size_t>(i)]));
        }
        beam = std::move(next);
    }
    std::vector<Hypothesis> partials = beam;
    return detail::finish_constrained(finished, partials, cfg);
}

/// Exhaustive constrained oracle: enumerate every token sequence up to
/// max_len ending in eos, filter those meeting all constraints, return the
/// argmax of the length-normalized score. Guarded at |V|^max_len <= 10^6.
inline DecodeResult brute_force_decode(const StepScorer& scorer, const ConstraintAutomaton& aut,
                                       int max_len, const GenerationMask& mask,
                                       double length_norm = 0.6) {
    const double states = std::pow(static_cast<double>(scorer.vocab_size()), max_len);
    if (states > 1e6) throw ConfigError("brute_force_decode: |V|^max_len guard exceeded");
    std::optional<Hypothesis> best;
    const double alpha = length_norm;
    // depth-first over prefixes; one scorer call per interior node
    std::vector<Hypothesis> stack;
    Hypothesis root;
    root.cstate = aut.start();
    stack.push_back(root);
    while (!stack.empty()) {
        Hypothesis h = std::move(stack.back());
        stack.pop_back();
        if (static_cast<int>(h.tokens.size()) >= max_len) continue;
        const Eigen::VectorXd lp = scorer.log_probs(h.tokens);
        for (int tok = 0; tok < lp.size(); ++tok) {
            if (mask.banned(tok)) continue;
            if (tok == mask.eos) {
                if (!aut.complete(h.cstate)) continue;
                Hypothesis fin = h;
                fin.tokens.push_back(tok);
                fin.score += lp(tok);
                fin.finished = true;
                if (!best || detail::hyp_better_normalized(fin, *best, alpha)) best = std::move(fin);
            } else {
                Hypothesis next = h;
                next.tokens.push_back(tok);
                next.score += lp(tok);
                next.cstate = aut.advance(h.cstate, tok);
                stack.push_back(std::move(next));
            }
        }
    }
    if (!best) {
        Hypothesis none;
        none.cstate = aut.start();
        return {none, DecodeStatus::infeasible};
    }
    return {*best, DecodeStatus::ok};
}

/// Dispatch on cfg.mode; empty constraint sets degrade gbs/dba to plain.
inline DecodeResult decode(const StepScorer& scorer, int source_len, const ConstraintAutomaton& aut,
                           const DecodeConfig& cfg, const GenerationMask& mask) {
    switch (cfg.mode) {
        case DecodeMode::plain:
            return beam_search(scorer, source_len, cfg, mask);
        case DecodeMode::gbs:
            return gbs_decode(scorer, source_len, aut, cfg, mask);
        case DecodeMode::dba:
            return dba_decode(scorer, source_len, aut, cfg, mask);
    }
    throw ConfigError("decode: unknown mode");
}

}  // namespace lcd
