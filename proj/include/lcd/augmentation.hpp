#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lcd/constraints.hpp"
#include "lcd/errors.hpp"
#include "lcd/rng.hpp"
#include "lcd/toytask.hpp"
#include "lcd/vocab.hpp"

namespace lcd {

/// Training-time constraint sampling distribution: P(k=0) = p_zero and
/// P(k=j) = per_k for j = 1..k_max.
struct SamplerConfig {
    int k_max = 14;
    double p_zero = 0.4;
    double per_k = 0.6 / 14.0;
    int max_source_positions = 32;

    void validate() const {
        if (k_max < 1) throw ConfigError("SamplerConfig: k_max must be >= 1");
        if (std::abs(p_zero + k_max * per_k - 1.0) > 1e-9)
            throw ConfigError("SamplerConfig: p_zero + k_max*per_k must equal 1");
    }
};

/// Source ++ separator-joined constraints ++ eos, with the parallel
/// position-id and segment-id sequences fed to the encoder embeddings.
struct AugmentedInput {
    TokenSeq token_ids;
    std::vector<int> position_ids;
    std::vector<int> segment_ids;
    int source_len = 0;
};

inline int draw_constraint_count(const SamplerConfig& cfg, Rng& rng) {
    const double u = rng.uniform01();
    if (u < cfg.p_zero) return 0;
    const int k = 1 + static_cast<int>((u - cfg.p_zero) / cfg.per_k);
    return std::min(k, cfg.k_max);
}

/// Sample k distinct reference words as one-word constraints, k drawn from
/// the configured distribution and capped at the reference length. The
/// returned phrases keep reference order.
inline std::vector<std::string> sample_constraint_words(const std::vector<std::string>& reference_words,
                                                        const SamplerConfig& cfg, Rng& rng) {
    cfg.validate();
    int k = draw_constraint_count(cfg, rng);
    k = std::min<int>(k, static_cast<int>(reference_words.size()));
    if (k <= 0) return {};
    auto positions = rng.sample_without_replacement(reference_words.size(), static_cast<std::size_t>(k));
    std::sort(positions.begin(), positions.end());
    std::vector<std::string> out;
    out.reserve(positions.size());
    for (auto p : positions) out.push_back(reference_words[p]);
    return out;
}

inline ConstraintSet sample_constraints(const std::vector<std::string>& reference_words,
                                        const SamplerConfig& cfg, Rng& rng, const Vocabulary& vocab) {
    return ConstraintSet::from_surfaces(vocab, sample_constraint_words(reference_words, cfg, rng));
}

/// Lay out [X, sep, C_1, sep, C_2, ..., C_N, eos].
///
/// Source tokens get positions 0..S-1 and segment 0. Constraint tokens (and
/// the separator preceding each constraint) get segment i for constraint i,
/// clamped at k_max, and positions running from max_source_positions with a
/// single counter across phrases. The final eos carries segment 0 and the
/// next position of whichever counter is active.
inline AugmentedInput build_augmented_input(const TokenSeq& source, const ConstraintSet& cs,
                                            const SamplerConfig& cfg, const Vocabulary& vocab) {
    if (source.empty()) throw ConfigError("build_augmented_input: empty source");
    if (static_cast<int>(source.size()) >= cfg.max_source_positions)
        throw ConfigError("build_augmented_input: source length >= max_source_positions");
    AugmentedInput out;
    out.source_len = static_cast<int>(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) {
        out.token_ids.push_back(source[i]);
        out.position_ids.push_back(static_cast<int>(i));
        out.segment_ids.push_back(0);
    }
    int cpos = cfg.max_source_positions;
    for (std::size_t c = 0; c < cs.phrases.size(); ++c) {
        const int seg = std::min(static_cast<int>(c) + 1, cfg.k_max);
        out.token_ids.push_back(vocab.sep());
        out.position_ids.push_back(cpos++);
        out.segment_ids.push_back(seg);
        for (int tok : cs.phrases[c]) {
            out.token_ids.push_back(tok);
            out.position_ids.push_back(cpos++);
            out.segment_ids.push_back(seg);
        }
    }
    out.token_ids.push_back(vocab.eos());
    out.position_ids.push_back(cs.phrases.empty() ? out.source_len : cpos);
    out.segment_ids.push_back(0);
    return out;
}

/// Fill the constraints field of every pair by sampling from its reference.
/// Deterministic under a fixed seed: each sentence gets an rng stream derived
/// from (seed, sentence id).
inline void annotate_dataset(std::vector<SentencePair>& pairs, const SamplerConfig& cfg,
                             std::uint64_t seed, bool shuffle = false) {
    cfg.validate();
    for (auto& p : pairs) {
        Rng rng = Rng::derive(seed, p.id);
        p.constraints = sample_constraint_words(split_words(p.target), cfg, rng);
        if (shuffle) rng.shuffle(p.constraints);
    }
}

}  // namespace lcd
