#pragma once

#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcd/errors.hpp"
#include "lcd/rng.hpp"
#include "lcd/vocab.hpp"

namespace lcd {

struct SentencePair {
    std::string id;
    std::string source;
    std::string target;
    std::vector<std::string> constraints;  // surface phrases, order carries no meaning
};

/// Synthetic parallel task: targets are a per-type dictionary map of the
/// source with windowed local reordering. Optional knobs add the phenomena
/// that make constrained decoding non-trivial:
///   - synonym_fraction: share of source types with two target variants,
///     picked per occurrence (the reference's choice is unpredictable).
///   - insert_prob: chance of one target-only extra token per sentence.
///   - split_fraction: share of target types rendered as two pieces, so
///     constraints can span multiple ids.
struct ToyTaskSpec {
    int source_alphabet_size = 50;
    int min_len = 3;
    int max_len = 12;
    std::uint64_t mapping_seed = 1;
    int reorder_window = 1;
    double synonym_fraction = 0.0;
    double insert_prob = 0.0;
    double split_fraction = 0.0;
    int extra_alphabet_size = 8;
};

// Deterministic source->target lexicon derived from the spec's mapping seed.
struct ToyLexicon {
    // variants[i]: one or two target renderings (each possibly multi-word) of source type i
    std::vector<std::vector<std::string>> variants;
    std::vector<std::string> source_words;
    std::vector<std::string> extra_words;
    // inverse: any target word -> source type index (extra tokens map to -1 entries absent)
    std::unordered_map<std::string, int> inverse;
};

inline ToyLexicon build_toy_lexicon(const ToyTaskSpec& spec) {
    if (spec.source_alphabet_size < 1 || spec.min_len < 1 || spec.max_len < spec.min_len ||
        spec.reorder_window < 1)
        throw ConfigError("ToyTaskSpec: invalid field values");
    ToyLexicon lex;
    const int a = spec.source_alphabet_size;
    Rng rng(spec.mapping_seed * 0x51ed270b7a04ull + 17);
    std::vector<int> perm(static_cast<std::size_t>(a));
    for (int i = 0; i < a; ++i) perm[static_cast<std::size_t>(i)] = i;
    rng.shuffle(perm);
    lex.source_words.resize(static_cast<std::size_t>(a));
    lex.variants.resize(static_cast<std::size_t>(a));
    for (int i = 0; i < a; ++i) {
        lex.source_words[static_cast<std::size_t>(i)] = "s" + std::to_string(i);
        const int j = perm[static_cast<std::size_t>(i)];
        const bool split = rng.uniform01() < spec.split_fraction;
        auto render = [&](const std::string& base) {
            return split ? base + "a " + base + "b" : base;
        };
        std::vector<std::string>& vs = lex.variants[static_cast<std::size_t>(i)];
        vs.push_back(render("t" + std::to_string(j)));
        if (rng.uniform01() < spec.synonym_fraction) vs.push_back(render("t" + std::to_string(j) + "x"));
        for (const auto& v : vs)
            for (const auto& w : split_words(v)) lex.inverse.emplace(w, i);
    }
    for (int k = 0; k < spec.extra_alphabet_size; ++k)
        lex.extra_words.push_back("e" + std::to_string(k));
    return lex;
}

/// Deterministic corpus: same (spec, n, seed) gives byte-identical output.
/// Constraint lists are left empty; the augmentation sampler fills them.
inline std::vector<SentencePair> generate_toy_corpus(const ToyTaskSpec& spec, int n,
                                                     std::uint64_t rng_seed) {
    if (n < 1) throw ConfigError("generate_toy_corpus: n must be >= 1");
    const ToyLexicon lex = build_toy_lexicon(spec);
    Rng rng(rng_seed);
    std::vector<SentencePair> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        SentencePair pair;
        pair.id = "sent" + std::to_string(s);
        const int len = static_cast<int>(rng.uniform_int(spec.min_len, spec.max_len));
        std::vector<int> src_types(static_cast<std::size_t>(len));
        std::vector<std::string> src_words(static_cast<std::size_t>(len));
        for (int t = 0; t < len; ++t) {
            const int type = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(spec.source_alphabet_size)));
            src_types[static_cast<std::size_t>(t)] = type;
            src_words[static_cast<std::size_t>(t)] = lex.source_words[static_cast<std::size_t>(type)];
        }
        // map each token, choosing a variant per occurrence
        std::vector<std::string> tgt_units(static_cast<std::size_t>(len));
        for (int t = 0; t < len; ++t) {
            const auto& vs = lex.variants[static_cast<std::size_t>(src_types[static_cast<std::size_t>(t)])];
            const std::size_t pick = vs.size() > 1 ? rng.uniform_below(vs.size()) : 0;
            tgt_units[static_cast<std::size_t>(t)] = vs[pick];
        }
        // windowed local reordering of target units
        for (std::size_t w0 = 0; w0 < tgt_units.size(); w0 += static_cast<std::size_t>(spec.reorder_window)) {
            const std::size_t w1 = std::min(tgt_units.size(), w0 + static_cast<std::size_t>(spec.reorder_window));
            for (std::size_t i = w1 - w0; i > 1; --i) {
                const std::size_t j = rng.uniform_below(i);
                std::swap(tgt_units[w0 + i - 1], tgt_units[w0 + j]);
            }
        }
        if (spec.insert_prob > 0.0 && rng.uniform01() < spec.insert_prob) {
            const std::string extra =
                lex.extra_words[rng.uniform_below(lex.extra_words.size())];
            const std::size_t at = rng.uniform_below(tgt_units.size() + 1);
            tgt_units.insert(tgt_units.begin() + static_cast<std::ptrdiff_t>(at), extra);
        }
        pair.source = join_words(src_words);
        std::vector<std::string> tgt_words;
        for (const auto& u : tgt_units)
            for (const auto& w : split_words(u)) tgt_words.push_back(w);
        pair.target = join_words(tgt_words);
        out.push_back(std::move(pair));
    }
    return out;
}

// ---- JSONL dataset persistence ----

inline nlohmann::json pair_to_json(const SentencePair& p) {
    return nlohmann::json{
        {"id", p.id}, {"source", p.source}, {"target", p.target}, {"constraints", p.constraints}};
}

inline SentencePair pair_from_json(const nlohmann::json& j) {
    SentencePair p;
    p.id = j.at("id").get<std::string>();
    p.source = j.at("source").get<std::string>();
    p.target = j.at("target").get<std::string>();
    p.constraints = j.at("constraints").get<std::vector<std::string>>();
    for (const auto& c : p.constraints)
        if (c.empty()) throw DataError("dataset: empty constraint phrase in " + p.id);
    return p;
}

inline void write_jsonl(const std::string& path, const std::vector<SentencePair>& pairs) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write dataset: " + path);
    for (const auto& p : pairs) os << pair_to_json(p).dump() << '\n';
}

inline std::vector<SentencePair> read_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read dataset: " + path);
    std::vector<SentencePair> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(pair_from_json(nlohmann::json::parse(line)));
    }
    return out;
}

// Corpus sides as plain strings, for vocabulary building.
inline std::vector<std::string> corpus_surfaces(const std::vector<SentencePair>& pairs) {
    std::vector<std::string> out;
    out.reserve(pairs.size() * 2);
    for (const auto& p : pairs) {
        out.push_back(p.source);
        out.push_back(p.target);
    }
    return out;
}

}  // namespace lcd
