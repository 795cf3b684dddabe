#include <catch2/catch_amalgamated.hpp>

#include "lcd/decoding.hpp"
#include "lcd/rng.hpp"

using namespace lcd;

namespace {

// Deterministic pseudo-random distribution per prefix; stands in for a model.
struct HashScorer : StepScorer {
    int vocab = 4;
    std::uint64_t seed = 1;

    int vocab_size() const override { return vocab; }

    Eigen::VectorXd log_probs(const TokenSeq& prefix) const override {
        std::uint64_t h = seed ^ 0xcbf29ce484222325ull;
        for (int t : prefix) h = (h ^ static_cast<std::uint64_t>(t + 1)) * 1099511628211ull;
        Rng rng(h);
        Eigen::VectorXd p(vocab);
        for (int i = 0; i < vocab; ++i) p(i) = 0.05 + rng.uniform01();
        p /= p.sum();
        return p.array().log().matrix();
    }
};

// Concentrates mass on a scripted token path, then on eos.
struct PathScorer : StepScorer {
    TokenSeq path;
    int vocab = 6;
    int eos = 5;

    int vocab_size() const override { return vocab; }

    Eigen::VectorXd log_probs(const TokenSeq& prefix) const override {
        const int next = prefix.size() < path.size() ? path[prefix.size()]
                         : prefix.size() == path.size() ? eos
                                                        : 0;
        Eigen::VectorXd p = Eigen::VectorXd::Constant(vocab, 0.1 / (vocab - 1));
        p(next) = 0.9;
        return p.array().log().matrix();
    }
};

// Constant distribution; eos is always the least likely token.
struct EosShyScorer : StepScorer {
    int vocab = 8;
    int eos = 7;

    int vocab_size() const override { return vocab; }

    Eigen::VectorXd log_probs(const TokenSeq&) const override {
        Eigen::VectorXd p(vocab);
        for (int i = 0; i < vocab; ++i) p(i) = static_cast<double>(vocab - i);
        p /= p.sum();
        return p.array().log().matrix();
    }
};

GenerationMask mask_for(int eos) { return GenerationMask{-1, -1, eos}; }

DecodeConfig fixed_len_cfg(int beam, int max_len, DecodeMode mode = DecodeMode::plain) {
    DecodeConfig cfg;
    cfg.beam_size = beam;
    cfg.max_len_a = 0.0;
    cfg.max_len_b = max_len;
    cfg.mode = mode;
    return cfg;
}

}  // namespace

TEST_CASE("beam one follows a scripted greedy path") {
    PathScorer scorer;
    scorer.path = {2, 4, 1, 3};
    const DecodeResult r = beam_search(scorer, 4, fixed_len_cfg(1, 10), mask_for(scorer.eos));
    REQUIRE(r.status == DecodeStatus::ok);
    TokenSeq want = scorer.path;
    want.push_back(scorer.eos);
    REQUIRE(r.best.tokens == want);
}

TEST_CASE("beam search is deterministic") {
    HashScorer scorer;
    scorer.seed = 42;
    const DecodeConfig cfg = fixed_len_cfg(4, 6);
    const GenerationMask mask = mask_for(3);
    const DecodeResult a = beam_search(scorer, 4, cfg, mask);
    const DecodeResult b = beam_search(scorer, 4, cfg, mask);
    REQUIRE(a.best.tokens == b.best.tokens);
    REQUIRE(a.best.score == b.best.score);
}

TEST_CASE("a saturating beam recovers the exhaustive optimum") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        HashScorer scorer;
        scorer.seed = seed;
        const int max_len = 4;
        const GenerationMask mask = mask_for(3);
        const ConstraintAutomaton aut{ConstraintSet{}};
        const DecodeResult oracle = brute_force_decode(scorer, aut, max_len, mask, 0.6);
        REQUIRE(oracle.status == DecodeStatus::ok);
        const DecodeResult beam = beam_search(scorer, 1, fixed_len_cfg(128, max_len), mask);
        REQUIRE(beam.status == DecodeStatus::ok);
        REQUIRE(normalized_score(beam.best, 0.6) ==
                Catch::Approx(normalized_score(oracle.best, 0.6)).margin(1e-9));
        REQUIRE(beam.best.tokens == oracle.best.tokens);
    }
}

TEST_CASE("a saturating beam never scores below greedy") {
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        HashScorer scorer;
        scorer.seed = seed;
        const GenerationMask mask = mask_for(3);
        const DecodeResult greedy = beam_search(scorer, 1, fixed_len_cfg(1, 5), mask);
        const DecodeResult wide = beam_search(scorer, 1, fixed_len_cfg(128, 5), mask);
        if (greedy.status == DecodeStatus::ok && wide.status == DecodeStatus::ok)
            REQUIRE(normalized_score(wide.best, 0.6) >=
                    normalized_score(greedy.best, 0.6) - 1e-12);
    }
}

TEST_CASE("gbs and dba with no constraints match plain beam search") {
    for (std::uint64_t seed = 7; seed < 17; ++seed) {
        HashScorer scorer;
        scorer.seed = seed;
        const GenerationMask mask = mask_for(3);
        const ConstraintAutomaton aut{ConstraintSet{}};
        const DecodeConfig cfg = fixed_len_cfg(4, 6);
        const DecodeResult plain = beam_search(scorer, 4, cfg, mask);
        const DecodeResult gbs = gbs_decode(scorer, 4, aut, cfg, mask);
        const DecodeResult dba = dba_decode(scorer, 4, aut, cfg, mask);
        REQUIRE(gbs.best.tokens == plain.best.tokens);
        REQUIRE(dba.best.tokens == plain.best.tokens);
        REQUIRE(gbs.best.score == Catch::Approx(plain.best.score).margin(1e-12));
        REQUIRE(dba.best.score == Catch::Approx(plain.best.score).margin(1e-12));
    }
}

TEST_CASE("constrained search matches the brute-force oracle on tiny instances") {
    Rng rng(2024);
    int checked = 0;
    for (int iter = 0; iter < 200; ++iter) {
        HashScorer scorer;
        scorer.vocab = 4 + static_cast<int>(rng.uniform_below(2));  // 4 or 5
        scorer.seed = 5000 + static_cast<std::uint64_t>(iter);
        const int eos = scorer.vocab - 1;
        const GenerationMask mask = mask_for(eos);
        const int max_len = 4 + static_cast<int>(rng.uniform_below(2));  // 4 or 5

        ConstraintSet cs;
        const int n_phrases = 1 + static_cast<int>(rng.uniform_below(2));
        for (int p = 0; p < n_phrases; ++p) {
            TokenSeq phrase(1 + rng.uniform_below(2));
            for (auto& t : phrase) t = static_cast<int>(rng.uniform_below(static_cast<std::size_t>(eos)));
            cs.phrases.push_back(std::move(phrase));
        }
        if (cs.total_tokens() + 1 > max_len) continue;  // keep instances feasible
        ++checked;
        const ConstraintAutomaton aut(cs);

        const DecodeResult oracle = brute_force_decode(scorer, aut, max_len, mask, 0.6);
        REQUIRE(oracle.status == DecodeStatus::ok);
        const DecodeResult gbs =
            gbs_decode(scorer, 1, aut, fixed_len_cfg(512, max_len, DecodeMode::gbs), mask);
        const DecodeResult dba =
            dba_decode(scorer, 1, aut, fixed_len_cfg(512, max_len, DecodeMode::dba), mask);
        REQUIRE(gbs.status == DecodeStatus::ok);
        REQUIRE(dba.status == DecodeStatus::ok);
        REQUIRE(normalized_score(gbs.best, 0.6) ==
                Catch::Approx(normalized_score(oracle.best, 0.6)).margin(1e-9));
        REQUIRE(normalized_score(dba.best, 0.6) ==
                Catch::Approx(normalized_score(oracle.best, 0.6)).margin(1e-9));
    }
    REQUIRE(checked >= 100);
}

TEST_CASE("successful constrained decodes replay to completion") {
    Rng rng(77);
    for (int iter = 0; iter < 100; ++iter) {
        HashScorer scorer;
        scorer.vocab = 5;
        scorer.seed = 9000 + static_cast<std::uint64_t>(iter);
        const GenerationMask mask = mask_for(4);
        ConstraintSet cs;
        for (std::size_t p = 0; p < 1 + rng.uniform_below(2); ++p) {
            TokenSeq phrase(1 + rng.uniform_below(2));
            for (auto& t : phrase) t = static_cast<int>(rng.uniform_below(4));
            cs.phrases.push_back(std::move(phrase));
        }
        const ConstraintAutomaton aut(cs);
        const DecodeConfig cfg = fixed_len_cfg(6, 12);
        for (const DecodeResult& r : {gbs_decode(scorer, 5, aut, cfg, mask),
                                      dba_decode(scorer, 5, aut, cfg, mask)}) {
            if (r.status != DecodeStatus::ok) continue;
            REQUIRE(r.best.finished);
            REQUIRE(r.best.tokens.back() == 4);
            TokenSeq body(r.best.tokens.begin(), r.best.tokens.end() - 1);
            REQUIRE(aut.complete(aut.run(body)));
        }
    }
}

TEST_CASE("dba allocates exactly the configured beam every step") {
    HashScorer scorer;
    scorer.vocab = 5;
    scorer.seed = 31;
    ConstraintSet cs;
    cs.phrases = {{0, 1}, {2}};
    const ConstraintAutomaton aut(cs);
    std::vector<int> trace;
    dba_decode(scorer, 5, aut, fixed_len_cfg(7, 10), mask_for(4), &trace);
    REQUIRE_FALSE(trace.empty());
    for (int total : trace) REQUIRE(total == 7);
}

TEST_CASE("an eos-shy scorer truncates plain search at max length") {
    EosShyScorer scorer;
    const DecodeResult r = beam_search(scorer, 3, fixed_len_cfg(2, 5), mask_for(scorer.eos));
    REQUIRE(r.status == DecodeStatus::truncated);
    REQUIRE(r.best.tokens.size() == 5);
    REQUIRE_FALSE(r.best.finished);
}

TEST_CASE("unsatisfiable length budgets surface as constraint failures") {
    HashScorer scorer;
    scorer.vocab = 4;
    ConstraintSet cs;
    cs.phrases = {{0, 1, 2, 0, 1}};  // five tokens cannot fit in max_len 3
    const ConstraintAutomaton aut(cs);
    const GenerationMask mask = mask_for(3);
    REQUIRE(gbs_decode(scorer, 1, aut, fixed_len_cfg(4, 3), mask).status ==
            DecodeStatus::constraint_failure);
    REQUIRE(dba_decode(scorer, 1, aut, fixed_len_cfg(4, 3), mask).status ==
            DecodeStatus::constraint_failure);
    REQUIRE(brute_force_decode(scorer, aut, 3, mask).status == DecodeStatus::infeasible);
}

TEST_CASE("the brute-force state guard rejects oversized instances") {
    HashScorer scorer;
    scorer.vocab = 40;
    const ConstraintAutomaton aut{ConstraintSet{}};
    REQUIRE_THROWS_AS(brute_force_decode(scorer, aut, 8, mask_for(39)), ConfigError);
}

TEST_CASE("masked tokens never appear in decoded output") {
    HashScorer scorer;
    scorer.vocab = 6;
    GenerationMask mask{1, 2, 5};  // pad=1 sep=2 eos=5
    ConstraintSet cs;
    cs.phrases = {{0}};
    const ConstraintAutomaton aut(cs);
    for (const DecodeResult& r : {beam_search(scorer, 4, fixed_len_cfg(4, 8), mask),
                                  gbs_decode(scorer, 4, aut, fixed_len_cfg(4, 8), mask),
                                  dba_decode(scorer, 4, aut, fixed_len_cfg(4, 8), mask)}) {
        for (int tok : r.best.tokens) {
            REQUIRE(tok != mask.pad);
            REQUIRE(tok != mask.sep);
        }
    }
}

TEST_CASE("decode dispatches on the configured mode") {
    HashScorer scorer;
    scorer.vocab = 5;
    scorer.seed = 13;
    ConstraintSet cs;
    cs.phrases = {{1, 2}};
    const ConstraintAutomaton aut(cs);
    const GenerationMask mask = mask_for(4);
    REQUIRE(decode(scorer, 4, aut, fixed_len_cfg(4, 10, DecodeMode::gbs), mask).best.tokens ==
            gbs_decode(scorer, 4, aut, fixed_len_cfg(4, 10), mask).best.tokens);
    REQUIRE(decode(scorer, 4, aut, fixed_len_cfg(4, 10, DecodeMode::dba), mask).best.tokens ==
            dba_decode(scorer, 4, aut, fixed_len_cfg(4, 10), mask).best.tokens);
    DecodeConfig bad = fixed_len_cfg(0, 4);
    REQUIRE_THROWS_AS(beam_search(scorer, 4, bad, mask), ConfigError);
}

TEST_CASE("length budget follows max_len = a * source_len + b") {
    DecodeConfig cfg;
    cfg.max_len_a = 2.0;
    cfg.max_len_b = 5;
    REQUIRE(cfg.max_len(10) == 25);
    REQUIRE(cfg.max_len(0) == 5);
    cfg.max_len_a = 0.0;
    cfg.max_len_b = 0;
    REQUIRE(cfg.max_len(3) == 1);  // floor of one step
}
