#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "lcd/constraints.hpp"
#include "lcd/rng.hpp"

using namespace lcd;

namespace {

// Oracle: greedy leftmost non-overlapping occurrence count per distinct
// pattern, capped at the pattern's listed multiplicity. Same crediting rule
// as the automaton, computed by naive O(n*m) scanning.
std::map<TokenSeq, int> scan_oracle(const std::vector<TokenSeq>& phrases, const TokenSeq& stream) {
    std::map<TokenSeq, int> multiplicity;
    for (const auto& p : phrases) ++multiplicity[p];
    std::map<TokenSeq, int> credited;
    for (const auto& [pattern, mult] : multiplicity) {
        int count = 0;
        std::size_t i = 0;
        while (i + pattern.size() <= stream.size() && count < mult) {
            if (std::equal(pattern.begin(), pattern.end(), stream.begin() + static_cast<std::ptrdiff_t>(i))) {
                ++count;
                i += pattern.size();
            } else {
                ++i;
            }
        }
        credited[pattern] = count;
    }
    return credited;
}

std::map<TokenSeq, int> automaton_credits(const ConstraintAutomaton& aut, const ConstraintState& s) {
    std::map<TokenSeq, int> credited;
    for (int q = 0; q < aut.pattern_count(); ++q)
        credited[aut.patterns()[static_cast<std::size_t>(q)]] = s.met[static_cast<std::size_t>(q)];
    return credited;
}

}  // namespace

TEST_CASE("single phrase completes after its tokens") {
    ConstraintSet cs;
    cs.phrases = {{1, 2}};
    const ConstraintAutomaton aut(cs);
    ConstraintState s = aut.start();
    s = aut.advance(s, 1);
    REQUIRE(s.tokens_met == 1);
    s = aut.advance(s, 2);
    REQUIRE(s.tokens_met == 2);
    REQUIRE(aut.complete(s));
    REQUIRE(aut.met_phrases(s) == std::vector<int>{0});
}

TEST_CASE("partial match breaks and credit drops") {
    ConstraintSet cs;
    cs.phrases = {{1, 2}};
    const ConstraintAutomaton aut(cs);
    ConstraintState s = aut.advance(aut.start(), 1);
    REQUIRE(s.tokens_met == 1);
    s = aut.advance(s, 3);
    REQUIRE(s.tokens_met == 0);
}

TEST_CASE("overlapping phrases complete independently via suffix links") {
    ConstraintSet cs;
    cs.phrases = {{1, 2}, {2, 3}};
    const ConstraintAutomaton aut(cs);
    const ConstraintState s = aut.run({1, 2, 3});
    REQUIRE(aut.complete(s));
    REQUIRE(s.tokens_met == 4);
    REQUIRE(automaton_credits(aut, s) == scan_oracle(cs.phrases, {1, 2, 3}));
}

TEST_CASE("duplicate phrase credits one copy per distinct occurrence") {
    ConstraintSet cs;
    cs.phrases = {{1}, {1}};
    const ConstraintAutomaton aut(cs);
    ConstraintState s = aut.advance(aut.start(), 1);
    REQUIRE(s.tokens_met == 1);  // one occurrence, one copy
    REQUIRE(automaton_credits(aut, s) == scan_oracle(cs.phrases, {1}));
    s = aut.advance(s, 1);
    REQUIRE(s.tokens_met == 2);
    REQUIRE(aut.complete(s));
}

TEST_CASE("overlapping occurrences of one duplicated pattern credit once each") {
    ConstraintSet cs;
    cs.phrases = {{1, 1}, {1, 1}};
    const ConstraintAutomaton aut(cs);
    // stream 1,1,1 has two overlapping occurrences but only one is creditable
    const ConstraintState s = aut.run({1, 1, 1});
    REQUIRE(automaton_credits(aut, s) == scan_oracle(cs.phrases, {1, 1, 1}));
    REQUIRE(s.met[0] == 1);
}

TEST_CASE("empty phrase is rejected") {
    ConstraintSet cs;
    cs.phrases = {{}};
    REQUIRE_THROWS_AS(ConstraintAutomaton(cs), DataError);
}

TEST_CASE("advance is pure") {
    ConstraintSet cs;
    cs.phrases = {{1, 2}};
    const ConstraintAutomaton aut(cs);
    const ConstraintState s0 = aut.start();
    const ConstraintState s1 = aut.advance(s0, 1);
    REQUIRE(s0 == aut.start());
    REQUIRE(aut.advance(s0, 1) == s1);
}

TEST_CASE("forced_tokens after a partial match proposes the continuation") {
    ConstraintSet cs;
    cs.phrases = {{1, 2}};
    const ConstraintAutomaton aut(cs);
    const ConstraintState s = aut.advance(aut.start(), 1);
    const auto forced = aut.forced_tokens(s);
    REQUIRE(std::find(forced.begin(), forced.end(), 2) != forced.end());
}

TEST_CASE("forced_tokens is empty once all phrases are met") {
    ConstraintSet cs;
    cs.phrases = {{1, 2}};
    const ConstraintAutomaton aut(cs);
    const ConstraintState s = aut.run({1, 2});
    REQUIRE(aut.forced_tokens(s).empty());
}

TEST_CASE("randomized streams match the scan oracle and forced tokens make progress") {
    Rng rng(99);
    for (int iter = 0; iter < 2000; ++iter) {
        const int vocab = 3;
        const int n_phrases = 1 + static_cast<int>(rng.uniform_below(4));
        ConstraintSet cs;
        for (int p = 0; p < n_phrases; ++p) {
            TokenSeq phrase(1 + rng.uniform_below(3));
            for (auto& t : phrase) t = static_cast<int>(rng.uniform_below(vocab));
            cs.phrases.push_back(std::move(phrase));
        }
        const ConstraintAutomaton aut(cs);
        TokenSeq stream(rng.uniform_below(13));
        for (auto& t : stream) t = static_cast<int>(rng.uniform_below(vocab));

        ConstraintState s = aut.start();
        for (int tok : stream) {
            // property: every forced token strictly increases tokens_met
            for (int f : aut.forced_tokens(s)) REQUIRE(aut.advance(s, f).tokens_met > s.tokens_met);
            s = aut.advance(s, tok);
            REQUIRE(s.tokens_met >= 0);
            REQUIRE(s.tokens_met <= aut.total_tokens());
        }
        REQUIRE(automaton_credits(aut, s) == scan_oracle(cs.phrases, stream));
    }
}

TEST_CASE("monotone credit along forced paths") {
    Rng rng(7);
    for (int iter = 0; iter < 300; ++iter) {
        ConstraintSet cs;
        const int n_phrases = 1 + static_cast<int>(rng.uniform_below(3));
        for (int p = 0; p < n_phrases; ++p) {
            TokenSeq phrase(1 + rng.uniform_below(3));
            for (auto& t : phrase) t = static_cast<int>(rng.uniform_below(4));
            cs.phrases.push_back(std::move(phrase));
        }
        const ConstraintAutomaton aut(cs);
        ConstraintState s = aut.start();
        int guard = 0;
        while (!aut.complete(s) && guard++ < 100) {
            const auto forced = aut.forced_tokens(s);
            REQUIRE_FALSE(forced.empty());
            const ConstraintState next = aut.advance(s, forced.front());
            REQUIRE(next.tokens_met > s.tokens_met);
            s = next;
        }
        REQUIRE(aut.complete(s));
    }
}
