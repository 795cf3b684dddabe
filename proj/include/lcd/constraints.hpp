#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <queue>
#include <vector>

#include "lcd/errors.hpp"
#include "lcd/vocab.hpp"

namespace lcd {

/// The set of constraint phrases for one sentence, as token sequences.
/// Duplicates are allowed and tracked separately: each listed copy must be
/// matched by a distinct, non-overlapping occurrence in the output.
struct ConstraintSet {
    std::vector<TokenSeq> phrases;

    int total_tokens() const {
        int n = 0;
        for (const auto& p : phrases) n += static_cast<int>(p.size());
        return n;
    }

    static ConstraintSet from_surfaces(const Vocabulary& vocab,
                                       const std::vector<std::string>& surfaces) {
        ConstraintSet cs;
        for (const auto& s : surfaces) cs.phrases.push_back(vocab.encode(s));
        return cs;
    }
};

/// Per-hypothesis constraint progress.
///
/// met counts credited completions per pattern (identical phrases collapse
/// into one pattern with a multiplicity). tokens_met is the bank index used
/// by GBS/DBA: credited completed tokens plus the longest still-creditable
/// partial match. It can decrease when a partial match breaks.
struct ConstraintState {
    int node = 0;
    std::int64_t pos = 0;                 // tokens consumed so far
    std::vector<std::uint16_t> met;       // per pattern: credited completions
    std::vector<std::int64_t> last_end;   // per pattern: end position of last credited occurrence
    int tokens_met = 0;

    bool operator==(const ConstraintState&) const = default;
};

/// Multi-pattern matcher over token ids (trie + failure links), plus the
/// crediting rules that turn raw match events into tokens_met.
class ConstraintAutomaton {
  public:
    explicit ConstraintAutomaton(const ConstraintSet& cs) {
        for (const auto& p : cs.phrases) {
            if (p.empty()) throw DataError("build_automaton: empty constraint phrase");
        }
        // collapse identical phrases into patterns with multiplicity
        for (const auto& p : cs.phrases) {
            int q = -1;
            for (std::size_t i = 0; i < patterns_.size(); ++i)
                if (patterns_[i] == p) { q = static_cast<int>(i); break; }
            if (q < 0) {
                q = static_cast<int>(patterns_.size());
                patterns_.push_back(p);
                multiplicity_.push_back(0);
            }
            ++multiplicity_[static_cast<std::size_t>(q)];
            phrase_pattern_.push_back(q);
        }
        total_tokens_ = cs.total_tokens();

        nodes_.emplace_back();  // root
        for (std::size_t q = 0; q < patterns_.size(); ++q) {
            int cur = 0;
            for (int tok : patterns_[q]) {
                auto it = nodes_[static_cast<std::size_t>(cur)].children.find(tok);
                if (it == nodes_[static_cast<std::size_t>(cur)].children.end()) {
                    const int nxt = static_cast<int>(nodes_.size());
                    nodes_[static_cast<std::size_t>(cur)].children.emplace(tok, nxt);
                    nodes_.emplace_back();
                    nodes_.back().depth = nodes_[static_cast<std::size_t>(cur)].depth + 1;
                    cur = nxt;
                } else {
                    cur = it->second;
                }
                // node string is a prefix of pattern q
                if (nodes_[static_cast<std::size_t>(cur)].depth < static_cast<int>(patterns_[q].size()))
                    nodes_[static_cast<std::size_t>(cur)].prefix_of.push_back(static_cast<int>(q));
            }
            nodes_[static_cast<std::size_t>(cur)].outputs.push_back(static_cast<int>(q));
        }
        build_failure_links();
    }

    int pattern_count() const { return static_cast<int>(patterns_.size()); }
    int total_tokens() const { return total_tokens_; }
    const std::vector<TokenSeq>& patterns() const { return patterns_; }
    const std::vector<int>& multiplicity() const { return multiplicity_; }
    const std::vector<int>& phrase_pattern() const { return phrase_pattern_; }

    ConstraintState start() const {
        ConstraintState s;
        s.met.assign(patterns_.size(), 0);
        s.last_end.assign(patterns_.size(), -1);
        return s;
    }

    bool complete(const ConstraintState& s) const { return s.tokens_met == total_tokens_; }

    bool all_met(const ConstraintState& s) const {
        for (std::size_t q = 0; q < patterns_.size(); ++q)
            if (static_cast<int>(s.met[q]) < multiplicity_[q]) return false;
        return true;
    }

    /// Pure transition: consume one token and return the new state.
    ConstraintState advance(const ConstraintState& state, int token) const {
        ConstraintState s = state;
        s.pos = state.pos + 1;
        s.node = step_node(state.node, token);
        // credit completions ending here, one copy per distinct occurrence
        for (int q : nodes_[static_cast<std::size_t>(s.node)].outputs) {
            const auto uq = static_cast<std::size_t>(q);
            const std::int64_t len = static_cast<std::int64_t>(patterns_[uq].size());
            const std::int64_t start_pos = s.pos - len + 1;
            if (static_cast<int>(s.met[uq]) < multiplicity_[uq] && start_pos > s.last_end[uq]) {
                ++s.met[uq];
                s.last_end[uq] = s.pos;
            }
        }
        s.tokens_met = completed_tokens(s) + partial_credit(s);
        return s;
    }

    /// Every token that strictly increases tokens_met from this state.
    std::vector<int> forced_tokens(const ConstraintState& state) const {
        std::vector<int> candidates;
        for (std::size_t q = 0; q < patterns_.size(); ++q) {
            if (static_cast<int>(state.met[q]) >= multiplicity_[q]) continue;
            for (int tok : patterns_[q])
                if (std::find(candidates.begin(), candidates.end(), tok) == candidates.end())
                    candidates.push_back(tok);
        }
        std::vector<int> out;
        for (int tok : candidates)
            if (advance(state, tok).tokens_met > state.tokens_met) out.push_back(tok);
        std::sort(out.begin(), out.end());
        return out;
    }

    /// Run a whole stream from the start state (used for replay checks).
    ConstraintState run(const TokenSeq& stream) const {
        ConstraintState s = start();
        for (int tok : stream) s = advance(s, tok);
        return s;
    }

    /// Credited completions expanded back to listed-phrase indices.
    std::vector<int> met_phrases(const ConstraintState& s) const {
        std::vector<int> remaining(multiplicity_.size());
        for (std::size_t q = 0; q < multiplicity_.size(); ++q) remaining[q] = s.met[q];
        std::vector<int> out;
        for (std::size_t i = 0; i < phrase_pattern_.size(); ++i) {
            const auto q = static_cast<std::size_t>(phrase_pattern_[i]);
            if (remaining[q] > 0) {
                --remaining[q];
                out.push_back(static_cast<int>(i));
            }
        }
        return out;
    }

  private:
    struct Node {
        std::map<int, int> children;
        int fail = 0;
        int depth = 0;
        std::vector<int> outputs;    // patterns whose full sequence ends at this node
        std::vector<int> prefix_of;  // patterns having this node's string as a proper prefix
    };

    void build_failure_links() {
        std::queue<int> bfs;
        for (auto& [tok, child] : nodes_[0].children) {
            nodes_[static_cast<std::size_t>(child)].fail = 0;
            bfs.push(child);
        }
        while (!bfs.empty()) {
            const int u = bfs.front();
            bfs.pop();
            for (auto& [tok, child] : nodes_[static_cast<std::size_t>(u)].children) {
                const int f = step_node(nodes_[static_cast<std::size_t>(u)].fail, tok);
                nodes_[static_cast<std::size_t>(child)].fail = f;
                // inherit match events from the suffix state
                const auto& fo = nodes_[static_cast<std::size_t>(f)].outputs;
                auto& co = nodes_[static_cast<std::size_t>(child)].outputs;
                co.insert(co.end(), fo.begin(), fo.end());
                bfs.push(child);
            }
        }
    }

    int step_node(int node, int token) const {
        while (true) {
            const auto& n = nodes_[static_cast<std::size_t>(node)];
            auto it = n.children.find(token);
            if (it != n.children.end()) return it->second;
            if (node == 0) return 0;
            node = n.fail;
        }
    }

    int completed_tokens(const ConstraintState& s) const {
        int n = 0;
        for (std::size_t q = 0; q < patterns_.size(); ++q)
            n += static_cast<int>(s.met[q]) * static_cast<int>(patterns_[q].size());
        return n;
    }

    // Longest still-creditable partial match ending at the current position:
    // walk the failure chain (suffixes in decreasing depth) and take the first
    // node that is a proper prefix of a pattern with copies left, starting
    // after that pattern's last credited occurrence.
    int partial_credit(const ConstraintState& s) const {
        int node = s.node;
        while (node != 0) {
            const auto& n = nodes_[static_cast<std::size_t>(node)];
            const std::int64_t start_pos = s.pos - n.depth + 1;
            for (int q : n.prefix_of) {
                const auto uq = static_cast<std::size_t>(q);
                if (static_cast<int>(s.met[uq]) < multiplicity_[uq] && start_pos > s.last_end[uq])
                    return n.depth;
            }
            node = n.fail;
        }
        return 0;
    }

    std::vector<Node> nodes_;
    std::vector<TokenSeq> patterns_;
    std::vector<int> multiplicity_;
    std::vector<int> phrase_pattern_;  // listed phrase index -> pattern index
    int total_tokens_ = 0;
};

}  // namespace lcd
