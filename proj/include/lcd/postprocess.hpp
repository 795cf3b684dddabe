#pragma once

#include <string>
#include <vector>

#include "lcd/evaluation.hpp"
#include "lcd/vocab.hpp"

namespace lcd {

namespace detail {

// Remove spaces, keeping a back-map from stripped index to original index.
inline std::pair<std::string, std::vector<std::size_t>> strip_spaces(const std::string& s) {
    std::string stripped;
    std::vector<std::size_t> back;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == ' ') continue;
        stripped.push_back(s[i]);
        back.push_back(i);
    }
    return {stripped, back};
}

inline bool phrase_present(const std::string& output, const std::string& constraint) {
    return count_phrase_occurrences(split_words(output), split_words(constraint)) > 0;
}

}  // namespace detail

/// Spacing repair: for each constraint not already present, if the
/// space-stripped constraint occurs in the space-stripped output, splice the
/// reference-spaced constraint over the corresponding span. Matches are tried
/// leftmost-first and a splice is kept only if it actually makes the
/// constraint appear (a span inside a longer word cannot). All characters
/// outside the span are preserved.
inline std::string repair_spacing(const std::string& output, const std::vector<std::string>& constraints,
                                  int* repairs = nullptr) {
    std::string out = output;
    for (const auto& c : constraints) {
        if (c.empty() || detail::phrase_present(out, c)) continue;
        auto [stripped_out, back] = detail::strip_spaces(out);
        auto [stripped_c, unused] = detail::strip_spaces(c);
        if (stripped_c.empty()) continue;
        for (std::size_t at = stripped_out.find(stripped_c); at != std::string::npos;
             at = stripped_out.find(stripped_c, at + 1)) {
            const std::size_t begin = back[at];
            const std::size_t end = back[at + stripped_c.size() - 1] + 1;
            const std::string candidate = out.substr(0, begin) + c + out.substr(end);
            if (!detail::phrase_present(candidate, c)) continue;
            out = candidate;
            if (repairs) ++*repairs;
            break;
        }
    }
    return out;
}

/// OOV restoration: wherever a window of output words matches a constraint's
/// words except at unk sentinels, substitute the constraint's words.
/// Ambiguity resolves leftmost; unresolvable unks stay in place.
inline std::string restore_oov(const std::string& output, const std::vector<std::string>& constraints,
                               int* repairs = nullptr) {
    auto words = split_words(output);
    for (const auto& c : constraints) {
        const auto cwords = split_words(c);
        if (cwords.empty() || cwords.size() > words.size()) continue;
        for (std::size_t i = 0; i + cwords.size() <= words.size(); ++i) {
            bool has_unk = false;
            bool agrees = true;
            for (std::size_t j = 0; j < cwords.size(); ++j) {
                if (words[i + j] == Vocabulary::kUnkSurface) {
                    has_unk = true;
                } else if (words[i + j] != cwords[j]) {
                    agrees = false;
                    break;
                }
            }
            if (has_unk && agrees) {
                for (std::size_t j = 0; j < cwords.size(); ++j) words[i + j] = cwords[j];
                if (repairs) ++*repairs;
                break;
            }
        }
    }
    return join_words(words);
}

/// Full post-processing pass. OOV restoration runs first since filling unks
/// can enable a subsequent spacing match.
inline std::string postprocess_output(const std::string& output,
                                      const std::vector<std::string>& constraints,
                                      int* repairs = nullptr) {
    return repair_spacing(restore_oov(output, constraints, repairs), constraints, repairs);
}

}  // namespace lcd
