#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcd/errors.hpp"

namespace lcd {

using TokenSeq = std::vector<int>;

inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream iss(text);
    std::string w;
    while (iss >> w) out.push_back(w);
    return out;
}

inline std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

/// Dense bidirectional token<->id map with reserved specials.
///
/// Corpus tokens occupy ids [0, n); the four specials (pad, eos, sep, unk)
/// are appended after them. The unk surface doubles as the sentinel emitted
/// by decode_tokens so that OOV repair can find it in plain strings.
class Vocabulary {
  public:
    static constexpr const char* kPadSurface = "⟨pad⟩";
    static constexpr const char* kEosSurface = "⟨eos⟩";
    static constexpr const char* kSepSurface = "⟨sep⟩";
    static constexpr const char* kUnkSurface = "⟨unk⟩";

    static Vocabulary build(const std::vector<std::string>& corpus) {
        if (corpus.empty()) throw ConfigError("build_vocab: empty corpus");
        Vocabulary v;
        for (const auto& line : corpus) {
            for (const auto& w : split_words(line)) {
                if (w == kPadSurface || w == kEosSurface || w == kSepSurface || w == kUnkSurface)
                    throw DataError("build_vocab: corpus contains reserved surface '" + w + "'");
                if (!v.index_.count(w)) {
                    v.index_.emplace(w, static_cast<int>(v.tokens_.size()));
                    v.tokens_.push_back(w);
                }
            }
        }
        v.append_specials();
        return v;
    }

    int size() const { return static_cast<int>(tokens_.size()); }
    int pad() const { return pad_; }
    int eos() const { return eos_; }
    int sep() const { return sep_; }
    int unk() const { return unk_; }

    bool is_special(int id) const { return id == pad_ || id == eos_ || id == sep_ || id == unk_; }

    std::optional<int> id_of(const std::string& surface) const {
        auto it = index_.find(surface);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    const std::string& surface(int id) const {
        if (id < 0 || id >= size()) throw DataError("surface: id out of range");
        return tokens_[static_cast<std::size_t>(id)];
    }

    // Whitespace split; unknown surfaces map to unk. No eos appended.
    TokenSeq encode(const std::string& text) const {
        TokenSeq out;
        for (const auto& w : split_words(text)) {
            auto it = index_.find(w);
            out.push_back(it == index_.end() ? unk_ : it->second);
        }
        return out;
    }

    // Space-joined surfaces; specials omitted except unk, rendered as its sentinel.
    std::string decode_tokens(const TokenSeq& seq) const {
        std::vector<std::string> words;
        for (int id : seq) {
            if (id < 0 || id >= size()) throw DataError("decode_tokens: id out of range");
            if (id == pad_ || id == eos_ || id == sep_) continue;
            words.push_back(tokens_[static_cast<std::size_t>(id)]);
        }
        return join_words(words);
    }

    nlohmann::json to_json() const {
        std::vector<std::string> corpus_tokens(tokens_.begin(), tokens_.begin() + pad_);
        return nlohmann::json{{"tokens", corpus_tokens},
                              {"specials", {{"pad", pad_}, {"eos", eos_}, {"sep", sep_}, {"unk", unk_}}}};
    }

    static Vocabulary from_json(const nlohmann::json& j) {
        Vocabulary v;
        for (const auto& t : j.at("tokens")) {
            const std::string w = t.get<std::string>();
            v.index_.emplace(w, static_cast<int>(v.tokens_.size()));
            v.tokens_.push_back(w);
        }
        v.append_specials();
        if (v.pad_ != j.at("specials").at("pad").get<int>())
            throw DataError("vocabulary file: inconsistent specials block");
        return v;
    }

    void save(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw ConfigError("cannot write vocabulary: " + path);
        os << to_json().dump(2) << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot read vocabulary: " + path);
        nlohmann::json j;
        is >> j;
        return from_json(j);
    }

  private:
    void append_specials() {
        auto add = [this](const char* s) {
            int id = static_cast<int>(tokens_.size());
            tokens_.push_back(s);
            index_.emplace(s, id);
            return id;
        };
        pad_ = add(kPadSurface);
        eos_ = add(kEosSurface);
        sep_ = add(kSepSurface);
        unk_ = add(kUnkSurface);
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    int pad_ = -1, eos_ = -1, sep_ = -1, unk_ = -1;
};

}  // namespace lcd
