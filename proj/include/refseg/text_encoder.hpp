#pragma once

#include <map>
#include <string>
#include <vector>

#include "refseg/nn.hpp"

namespace refseg {

// Whitespace/punctuation token vocabulary with fixed specials PAD=0, UNK=1.
// Non-special ids follow lexicographic token order, so the mapping is a pure
// function of the token set.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    static Vocabulary build(const std::vector<std::string>& corpus);
    static std::vector<std::string> splitTokens(const std::string& text);

    int size() const { return static_cast<int>(idToToken_.size()); }
    int idOf(const std::string& token) const;  // UNK for unknown
    const std::string& tokenOf(int id) const;
    bool contains(const std::string& token) const { return tokenToId_.count(token) > 0; }

    std::vector<std::string> tokenList() const { return idToToken_; }

    // One token per line, UTF-8, specials first.
    std::string serialize() const;
    static Vocabulary deserialize(const std::string& text);

private:
    std::map<std::string, int> tokenToId_;
    std::vector<std::string> idToToken_;
};

struct TokenizedExpression {
    std::vector<int> ids;  // length maxLen, PAD-padded
    int validLength = 0;
};

TokenizedExpression tokenize(const std::string& expr, const Vocabulary& vocab, int maxLen);

struct LanguageFeatures {
    ad::Var features;     // {L, C_l}; rows >= validLength are zero
    int validLength = 0;
    int length() const { return features.value().dim(0); }
    int channels() const { return features.value().dim(1); }
};

struct TextEncoderConfig {
    int width = 64;      // C_l
    int heads = 4;
    int blocks = 2;
    int ffnHidden = 256;
};

// Trainable expression encoder: embedding + sinusoidal positions + pre-norm
// transformer blocks with a key-padding mask. Padded rows come out exactly
// zero, and valid rows are unaffected by anything at or beyond validLength.
class TextEncoder {
public:
    TextEncoder(ParamStore& ps, const TextEncoderConfig& config, int vocabSize, Rng& rng);

    LanguageFeatures encode(const TokenizedExpression& tokens) const;
    const TextEncoderConfig& config() const { return config_; }

private:
    TextEncoderConfig config_;
    ad::Var embedding_;  // {vocabSize, width}
    std::vector<TransformerBlock> blocks_;
    LayerNorm finalNorm_;
};

}  // namespace refseg
