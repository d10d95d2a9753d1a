#include "refseg/text_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "refseg/errors.hpp"

namespace refseg {

std::vector<std::string> Vocabulary::splitTokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char raw : text) {
        unsigned char c = static_cast<unsigned char>(raw);
        if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus) {
    if (corpus.empty()) throw DataError("buildVocabulary: empty corpus");
    std::set<std::string> unique;
    for (const auto& expr : corpus)
        for (auto& tok : splitTokens(expr)) unique.insert(tok);
    Vocabulary v;
    v.idToToken_ = {"<pad>", "<unk>"};
    for (const auto& tok : unique) v.idToToken_.push_back(tok);
    for (size_t i = 0; i < v.idToToken_.size(); ++i) v.tokenToId_[v.idToToken_[i]] = static_cast<int>(i);
    return v;
}

int Vocabulary::idOf(const std::string& token) const {
    auto it = tokenToId_.find(token);
    return it == tokenToId_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::tokenOf(int id) const {
    if (id < 0 || id >= size()) throw DataError("vocabulary id out of range: " + std::to_string(id));
    return idToToken_[static_cast<size_t>(id)];
}

std::string Vocabulary::serialize() const {
    std::ostringstream os;
    for (const auto& tok : idToToken_) os << tok << "\n";
    return os.str();
}

Vocabulary Vocabulary::deserialize(const std::string& text) {
    Vocabulary v;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty()) v.idToToken_.push_back(line);
    }
    if (v.idToToken_.size() < 2 || v.idToToken_[0] != "<pad>" || v.idToToken_[1] != "<unk>")
        throw DataError("vocabulary file missing specials");
    for (size_t i = 0; i < v.idToToken_.size(); ++i) v.tokenToId_[v.idToToken_[i]] = static_cast<int>(i);
    return v;
}

TokenizedExpression tokenize(const std::string& expr, const Vocabulary& vocab, int maxLen) {
    if (maxLen < 1) throw ShapeError("tokenize: maxLen must be >= 1");
    TokenizedExpression out;
    out.ids.assign(static_cast<size_t>(maxLen), Vocabulary::kPad);
    auto tokens = Vocabulary::splitTokens(expr);
    out.validLength = std::min<int>(static_cast<int>(tokens.size()), maxLen);
    for (int i = 0; i < out.validLength; ++i) out.ids[static_cast<size_t>(i)] = vocab.idOf(tokens[static_cast<size_t>(i)]);
    return out;
}

TextEncoder::TextEncoder(ParamStore& ps, const TextEncoderConfig& config, int vocabSize, Rng& rng)
    : config_(config) {
    embedding_ = ps.create("text.embedding", {vocabSize, config.width}, Init::NormalScaled, rng, 0.02);
    for (int b = 0; b < config.blocks; ++b)
        blocks_.push_back(makeTransformerBlock(ps, "text.block" + std::to_string(b), config.width,
                                               config.heads, config.ffnHidden, rng));
    finalNorm_ = makeLayerNorm(ps, "text.final_norm", config.width, rng);
}

LanguageFeatures TextEncoder::encode(const TokenizedExpression& tokens) const {
    const int L = static_cast<int>(tokens.ids.size());
    const int C = config_.width;
    LanguageFeatures out;
    out.validLength = tokens.validLength;
    if (tokens.validLength == 0) {
        out.features = ad::constant(Tensor::zeros({L, C}));
        return out;
    }
    ad::Var x = ad::embedRows(embedding_, tokens.ids);
    x = ad::add(x, ad::constant(sinusoidalPositions1d(L, C)));
    Tensor mask = keyPaddingMask(L, tokens.validLength);
    for (const auto& block : blocks_) x = block(x, &mask);
    x = finalNorm_(x);
    // Zero the padded rows so downstream consumers can rely on them.
    Tensor rowMask({L, C});
    for (int r = 0; r < tokens.validLength; ++r)
        for (int c = 0; c < C; ++c) rowMask.at(r, c) = 1.0;
    out.features = ad::mul(x, ad::constant(rowMask));
    return out;
}

}  // namespace refseg
