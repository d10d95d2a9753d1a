#pragma once

#include <utility>
#include <vector>

#include "refseg/core_types.hpp"
#include "refseg/lvle.hpp"
#include "refseg/nn.hpp"
#include "refseg/text_encoder.hpp"

namespace refseg {

struct DecoderConfig {
    int tokenWidth = 64;  // C_t
    static constexpr int layers = 3;
    double gumbelTauInit = 1.0;
    double tauMin = 0.05;
    bool inferenceNoise = false;
    bool maskedAttention = true;      // false: every token reads the language features
    int backgroundTokens = 1;         // >1: redundant-query baseline
    bool normalizedGroupAggregation = false;

    void validate() const;
    int totalTokens() const { return 1 + backgroundTokens; }
};

// Additive attention mask over the [A; B...; language] sequence: the anomaly
// token reads everything valid, background tokens read only the query tokens,
// language rows read only valid language columns. PAD columns are closed for
// every row. masked=false yields the all-zero (fully open) mask.
Tensor buildAttentionMask(int L, int validLength, int backgroundTokens = 1, bool masked = true);

struct TokenAttentionParams {
    ad::Var wq, wk, wv, wo;  // {C_t, C_t}, bias-free
    LayerNorm ln;
};

// One masked self-attention step over [A; B...; F'_l]; language rows are
// computed and discarded. Returns the post-residual, normalized (A, B) pair.
// When validLength is 0 the sequence is just the query tokens.
std::pair<ad::Var, ad::Var> maskedSelfAttention(const ad::Var& aPrev, const ad::Var& bPrev,
                                                const ad::Var& langProjected, int validLength,
                                                const TokenAttentionParams& params, bool masked = true);

struct GroupBlockParams {
    ad::Var wt, wd;  // token / pixel projections into the grouping space
    Linear mlp1, mlp2;
    LayerNorm ln;
    ad::Var logTau;  // tau = exp(logTau), clamped at tauMin
};

struct GroupBlockOutput {
    ad::Var sPixel;   // {nT, hw} cosine similarities
    ad::Var sGumbel;  // {nT, hw} column-stochastic
    ad::Var sMask;    // {nT, hw} one-hot forward, soft gradient
    ad::Var tokensNext;  // {nT, C_t}
    int gridH = 0;
    int gridW = 0;

    GroupAssignment assignment() const;
};

GroupBlockOutput groupBlock(const ad::Var& tokens, const ad::Var& fa, const GroupBlockParams& params,
                            double tauMin, bool noise, Rng* rng, bool normalizedAggregation = false);

struct DecoderResult {
    ad::Var anomalyToken;      // {1, C_t}
    ad::Var backgroundTokens;  // {nB, C_t}
    std::vector<GroupBlockOutput> layers;  // one per pyramid level, coarse to fine
};

class DualQueryDecoder {
public:
    DualQueryDecoder(ParamStore& ps, const DecoderConfig& config, int langChannels, Rng& rng);

    DecoderResult run(const LanguageFeatures& fl, const AggregatedPyramid& pyramid, bool noise,
                      Rng* rng) const;

    // <W_m a, pixel> / sqrt(C_t) on the finest aggregated map, upsampled to
    // image resolution. Returns {H, W} logits.
    ad::Var maskHead(const ad::Var& anomalyToken, const ad::Var& fa3, int imageH, int imageW) const;

    // Mean background token -> 2 logits; index 0 = no anomaly.
    ad::Var noAnomalyHead(const ad::Var& backgroundTokens) const;

    const DecoderConfig& config() const { return config_; }
    ad::Var initialAnomalyToken() const { return initAnomaly_; }
    ad::Var initialBackgroundTokens() const { return initBackground_; }

private:
    DecoderConfig config_;
    ad::Var langProj_;  // {C_l, C_t}
    ad::Var initAnomaly_, initBackground_;
    std::vector<TokenAttentionParams> attn_;
    std::vector<GroupBlockParams> group_;
    ad::Var maskProj_;  // {C_t, C_t}
    Linear identifier_;
};

// label = argmax(noAnomalyLogits); a no-anomaly verdict forces the empty
// mask, otherwise pixels switch on where sigmoid(logit) > 0.5.
std::pair<Tensor, Label> inferMask(const PredictionOutput& prediction);

}  // namespace refseg
