#include "refseg/decoder.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "refseg/errors.hpp"

namespace refseg {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

void DecoderConfig::validate() const {
    if (tokenWidth < 1) throw ConfigError("tokenWidth must be positive");
    if (tauMin <= 0.0) throw ConfigError("tauMin must be positive");
    if (gumbelTauInit < tauMin) throw ConfigError("gumbelTauInit below tauMin");
    if (backgroundTokens < 1) throw ConfigError("backgroundTokens must be >= 1");
}

Tensor buildAttentionMask(int L, int validLength, int backgroundTokens, bool masked) {
    if (validLength < 0 || validLength > L) throw ShapeError("buildAttentionMask: bad validLength");
    const int nQuery = 1 + backgroundTokens;
    const int n = nQuery + L;
    Tensor m({n, n});
    if (!masked) return m;
    m.fill(kNegInf);
    // Anomaly row: query tokens plus valid language.
    for (int c = 0; c < nQuery; ++c) m.at(0, c) = 0.0;
    for (int c = 0; c < validLength; ++c) m.at(0, nQuery + c) = 0.0;
    // Background rows: query tokens only.
    for (int r = 1; r < nQuery; ++r)
        for (int c = 0; c < nQuery; ++c) m.at(r, c) = 0.0;
    // Language rows: valid language columns only.
    for (int r = nQuery; r < n; ++r)
        for (int c = 0; c < validLength; ++c) m.at(r, nQuery + c) = 0.0;
    return m;
}

std::pair<ad::Var, ad::Var> maskedSelfAttention(const ad::Var& aPrev, const ad::Var& bPrev,
                                                const ad::Var& langProjected, int validLength,
                                                const TokenAttentionParams& params, bool masked) {
    if (!aPrev.value().allFinite() || !bPrev.value().allFinite())
        throw NumericError("maskedSelfAttention: non-finite query tokens");
    if (validLength > 0 && !langProjected.value().allFinite())
        throw NumericError("maskedSelfAttention: non-finite language features");
    const int nB = bPrev.value().rows();
    const int ct = aPrev.value().cols();
    const int L = validLength > 0 ? langProjected.value().rows() : 0;

    ad::Var seq = validLength > 0 ? ad::concatRows({aPrev, bPrev, langProjected})
                                  : ad::concatRows({aPrev, bPrev});
    Tensor mask = buildAttentionMask(L, validLength, nB, masked);

    ad::Var q = ad::matmul(seq, params.wq);
    ad::Var k = ad::matmul(seq, params.wk);
    ad::Var v = ad::matmul(seq, params.wv);
    ad::Var scores = ad::scale(ad::matmul(q, ad::transpose2d(k)), 1.0 / std::sqrt(static_cast<double>(ct)));
    ad::Var attn = ad::rowSoftmax(scores, &mask);
    ad::Var out = ad::matmul(ad::matmul(attn, v), params.wo);

    ad::Var tokens = ad::concatRows({aPrev, bPrev});
    ad::Var updated = params.ln(ad::add(tokens, ad::sliceRows(out, 0, 1 + nB)));
    return {ad::sliceRows(updated, 0, 1), ad::sliceRows(updated, 1, 1 + nB)};
}

GroupAssignment GroupBlockOutput::assignment() const {
    GroupAssignment a;
    a.sPixel = sPixel.value();
    a.sGumbel = sGumbel.value();
    a.sMask = sMask.value();
    a.gridH = gridH;
    a.gridW = gridW;
    return a;
}

GroupBlockOutput groupBlock(const ad::Var& tokens, const ad::Var& fa, const GroupBlockParams& params,
                            double tauMin, bool noise, Rng* rng, bool normalizedAggregation) {
    const Tensor& fav = fa.value();
    if (fav.rank() != 3) throw ShapeError("groupBlock: fa must be {h,w,c}");
    const int h = fav.dim(0), w = fav.dim(1), c = fav.dim(2);
    const int nT = tokens.value().rows();
    const int hw = h * w;

    ad::Var tProj = ad::matmul(tokens, params.wt);
    ad::Var fProj = ad::matmul(ad::reshape(fa, {hw, c}), params.wd);

    ad::Var sPixel = ad::matmul(ad::rowL2Normalize(tProj), ad::transpose2d(ad::rowL2Normalize(fProj)));

    double tauValue = std::exp(params.logTau.value()[0]);
    if (tauValue < tauMin)
        std::fprintf(stderr, "[refseg] warning: tau %.6f clamped to floor %.6f\n", tauValue, tauMin);
    ad::Var tau = ad::clamp(ad::expOp(params.logTau), tauMin, std::numeric_limits<double>::max());

    ad::Var logits = sPixel;
    if (noise) {
        if (!rng) throw ConfigError("groupBlock: noise requested without an RNG");
        Tensor g({nT, hw});
        for (int i = 0; i < g.size(); ++i) g[i] = rng->gumbel();
        logits = ad::add(logits, ad::constant(g));
    }
    logits = ad::divide(logits, tau);

    // Softmax over the token axis (per pixel column).
    ad::Var sGumbel = ad::transpose2d(ad::rowSoftmax(ad::transpose2d(logits)));

    Tensor hard({nT, hw});
    const Tensor& sg = sGumbel.value();
    for (int p = 0; p < hw; ++p) {
        int best = 0;
        for (int t = 1; t < nT; ++t)
            if (sg.at(t, p) > sg.at(best, p)) best = t;
        hard.at(best, p) = 1.0;
    }
    ad::Var sMask = ad::straightThrough(sGumbel, std::move(hard));

    ad::Var grouped = ad::matmul(sMask, fProj);
    if (normalizedAggregation) {
        Tensor ones({hw, 1});
        ones.fill(1.0);
        ad::Var counts = ad::reshape(ad::matmul(sMask, ad::constant(ones)), {nT});
        ad::Var invCounts = ad::powScalar(ad::addScalar(counts, 1e-12), -1.0);
        grouped = ad::transpose2d(ad::mulRowBroadcast(ad::transpose2d(grouped), invCounts));
    }
    ad::Var updated = params.mlp2(ad::relu(params.mlp1(grouped)));

    GroupBlockOutput out;
    out.sPixel = sPixel;
    out.sGumbel = sGumbel;
    out.sMask = sMask;
    out.tokensNext = params.ln(ad::add(updated, tProj));
    out.gridH = h;
    out.gridW = w;
    return out;
}

DualQueryDecoder::DualQueryDecoder(ParamStore& ps, const DecoderConfig& config, int langChannels, Rng& rng)
    : config_(config) {
    config_.validate();
    const int ct = config.tokenWidth;
    langProj_ = ps.create("decoder.lang_proj", {langChannels, ct}, Init::XavierUniform, rng);
    initAnomaly_ = ps.create("decoder.init_anomaly", {1, ct}, Init::NormalScaled, rng, 0.02);
    initBackground_ =
        ps.create("decoder.init_background", {config.backgroundTokens, ct}, Init::NormalScaled, rng, 0.02);
    for (int layer = 0; layer < DecoderConfig::layers; ++layer) {
        const std::string base = "decoder.layer" + std::to_string(layer);
        TokenAttentionParams a;
        a.wq = ps.create(base + ".attn.wq", {ct, ct}, Init::XavierUniform, rng);
        a.wk = ps.create(base + ".attn.wk", {ct, ct}, Init::XavierUniform, rng);
        a.wv = ps.create(base + ".attn.wv", {ct, ct}, Init::XavierUniform, rng);
        a.wo = ps.create(base + ".attn.wo", {ct, ct}, Init::XavierUniform, rng);
        a.ln = makeLayerNorm(ps, base + ".attn.ln", ct, rng);
        attn_.push_back(a);
        GroupBlockParams g;
        g.wt = ps.create(base + ".group.wt", {ct, ct}, Init::XavierUniform, rng);
        g.wd = ps.create(base + ".group.wd", {ct, ct}, Init::XavierUniform, rng);
        g.mlp1 = makeLinear(ps, base + ".group.mlp1", ct, ct, rng);
        g.mlp2 = makeLinear(ps, base + ".group.mlp2", ct, ct, rng);
        g.ln = makeLayerNorm(ps, base + ".group.ln", ct, rng);
        Tensor tauInit = Tensor::scalar(std::log(config.gumbelTauInit));
        g.logTau = ps.create(base + ".group.log_tau", {1}, Init::Zero, rng);
        g.logTau.setValue(tauInit);
        group_.push_back(g);
    }
    maskProj_ = ps.create("decoder.mask_proj", {ct, ct}, Init::XavierUniform, rng);
    identifier_ = makeLinear(ps, "decoder.identifier", ct, 2, rng);
}

DecoderResult DualQueryDecoder::run(const LanguageFeatures& fl, const AggregatedPyramid& pyramid,
                                    bool noise, Rng* rng) const {
    for (int i = 0; i < 2; ++i) {
        if (pyramid.maps[static_cast<size_t>(i)].value().dim(0) >=
            pyramid.maps[static_cast<size_t>(i + 1)].value().dim(0))
            throw ShapeError("runDecoder: pyramid resolutions must increase with layer index");
    }
    ad::Var langProjected = fl.validLength > 0 ? ad::matmul(fl.features, langProj_) : ad::Var{};
    DecoderResult result;
    ad::Var a = initAnomaly_;
    ad::Var b = initBackground_;
    for (int layer = 0; layer < DecoderConfig::layers; ++layer) {
        auto [aNext, bNext] = maskedSelfAttention(a, b, langProjected, fl.validLength,
                                                  attn_[static_cast<size_t>(layer)], config_.maskedAttention);
        GroupBlockOutput g =
            groupBlock(ad::concatRows({aNext, bNext}), pyramid.maps[static_cast<size_t>(layer)],
                       group_[static_cast<size_t>(layer)], config_.tauMin, noise, rng,
                       config_.normalizedGroupAggregation);
        a = ad::sliceRows(g.tokensNext, 0, 1);
        b = ad::sliceRows(g.tokensNext, 1, config_.totalTokens());
        result.layers.push_back(std::move(g));
    }
    result.anomalyToken = a;
    result.backgroundTokens = b;
    return result;
}

ad::Var DualQueryDecoder::maskHead(const ad::Var& anomalyToken, const ad::Var& fa3, int imageH,
                                   int imageW) const {
    const Tensor& fav = fa3.value();
    if (fav.rank() != 3) throw ShapeError("maskHead: fa3 must be {h,w,c}");
    const int h = fav.dim(0), w = fav.dim(1), c = fav.dim(2);
    ad::Var probe = ad::matmul(anomalyToken, maskProj_);  // {1, C_t}
    ad::Var logits = ad::scale(ad::matmul(ad::reshape(fa3, {h * w, c}), ad::transpose2d(probe)),
                               1.0 / std::sqrt(static_cast<double>(c)));
    ad::Var grid = ad::reshape(logits, {h, w, 1});
    ad::Var up = ad::upsampleBilinear(grid, imageH, imageW);
    return ad::reshape(up, {imageH, imageW});
}

ad::Var DualQueryDecoder::noAnomalyHead(const ad::Var& backgroundTokens) const {
    const int nB = backgroundTokens.value().rows();
    ad::Var pooled = backgroundTokens;
    if (nB > 1) {
        Tensor onesRow({1, nB});
        onesRow.fill(1.0 / nB);
        pooled = ad::matmul(ad::constant(onesRow), backgroundTokens);
    }
    return ad::reshape(identifier_(pooled), {2});
}

std::pair<Tensor, Label> inferMask(const PredictionOutput& prediction) {
    const Tensor& logits = prediction.noAnomalyLogits;
    Label label = logits[kAnomalousIndex] > logits[kNoAnomalyIndex] ? Label::Anomalous : Label::NoAnomaly;
    Tensor mask(prediction.maskLogits.shape());
    if (label == Label::Anomalous) {
        for (int i = 0; i < mask.size(); ++i) mask[i] = prediction.maskLogits[i] > 0.0 ? 1.0 : 0.0;
    }
    return {std::move(mask), label};
}

}  // namespace refseg
