#include "refseg/lvle.hpp"

#include <cmath>
#include <limits>

#include "refseg/errors.hpp"

namespace refseg {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

void LmaConfig::validate() const {
    if (poolLevels.empty()) throw ConfigError("poolLevels must be non-empty");
    for (int r : poolLevels)
        if (r < 1 || r % 2 == 0) throw ConfigError("pool levels must be odd and >= 1");
    if (crossAttnHeads < 1) throw ConfigError("crossAttnHeads must be >= 1");
}

ad::Var multiLevelPool(const ad::Var& fv, const std::vector<int>& levels) {
    if (levels.empty()) throw ConfigError("multiLevelPool: no levels");
    ad::Var acc;
    for (int r : levels) {
        ad::Var pooled = ad::windowMeanValid(fv, r);
        acc = acc.defined() ? ad::add(acc, pooled) : pooled;
    }
    return acc;
}

LanguageGatedFusion::LanguageGatedFusion(ParamStore& ps, const std::string& name, int stageChannels,
                                         int langChannels, const LmaConfig& config, Rng& rng)
    : config_(config), channels_(stageChannels) {
    config_.validate();
    caQuery_ = makeLinear(ps, name + ".ca.q", stageChannels, stageChannels, rng);
    caKey_ = makeLinear(ps, name + ".ca.k", langChannels, stageChannels, rng);
    caValue_ = makeLinear(ps, name + ".ca.v", langChannels, stageChannels, rng);
    caOut_ = makeLinear(ps, name + ".ca.o", stageChannels, stageChannels, rng);
    const int hidden = config_.gateHidden > 0 ? config_.gateHidden : stageChannels;
    gateW1_ = makeLinear(ps, name + ".gate.w1", stageChannels, hidden, rng);
    gateW2_ = Linear{ps.create(name + ".gate.w2.weight", {hidden, stageChannels}, Init::Zero, rng),
                     ps.create(name + ".gate.w2.bias", {stageChannels}, Init::Zero, rng)};
    if (config_.localAggregation == LocalAggregation::Conv) {
        for (size_t i = 0; i < config_.poolLevels.size(); ++i) {
            int span = config_.poolLevels[i];
            convKernels_.push_back(ps.create(name + ".conv.k" + std::to_string(span),
                                             {span * span, stageChannels}, Init::NormalScaled, rng,
                                             1.0 / (span * span)));
        }
    }
}

ad::Var LanguageGatedFusion::crossModalFuse(const ad::Var& fv, const LanguageFeatures& fl,
                                            const ad::Var& ft) const {
    const Tensor& fvv = fv.value();
    if (fvv.rank() != 3) throw ShapeError("crossModalFuse: fv must be {h,w,c}");
    if (ft.defined() && !ft.value().sameShape(fvv)) throw ShapeError("crossModalFuse: ft shape mismatch");
    if (fl.validLength < 1) throw NumericError("crossModalFuse: all-padding language features");
    const int h = fvv.dim(0), w = fvv.dim(1), c = fvv.dim(2);
    const int L = fl.length();

    ad::Var pixels = ad::reshape(fv, {h * w, c});
    ad::Var q = caQuery_(pixels);
    ad::Var k = caKey_(fl.features);
    ad::Var v = caValue_(fl.features);

    Tensor mask({h * w, L});
    for (int r = 0; r < h * w; ++r)
        for (int col = fl.validLength; col < L; ++col) mask.at(r, col) = kNegInf;

    ad::Var scores = ad::scale(ad::matmul(q, ad::transpose2d(k)), 1.0 / std::sqrt(static_cast<double>(c)));
    ad::Var attn = ad::rowSoftmax(scores, &mask);
    ad::Var ca = ad::reshape(caOut_(ad::matmul(attn, v)), {h, w, c});
    return ft.defined() ? ad::add(ca, ft) : ca;
}

ad::Var LanguageGatedFusion::gateAndInject(const ad::Var& fv, const ad::Var& fvl) const {
    if (!fv.value().sameShape(fvl.value())) throw ShapeError("gateAndInject: shape mismatch");
    ad::Var gate = ad::tanhOp(gateW2_(ad::relu(gateW1_(fvl))));
    return ad::add(fv, ad::mul(fvl, gate));
}

ad::Var LanguageGatedFusion::localEnhance(const ad::Var& fv) const {
    switch (config_.localAggregation) {
        case LocalAggregation::AvgPool:
            return multiLevelPool(fv, config_.poolLevels);
        case LocalAggregation::Conv: {
            ad::Var acc;
            for (size_t i = 0; i < config_.poolLevels.size(); ++i) {
                const int span = config_.poolLevels[i];
                const int half = span / 2;
                ad::Var level;
                for (int dy = -half; dy <= half; ++dy)
                    for (int dx = -half; dx <= half; ++dx) {
                        const int tap = (dy + half) * span + (dx + half);
                        ad::Var shifted = (dy == 0 && dx == 0) ? fv : ad::shift2d(fv, dy, dx);
                        ad::Var weighted = ad::mulRowBroadcast(
                            shifted, ad::reshape(ad::sliceRows(convKernels_[i], tap, tap + 1),
                                                 {channels_}));
                        level = level.defined() ? ad::add(level, weighted) : weighted;
                    }
                acc = acc.defined() ? ad::add(acc, level) : level;
            }
            return acc;
        }
        case LocalAggregation::None:
            return ad::Var{};
    }
    throw ConfigError("unknown local aggregation mode");
}

std::pair<ad::Var, ad::Var> LanguageGatedFusion::fuse(const ad::Var& fv, const LanguageFeatures& fl) const {
    ad::Var ft = localEnhance(fv);
    ad::Var fvl = crossModalFuse(fv, fl, ft);
    ad::Var injected = gateAndInject(fv, fvl);
    return {fvl, injected};
}

FeatureAggregator::FeatureAggregator(ParamStore& ps, const std::array<int, 4>& stageChannels, int tokenWidth,
                                     Rng& rng, bool residualConv)
    : tokenWidth_(tokenWidth), residualConv_(residualConv) {
    // Merge order: (stage4 -> stage3), (-> stage2), (-> stage1).
    const std::array<int, 3> concatWidths{stageChannels[2] + stageChannels[3], stageChannels[1] + tokenWidth,
                                          stageChannels[0] + tokenWidth};
    for (int i = 0; i < 3; ++i) {
        proj1x1_[static_cast<size_t>(i)] =
            makeLinear(ps, "aggregator.proj" + std::to_string(i + 1), concatWidths[static_cast<size_t>(i)],
                       tokenWidth, rng);
        conv3x3_[static_cast<size_t>(i)] =
            makeLinear(ps, "aggregator.conv" + std::to_string(i + 1), 9 * tokenWidth, tokenWidth, rng);
    }
}

ad::Var concatChannels(const ad::Var& a, const ad::Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(1) != bv.dim(1))
        throw ShapeError("concatChannels: spatial dims differ " + av.shapeString() + " vs " + bv.shapeString());
    ad::Var joined = ad::concatCols({ad::reshape(a, {av.rows(), av.cols()}), ad::reshape(b, {bv.rows(), bv.cols()})});
    return ad::reshape(joined, {av.dim(0), av.dim(1), av.dim(2) + bv.dim(2)});
}

ad::Var FeatureAggregator::convBlock(const ad::Var& x, int idx) const {
    const Tensor& xv = x.value();
    ad::Var projected = proj1x1_[static_cast<size_t>(idx)](x);
    ad::Var y = ad::reshape(projected, {xv.dim(0), xv.dim(1), tokenWidth_});
    ad::Var refined = conv3x3_[static_cast<size_t>(idx)](ad::im2col3x3(y));
    refined = ad::reshape(refined, {xv.dim(0), xv.dim(1), tokenWidth_});
    return residualConv_ ? ad::add(y, refined) : refined;
}

AggregatedPyramid FeatureAggregator::aggregate(const std::array<ad::Var, 4>& fvl) const {
    for (int i = 0; i < 3; ++i) {
        const Tensor& fine = fvl[static_cast<size_t>(i)].value();
        const Tensor& coarse = fvl[static_cast<size_t>(i + 1)].value();
        if (fine.dim(0) != 2 * coarse.dim(0) || fine.dim(1) != 2 * coarse.dim(1))
            throw ShapeError("aggregate: stage resolution chain broken between stages " +
                             std::to_string(i + 1) + " and " + std::to_string(i + 2));
    }
    AggregatedPyramid out;
    out.maps[0] = convBlock(concatChannels(fvl[2], ad::upsampleNearest2x(fvl[3])), 0);
    out.maps[1] = convBlock(concatChannels(fvl[1], ad::upsampleNearest2x(out.maps[0])), 1);
    out.maps[2] = convBlock(concatChannels(fvl[0], ad::upsampleNearest2x(out.maps[1])), 2);
    return out;
}

}  // namespace refseg
