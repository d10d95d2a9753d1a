#include "refseg/losses.hpp"

#include "refseg/errors.hpp"

namespace refseg {

void LossWeights::validate() const {
    if (dice < 0 || focal < 0 || ce < 0 || intermediate < 0) throw ConfigError("loss weights must be >= 0");
    if (focalGamma < 0) throw ConfigError("focalGamma must be >= 0");
    if (focalAlpha <= 0 || focalAlpha >= 1) throw ConfigError("focalAlpha must be in (0, 1)");
    if (diceEps <= 0) throw ConfigError("diceEps must be positive");
}

PredictionOutput ModelOutputs::values() const {
    PredictionOutput p;
    p.maskLogits = maskLogits.value();
    p.noAnomalyLogits = noAnomalyLogits.value();
    for (const auto& m : intermediateSoftMasks) p.intermediateSoftMasks.push_back(m.value());
    return p;
}

ad::Var diceLoss(const ad::Var& probs, const Tensor& target, double eps) {
    if (!probs.value().sameShape(target)) throw ShapeError("diceLoss: shape mismatch");
    ad::Var t = ad::constant(target);
    ad::Var inter = ad::sum(ad::mul(probs, t));
    ad::Var denom = ad::addScalar(ad::add(ad::sum(probs), ad::sum(t)), eps);
    return ad::addScalar(ad::neg(ad::divide(ad::addScalar(ad::scale(inter, 2.0), eps), denom)), 1.0);
}

ad::Var focalLoss(const ad::Var& probs, const Tensor& target, double gamma, double alpha) {
    if (!probs.value().sameShape(target)) throw ShapeError("focalLoss: shape mismatch");
    ad::Var p = ad::clamp(probs, 1e-6, 1.0 - 1e-6);
    ad::Var q = ad::addScalar(ad::neg(p), 1.0);  // 1 - p
    Tensor tNeg(target.shape());
    for (int i = 0; i < target.size(); ++i) tNeg[i] = 1.0 - target[i];
    ad::Var onTerm = ad::mul(ad::constant(target), ad::mul(ad::powScalar(q, gamma), ad::logOp(p)));
    ad::Var offTerm = ad::mul(ad::constant(tNeg), ad::mul(ad::powScalar(p, gamma), ad::logOp(q)));
    return ad::neg(ad::mean(ad::add(ad::scale(onTerm, alpha), ad::scale(offTerm, 1.0 - alpha))));
}

ad::Var identifierLoss(const ad::Var& logits, Label label) {
    const int idx = label == Label::NoAnomaly ? kNoAnomalyIndex : kAnomalousIndex;
    ad::Var picked = ad::sum(ad::sliceRows(ad::reshape(logits, {2, 1}), idx, idx + 1));
    return ad::sub(ad::logSumExp(logits), picked);
}

std::pair<ad::Var, LossBreakdown> totalLoss(const ModelOutputs& outputs, const Sample& sample,
                                            const LossWeights& weights) {
    weights.validate();
    LossBreakdown breakdown;

    ad::Var maskProbs = ad::sigmoid(outputs.maskLogits);
    ad::Var dMain = diceLoss(maskProbs, sample.gtMask, weights.diceEps);
    ad::Var fMain = focalLoss(maskProbs, sample.gtMask, weights.focalGamma, weights.focalAlpha);

    ad::Var total = ad::add(ad::scale(dMain, weights.dice), ad::scale(fMain, weights.focal));
    breakdown.maskDice = weights.dice * dMain.value()[0];
    breakdown.maskFocal = weights.focal * fMain.value()[0];

    ad::Var interSum;
    for (const auto& soft : outputs.intermediateSoftMasks) {
        const Tensor& sv = soft.value();
        Tensor target = resampleMaskToGrid(sample.gtMask, sv.dim(0), sv.dim(1));
        ad::Var d = diceLoss(soft, target, weights.diceEps);
        ad::Var f = focalLoss(soft, target, weights.focalGamma, weights.focalAlpha);
        ad::Var term = ad::add(ad::scale(d, weights.dice), ad::scale(f, weights.focal));
        interSum = interSum.defined() ? ad::add(interSum, term) : term;
    }
    if (interSum.defined()) {
        ad::Var weighted = ad::scale(interSum, weights.intermediate);
        breakdown.intermediate = weighted.value()[0];
        total = ad::add(total, weighted);
    }

    ad::Var ce = ad::scale(identifierLoss(outputs.noAnomalyLogits, sample.gtLabel), weights.ce);
    breakdown.identifier = ce.value()[0];
    total = ad::add(total, ce);

    breakdown.total = total.value()[0];
    return {total, breakdown};
}

}  // namespace refseg
