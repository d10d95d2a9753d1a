#pragma once

#include <vector>

#include "refseg/autodiff.hpp"
#include "refseg/core_types.hpp"

namespace refseg {

struct LossWeights {
    double dice = 1.0;
    double focal = 2.0;
    double ce = 1.0;
    double intermediate = 0.4;
    double focalGamma = 2.0;
    double focalAlpha = 0.25;
    double diceEps = 1.0;

    void validate() const;
};

// Differentiable prediction bundle; PredictionOutput is its value snapshot.
struct ModelOutputs {
    ad::Var maskLogits;       // {H, W}
    ad::Var noAnomalyLogits;  // {2}
    std::vector<ad::Var> intermediateSoftMasks;  // anomaly row of each layer's sGumbel, {h_k, w_k}

    PredictionOutput values() const;
};

// 1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps); target entries in [0, 1].
ad::Var diceLoss(const ad::Var& probs, const Tensor& target, double eps = 1.0);

// Mean focal loss with soft-target generalization:
// -[a t (1-p)^g log p + (1-a)(1-t) p^g log(1-p)]; probabilities are clamped
// to [1e-6, 1-1e-6] first.
ad::Var focalLoss(const ad::Var& probs, const Tensor& target, double gamma = 2.0, double alpha = 0.25);

// Softmax cross-entropy on the 2-way identifier logits.
ad::Var identifierLoss(const ad::Var& logits, Label label);

struct LossBreakdown {
    double maskDice = 0.0;      // weighted
    double maskFocal = 0.0;     // weighted
    double identifier = 0.0;    // weighted
    double intermediate = 0.0;  // weighted sum over layers
    double total = 0.0;
};

// Weighted total: dice+focal on the final mask at image resolution,
// dice+focal on each layer's soft anomaly map against the area-averaged
// ground truth, cross entropy on the identifier. No-anomaly samples keep the
// mask terms with all-zero targets.
std::pair<ad::Var, LossBreakdown> totalLoss(const ModelOutputs& outputs, const Sample& sample,
                                            const LossWeights& weights);

}  // namespace refseg
