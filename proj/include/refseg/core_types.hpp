#pragma once

#include <string>
#include <vector>

#include "refseg/tensor.hpp"

namespace refseg {

enum class Label { NoAnomaly = 0, Anomalous = 1 };

constexpr int kNoAnomalyIndex = 0;  // class 0 of the identifier logits
constexpr int kAnomalousIndex = 1;

std::string labelName(Label label);
Label labelFromName(const std::string& name);

// One image-expression-mask-label unit of training and evaluation.
struct Sample {
    Tensor image;       // {H, W, 3}, values in [0, 1]
    std::string expression;
    Tensor gtMask;      // {H, W}, entries 0 or 1
    Label gtLabel = Label::NoAnomaly;
    std::string id;

    int height() const { return image.rank() == 3 ? image.dim(0) : 0; }
    int width() const { return image.rank() == 3 ? image.dim(1) : 0; }
};

enum class FeatureKind { RawVisual, FusedVisionLanguage, Aggregated };

struct FeatureMap {
    Tensor data;  // {h, w, c}
    int stage = 0;
    FeatureKind kind = FeatureKind::RawVisual;

    int h() const { return data.dim(0); }
    int w() const { return data.dim(1); }
    int channels() const { return data.dim(2); }
};

struct QueryState {
    Tensor anomalyToken;     // {C_t}
    Tensor backgroundToken;  // {C_t}
    int layerIndex = 0;      // 0 = learned initial tokens
};

// Per-layer grouping of pixels to the two query tokens.
struct GroupAssignment {
    Tensor sPixel;   // {2, h*w}, cosine similarities in [-1, 1]
    Tensor sGumbel;  // {2, h*w}, each column a probability vector
    Tensor sMask;    // {2, h*w}, forward values one-hot per column
    int gridH = 0;
    int gridW = 0;
};

struct PredictionOutput {
    Tensor maskLogits;       // {H, W}
    Tensor noAnomalyLogits;  // {2}; index 0 = no anomaly, index 1 = anomalous
    std::vector<Tensor> intermediateSoftMasks;  // 3 maps {h_k, w_k}: anomaly row of each layer's sGumbel
};

// Returns the empty list iff every Sample invariant holds; each violation
// names the field and the broken rule. Never throws.
std::vector<std::string> validateSample(const Sample& sample);

// Area-average downsampling of a {H, W} mask onto an evenly dividing grid.
// Each output cell is the mean of its source block, so values stay in [0, 1]
// and the global mean is preserved.
Tensor resampleMaskToGrid(const Tensor& mask, int targetH, int targetW);

}  // namespace refseg
