#pragma once

#include <array>
#include <vector>

#include "refseg/nn.hpp"
#include "refseg/text_encoder.hpp"

namespace refseg {

enum class LocalAggregation { AvgPool, Conv, None };

struct LmaConfig {
    std::vector<int> poolLevels{1, 3, 5};  // odd window spans
    int crossAttnHeads = 1;
    int gateHidden = 0;  // 0 = stage channel count
    LocalAggregation localAggregation = LocalAggregation::AvgPool;

    void validate() const;
};

// Elementwise sum of centered count-valid window means, one per level.
// Level 1 is the identity, so a constant field c with levels {1,3,5} comes
// out as the constant 3c.
ad::Var multiLevelPool(const ad::Var& fv, const std::vector<int>& levels);

// Single language-gated fusion stage: local enhancement, pixel-to-language
// cross attention, gated residual injection back toward the backbone.
class LanguageGatedFusion {
public:
    LanguageGatedFusion(ParamStore& ps, const std::string& name, int stageChannels, int langChannels,
                        const LmaConfig& config, Rng& rng);

    // CA(F_v, F_l) + F_t with pixels as queries and valid language tokens as
    // keys/values. Errors when the expression is all padding.
    ad::Var crossModalFuse(const ad::Var& fv, const LanguageFeatures& fl, const ad::Var& ft) const;

    // F_v + F_vl * tanh(W2 relu(W1 F_vl)); gate weights W2 start at zero so an
    // untrained stage is a no-op on the backbone.
    ad::Var gateAndInject(const ad::Var& fv, const ad::Var& fvl) const;

    ad::Var localEnhance(const ad::Var& fv) const;

    // Returns {fvl, injected}.
    std::pair<ad::Var, ad::Var> fuse(const ad::Var& fv, const LanguageFeatures& fl) const;

    const LmaConfig& config() const { return config_; }

private:
    LmaConfig config_;
    int channels_;
    Linear caQuery_, caKey_, caValue_, caOut_;
    Linear gateW1_, gateW2_;
    std::vector<ad::Var> convKernels_;  // depthwise taps for the conv ablation, one {span*span, c} per level
};

struct AggregatedPyramid {
    // maps[0] at H/16, maps[1] at H/8, maps[2] at H/4; all C_t channels.
    std::array<ad::Var, 3> maps;
};

// Deep-to-shallow merging of the four fused stage maps into three aggregated
// maps: each step upsamples the coarser result 2x (nearest), concatenates the
// next finer stage along channels, projects 1x1 to C_t and refines with a
// residual 3x3 convolution.
class FeatureAggregator {
public:
    FeatureAggregator(ParamStore& ps, const std::array<int, 4>& stageChannels, int tokenWidth, Rng& rng,
                      bool residualConv = true);

    AggregatedPyramid aggregate(const std::array<ad::Var, 4>& fvl) const;

private:
    ad::Var convBlock(const ad::Var& x, int idx) const;

    int tokenWidth_;
    bool residualConv_;
    std::array<Linear, 3> proj1x1_;
    std::array<Linear, 3> conv3x3_;  // applied to im2col3x3 output
};

ad::Var concatChannels(const ad::Var& a, const ad::Var& b);

}  // namespace refseg
