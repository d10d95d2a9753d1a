#pragma once

#include <array>
#include <vector>

#include "refseg/core_types.hpp"
#include "refseg/nn.hpp"

namespace refseg {

struct BackboneConfig {
    std::array<int, 4> stageChannels{32, 64, 128, 256};
    std::array<int, 4> blocksPerStage{1, 1, 1, 1};
    int attentionHeads = 4;
    static constexpr int patchStride = 4;

    void validate() const;
};

// Four-stage hierarchical encoder. The stem mean-pools 4x4 patches, projects
// to stage-1 width and adds fixed 2-D sinusoidal positions; each later stage
// mean-pools 2x2, expands channels, and runs global-attention transformer
// blocks over the flattened grid. Stage i emits an H/2^(i+1) grid.
class VisualBackbone {
public:
    VisualBackbone(ParamStore& ps, const BackboneConfig& config, Rng& rng);

    // image: {H, W, 3}, H and W multiples of 32.
    ad::Var stemAndStage1(const ad::Var& image) const;

    // fusedPrev: stage `stage` map (possibly carrying the gated fusion
    // residual); returns the stage+1 map. stage in {1, 2, 3}.
    ad::Var nextStage(const ad::Var& fusedPrev, int stage) const;

    const BackboneConfig& config() const { return config_; }

private:
    ad::Var runBlocks(const ad::Var& grid, int stageIdx) const;

    BackboneConfig config_;
    Linear patchEmbed_;                      // 3 -> C1
    std::array<Linear, 3> downProj_;         // C_i -> C_{i+1}
    std::vector<std::vector<TransformerBlock>> blocks_;  // per stage
};

}  // namespace refseg
