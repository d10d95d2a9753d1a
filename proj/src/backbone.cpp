#include "refseg/backbone.hpp"

#include "refseg/errors.hpp"

namespace refseg {

void BackboneConfig::validate() const {
    for (int i = 0; i < 4; ++i) {
        if (stageChannels[static_cast<size_t>(i)] <= 0) throw ConfigError("stage channels must be positive");
        if (i > 0 && stageChannels[static_cast<size_t>(i)] <= stageChannels[static_cast<size_t>(i - 1)])
            throw ConfigError("stage channels must be strictly increasing");
        if (blocksPerStage[static_cast<size_t>(i)] < 1) throw ConfigError("blocks per stage must be >= 1");
    }
    if (attentionHeads < 1) throw ConfigError("attention heads must be >= 1");
}

VisualBackbone::VisualBackbone(ParamStore& ps, const BackboneConfig& config, Rng& rng)
    : config_(config) {
    config_.validate();
    patchEmbed_ = makeLinear(ps, "backbone.patch_embed", 3, config.stageChannels[0], rng);
    blocks_.resize(4);
    for (int s = 0; s < 4; ++s) {
        const int width = config.stageChannels[static_cast<size_t>(s)];
        for (int b = 0; b < config.blocksPerStage[static_cast<size_t>(s)]; ++b)
            blocks_[static_cast<size_t>(s)].push_back(
                makeTransformerBlock(ps, "backbone.stage" + std::to_string(s + 1) + ".block" + std::to_string(b),
                                     width, config.attentionHeads, 2 * width, rng));
    }
    for (int s = 0; s < 3; ++s)
        downProj_[static_cast<size_t>(s)] =
            makeLinear(ps, "backbone.down" + std::to_string(s + 1) + std::to_string(s + 2),
                       config.stageChannels[static_cast<size_t>(s)], config.stageChannels[static_cast<size_t>(s + 1)], rng);
}

ad::Var VisualBackbone::runBlocks(const ad::Var& grid, int stageIdx) const {
    const int h = grid.value().dim(0);
    const int w = grid.value().dim(1);
    const int c = grid.value().dim(2);
    ad::Var x = ad::reshape(grid, {h * w, c});
    for (const auto& block : blocks_[static_cast<size_t>(stageIdx)]) x = block(x);
    return ad::reshape(x, {h, w, c});
}

ad::Var VisualBackbone::stemAndStage1(const ad::Var& image) const {
    const Tensor& img = image.value();
    if (img.rank() != 3 || img.dim(2) != 3) throw ShapeError("stemAndStage1: image must be {H, W, 3}");
    if (img.dim(0) % 32 != 0 || img.dim(1) % 32 != 0)
        throw ShapeError("stemAndStage1: image dims must be multiples of 32");
    ad::Var patches = ad::avgPoolPatch(image, BackboneConfig::patchStride);
    ad::Var embedded = patchEmbed_(patches);
    const int h = embedded.value().dim(0);
    const int w = embedded.value().dim(1);
    embedded = ad::add(embedded, ad::constant(sinusoidalPositions2d(h, w, config_.stageChannels[0])));
    return runBlocks(embedded, 0);
}

ad::Var VisualBackbone::nextStage(const ad::Var& fusedPrev, int stage) const {
    if (stage < 1 || stage > 3) throw ShapeError("nextStage: stage must be in {1, 2, 3}");
    const Tensor& in = fusedPrev.value();
    if (in.rank() != 3 || in.dim(2) != config_.stageChannels[static_cast<size_t>(stage - 1)])
        throw ShapeError("nextStage: input channels do not match stage " + std::to_string(stage));
    ad::Var pooled = ad::avgPoolPatch(fusedPrev, 2);
    ad::Var expanded = downProj_[static_cast<size_t>(stage - 1)](pooled);
    return runBlocks(expanded, stage);
}

}  // namespace refseg
