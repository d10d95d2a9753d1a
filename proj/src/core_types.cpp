#include "refseg/core_types.hpp"

#include <cmath>

#include "refseg/errors.hpp"

namespace refseg {

std::string labelName(Label label) {
    return label == Label::NoAnomaly ? "NO_ANOMALY" : "ANOMALOUS";
}

Label labelFromName(const std::string& name) {
    if (name == "NO_ANOMALY") return Label::NoAnomaly;
    if (name == "ANOMALOUS") return Label::Anomalous;
    throw DataError("unknown label: " + name);
}

std::vector<std::string> validateSample(const Sample& sample) {
    std::vector<std::string> violations;
    if (sample.image.rank() != 3 || sample.image.dim(2) != 3) {
        violations.push_back("image not H x W x 3");
        return violations;
    }
    const int h = sample.image.dim(0);
    const int w = sample.image.dim(1);
    if (h % 32 != 0) violations.push_back("H not multiple of 32");
    if (w % 32 != 0) violations.push_back("W not multiple of 32");
    if (!sample.image.allFinite() || sample.image.minValue() < 0.0 || sample.image.maxValue() > 1.0)
        violations.push_back("image values outside [0,1]");
    if (sample.gtMask.rank() != 2 || sample.gtMask.dim(0) != h || sample.gtMask.dim(1) != w) {
        violations.push_back("gtMask shape does not match image");
        return violations;
    }
    bool anyOn = false;
    for (int i = 0; i < sample.gtMask.size(); ++i) {
        double v = sample.gtMask[i];
        if (v != 0.0 && v != 1.0) {
            violations.push_back("gtMask not binary");
            break;
        }
        if (v == 1.0) anyOn = true;
    }
    const bool labelSaysAnomalous = sample.gtLabel == Label::Anomalous;
    if (labelSaysAnomalous != anyOn) violations.push_back("gtLabel/gtMask mismatch");
    return violations;
}

Tensor resampleMaskToGrid(const Tensor& mask, int targetH, int targetW) {
    if (mask.rank() != 2) throw ShapeError("resampleMaskToGrid: mask must be {H, W}");
    const int h = mask.dim(0);
    const int w = mask.dim(1);
    if (targetH < 1 || targetW < 1 || targetH > h || targetW > w)
        throw ShapeError("resampleMaskToGrid: target larger than source");
    if (h % targetH != 0 || w % targetW != 0)
        throw ShapeError("resampleMaskToGrid: target does not divide source evenly");
    const int by = h / targetH;
    const int bx = w / targetW;
    Tensor out({targetH, targetW});
    const double inv = 1.0 / (by * bx);
    for (int oy = 0; oy < targetH; ++oy)
        for (int ox = 0; ox < targetW; ++ox) {
            double s = 0.0;
            for (int dy = 0; dy < by; ++dy)
                for (int dx = 0; dx < bx; ++dx) s += mask.at(oy * by + dy, ox * bx + dx);
            out.at(oy, ox) = s * inv;
        }
    return out;
}

}  // namespace refseg
