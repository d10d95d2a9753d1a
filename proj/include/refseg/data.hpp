#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "refseg/core_types.hpp"
#include "refseg/nn.hpp"

namespace refseg {

enum class AnomalyType { Spot, Scratch, Hole, Crack };
enum class AnomalyColor { Red, Green, Blue, White, Black };

std::string anomalyTypeName(AnomalyType t);
std::string anomalyColorName(AnomalyColor c);
std::array<double, 3> anomalyColorRgb(AnomalyColor c);

// The nine equal-thirds regions of the image, row-major top-left to
// bottom-right.
extern const std::array<std::string, 9> kRegionNames;
int regionIndexOf(double y, double x, int imageSize);

struct GeneratorConfig {
    int imageSize = 64;
    int numSamples = 0;
    std::vector<AnomalyType> anomalyTypes{AnomalyType::Spot, AnomalyType::Scratch, AnomalyType::Hole,
                                          AnomalyType::Crack};
    std::vector<AnomalyColor> colors{AnomalyColor::Red, AnomalyColor::Green, AnomalyColor::Blue,
                                     AnomalyColor::White, AnomalyColor::Black};
    double noAnomalyFraction = 0.25;
    double universalPromptFraction = 0.15;
    uint64_t seed = 0;

    void validate() const;
};

// Geometry of one injected defect; the raster is a pure function of this.
struct AnomalyShape {
    AnomalyType type = AnomalyType::Spot;
    AnomalyColor color = AnomalyColor::Red;
    std::vector<std::array<double, 2>> points;  // (y, x): center, or polyline vertices
    double radius = 0.0;     // disk radius or stroke half-thickness
    int regionIndex = 0;     // of the raster centroid
};

Tensor rasterizeAnomaly(const AnomalyShape& shape, int imageSize);

enum class ExpressionKind { ColorType, Spatial, Universal, AbsentReferent };

// Everything needed to reproduce one sample exactly.
struct SampleRecipe {
    std::string id;
    std::vector<AnomalyShape> anomalies;
    ExpressionKind kind = ExpressionKind::ColorType;
    std::string expression;
    std::vector<int> referentIndices;  // anomalies the expression refers to
    Label label = Label::Anomalous;
};

struct ManifestEntry {
    std::string id;
    std::string imagePath;
    std::string maskPath;
    std::string expression;
    Label label = Label::NoAnomaly;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::string split;
};

SampleRecipe makeSampleRecipe(const GeneratorConfig& config, int index, ExpressionKind kind);
Sample renderSample(const GeneratorConfig& config, const SampleRecipe& recipe);

// Writes root/{split}/images/{id}.png, root/{split}/masks/{id}.png and
// root/{split}/manifest.jsonl. Deterministic: one seed, one byte tree.
DatasetManifest generateDataset(const GeneratorConfig& config, const std::string& rootDir,
                                const std::string& split);

DatasetManifest readManifest(const std::string& rootDir, const std::string& split);
std::vector<Sample> loadDataset(const std::string& rootDir, const std::string& split);

void writePrediction(const std::string& id, const Tensor& binaryMask, const std::string& outDir);
Tensor loadPrediction(const std::string& id, const std::string& dir);

// Image with predicted pixels blended half red and the ground-truth contour
// drawn in green.
void renderOverlay(const Sample& sample, const Tensor& binaryMask, const std::string& outPath);

}  // namespace refseg
