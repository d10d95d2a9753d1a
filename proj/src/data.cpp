#include "refseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "refseg/errors.hpp"
#include "refseg/png_io.hpp"

namespace refseg {

namespace fs = std::filesystem;
using nlohmann::json;

const std::array<std::string, 9> kRegionNames = {"top left", "top",    "top right", "left",  "center",
                                                 "right",    "bottom left", "bottom", "bottom right"};

std::string anomalyTypeName(AnomalyType t) {
    switch (t) {
        case AnomalyType::Spot: return "spot";
        case AnomalyType::Scratch: return "scratch";
        case AnomalyType::Hole: return "hole";
        case AnomalyType::Crack: return "crack";
    }
    throw ConfigError("unknown anomaly type");
}

std::string anomalyColorName(AnomalyColor c) {
    switch (c) {
        case AnomalyColor::Red: return "red";
        case AnomalyColor::Green: return "green";
        case AnomalyColor::Blue: return "blue";
        case AnomalyColor::White: return "white";
        case AnomalyColor::Black: return "black";
    }
    throw ConfigError("unknown anomaly color");
}

std::array<double, 3> anomalyColorRgb(AnomalyColor c) {
    switch (c) {
        case AnomalyColor::Red: return {0.85, 0.10, 0.10};
        case AnomalyColor::Green: return {0.10, 0.75, 0.15};
        case AnomalyColor::Blue: return {0.12, 0.25, 0.85};
        case AnomalyColor::White: return {0.97, 0.97, 0.97};
        case AnomalyColor::Black: return {0.04, 0.04, 0.04};
    }
    throw ConfigError("unknown anomaly color");
}

int regionIndexOf(double y, double x, int imageSize) {
    int row = std::min(2, static_cast<int>(y * 3.0 / imageSize));
    int col = std::min(2, static_cast<int>(x * 3.0 / imageSize));
    return row * 3 + col;
}

void GeneratorConfig::validate() const {
    if (imageSize < 32 || imageSize % 32 != 0) throw ConfigError("imageSize must be a positive multiple of 32");
    if (numSamples < 1) throw ConfigError("numSamples must be >= 1");
    if (anomalyTypes.empty()) throw ConfigError("anomalyTypes must be non-empty");
    if (colors.empty()) throw ConfigError("colors must be non-empty");
    if (noAnomalyFraction < 0 || noAnomalyFraction > 1 || universalPromptFraction < 0 ||
        universalPromptFraction > 1 || noAnomalyFraction + universalPromptFraction > 1)
        throw ConfigError("special-sample fractions must lie in [0,1] and sum to at most 1");
}

namespace {

double pointSegmentDistance(double py, double px, const std::array<double, 2>& a,
                            const std::array<double, 2>& b) {
    const double vy = b[0] - a[0], vx = b[1] - a[1];
    const double wy = py - a[0], wx = px - a[1];
    const double vv = vy * vy + vx * vx;
    double t = vv > 0 ? (wy * vy + wx * vx) / vv : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dy = py - (a[0] + t * vy), dx = px - (a[1] + t * vx);
    return std::sqrt(dy * dy + dx * dx);
}

}  // namespace

Tensor rasterizeAnomaly(const AnomalyShape& shape, int imageSize) {
    Tensor mask({imageSize, imageSize});
    auto inside = [&](double y, double x) -> bool {
        switch (shape.type) {
            case AnomalyType::Spot:
            case AnomalyType::Hole: {
                const double dy = y - shape.points[0][0];
                const double dx = x - shape.points[0][1];
                return dy * dy + dx * dx <= shape.radius * shape.radius;
            }
            case AnomalyType::Scratch:
            case AnomalyType::Crack: {
                for (size_t i = 0; i + 1 < shape.points.size(); ++i)
                    if (pointSegmentDistance(y, x, shape.points[i], shape.points[i + 1]) <= shape.radius)
                        return true;
                return false;
            }
        }
        return false;
    };
    for (int y = 0; y < imageSize; ++y)
        for (int x = 0; x < imageSize; ++x)
            if (inside(y, x)) mask.at(y, x) = 1.0;
    return mask;
}

namespace {

struct Centroid {
    double y = 0.0, x = 0.0;
    int count = 0;
};

Centroid maskCentroid(const Tensor& mask) {
    Centroid c;
    for (int y = 0; y < mask.dim(0); ++y)
        for (int x = 0; x < mask.dim(1); ++x)
            if (mask.at(y, x) != 0.0) {
                c.y += y;
                c.x += x;
                ++c.count;
            }
    if (c.count > 0) {
        c.y /= c.count;
        c.x /= c.count;
    }
    return c;
}

AnomalyShape drawShape(const GeneratorConfig& config, Rng& rng) {
    const int s = config.imageSize;
    const double margin = s / 8.0;
    const double lo = margin + 4.0, hi = s - margin - 4.0;
    AnomalyShape shape;
    shape.type = config.anomalyTypes[static_cast<size_t>(rng.uniformInt(static_cast<int>(config.anomalyTypes.size())))];
    shape.color = config.colors[static_cast<size_t>(rng.uniformInt(static_cast<int>(config.colors.size())))];
    const double cy = rng.uniform(lo, hi);
    const double cx = rng.uniform(lo, hi);
    switch (shape.type) {
        case AnomalyType::Spot:
            shape.points = {{cy, cx}};
            shape.radius = rng.uniform(2.0, 4.5) * s / 64.0;
            break;
        case AnomalyType::Hole:
            shape.points = {{cy, cx}};
            shape.radius = rng.uniform(2.5, 5.0) * s / 64.0;
            break;
        case AnomalyType::Scratch: {
            const double angle = rng.uniform(0.0, 2.0 * M_PI);
            const double len = rng.uniform(8.0, 16.0) * s / 64.0;
            double ey = std::clamp(cy + len * std::sin(angle), lo, hi);
            double ex = std::clamp(cx + len * std::cos(angle), lo, hi);
            shape.points = {{cy, cx}, {ey, ex}};
            shape.radius = rng.uniform(1.0, 1.6) * s / 64.0;
            break;
        }
        case AnomalyType::Crack: {
            double angle = rng.uniform(0.0, 2.0 * M_PI);
            double y = cy, x = cx;
            shape.points = {{y, x}};
            const int segments = 3 + rng.uniformInt(2);
            for (int i = 0; i < segments; ++i) {
                angle += rng.uniform(-1.0, 1.0);
                const double len = rng.uniform(4.0, 7.0) * s / 64.0;
                y = std::clamp(y + len * std::sin(angle), lo, hi);
                x = std::clamp(x + len * std::cos(angle), lo, hi);
                shape.points.push_back({y, x});
            }
            shape.radius = 0.9 * s / 64.0;
            break;
        }
    }
    return shape;
}

}  // namespace

SampleRecipe makeSampleRecipe(const GeneratorConfig& config, int index, ExpressionKind kind) {
    Rng rng(config.seed + 1 + static_cast<uint64_t>(index));
    SampleRecipe recipe;
    recipe.kind = kind;
    {
        std::ostringstream id;
        id << "sample_" << std::setw(4) << std::setfill('0') << index;
        recipe.id = id.str();
    }

    const int wanted = 1 + rng.uniformInt(3);
    for (int i = 0; i < wanted; ++i) {
        AnomalyShape candidate;
        bool placed = false;
        for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
            candidate = drawShape(config, rng);
            Tensor raster = rasterizeAnomaly(candidate, config.imageSize);
            Centroid c = maskCentroid(raster);
            if (c.count == 0) continue;
            candidate.regionIndex = regionIndexOf(c.y, c.x, config.imageSize);
            // Same type and color twice in one region would make the
            // expressions ambiguous; force distinct regions.
            placed = true;
            for (const auto& existing : recipe.anomalies)
                if (existing.type == candidate.type && existing.color == candidate.color &&
                    existing.regionIndex == candidate.regionIndex)
                    placed = false;
        }
        if (placed) recipe.anomalies.push_back(candidate);
    }

    switch (kind) {
        case ExpressionKind::Universal: {
            recipe.expression = "the anomaly";
            for (size_t i = 0; i < recipe.anomalies.size(); ++i)
                recipe.referentIndices.push_back(static_cast<int>(i));
            recipe.label = Label::Anomalous;
            break;
        }
        case ExpressionKind::ColorType: {
            const int pick = rng.uniformInt(static_cast<int>(recipe.anomalies.size()));
            const auto& target = recipe.anomalies[static_cast<size_t>(pick)];
            recipe.expression =
                "the " + anomalyColorName(target.color) + " " + anomalyTypeName(target.type);
            for (size_t i = 0; i < recipe.anomalies.size(); ++i)
                if (recipe.anomalies[i].type == target.type && recipe.anomalies[i].color == target.color)
                    recipe.referentIndices.push_back(static_cast<int>(i));
            recipe.label = Label::Anomalous;
            break;
        }
        case ExpressionKind::Spatial: {
            const int pick = rng.uniformInt(static_cast<int>(recipe.anomalies.size()));
            const auto& target = recipe.anomalies[static_cast<size_t>(pick)];
            recipe.expression = "the " + anomalyTypeName(target.type) + " on the " +
                                kRegionNames[static_cast<size_t>(target.regionIndex)] + " of the object";
            for (size_t i = 0; i < recipe.anomalies.size(); ++i)
                if (recipe.anomalies[i].type == target.type &&
                    recipe.anomalies[i].regionIndex == target.regionIndex)
                    recipe.referentIndices.push_back(static_cast<int>(i));
            recipe.label = Label::Anomalous;
            break;
        }
        case ExpressionKind::AbsentReferent: {
            std::vector<std::pair<AnomalyColor, AnomalyType>> absent;
            for (AnomalyColor c : config.colors)
                for (AnomalyType t : config.anomalyTypes) {
                    bool present = false;
                    for (const auto& a : recipe.anomalies)
                        if (a.type == t && a.color == c) present = true;
                    if (!present) absent.emplace_back(c, t);
                }
            if (absent.empty()) {
                // Every combination is in the image; fall back to a clean image.
                recipe.anomalies.clear();
                absent.emplace_back(config.colors[0], config.anomalyTypes[0]);
            }
            const auto& [c, t] = absent[static_cast<size_t>(rng.uniformInt(static_cast<int>(absent.size())))];
            recipe.expression = "the " + anomalyColorName(c) + " " + anomalyTypeName(t);
            recipe.label = Label::NoAnomaly;
            break;
        }
    }
    return recipe;
}

Sample renderSample(const GeneratorConfig& config, const SampleRecipe& recipe) {
    const int s = config.imageSize;
    Rng rng(config.seed ^ 0x5eedf00dULL ^ std::hash<std::string>{}(recipe.id));
    Sample sample;
    sample.id = recipe.id;
    sample.expression = recipe.expression;
    sample.gtLabel = recipe.label;

    // Textured background with a brighter central object plate.
    sample.image = Tensor({s, s, 3});
    const double fy = rng.uniform(1.0, 3.0), fx = rng.uniform(1.0, 3.0);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    const double margin = s / 8.0;
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            double v = 0.40 + 0.06 * std::sin(2.0 * M_PI * (fy * y + fx * x) / s + phase);
            v += rng.uniform(-0.02, 0.02);
            const bool object = y >= margin && y < s - margin && x >= margin && x < s - margin;
            if (object) v += 0.22;
            for (int ch = 0; ch < 3; ++ch) sample.image.at3(y, x, ch) = std::clamp(v, 0.0, 1.0);
        }

    sample.gtMask = Tensor({s, s});
    for (size_t i = 0; i < recipe.anomalies.size(); ++i) {
        const auto& shape = recipe.anomalies[i];
        Tensor raster = rasterizeAnomaly(shape, s);
        auto rgb = anomalyColorRgb(shape.color);
        const double dim = shape.type == AnomalyType::Hole ? 0.35 : 1.0;
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x)
                if (raster.at(y, x) != 0.0)
                    for (int ch = 0; ch < 3; ++ch)
                        sample.image.at3(y, x, ch) = std::clamp(
                            0.15 * sample.image.at3(y, x, ch) + 0.85 * rgb[static_cast<size_t>(ch)] * dim, 0.0, 1.0);
        if (std::find(recipe.referentIndices.begin(), recipe.referentIndices.end(), static_cast<int>(i)) !=
            recipe.referentIndices.end())
            for (int p = 0; p < raster.size(); ++p)
                if (raster[p] != 0.0) sample.gtMask[p] = 1.0;
    }
    return sample;
}

DatasetManifest generateDataset(const GeneratorConfig& config, const std::string& rootDir,
                                const std::string& split) {
    config.validate();
    const fs::path base = fs::path(rootDir) / split;
    fs::create_directories(base / "images");
    fs::create_directories(base / "masks");

    // Deterministic category quotas, shuffled into the index order.
    const int n = config.numSamples;
    const int numNo = static_cast<int>(std::llround(config.noAnomalyFraction * n));
    const int numUni = static_cast<int>(std::llround(config.universalPromptFraction * n));
    std::vector<ExpressionKind> kinds;
    kinds.reserve(static_cast<size_t>(n));
    for (int i = 0; i < numNo; ++i) kinds.push_back(ExpressionKind::AbsentReferent);
    for (int i = 0; i < numUni; ++i) kinds.push_back(ExpressionKind::Universal);
    for (int i = numNo + numUni; i < n; ++i)
        kinds.push_back(i % 2 == 0 ? ExpressionKind::ColorType : ExpressionKind::Spatial);
    Rng shuffleRng(config.seed);
    for (int i = n - 1; i > 0; --i)
        std::swap(kinds[static_cast<size_t>(i)], kinds[static_cast<size_t>(shuffleRng.uniformInt(i + 1))]);

    DatasetManifest manifest;
    manifest.split = split;
    std::ofstream manifestFile(base / "manifest.jsonl");
    if (!manifestFile) throw DataError("cannot write manifest under " + base.string());
    for (int i = 0; i < n; ++i) {
        SampleRecipe recipe = makeSampleRecipe(config, i, kinds[static_cast<size_t>(i)]);
        Sample sample = renderSample(config, recipe);
        auto violations = validateSample(sample);
        if (!violations.empty())
            throw DataError("generated sample " + sample.id + " violates invariants: " + violations[0]);

        ManifestEntry entry;
        entry.id = sample.id;
        entry.imagePath = (base / "images" / (sample.id + ".png")).string();
        entry.maskPath = (base / "masks" / (sample.id + ".png")).string();
        entry.expression = sample.expression;
        entry.label = sample.gtLabel;
        writeRgbPng(entry.imagePath, rgbFromImage(sample.image));
        writeGrayPng(entry.maskPath, grayFromMask(sample.gtMask));
        json line = {{"id", entry.id}, {"expression", entry.expression}, {"label", labelName(entry.label)}};
        manifestFile << line.dump() << "\n";
        manifest.entries.push_back(std::move(entry));
    }
    return manifest;
}

DatasetManifest readManifest(const std::string& rootDir, const std::string& split) {
    const fs::path base = fs::path(rootDir) / split;
    const fs::path manifestPath = base / "manifest.jsonl";
    std::ifstream in(manifestPath);
    if (!in) throw DataError("missing manifest " + manifestPath.string());
    DatasetManifest manifest;
    manifest.split = split;
    std::string line;
    int lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("bad manifest line " + std::to_string(lineNo) + ": " + e.what());
        }
        ManifestEntry entry;
        entry.id = j.at("id").get<std::string>();
        entry.expression = j.at("expression").get<std::string>();
        entry.label = labelFromName(j.at("label").get<std::string>());
        entry.imagePath = (base / "images" / (entry.id + ".png")).string();
        entry.maskPath = (base / "masks" / (entry.id + ".png")).string();
        manifest.entries.push_back(std::move(entry));
    }
    return manifest;
}

std::vector<Sample> loadDataset(const std::string& rootDir, const std::string& split) {
    DatasetManifest manifest = readManifest(rootDir, split);
    std::vector<Sample> samples;
    samples.reserve(manifest.entries.size());
    for (const auto& entry : manifest.entries) {
        if (!fs::exists(entry.imagePath)) throw DataError("missing image file " + entry.imagePath);
        if (!fs::exists(entry.maskPath)) throw DataError("missing mask file " + entry.maskPath);
        Sample s;
        s.id = entry.id;
        s.expression = entry.expression;
        s.gtLabel = entry.label;
        s.image = imageFromRgb(readRgbPng(entry.imagePath));
        try {
            s.gtMask = maskFromGray(readGrayPng(entry.maskPath));
        } catch (const DataError& e) {
            throw DataError(std::string(e.what()) + " in " + entry.maskPath);
        }
        auto violations = validateSample(s);
        if (!violations.empty()) {
            std::string msg = "sample " + s.id + " invalid:";
            for (const auto& v : violations) msg += " [" + v + "]";
            throw DataError(msg);
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

void writePrediction(const std::string& id, const Tensor& binaryMask, const std::string& outDir) {
    fs::create_directories(outDir);
    writeGrayPng((fs::path(outDir) / (id + ".png")).string(), grayFromMask(binaryMask));
}

Tensor loadPrediction(const std::string& id, const std::string& dir) {
    return maskFromGray(readGrayPng((fs::path(dir) / (id + ".png")).string()));
}

void renderOverlay(const Sample& sample, const Tensor& binaryMask, const std::string& outPath) {
    if (!binaryMask.sameShape(sample.gtMask)) throw ShapeError("renderOverlay: mask shape mismatch");
    Tensor canvas = sample.image;
    const int h = canvas.dim(0), w = canvas.dim(1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (binaryMask.at(y, x) != 0.0) {
                canvas.at3(y, x, 0) = 0.5 * canvas.at3(y, x, 0) + 0.5;
                canvas.at3(y, x, 1) = 0.5 * canvas.at3(y, x, 1);
                canvas.at3(y, x, 2) = 0.5 * canvas.at3(y, x, 2);
            }
    // Ground-truth contour: mask pixels with at least one off 4-neighbour.
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (sample.gtMask.at(y, x) == 0.0) continue;
            const bool edge = y == 0 || y == h - 1 || x == 0 || x == w - 1 ||
                              sample.gtMask.at(y - 1, x) == 0.0 || sample.gtMask.at(y + 1, x) == 0.0 ||
                              sample.gtMask.at(y, x - 1) == 0.0 || sample.gtMask.at(y, x + 1) == 0.0;
            if (edge) {
                canvas.at3(y, x, 0) = 0.0;
                canvas.at3(y, x, 1) = 1.0;
                canvas.at3(y, x, 2) = 0.0;
            }
        }
    const fs::path p(outPath);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    writeRgbPng(outPath, rgbFromImage(canvas));
}

}  // namespace refseg
