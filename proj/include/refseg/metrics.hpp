#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "refseg/core_types.hpp"

namespace refseg {

struct SampleEval {
    std::string id;
    long long intersection = 0;
    long long unionCount = 0;
    double iou = 0.0;  // intersection/union; 1 when both masks are empty
    bool gtIsNoAnomaly = false;
    bool predIsEmpty = false;
};

// Pixel counts for one prediction/ground-truth pair of binary masks.
SampleEval sampleIoU(const Tensor& pred, const Tensor& gt, const std::string& id = "");

// Mean per-sample IoU with no-target crediting: a no-anomaly sample counts 1
// when the prediction is empty and 0 otherwise; anomalous samples use their
// plain IoU.
double computeGIoU(const std::vector<SampleEval>& evals);

// Pooled intersection over pooled union across every sample. An all-empty
// pool is defined as 1 (with a warning on stderr).
double computeOIoU(const std::vector<SampleEval>& evals);

// Fraction of anomalous-GT samples with IoU strictly above each threshold.
std::map<int, double> precisionAtThresholds(const std::vector<SampleEval>& evals,
                                            const std::vector<int>& thresholdPercents = {50, 60, 70, 80, 90});

struct ConfusionCounts {
    long long tp = 0;  // no-anomaly GT, empty prediction
    long long fn = 0;  // no-anomaly GT, non-empty prediction
    long long tn = 0;  // anomalous GT, non-empty prediction
    long long fp = 0;  // anomalous GT, empty prediction
};

struct NoTargetAccuracy {
    std::optional<double> nAcc;
    std::optional<double> tAcc;
    ConfusionCounts counts;
};

NoTargetAccuracy nAccTAcc(const std::vector<SampleEval>& evals);

struct EvalReport {
    double giou = 0.0;
    double oiou = 0.0;
    std::optional<double> miouAnomalous;  // mean IoU over anomalous-GT samples
    std::map<int, double> prAt;           // percent threshold -> precision; empty if no anomalous GT
    std::optional<double> nAcc;
    std::optional<double> tAcc;
    ConfusionCounts counts;
    std::vector<SampleEval> perSample;
};

EvalReport buildReport(const std::vector<SampleEval>& evals);

// Fixed-key JSON document; absent metrics are serialized as null.
std::string reportToJson(const EvalReport& report);
EvalReport reportFromJson(const std::string& text);

}  // namespace refseg
