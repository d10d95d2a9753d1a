#include "refseg/metrics.hpp"

#include <cstdio>

#include <json.hpp>

#include "refseg/errors.hpp"

namespace refseg {

using nlohmann::json;

SampleEval sampleIoU(const Tensor& pred, const Tensor& gt, const std::string& id) {
    if (!pred.sameShape(gt)) throw ShapeError("sampleIoU: mask shapes differ");
    SampleEval e;
    e.id = id;
    bool gtAny = false;
    bool predAny = false;
    for (int i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0.0;
        const bool g = gt[i] != 0.0;
        gtAny |= g;
        predAny |= p;
        if (p && g) ++e.intersection;
        if (p || g) ++e.unionCount;
    }
    e.gtIsNoAnomaly = !gtAny;
    e.predIsEmpty = !predAny;
    e.iou = e.unionCount > 0 ? static_cast<double>(e.intersection) / static_cast<double>(e.unionCount) : 1.0;
    return e;
}

double computeGIoU(const std::vector<SampleEval>& evals) {
    if (evals.empty()) throw DataError("computeGIoU: empty eval list");
    double total = 0.0;
    for (const auto& e : evals) {
        if (e.gtIsNoAnomaly)
            total += e.predIsEmpty ? 1.0 : 0.0;
        else
            total += e.iou;
    }
    return total / static_cast<double>(evals.size());
}

double computeOIoU(const std::vector<SampleEval>& evals) {
    long long inter = 0, uni = 0;
    for (const auto& e : evals) {
        inter += e.intersection;
        uni += e.unionCount;
    }
    if (uni == 0) {
        std::fprintf(stderr, "[refseg] warning: oIoU pool empty on both sides, reporting 1\n");
        return 1.0;
    }
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::map<int, double> precisionAtThresholds(const std::vector<SampleEval>& evals,
                                            const std::vector<int>& thresholdPercents) {
    long long anomalous = 0;
    for (const auto& e : evals)
        if (!e.gtIsNoAnomaly) ++anomalous;
    if (anomalous == 0) throw DataError("precisionAtThresholds: no anomalous-GT samples");
    std::map<int, double> out;
    for (int t : thresholdPercents) {
        const double threshold = t / 100.0;
        long long hits = 0;
        for (const auto& e : evals)
            if (!e.gtIsNoAnomaly && e.iou > threshold) ++hits;
        out[t] = static_cast<double>(hits) / static_cast<double>(anomalous);
    }
    return out;
}

NoTargetAccuracy nAccTAcc(const std::vector<SampleEval>& evals) {
    NoTargetAccuracy r;
    for (const auto& e : evals) {
        if (e.gtIsNoAnomaly) {
            if (e.predIsEmpty)
                ++r.counts.tp;
            else
                ++r.counts.fn;
        } else {
            if (e.predIsEmpty)
                ++r.counts.fp;
            else
                ++r.counts.tn;
        }
    }
    if (r.counts.tp + r.counts.fn > 0)
        r.nAcc = static_cast<double>(r.counts.tp) / static_cast<double>(r.counts.tp + r.counts.fn);
    if (r.counts.tn + r.counts.fp > 0)
        r.tAcc = static_cast<double>(r.counts.tn) / static_cast<double>(r.counts.tn + r.counts.fp);
    return r;
}

EvalReport buildReport(const std::vector<SampleEval>& evals) {
    EvalReport report;
    report.perSample = evals;
    report.giou = computeGIoU(evals);
    report.oiou = computeOIoU(evals);
    auto acc = nAccTAcc(evals);
    report.nAcc = acc.nAcc;
    report.tAcc = acc.tAcc;
    report.counts = acc.counts;

    long long anomalous = 0;
    double iouSum = 0.0;
    for (const auto& e : evals)
        if (!e.gtIsNoAnomaly) {
            ++anomalous;
            iouSum += e.iou;
        }
    if (anomalous > 0) {
        report.miouAnomalous = iouSum / static_cast<double>(anomalous);
        report.prAt = precisionAtThresholds(evals);
    }
    return report;
}

std::string reportToJson(const EvalReport& report) {
    json j;
    j["giou"] = report.giou;
    j["oiou"] = report.oiou;
    j["miou"] = report.miouAnomalous.has_value() ? json(*report.miouAnomalous) : json(nullptr);
    for (int t : {50, 60, 70, 80, 90}) {
        const std::string key = "pr" + std::to_string(t);
        auto it = report.prAt.find(t);
        j[key] = it != report.prAt.end() ? json(it->second) : json(nullptr);
    }
    j["n_acc"] = report.nAcc.has_value() ? json(*report.nAcc) : json(nullptr);
    j["t_acc"] = report.tAcc.has_value() ? json(*report.tAcc) : json(nullptr);
    j["counts"] = {{"tp", report.counts.tp}, {"fn", report.counts.fn}, {"tn", report.counts.tn}, {"fp", report.counts.fp}};
    json per = json::array();
    for (const auto& e : report.perSample) {
        per.push_back({{"id", e.id},
                       {"intersection", e.intersection},
                       {"union", e.unionCount},
                       {"iou", e.iou},
                       {"gt_no_anomaly", e.gtIsNoAnomaly},
                       {"pred_empty", e.predIsEmpty}});
    }
    j["per_sample"] = std::move(per);
    return j.dump(2);
}

EvalReport reportFromJson(const std::string& text) {
    json j = json::parse(text);
    EvalReport r;
    r.giou = j.at("giou").get<double>();
    r.oiou = j.at("oiou").get<double>();
    if (!j.at("miou").is_null()) r.miouAnomalous = j["miou"].get<double>();
    for (int t : {50, 60, 70, 80, 90}) {
        const std::string key = "pr" + std::to_string(t);
        if (j.contains(key) && !j[key].is_null()) r.prAt[t] = j[key].get<double>();
    }
    if (!j.at("n_acc").is_null()) r.nAcc = j["n_acc"].get<double>();
    if (!j.at("t_acc").is_null()) r.tAcc = j["t_acc"].get<double>();
    r.counts.tp = j.at("counts").at("tp").get<long long>();
    r.counts.fn = j.at("counts").at("fn").get<long long>();
    r.counts.tn = j.at("counts").at("tn").get<long long>();
    r.counts.fp = j.at("counts").at("fp").get<long long>();
    for (const auto& e : j.at("per_sample")) {
        SampleEval s;
        s.id = e.at("id").get<std::string>();
        s.intersection = e.at("intersection").get<long long>();
        s.unionCount = e.at("union").get<long long>();
        s.iou = e.at("iou").get<double>();
        s.gtIsNoAnomaly = e.at("gt_no_anomaly").get<bool>();
        s.predIsEmpty = e.at("pred_empty").get<bool>();
        r.perSample.push_back(std::move(s));
    }
    return r;
}

}  // namespace refseg
