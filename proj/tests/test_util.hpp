#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "refseg/autodiff.hpp"
#include "refseg/nn.hpp"
#include "refseg/tensor.hpp"

namespace refseg::testutil {

inline Tensor randomTensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

struct GradCheckResult {
    bool ok = true;
    double worstRel = 0.0;
    std::string worstParam;
    int worstIndex = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Central finite differences against reverse-mode gradients. `lossFn` must
// rebuild the graph from current parameter values on every call. Checks up to
// maxPerParam entries of each parameter (strided), step h, relative
// tolerance tol with a small absolute floor for near-zero gradients.
inline GradCheckResult gradCheck(ParamStore& params,
                                 const std::function<ad::Var()>& lossFn,
                                 double h = 1e-5, double tol = 1e-4,
                                 int maxPerParam = 6, double absFloor = 1e-8) {
    GradCheckResult result;
    params.zeroGrads();
    ad::Var loss = lossFn();
    ad::backward(loss);

    for (auto& [name, var] : params.items()) {
        const Tensor& g = var.node()->grad;
        if (g.empty()) continue;
        const int n = var.value().size();
        const int stride = std::max(1, n / maxPerParam);
        for (int i = 0; i < n; i += stride) {
            Tensor v = var.value();
            const double orig = v[i];
            v[i] = orig + h;
            var.setValue(v);
            const double fPlus = lossFn().value()[0];
            v[i] = orig - h;
            var.setValue(v);
            const double fMinus = lossFn().value()[0];
            v[i] = orig;
            var.setValue(v);

            const double numeric = (fPlus - fMinus) / (2.0 * h);
            const double analytic = g[i];
            const double denom = std::max({std::fabs(numeric), std::fabs(analytic), 1.0e-3});
            const double rel = std::fabs(numeric - analytic) / denom;
            if (std::fabs(numeric - analytic) > absFloor && rel > result.worstRel) {
                result.worstRel = rel;
                result.worstParam = name;
                result.worstIndex = i;
                result.analytic = analytic;
                result.numeric = numeric;
            }
            if (std::fabs(numeric - analytic) > absFloor && rel > tol) result.ok = false;
        }
    }
    return result;
}

}  // namespace refseg::testutil
