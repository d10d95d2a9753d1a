#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "refseg/tensor.hpp"

namespace refseg::ad {

// Define-by-run reverse-mode automatic differentiation over Tensor values.
// Every operation allocates a graph node; backward(root) runs the tape in
// reverse topological order and accumulates gradients into every node with
// requiresGrad set (parameters are persistent leaves, so their gradients
// accumulate across calls until zeroGrad).

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first use, same shape as value
    bool requiresGrad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backprop;  // pushes node.grad into inputs' grads

    Tensor& ensureGrad();
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor v, bool requiresGrad = false);

    bool defined() const { return static_cast<bool>(n_); }
    const Tensor& value() const { return n_->value; }
    Tensor& grad() const { return n_->ensureGrad(); }
    bool requiresGrad() const { return n_ && n_->requiresGrad; }
    const std::shared_ptr<Node>& node() const { return n_; }

    // In-place value replacement for persistent leaves (optimizer updates).
    void setValue(Tensor v);
    void zeroGrad();

    static Var fromNode(std::shared_ptr<Node> n);

private:
    std::shared_ptr<Node> n_;
};

// Runs reverse accumulation from a scalar root (size-1 tensor).
void backward(const Var& root);

Var constant(Tensor v);

// Elementwise; b of size 1 broadcasts in add/sub/mul/divide.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var divide(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var addScalar(const Var& a, double s);

Var relu(const Var& a);
Var tanhOp(const Var& a);
Var sigmoid(const Var& a);
Var expOp(const Var& a);
Var logOp(const Var& a);
Var powScalar(const Var& a, double p);   // requires positive base when p is non-integral
Var clamp(const Var& a, double lo, double hi);  // zero gradient where clamped

Var sum(const Var& a);
Var mean(const Var& a);
Var logSumExp(const Var& a);  // over all entries, numerically stable

Var matmul(const Var& a, const Var& b);
Var transpose2d(const Var& a);
Var reshape(const Var& a, std::vector<int> shape);
Var sliceRows(const Var& a, int r0, int r1);   // matrix-view rows [r0, r1)
Var sliceCols(const Var& a, int c0, int c1);   // matrix-view cols [c0, c1)
Var concatRows(const std::vector<Var>& parts);
Var concatCols(const std::vector<Var>& parts);
Var addRowBroadcast(const Var& m, const Var& row);  // adds row vector to each matrix-view row
Var mulRowBroadcast(const Var& m, const Var& row);  // scales each matrix-view row elementwise

// Per matrix-view row softmax; addMask (same shape) is added to the logits
// first. Entries of -inf in the mask drop keys; every row must keep at least
// one finite entry.
Var rowSoftmax(const Var& a, const Tensor* addMask = nullptr);

Var layerNormRows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var rowL2Normalize(const Var& x);  // errors on zero-norm rows

Var embedRows(const Var& table, const std::vector<int>& ids);

// Spatial ops on {h, w, c} maps.
Var avgPoolPatch(const Var& x, int patch);          // {h/p, w/p, c}
Var windowMeanValid(const Var& x, int radiusSpan);  // centered span x span, count-valid edges
Var upsampleNearest2x(const Var& x);
Var shift2d(const Var& x, int dy, int dx);  // zero-padded translate of a {h,w,c} map
Var upsampleBilinear(const Var& x, int outH, int outW);  // half-pixel-center sampling
Var im2col3x3(const Var& x);  // zero-padded 3x3 patches -> {h, w, 9*c}

Var detach(const Var& a);
// Forward takes the given hard tensor, backward passes gradients to soft.
Var straightThrough(const Var& soft, Tensor hard);

}  // namespace refseg::ad
