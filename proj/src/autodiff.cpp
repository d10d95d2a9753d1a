#include "refseg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "refseg/errors.hpp"

namespace refseg::ad {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void accumulate(Tensor& grad, const Tensor& delta) {
    for (int i = 0; i < delta.size(); ++i) grad[i] += delta[i];
}

std::shared_ptr<Node> makeNode(Tensor value, std::vector<std::shared_ptr<Node>> inputs,
                               std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool needsGrad = false;
    for (const auto& in : inputs)
        if (in && in->requiresGrad) needsGrad = true;
    n->requiresGrad = needsGrad;
    if (needsGrad) {
        n->inputs = std::move(inputs);
        n->backprop = std::move(backprop);
    }
    return n;
}

void checkSameShape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.sameShape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shapeString() + " vs " + b.shapeString());
}

}  // namespace

Tensor& Node::ensureGrad() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    return grad;
}

Var::Var(Tensor v, bool requiresGrad) : n_(std::make_shared<Node>()) {
    n_->value = std::move(v);
    n_->requiresGrad = requiresGrad;
}

void Var::setValue(Tensor v) {
    checkSameShape(n_->value, v, "setValue");
    n_->value = std::move(v);
}

void Var::zeroGrad() {
    if (n_ && !n_->grad.empty()) n_->grad.setZero();
}

Var Var::fromNode(std::shared_ptr<Node> n) {
    Var v;
    v.n_ = std::move(n);
    return v;
}

void backward(const Var& root) {
    if (!root.defined() || root.value().size() != 1)
        throw ShapeError("backward: root must be a defined scalar");
    // Post-order DFS, then reverse sweep.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->inputs.size()) {
            Node* child = node->inputs[idx++].get();
            if (child && child->requiresGrad && !seen.count(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->ensureGrad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

Var constant(Tensor v) { return Var(std::move(v), false); }

Var add(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor out = av;
    if (bv.size() == 1) {
        for (int i = 0; i < out.size(); ++i) out[i] += bv[0];
    } else {
        checkSameShape(av, bv, "add");
        for (int i = 0; i < out.size(); ++i) out[i] += bv[i];
    }
    return Var::fromNode(makeNode(std::move(out), {a.node(), b.node()}, [](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        if (na.requiresGrad) accumulate(na.ensureGrad(), self.grad);
        if (nb.requiresGrad) {
            Tensor& gb = nb.ensureGrad();
            if (gb.size() == 1) {
                gb[0] += self.grad.sum();
            } else {
                accumulate(gb, self.grad);
            }
        }
    }));
}

Var sub(const Var& a, const Var& b) { return add(a, neg(b)); }

Var mul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor out = av;
    const bool scalarB = bv.size() == 1;
    if (!scalarB) checkSameShape(av, bv, "mul");
    for (int i = 0; i < out.size(); ++i) out[i] *= scalarB ? bv[0] : bv[i];
    return Var::fromNode(makeNode(std::move(out), {a.node(), b.node()}, [](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        const Tensor& av = na.value;
        const Tensor& bv = nb.value;
        const bool scalarB = bv.size() == 1;
        if (na.requiresGrad) {
            Tensor& ga = na.ensureGrad();
            for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * (scalarB ? bv[0] : bv[i]);
        }
        if (nb.requiresGrad) {
            Tensor& gb = nb.ensureGrad();
            if (scalarB) {
                double s = 0.0;
                for (int i = 0; i < av.size(); ++i) s += self.grad[i] * av[i];
                gb[0] += s;
            } else {
                for (int i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * av[i];
            }
        }
    }));
}

Var divide(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const bool scalarB = bv.size() == 1;
    if (!scalarB) checkSameShape(av, bv, "divide");
    Tensor out = av;
    for (int i = 0; i < out.size(); ++i) out[i] /= scalarB ? bv[0] : bv[i];
    return Var::fromNode(makeNode(std::move(out), {a.node(), b.node()}, [](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        const Tensor& av = na.value;
        const Tensor& bv = nb.value;
        const bool scalarB = bv.size() == 1;
        if (na.requiresGrad) {
            Tensor& ga = na.ensureGrad();
            for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] / (scalarB ? bv[0] : bv[i]);
        }
        if (nb.requiresGrad) {
            Tensor& gb = nb.ensureGrad();
            if (scalarB) {
                double s = 0.0;
                for (int i = 0; i < av.size(); ++i) s += -self.grad[i] * av[i] / (bv[0] * bv[0]);
                gb[0] += s;
            } else {
                for (int i = 0; i < gb.size(); ++i) gb[i] += -self.grad[i] * av[i] / (bv[i] * bv[i]);
            }
        }
    }));
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (int i = 0; i < out.size(); ++i) out[i] *= s;
    return Var::fromNode(makeNode(std::move(out), {a.node()}, [s](Node& self) {
        Node& na = *self.inputs[0];
        Tensor& ga = na.ensureGrad();
        for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * s;
    }));
}

Var addScalar(const Var& a, double s) {
    Tensor out = a.value();
    for (int i = 0; i < out.size(); ++i) out[i] += s;
    return Var::fromNode(makeNode(std::move(out), {a.node()}, [](Node& self) {
        accumulate(self.inputs[0]->ensureGrad(), self.grad);
    }));
}

Var relu(const Var& a) {
    Tensor out = a.value();
    for (int i = 0; i < out.size(); ++i) out[i] = std::max(out[i], 0.0);
    return Var::fromNode(makeNode(std::move(out), {a.node()}, [](Node& self) {
        Node& na = *self.inputs[0];
        Tensor& ga = na.ensureGrad();
        for (int i = 0; i < ga.size(); ++i)
            if (na.value[i] > 0.0) ga[i] += self.grad[i];
    }));
}

Var tanhOp(const Var& a) {
    Tensor out = a.value();
    for (int i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    return Var::fromNode(makeNode(std::move(out), {a.node()}, [](Node& self) {
        Tensor& ga = self.inputs[0]->ensureGrad();
        for (int i = 0; i < ga.size(); ++i) {
            double y = self.value[i];
            ga[i] += self.grad[i] * (1.0 - y * y);
        }
    }));
}

Var sigmoid(const Var& a) {
    Tensor out = a.value();
    for (int i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return Var::fromNode(makeNode(std::move(out), {a.node()}, [](Node& self) {
        Tensor& ga = self.inputs[0]->ensureGrad();
        for (int i = 0; i < ga.size(); ++i) {
            double y = self.value[i];
            ga[i] += self.grad[i] * y * (1.0 - y);
        }
    }));
}

Var expOp(const Var& a) {
    Tensor out = a.value();
    for (int i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
    return Var::fromNode(makeNode(std::move(out), {a.node()}, [](Node& self) {
        Tensor& ga = self.inputs[0]->ensureGrad();
        for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * self.value[i];
    }));
}

Var logOp(const Var& a) {
    Tensor out = a.value();
    for (int i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
    return Var::fromNode(makeNode(std::move(out), {a.node()}, [](Node& self) {
        Node& na = *self.inputs[0];
        Tensor& ga = na.ensureGrad();
        for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] / na.value[i];
    }));
}

Var powScalar(const Var& a, double p) {
    Tensor out = a.value();
    for (int i = 0; i < out.size(); ++i) out[i] = std::pow(out[i], p);
    return Var::fromNode(makeNode(std::move(out), {a.node()}, [p](Node& self) {
        Node& na = *self.inputs[0];
        Tensor& ga = na.ensureGrad();
        if (p == 0.0) return;
        for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * p * std::pow(na.value[i], p - 1.0);
    }));
}

Var clamp(const Var& a, double lo, double hi) {
    Tensor out = a.value();
    for (int i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], lo, hi);
    return Var::fromNode(makeNode(std::move(out), {a.node()}, [lo, hi](Node& self) {
        Node& na = *self.inputs[0];
        Tensor& ga = na.ensureGrad();
        for (int i = 0; i < ga.size(); ++i)
            if (na.value[i] >= lo && na.value[i] <= hi) ga[i] += self.grad[i];
    }));
}

Var sum(const Var& a) {
    return Var::fromNode(makeNode(Tensor::scalar(a.value().sum()), {a.node()}, [](Node& self) {
        Tensor& ga = self.inputs[0]->ensureGrad();
        for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[0];
    }));
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    return Var::fromNode(makeNode(Tensor::scalar(a.value().mean()), {a.node()}, [n](Node& self) {
        Tensor& ga = self.inputs[0]->ensureGrad();
        for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[0] / n;
    }));
}

Var logSumExp(const Var& a) {
    const Tensor& av = a.value();
    double m = av.maxValue();
    double s = 0.0;
    for (int i = 0; i < av.size(); ++i) s += std::exp(av[i] - m);
    double lse = m + std::log(s);
    return Var::fromNode(makeNode(Tensor::scalar(lse), {a.node()}, [](Node& self) {
        Node& na = *self.inputs[0];
        Tensor& ga = na.ensureGrad();
        double y = self.value[0];
        for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[0] * std::exp(na.value[i] - y);
    }));
}

Var matmul(const Var& a, const Var& b) {
    Tensor out = Tensor::matmul(a.value(), b.value());
    return Var::fromNode(makeNode(std::move(out), {a.node(), b.node()}, [](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        if (na.requiresGrad)
            accumulate(na.ensureGrad(), Tensor::matmulTransposedB(self.grad.reshaped({self.grad.rows(), self.grad.cols()}), nb.value.reshaped({nb.value.rows(), nb.value.cols()})));
        if (nb.requiresGrad)
            accumulate(nb.ensureGrad(), Tensor::matmulTransposedA(na.value.reshaped({na.value.rows(), na.value.cols()}), self.grad.reshaped({self.grad.rows(), self.grad.cols()})));
    }));
}

Var transpose2d(const Var& a) {
    return Var::fromNode(makeNode(Tensor::transposed2d(a.value()), {a.node()}, [](Node& self) {
        accumulate(self.inputs[0]->ensureGrad(), Tensor::transposed2d(self.grad));
    }));
}

Var reshape(const Var& a, std::vector<int> shape) {
    return Var::fromNode(makeNode(a.value().reshaped(std::move(shape)), {a.node()}, [](Node& self) {
        accumulate(self.inputs[0]->ensureGrad(), self.grad);
    }));
}

Var sliceRows(const Var& a, int r0, int r1) {
    const Tensor& av = a.value();
    const int cols = av.cols();
    if (r0 < 0 || r1 > av.rows() || r0 >= r1) throw ShapeError("sliceRows: bad range");
    Tensor out({r1 - r0, cols});
    std::copy(av.data() + static_cast<size_t>(r0) * cols, av.data() + static_cast<size_t>(r1) * cols, out.data());
    return Var::fromNode(makeNode(std::move(out), {a.node()}, [r0, cols](Node& self) {
        Tensor& ga = self.inputs[0]->ensureGrad();
        const int n = self.grad.size();
        double* dst = ga.data() + static_cast<size_t>(r0) * cols;
        for (int i = 0; i < n; ++i) dst[i] += self.grad[i];
    }));
}

Var sliceCols(const Var& a, int c0, int c1) {
    const Tensor& av = a.value();
    const int rows = av.rows();
    const int cols = av.cols();
    if (c0 < 0 || c1 > cols || c0 >= c1) throw ShapeError("sliceCols: bad range");
    Tensor out({rows, c1 - c0});
    for (int r = 0; r < rows; ++r)
        for (int c = c0; c < c1; ++c) out.at(r, c - c0) = av.at(r, c);
    return Var::fromNode(makeNode(std::move(out), {a.node()}, [c0, cols](Node& self) {
        Tensor& ga = self.inputs[0]->ensureGrad();
        const int rows = self.grad.rows();
        const int w = self.grad.cols();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < w; ++c) ga.data()[static_cast<size_t>(r) * cols + c0 + c] += self.grad.at(r, c);
    }));
}

Var concatRows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concatRows: no parts");
    const int cols = parts[0].value().cols();
    int rows = 0;
    for (const auto& p : parts) {
        if (p.value().cols() != cols) throw ShapeError("concatRows: column mismatch");
        rows += p.value().rows();
    }
    Tensor out({rows, cols});
    std::vector<std::shared_ptr<Node>> inputs;
    int r = 0;
    for (const auto& p : parts) {
        const Tensor& pv = p.value();
        std::copy(pv.data(), pv.data() + pv.size(), out.data() + static_cast<size_t>(r) * cols);
        r += pv.rows();
        inputs.push_back(p.node());
    }
    return Var::fromNode(makeNode(std::move(out), std::move(inputs), [cols](Node& self) {
        int r = 0;
        for (auto& in : self.inputs) {
            const int n = in->value.size();
            if (in->requiresGrad) {
                Tensor& g = in->ensureGrad();
                const double* src = self.grad.data() + static_cast<size_t>(r) * cols;
                for (int i = 0; i < n; ++i) g[i] += src[i];
            }
            r += in->value.rows();
        }
    }));
}

Var concatCols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concatCols: no parts");
    const int rows = parts[0].value().rows();
    int cols = 0;
    for (const auto& p : parts) {
        if (p.value().rows() != rows) throw ShapeError("concatCols: row mismatch");
        cols += p.value().cols();
    }
    Tensor out({rows, cols});
    std::vector<std::shared_ptr<Node>> inputs;
    int c = 0;
    for (const auto& p : parts) {
        const Tensor& pv = p.value();
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < pv.cols(); ++j) out.at(r, c + j) = pv.at(r, j);
        c += pv.cols();
        inputs.push_back(p.node());
    }
    return Var::fromNode(makeNode(std::move(out), std::move(inputs), [rows](Node& self) {
        int c = 0;
        for (auto& in : self.inputs) {
            const int w = in->value.cols();
            if (in->requiresGrad) {
                Tensor& g = in->ensureGrad();
                for (int r = 0; r < rows; ++r)
                    for (int j = 0; j < w; ++j) g.at(r, j) += self.grad.at(r, c + j);
            }
            c += w;
        }
    }));
}

Var addRowBroadcast(const Var& m, const Var& row) {
    const Tensor& mv = m.value();
    const Tensor& rv = row.value();
    if (rv.size() != mv.cols()) throw ShapeError("addRowBroadcast: row length mismatch");
    Tensor out = mv;
    const int rows = mv.rows();
    const int cols = mv.cols();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out.data()[static_cast<size_t>(r) * cols + c] += rv[c];
    return Var::fromNode(makeNode(std::move(out), {m.node(), row.node()}, [](Node& self) {
        Node& nm = *self.inputs[0];
        Node& nr = *self.inputs[1];
        if (nm.requiresGrad) accumulate(nm.ensureGrad(), self.grad);
        if (nr.requiresGrad) {
            Tensor& gr = nr.ensureGrad();
            const int rows = self.grad.rows();
            const int cols = self.grad.cols();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) gr[c] += self.grad.data()[static_cast<size_t>(r) * cols + c];
        }
    }));
}

Var mulRowBroadcast(const Var& m, const Var& row) {
    const Tensor& mv = m.value();
    const Tensor& rv = row.value();
    if (rv.size() != mv.cols()) throw ShapeError("mulRowBroadcast: row length mismatch");
    Tensor out = mv;
    const int rows = mv.rows();
    const int cols = mv.cols();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out.data()[static_cast<size_t>(r) * cols + c] *= rv[c];
    return Var::fromNode(makeNode(std::move(out), {m.node(), row.node()}, [](Node& self) {
        Node& nm = *self.inputs[0];
        Node& nr = *self.inputs[1];
        const int rows = self.grad.rows();
        const int cols = self.grad.cols();
        if (nm.requiresGrad) {
            Tensor& gm = nm.ensureGrad();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c)
                    gm.data()[static_cast<size_t>(r) * cols + c] +=
                        self.grad.data()[static_cast<size_t>(r) * cols + c] * nr.value[c];
        }
        if (nr.requiresGrad) {
            Tensor& gr = nr.ensureGrad();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c)
                    gr[c] += self.grad.data()[static_cast<size_t>(r) * cols + c] *
                             nm.value.data()[static_cast<size_t>(r) * cols + c];
        }
    }));
}

Var shift2d(const Var& x, int dy, int dx) {
    const Tensor& xv = x.value();
    if (xv.rank() != 3) throw ShapeError("shift2d: expected {h,w,c}");
    const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
    Tensor out({h, w, c});
    for (int y = 0; y < h; ++y) {
        const int sy = y + dy;
        if (sy < 0 || sy >= h) continue;
        for (int x2 = 0; x2 < w; ++x2) {
            const int sx = x2 + dx;
            if (sx < 0 || sx >= w) continue;
            for (int ch = 0; ch < c; ++ch) out.at3(y, x2, ch) = xv.at3(sy, sx, ch);
        }
    }
    return Var::fromNode(makeNode(std::move(out), {x.node()}, [dy, dx](Node& self) {
        Tensor& gx = self.inputs[0]->ensureGrad();
        const int h = self.value.dim(0), w = self.value.dim(1), c = self.value.dim(2);
        for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            for (int x2 = 0; x2 < w; ++x2) {
                const int sx = x2 + dx;
                if (sx < 0 || sx >= w) continue;
                for (int ch = 0; ch < c; ++ch) gx.at3(sy, sx, ch) += self.grad.at3(y, x2, ch);
            }
        }
    }));
}

Var rowSoftmax(const Var& a, const Tensor* addMask) {
    const Tensor& av = a.value();
    if (addMask && !addMask->sameShape(av)) throw ShapeError("rowSoftmax: mask shape mismatch");
    const int rows = av.rows();
    const int cols = av.cols();
    Tensor out(av.shape());
    for (int r = 0; r < rows; ++r) {
        double m = kNegInf;
        for (int c = 0; c < cols; ++c) {
            double z = av.at(r, c) + (addMask ? addMask->at(r, c) : 0.0);
            m = std::max(m, z);
        }
        if (m == kNegInf) throw NumericError("rowSoftmax: fully masked row " + std::to_string(r));
        double s = 0.0;
        for (int c = 0; c < cols; ++c) {
            double z = av.at(r, c) + (addMask ? addMask->at(r, c) : 0.0);
            double e = std::exp(z - m);
            out.at(r, c) = e;
            s += e;
        }
        for (int c = 0; c < cols; ++c) out.at(r, c) /= s;
    }
    return Var::fromNode(makeNode(std::move(out), {a.node()}, [](Node& self) {
        Tensor& ga = self.inputs[0]->ensureGrad();
        const int rows = self.value.rows();
        const int cols = self.value.cols();
        for (int r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) dot += self.grad.at(r, c) * self.value.at(r, c);
            for (int c = 0; c < cols; ++c)
                ga.at(r, c) += self.value.at(r, c) * (self.grad.at(r, c) - dot);
        }
    }));
}

Var layerNormRows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Tensor& xv = x.value();
    const int rows = xv.rows();
    const int cols = xv.cols();
    if (gamma.value().size() != cols || beta.value().size() != cols)
        throw ShapeError("layerNormRows: gamma/beta length mismatch");
    Tensor out(xv.shape());
    for (int r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (int c = 0; c < cols; ++c) mu += xv.at(r, c);
        mu /= cols;
        double var = 0.0;
        for (int c = 0; c < cols; ++c) {
            double d = xv.at(r, c) - mu;
            var += d * d;
        }
        var /= cols;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < cols; ++c)
            out.at(r, c) = (xv.at(r, c) - mu) * inv * gamma.value()[c] + beta.value()[c];
    }
    return Var::fromNode(makeNode(std::move(out), {x.node(), gamma.node(), beta.node()}, [eps](Node& self) {
        Node& nx = *self.inputs[0];
        Node& ng = *self.inputs[1];
        Node& nb = *self.inputs[2];
        const Tensor& xv = nx.value;
        const int rows = xv.rows();
        const int cols = xv.cols();
        for (int r = 0; r < rows; ++r) {
            double mu = 0.0;
            for (int c = 0; c < cols; ++c) mu += xv.at(r, c);
            mu /= cols;
            double var = 0.0;
            for (int c = 0; c < cols; ++c) {
                double d = xv.at(r, c) - mu;
                var += d * d;
            }
            var /= cols;
            double inv = 1.0 / std::sqrt(var + eps);
            // dxhat, then the standard layer-norm input gradient.
            double sumDxhat = 0.0;
            double sumDxhatXhat = 0.0;
            for (int c = 0; c < cols; ++c) {
                double xhat = (xv.at(r, c) - mu) * inv;
                double dxhat = self.grad.at(r, c) * ng.value[c];
                sumDxhat += dxhat;
                sumDxhatXhat += dxhat * xhat;
                if (ng.requiresGrad) ng.ensureGrad()[c] += self.grad.at(r, c) * xhat;
                if (nb.requiresGrad) nb.ensureGrad()[c] += self.grad.at(r, c);
            }
            if (nx.requiresGrad) {
                Tensor& gx = nx.ensureGrad();
                for (int c = 0; c < cols; ++c) {
                    double xhat = (xv.at(r, c) - mu) * inv;
                    double dxhat = self.grad.at(r, c) * ng.value[c];
                    gx.at(r, c) += inv * (dxhat - sumDxhat / cols - xhat * sumDxhatXhat / cols);
                }
            }
        }
    }));
}

Var rowL2Normalize(const Var& x) {
    const Tensor& xv = x.value();
    const int rows = xv.rows();
    const int cols = xv.cols();
    Tensor out(xv.shape());
    for (int r = 0; r < rows; ++r) {
        double n2 = 0.0;
        for (int c = 0; c < cols; ++c) n2 += xv.at(r, c) * xv.at(r, c);
        double n = std::sqrt(n2);
        if (n < 1e-30) throw NumericError("rowL2Normalize: zero-norm row " + std::to_string(r));
        for (int c = 0; c < cols; ++c) out.at(r, c) = xv.at(r, c) / n;
    }
    return Var::fromNode(makeNode(std::move(out), {x.node()}, [](Node& self) {
        Node& nx = *self.inputs[0];
        Tensor& gx = nx.ensureGrad();
        const Tensor& xv = nx.value;
        const int rows = xv.rows();
        const int cols = xv.cols();
        for (int r = 0; r < rows; ++r) {
            double n2 = 0.0;
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) {
                n2 += xv.at(r, c) * xv.at(r, c);
                dot += self.grad.at(r, c) * xv.at(r, c);
            }
            double n = std::sqrt(n2);
            for (int c = 0; c < cols; ++c)
                gx.at(r, c) += self.grad.at(r, c) / n - xv.at(r, c) * dot / (n2 * n);
        }
    }));
}

Var embedRows(const Var& table, const std::vector<int>& ids) {
    const Tensor& tv = table.value();
    const int cols = tv.cols();
    Tensor out({static_cast<int>(ids.size()), cols});
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= tv.rows()) throw ShapeError("embedRows: id out of range");
        std::copy(tv.data() + static_cast<size_t>(ids[i]) * cols, tv.data() + static_cast<size_t>(ids[i] + 1) * cols,
                  out.data() + i * cols);
    }
    return Var::fromNode(makeNode(std::move(out), {table.node()}, [ids, cols](Node& self) {
        Tensor& gt = self.inputs[0]->ensureGrad();
        for (size_t i = 0; i < ids.size(); ++i) {
            const double* src = self.grad.data() + i * cols;
            double* dst = gt.data() + static_cast<size_t>(ids[i]) * cols;
            for (int c = 0; c < cols; ++c) dst[c] += src[c];
        }
    }));
}

Var avgPoolPatch(const Var& x, int patch) {
    const Tensor& xv = x.value();
    if (xv.rank() != 3) throw ShapeError("avgPoolPatch: expected {h,w,c}");
    const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
    if (h % patch != 0 || w % patch != 0) throw ShapeError("avgPoolPatch: dims not divisible by patch");
    const int oh = h / patch, ow = w / patch;
    Tensor out({oh, ow, c});
    const double inv = 1.0 / (patch * patch);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
            for (int dy = 0; dy < patch; ++dy)
                for (int dx = 0; dx < patch; ++dx)
                    for (int ch = 0; ch < c; ++ch)
                        out.at3(oy, ox, ch) += xv.at3(oy * patch + dy, ox * patch + dx, ch) * inv;
    return Var::fromNode(makeNode(std::move(out), {x.node()}, [patch, inv](Node& self) {
        Tensor& gx = self.inputs[0]->ensureGrad();
        const int oh = self.value.dim(0), ow = self.value.dim(1), c = self.value.dim(2);
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                for (int dy = 0; dy < patch; ++dy)
                    for (int dx = 0; dx < patch; ++dx)
                        for (int ch = 0; ch < c; ++ch)
                            gx.at3(oy * patch + dy, ox * patch + dx, ch) += self.grad.at3(oy, ox, ch) * inv;
    }));
}

Var windowMeanValid(const Var& x, int span) {
    const Tensor& xv = x.value();
    if (xv.rank() != 3) throw ShapeError("windowMeanValid: expected {h,w,c}");
    if (span < 1 || span % 2 == 0) throw ShapeError("windowMeanValid: span must be odd and >= 1");
    const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
    const int half = span / 2;
    Tensor out({h, w, c});
    for (int y = 0; y < h; ++y) {
        const int y0 = std::max(0, y - half), y1 = std::min(h - 1, y + half);
        for (int x2 = 0; x2 < w; ++x2) {
            const int x0 = std::max(0, x2 - half), x1 = std::min(w - 1, x2 + half);
            const double inv = 1.0 / ((y1 - y0 + 1) * (x1 - x0 + 1));
            for (int v = y0; v <= y1; ++v)
                for (int u = x0; u <= x1; ++u)
                    for (int ch = 0; ch < c; ++ch) out.at3(y, x2, ch) += xv.at3(v, u, ch) * inv;
        }
    }
    return Var::fromNode(makeNode(std::move(out), {x.node()}, [half](Node& self) {
        Tensor& gx = self.inputs[0]->ensureGrad();
        const int h = self.value.dim(0), w = self.value.dim(1), c = self.value.dim(2);
        for (int y = 0; y < h; ++y) {
            const int y0 = std::max(0, y - half), y1 = std::min(h - 1, y + half);
            for (int x2 = 0; x2 < w; ++x2) {
                const int x0 = std::max(0, x2 - half), x1 = std::min(w - 1, x2 + half);
                const double inv = 1.0 / ((y1 - y0 + 1) * (x1 - x0 + 1));
                for (int v = y0; v <= y1; ++v)
                    for (int u = x0; u <= x1; ++u)
                        for (int ch = 0; ch < c; ++ch) gx.at3(v, u, ch) += self.grad.at3(y, x2, ch) * inv;
            }
        }
    }));
}

Var upsampleNearest2x(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 3) throw ShapeError("upsampleNearest2x: expected {h,w,c}");
    const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
    Tensor out({2 * h, 2 * w, c});
    for (int y = 0; y < 2 * h; ++y)
        for (int x2 = 0; x2 < 2 * w; ++x2)
            for (int ch = 0; ch < c; ++ch) out.at3(y, x2, ch) = xv.at3(y / 2, x2 / 2, ch);
    return Var::fromNode(makeNode(std::move(out), {x.node()}, [](Node& self) {
        Tensor& gx = self.inputs[0]->ensureGrad();
        const int H = self.value.dim(0), W = self.value.dim(1), c = self.value.dim(2);
        for (int y = 0; y < H; ++y)
            for (int x2 = 0; x2 < W; ++x2)
                for (int ch = 0; ch < c; ++ch) gx.at3(y / 2, x2 / 2, ch) += self.grad.at3(y, x2, ch);
    }));
}

namespace {

struct LinearTap {
    int i0, i1;
    double w0, w1;
};

std::vector<LinearTap> bilinearTaps(int inSize, int outSize) {
    std::vector<LinearTap> taps(static_cast<size_t>(outSize));
    const double scale = static_cast<double>(inSize) / outSize;
    for (int o = 0; o < outSize; ++o) {
        double s = (o + 0.5) * scale - 0.5;
        double f = std::floor(s);
        double t = s - f;
        int i0 = std::clamp(static_cast<int>(f), 0, inSize - 1);
        int i1 = std::clamp(static_cast<int>(f) + 1, 0, inSize - 1);
        taps[static_cast<size_t>(o)] = {i0, i1, 1.0 - t, t};
    }
    return taps;
}

}  // namespace

Var upsampleBilinear(const Var& x, int outH, int outW) {
    const Tensor& xv = x.value();
    if (xv.rank() != 3) throw ShapeError("upsampleBilinear: expected {h,w,c}");
    const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
    auto ty = bilinearTaps(h, outH);
    auto tx = bilinearTaps(w, outW);
    Tensor out({outH, outW, c});
    for (int y = 0; y < outH; ++y)
        for (int x2 = 0; x2 < outW; ++x2)
            for (int ch = 0; ch < c; ++ch)
                out.at3(y, x2, ch) = ty[y].w0 * (tx[x2].w0 * xv.at3(ty[y].i0, tx[x2].i0, ch) +
                                                 tx[x2].w1 * xv.at3(ty[y].i0, tx[x2].i1, ch)) +
                                     ty[y].w1 * (tx[x2].w0 * xv.at3(ty[y].i1, tx[x2].i0, ch) +
                                                 tx[x2].w1 * xv.at3(ty[y].i1, tx[x2].i1, ch));
    return Var::fromNode(makeNode(std::move(out), {x.node()}, [ty, tx](Node& self) {
        Tensor& gx = self.inputs[0]->ensureGrad();
        const int H = self.value.dim(0), W = self.value.dim(1), c = self.value.dim(2);
        for (int y = 0; y < H; ++y)
            for (int x2 = 0; x2 < W; ++x2)
                for (int ch = 0; ch < c; ++ch) {
                    double g = self.grad.at3(y, x2, ch);
                    gx.at3(ty[y].i0, tx[x2].i0, ch) += g * ty[y].w0 * tx[x2].w0;
                    gx.at3(ty[y].i0, tx[x2].i1, ch) += g * ty[y].w0 * tx[x2].w1;
                    gx.at3(ty[y].i1, tx[x2].i0, ch) += g * ty[y].w1 * tx[x2].w0;
                    gx.at3(ty[y].i1, tx[x2].i1, ch) += g * ty[y].w1 * tx[x2].w1;
                }
    }));
}

Var im2col3x3(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 3) throw ShapeError("im2col3x3: expected {h,w,c}");
    const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
    Tensor out({h, w, 9 * c});
    for (int y = 0; y < h; ++y)
        for (int x2 = 0; x2 < w; ++x2)
            for (int ky = -1; ky <= 1; ++ky)
                for (int kx = -1; kx <= 1; ++kx) {
                    const int sy = y + ky, sx = x2 + kx;
                    if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                    const int off = ((ky + 1) * 3 + (kx + 1)) * c;
                    for (int ch = 0; ch < c; ++ch) out.at3(y, x2, off + ch) = xv.at3(sy, sx, ch);
                }
    return Var::fromNode(makeNode(std::move(out), {x.node()}, [c](Node& self) {
        Tensor& gx = self.inputs[0]->ensureGrad();
        const int h = self.value.dim(0), w = self.value.dim(1);
        for (int y = 0; y < h; ++y)
            for (int x2 = 0; x2 < w; ++x2)
                for (int ky = -1; ky <= 1; ++ky)
                    for (int kx = -1; kx <= 1; ++kx) {
                        const int sy = y + ky, sx = x2 + kx;
                        if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                        const int off = ((ky + 1) * 3 + (kx + 1)) * c;
                        for (int ch = 0; ch < c; ++ch) gx.at3(sy, sx, ch) += self.grad.at3(y, x2, off + ch);
                    }
    }));
}

Var detach(const Var& a) { return constant(a.value()); }

Var straightThrough(const Var& soft, Tensor hard) {
    checkSameShape(soft.value(), hard, "straightThrough");
    return Var::fromNode(makeNode(std::move(hard), {soft.node()}, [](Node& self) {
        accumulate(self.inputs[0]->ensureGrad(), self.grad);
    }));
}

}  // namespace refseg::ad
