#include "refseg/nn.hpp"

#include <cmath>
#include <limits>

#include "refseg/errors.hpp"

namespace refseg {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

uint64_t Rng::splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

uint64_t Rng::nextU64() {
    // xorshift64* on a splitmix-seeded state
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545f4914f6cdd1dULL;
}

double Rng::uniform() {
    return static_cast<double>(nextU64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double a, double b) { return a + (b - a) * uniform(); }

int Rng::uniformInt(int n) {
    return static_cast<int>(nextU64() % static_cast<uint64_t>(n));
}

double Rng::normal() {
    if (haveSpare_) {
        haveSpare_ = false;
        return spare_;
    }
    double u1 = std::max(uniform(), 1e-300);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    haveSpare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
}

double Rng::gumbel() {
    double u = std::clamp(uniform(), 1e-12, 1.0 - 1e-12);
    return -std::log(-std::log(u));
}

ad::Var ParamStore::create(const std::string& name, std::vector<int> shape, Init init, Rng& rng,
                           double gain) {
    if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    Tensor t(shape);
    switch (init) {
        case Init::Zero:
            break;
        case Init::One:
            t.fill(1.0);
            break;
        case Init::XavierUniform: {
            int fanIn = t.rows() > 0 ? t.rows() : 1;
            int fanOut = t.cols() > 0 ? t.cols() : 1;
            if (t.rank() == 1) fanIn = fanOut = t.dim(0);
            double bound = gain * std::sqrt(6.0 / (fanIn + fanOut));
            for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
            break;
        }
        case Init::NormalScaled: {
            for (int i = 0; i < t.size(); ++i) t[i] = gain * rng.normal();
            break;
        }
    }
    ad::Var v(std::move(t), true);
    params_.emplace(name, v);
    return v;
}

ad::Var ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

void ParamStore::zeroGrads() {
    for (auto& [name, v] : params_) v.zeroGrad();
}

int ParamStore::totalSize() const {
    int n = 0;
    for (const auto& [name, v] : params_) n += v.value().size();
    return n;
}

void AdamOptimizer::step(ParamStore& params) {
    ++t_;
    const double correction1 = 1.0 - std::pow(beta1_, t_);
    const double correction2 = 1.0 - std::pow(beta2_, t_);
    for (auto& [name, var] : params.items()) {
        const Tensor& g = var.node()->grad;
        if (g.empty()) continue;
        Tensor& m = m_.try_emplace(name, Tensor::zeros(var.value().shape())).first->second;
        Tensor& v = v_.try_emplace(name, Tensor::zeros(var.value().shape())).first->second;
        Tensor next = var.value();
        for (int i = 0; i < next.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            double mhat = m[i] / correction1;
            double vhat = v[i] / correction2;
            next[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
        var.setValue(std::move(next));
    }
}

ad::Var Linear::operator()(const ad::Var& x) const {
    ad::Var y = ad::matmul(x, weight);
    if (bias.defined()) y = ad::addRowBroadcast(y, bias);
    return y;
}

Linear makeLinear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng, bool withBias) {
    Linear l;
    l.weight = ps.create(name + ".weight", {in, out}, Init::XavierUniform, rng);
    if (withBias) l.bias = ps.create(name + ".bias", {out}, Init::Zero, rng);
    return l;
}

LayerNorm makeLayerNorm(ParamStore& ps, const std::string& name, int width, Rng& rng) {
    LayerNorm ln;
    ln.gamma = ps.create(name + ".gamma", {width}, Init::One, rng);
    ln.beta = ps.create(name + ".beta", {width}, Init::Zero, rng);
    return ln;
}

ad::Var SelfAttention::operator()(const ad::Var& x, const Tensor* addMask) const {
    const int width = x.value().cols();
    const int headDim = width / heads;
    ad::Var Q = q(x), K = k(x), V = v(x);
    std::vector<ad::Var> headOut;
    headOut.reserve(static_cast<size_t>(heads));
    const double invSqrt = 1.0 / std::sqrt(static_cast<double>(headDim));
    for (int h = 0; h < heads; ++h) {
        ad::Var qh = ad::sliceCols(Q, h * headDim, (h + 1) * headDim);
        ad::Var kh = ad::sliceCols(K, h * headDim, (h + 1) * headDim);
        ad::Var vh = ad::sliceCols(V, h * headDim, (h + 1) * headDim);
        ad::Var scores = ad::scale(ad::matmul(qh, ad::transpose2d(kh)), invSqrt);
        ad::Var attn = ad::rowSoftmax(scores, addMask);
        headOut.push_back(ad::matmul(attn, vh));
    }
    ad::Var merged = heads == 1 ? headOut[0] : ad::concatCols(headOut);
    return o(merged);
}

SelfAttention makeSelfAttention(ParamStore& ps, const std::string& name, int width, int heads, Rng& rng) {
    if (width % heads != 0) throw ConfigError("attention width must divide heads: " + name);
    SelfAttention a;
    a.heads = heads;
    a.q = makeLinear(ps, name + ".q", width, width, rng);
    a.k = makeLinear(ps, name + ".k", width, width, rng);
    a.v = makeLinear(ps, name + ".v", width, width, rng);
    a.o = makeLinear(ps, name + ".o", width, width, rng);
    return a;
}

ad::Var TransformerBlock::operator()(const ad::Var& x, const Tensor* addMask) const {
    ad::Var h = ad::add(x, attn(ln1(x), addMask));
    ad::Var f = ffn2(ad::relu(ffn1(ln2(h))));
    return ad::add(h, f);
}

TransformerBlock makeTransformerBlock(ParamStore& ps, const std::string& name, int width, int heads,
                                      int ffnHidden, Rng& rng) {
    TransformerBlock b;
    b.attn = makeSelfAttention(ps, name + ".attn", width, heads, rng);
    b.ffn1 = makeLinear(ps, name + ".ffn1", width, ffnHidden, rng);
    b.ffn2 = makeLinear(ps, name + ".ffn2", ffnHidden, width, rng);
    b.ln1 = makeLayerNorm(ps, name + ".ln1", width, rng);
    b.ln2 = makeLayerNorm(ps, name + ".ln2", width, rng);
    return b;
}

Tensor sinusoidalPositions1d(int length, int width) {
    Tensor t({length, width});
    for (int p = 0; p < length; ++p)
        for (int i = 0; i < width; ++i) {
            double rate = std::pow(10000.0, -2.0 * (i / 2) / width);
            t.at(p, i) = (i % 2 == 0) ? std::sin(p * rate) : std::cos(p * rate);
        }
    return t;
}

Tensor sinusoidalPositions2d(int h, int w, int width) {
    // First half of the channels encodes y, second half x.
    Tensor t({h, w, width});
    const int half = width / 2;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            for (int i = 0; i < half; ++i) {
                double rate = std::pow(10000.0, -2.0 * (i / 2) / half);
                t.at3(y, x, i) = (i % 2 == 0) ? std::sin(y * rate) : std::cos(y * rate);
            }
            for (int i = half; i < width; ++i) {
                int j = i - half;
                double rate = std::pow(10000.0, -2.0 * (j / 2) / (width - half));
                t.at3(y, x, i) = (j % 2 == 0) ? std::sin(x * rate) : std::cos(x * rate);
            }
        }
    return t;
}

Tensor keyPaddingMask(int n, int validLength) {
    Tensor m({n, n});
    for (int r = 0; r < n; ++r)
        for (int c = validLength; c < n; ++c) m.at(r, c) = kNegInf;
    return m;
}

}  // namespace refseg
