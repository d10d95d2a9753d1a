#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "refseg/autodiff.hpp"
#include "refseg/tensor.hpp"

namespace refseg {

// Deterministic RNG. mt19937_64 has a standard-specified output sequence and
// the distributions here are written out explicitly, so every draw is
// reproducible across platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix(seed)) {}

    uint64_t nextU64();
    double uniform();                 // [0, 1)
    double uniform(double a, double b);
    int uniformInt(int n);            // [0, n)
    double normal();                  // Box-Muller
    double gumbel();                  // Gumbel(0, 1)

private:
    static uint64_t splitmix(uint64_t x);
    uint64_t state_;
    bool haveSpare_ = false;
    double spare_ = 0.0;
};

enum class Init { Zero, One, XavierUniform, NormalScaled };

// Persistent named parameter leaves. Creation order is irrelevant: the map
// is sorted by name, so serialization and optimizer sweeps are deterministic.
class ParamStore {
public:
    ad::Var create(const std::string& name, std::vector<int> shape, Init init, Rng& rng,
                   double gain = 1.0);
    ad::Var get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }
    void zeroGrads();
    size_t count() const { return params_.size(); }
    int totalSize() const;
    const std::map<std::string, ad::Var>& items() const { return params_; }
    std::map<std::string, ad::Var>& items() { return params_; }

private:
    std::map<std::string, ad::Var> params_;
};

class AdamOptimizer {
public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore& params);
    void setLearningRate(double lr) { lr_ = lr; }
    double learningRate() const { return lr_; }
    int stepCount() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

struct Linear {
    ad::Var weight;  // {in, out}
    ad::Var bias;    // {out}, undefined when bias-free
    ad::Var operator()(const ad::Var& x) const;
};

Linear makeLinear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng, bool withBias = true);

struct LayerNorm {
    ad::Var gamma, beta;
    ad::Var operator()(const ad::Var& x) const { return ad::layerNormRows(x, gamma, beta); }
};

LayerNorm makeLayerNorm(ParamStore& ps, const std::string& name, int width, Rng& rng);

// Multi-head self-attention over an n x width sequence. An optional additive
// mask (n x n, entries 0 or -inf) is applied to every head's logits.
struct SelfAttention {
    int heads = 1;
    Linear q, k, v, o;
    ad::Var operator()(const ad::Var& x, const Tensor* addMask = nullptr) const;
};

SelfAttention makeSelfAttention(ParamStore& ps, const std::string& name, int width, int heads, Rng& rng);

// Pre-norm transformer encoder block: x + attn(ln1(x)), then x + ffn(ln2(x)).
struct TransformerBlock {
    SelfAttention attn;
    Linear ffn1, ffn2;
    LayerNorm ln1, ln2;
    ad::Var operator()(const ad::Var& x, const Tensor* addMask = nullptr) const;
};

TransformerBlock makeTransformerBlock(ParamStore& ps, const std::string& name, int width, int heads,
                                      int ffnHidden, Rng& rng);

// Sinusoidal encodings; constants, not parameters.
Tensor sinusoidalPositions1d(int length, int width);
Tensor sinusoidalPositions2d(int h, int w, int width);

// Additive key-padding mask for an n-token sequence with the first
// validLength tokens real: columns >= validLength get -inf in every row.
Tensor keyPaddingMask(int n, int validLength);

}  // namespace refseg
