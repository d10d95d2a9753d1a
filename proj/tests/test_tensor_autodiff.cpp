#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "refseg/autodiff.hpp"
#include "refseg/errors.hpp"
#include "refseg/nn.hpp"
#include "test_util.hpp"

using namespace refseg;
using namespace refseg::ad;
using testutil::gradCheck;
using testutil::randomTensor;

namespace {

// Wraps a tensor-to-scalar graph builder over a single parameter.
ParamStore singleParam(const Tensor& init, Var& out) {
    ParamStore ps;
    Rng rng(0);
    out = ps.create("x", init.shape(), Init::Zero, rng);
    out.setValue(init);
    return ps;
}

}  // namespace

TEST_CASE("tensor shape and flat layout") {
    Tensor t = Tensor::fromList({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.at(1, 2) == 6);
    Tensor m = Tensor::fromList({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(m.rows() == 4);
    CHECK(m.at3(1, 0, 1) == 6);
    CHECK_THROWS_AS(Tensor::fromList({2, 2}, {1.0}), ShapeError);
}

TEST_CASE("matmul matches manual computation") {
    Tensor a = Tensor::fromList({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::fromList({3, 2}, {7, 8, 9, 10, 11, 12});
    Tensor c = Tensor::matmul(a, b);
    CHECK(c.at(0, 0) == doctest::Approx(58));
    CHECK(c.at(0, 1) == doctest::Approx(64));
    CHECK(c.at(1, 0) == doctest::Approx(139));
    CHECK(c.at(1, 1) == doctest::Approx(154));
    Tensor bt = Tensor::transposed2d(b);
    Tensor c2 = Tensor::matmulTransposedB(a, bt);
    for (int i = 0; i < c.size(); ++i) CHECK(c2[i] == doctest::Approx(c[i]));
}

TEST_CASE("backward on composite scalar expression") {
    // f = sum((x * x) + 3x) -> df/dx = 2x + 3
    Var x;
    ParamStore ps = singleParam(Tensor::fromList({3}, {1.0, -2.0, 0.5}), x);
    Var f = sum(add(mul(x, x), scale(x, 3.0)));
    backward(f);
    const Tensor& g = x.node()->grad;
    CHECK(g[0] == doctest::Approx(5.0));
    CHECK(g[1] == doctest::Approx(-1.0));
    CHECK(g[2] == doctest::Approx(4.0));
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
    Var x;
    ParamStore ps = singleParam(Tensor::fromList({2}, {1.0, 2.0}), x);
    Var f1 = sum(mul(x, x));
    backward(f1);
    Var f2 = sum(mul(x, x));
    backward(f2);
    CHECK(x.node()->grad[0] == doctest::Approx(4.0));
    ps.zeroGrads();
    CHECK(x.node()->grad[0] == 0.0);
}

TEST_CASE("elementwise op gradients against finite differences") {
    Rng rng(11);
    Var x;
    ParamStore ps = singleParam(randomTensor({3, 4}, rng, 0.2, 1.8), x);

    auto check = [&](const std::function<Var()>& f) {
        auto r = gradCheck(ps, f);
        CAPTURE(r.worstParam);
        CAPTURE(r.worstRel);
        CHECK(r.ok);
    };
    check([&] { return sum(tanhOp(x)); });
    check([&] { return sum(sigmoid(x)); });
    check([&] { return sum(expOp(x)); });
    check([&] { return sum(logOp(x)); });
    check([&] { return sum(powScalar(x, 2.5)); });
    check([&] { return mean(relu(addScalar(x, -1.0))); });
    check([&] { return sum(divide(constant(Tensor::full({3, 4}, 2.0)), x)); });
    check([&] { return logSumExp(x); });
}

TEST_CASE("matmul softmax layernorm gradients") {
    Rng rng(12);
    ParamStore ps;
    Var a = ps.create("a", {3, 4}, Init::XavierUniform, rng);
    Var b = ps.create("b", {4, 2}, Init::XavierUniform, rng);
    Var gamma = ps.create("gamma", {4}, Init::One, rng);
    Var beta = ps.create("beta", {4}, Init::Zero, rng);

    Tensor probe = randomTensor({3, 4}, rng);
    auto r1 = gradCheck(ps, [&] { return sum(matmul(a, b)); });
    CHECK(r1.ok);
    auto r2 = gradCheck(ps, [&] { return sum(mul(rowSoftmax(a), constant(probe))); });
    CHECK(r2.ok);
    auto r3 = gradCheck(ps, [&] {
        return sum(mul(layerNormRows(a, gamma, beta), constant(Tensor::full({3, 4}, 0.7))));
    });
    CHECK(r3.ok);
    auto r4 = gradCheck(ps, [&] { return sum(mul(rowL2Normalize(a), constant(probe))); });
    CHECK(r4.ok);
}

TEST_CASE("masked softmax drops masked keys and errors on fully masked rows") {
    const double inf = std::numeric_limits<double>::infinity();
    Tensor mask({2, 3});
    mask.at(0, 2) = -inf;
    Var x = constant(Tensor::fromList({2, 3}, {1, 1, 5, 0, 0, 0}));
    Var y = rowSoftmax(x, &mask);
    CHECK(y.value().at(0, 2) == 0.0);
    CHECK(y.value().at(0, 0) == doctest::Approx(0.5));
    Tensor full({1, 2});
    full.at(0, 0) = -inf;
    full.at(0, 1) = -inf;
    Var z = constant(Tensor::fromList({1, 2}, {1, 2}));
    CHECK_THROWS_AS(rowSoftmax(z, &full), NumericError);
}

TEST_CASE("slice concat reshape and broadcast gradients") {
    Rng rng(13);
    ParamStore ps;
    Var a = ps.create("a", {4, 6}, Init::XavierUniform, rng);
    Var row = ps.create("row", {6}, Init::XavierUniform, rng);
    auto r = gradCheck(ps, [&] {
        Var top = sliceRows(a, 0, 2);
        Var bot = sliceRows(a, 2, 4);
        Var left = sliceCols(a, 0, 3);
        Var cat = concatRows({top, bot});
        Var cc = concatCols({left, sliceCols(a, 3, 6)});
        Var withBias = addRowBroadcast(cat, row);
        return add(sum(mul(withBias, cc)), sum(reshape(transpose2d(a), {6, 4})));
    });
    CAPTURE(r.worstParam);
    CHECK(r.ok);
}

TEST_CASE("spatial op gradients") {
    Rng rng(14);
    ParamStore ps;
    Var x = ps.create("x", {4, 4, 2}, Init::XavierUniform, rng);
    Tensor probeSame = randomTensor({4, 4, 2}, rng);
    Tensor probeHalf = randomTensor({2, 2, 2}, rng);
    Tensor probeBig = randomTensor({8, 8, 2}, rng);
    Tensor probeCol = randomTensor({4, 4, 18}, rng);
    auto check = [&](const std::function<Var()>& f) {
        auto r = gradCheck(ps, f, 1e-5, 1e-4, 8);
        CAPTURE(r.worstRel);
        CHECK(r.ok);
    };
    check([&] { return sum(mul(windowMeanValid(x, 3), constant(probeSame))); });
    check([&] { return sum(mul(avgPoolPatch(x, 2), constant(probeHalf))); });
    check([&] { return sum(mul(upsampleNearest2x(x), constant(probeBig))); });
    check([&] { return sum(mul(upsampleBilinear(x, 8, 8), constant(probeBig))); });
    check([&] { return sum(mul(im2col3x3(x), constant(probeCol))); });
}

TEST_CASE("embedding gather gradient scatters to looked-up rows only") {
    Rng rng(15);
    ParamStore ps;
    Var table = ps.create("table", {5, 3}, Init::XavierUniform, rng);
    Var out = embedRows(table, {1, 3, 1});
    backward(sum(out));
    const Tensor& g = table.node()->grad;
    CHECK(g.at(1, 0) == doctest::Approx(2.0));
    CHECK(g.at(3, 0) == doctest::Approx(1.0));
    CHECK(g.at(0, 0) == 0.0);
    CHECK(g.at(2, 0) == 0.0);
}

TEST_CASE("detach blocks gradients and straightThrough passes them") {
    Rng rng(16);
    ParamStore ps;
    Var x = ps.create("x", {3}, Init::XavierUniform, rng);

    backward(sum(mul(detach(x), x)));
    const Tensor& g = x.node()->grad;
    for (int i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx(x.value()[i]));

    ps.zeroGrads();
    Tensor hard = Tensor::fromList({3}, {1.0, 0.0, 0.0});
    Var st = straightThrough(x, hard);
    CHECK(st.value()[0] == 1.0);
    CHECK(st.value()[1] == 0.0);
    Tensor probe = Tensor::fromList({3}, {2.0, 5.0, -1.0});
    backward(sum(mul(st, constant(probe))));
    for (int i = 0; i < 3; ++i) CHECK(x.node()->grad[i] == doctest::Approx(probe[i]));
}

TEST_CASE("bilinear upsample of a constant map stays constant") {
    Var x = constant(Tensor::full({3, 3, 1}, 0.42));
    Var y = upsampleBilinear(x, 7, 10);
    for (int i = 0; i < y.value().size(); ++i) CHECK(y.value()[i] == doctest::Approx(0.42));
}

TEST_CASE("window mean with span 1 is the identity") {
    Rng rng(17);
    Tensor t = randomTensor({5, 4, 3}, rng);
    Var y = windowMeanValid(constant(t), 1);
    for (int i = 0; i < t.size(); ++i) CHECK(y.value()[i] == t[i]);
}

TEST_CASE("rng determinism") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.nextU64() == b.nextU64());
    Rng c(123);
    double first = c.normal();
    Rng d(123);
    CHECK(d.normal() == first);
}

TEST_CASE("adam with zero lr leaves parameters unchanged") {
    Rng rng(18);
    ParamStore ps;
    Var w = ps.create("w", {3}, Init::XavierUniform, rng);
    Tensor before = w.value();
    AdamOptimizer opt(0.0);
    backward(sum(mul(w, w)));
    opt.step(ps);
    for (int i = 0; i < 3; ++i) CHECK(w.value()[i] == before[i]);
}
