#include "refseg/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "refseg/errors.hpp"

namespace refseg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

int64_t shapeProduct(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimension must be positive");
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shapeProduct(shape_)), 0.0);
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t({1});
    t[0] = v;
    return t;
}

Tensor Tensor::fromList(std::vector<int> shape, std::initializer_list<double> values) {
    Tensor t(std::move(shape));
    if (static_cast<int>(values.size()) != t.size())
        throw ShapeError("fromList: value count does not match shape");
    std::copy(values.begin(), values.end(), t.data_.begin());
    return t;
}

Tensor Tensor::fromVector(std::vector<int> shape, const std::vector<double>& values) {
    Tensor t(std::move(shape));
    if (static_cast<int>(values.size()) != t.size())
        throw ShapeError("fromVector: value count does not match shape");
    std::copy(values.begin(), values.end(), t.data_.begin());
    return t;
}

std::string Tensor::shapeString() const {
    std::ostringstream os;
    os << "{";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "}";
    return os.str();
}

int Tensor::rows() const {
    if (shape_.empty()) return 0;
    int64_t r = 1;
    for (size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
    return static_cast<int>(r);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::allFinite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

double Tensor::minValue() const {
    return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end());
}

double Tensor::maxValue() const {
    return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end());
}

double Tensor::absMax() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (shapeProduct(shape) != static_cast<int64_t>(data_.size()))
        throw ShapeError("reshape: element count mismatch " + shapeString());
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

Tensor Tensor::matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions differ " + a.shapeString() + " x " + b.shapeString());
    std::vector<int> outShape(a.shape_.begin(), a.shape_.end() - 1);
    outShape.push_back(b.cols());
    Tensor out(std::move(outShape));
    ConstMap ma(a.data(), a.rows(), a.cols());
    ConstMap mb(b.data(), b.rows(), b.cols());
    MutMap mo(out.data(), out.rows(), out.cols());
    mo.noalias() = ma * mb;
    return out;
}

Tensor Tensor::matmulTransposedB(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols())
        throw ShapeError("matmulTransposedB: inner dimensions differ");
    Tensor out({a.rows(), b.rows()});
    ConstMap ma(a.data(), a.rows(), a.cols());
    ConstMap mb(b.data(), b.rows(), b.cols());
    MutMap mo(out.data(), out.rows(), out.cols());
    mo.noalias() = ma * mb.transpose();
    return out;
}

Tensor Tensor::matmulTransposedA(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows())
        throw ShapeError("matmulTransposedA: inner dimensions differ");
    Tensor out({a.cols(), b.cols()});
    ConstMap ma(a.data(), a.rows(), a.cols());
    ConstMap mb(b.data(), b.rows(), b.cols());
    MutMap mo(out.data(), out.rows(), out.cols());
    mo.noalias() = ma.transpose() * mb;
    return out;
}

Tensor Tensor::transposed2d(const Tensor& a) {
    Tensor out({a.cols(), a.rows()});
    ConstMap ma(a.data(), a.rows(), a.cols());
    MutMap mo(out.data(), out.rows(), out.cols());
    mo = ma.transpose();
    return out;
}

}  // namespace refseg
