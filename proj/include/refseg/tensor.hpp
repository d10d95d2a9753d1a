#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace refseg {

// Dense double-precision tensor with row-major flat storage.
// Rank is 1..4 in practice. A tensor of shape {d0,...,dk} is viewed as a
// matrix with rows = d0*...*d(k-1) and cols = dk whenever a 2-D
// interpretation is needed (matmul, per-row softmax, layer norm). A feature
// map stored as {h, w, c} therefore flattens to (h*w) x c with pixel rows.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);
    static Tensor scalar(double v);
    static Tensor fromList(std::vector<int> shape, std::initializer_list<double> values);
    static Tensor fromVector(std::vector<int> shape, const std::vector<double>& values);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int size() const { return static_cast<int>(data_.size()); }
    bool empty() const { return data_.empty(); }
    bool sameShape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shapeString() const;

    // Collapsed 2-D view: all leading dims x last dim.
    int rows() const;
    int cols() const { return shape_.empty() ? 0 : shape_.back(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](int i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int i) const { return data_[static_cast<size_t>(i)]; }

    double& at(int r, int c) { return data_[static_cast<size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols() + c]; }

    // Rank-3 {h, w, c} accessors.
    double& at3(int y, int x, int ch) {
        return data_[(static_cast<size_t>(y) * shape_[1] + x) * shape_[2] + ch];
    }
    double at3(int y, int x, int ch) const {
        return data_[(static_cast<size_t>(y) * shape_[1] + x) * shape_[2] + ch];
    }

    void fill(double v);
    void setZero() { fill(0.0); }

    bool allFinite() const;
    double sum() const;
    double mean() const;
    double minValue() const;
    double maxValue() const;
    double absMax() const;

    Tensor reshaped(std::vector<int> shape) const;

    // Kernels used by the autodiff layer; Eigen-backed, see tensor.cpp.
    static Tensor matmul(const Tensor& a, const Tensor& b);
    static Tensor matmulTransposedB(const Tensor& a, const Tensor& b);
    static Tensor matmulTransposedA(const Tensor& a, const Tensor& b);
    static Tensor transposed2d(const Tensor& a);

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace refseg
