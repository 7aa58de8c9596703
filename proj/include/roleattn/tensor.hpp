#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace roleattn {

// Dense row-major tensor of doubles. Most of the library works on 2-D
// tensors; higher ranks only appear in storage (checkpoints, batches).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
        return Tensor({rows, cols}, fill);
    }
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    double& operator[](std::size_t i) { return data_[i]; }
    const double& operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(data_).subspan(r * cols(), cols());
    }
    std::span<double> row(std::size_t r) {
        return std::span<double>(data_).subspan(r * cols(), cols());
    }

    void fill(double v);
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

// Value-level kernels. All expect 2-D operands and throw ShapeError on
// mismatched dimensions.
Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// a^T * b
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Row-wise softmax. -inf entries map to exactly 0 and are ignored when
// picking the stabilizing row maximum. A row with no finite entry throws
// DegenerateRowError.
Tensor softmax_rows(const Tensor& x);

// Per-row standardization followed by gain * x + bias over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

}  // namespace roleattn
