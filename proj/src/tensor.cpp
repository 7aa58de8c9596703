#include "roleattn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "roleattn/errors.hpp"

namespace roleattn {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(what) + ": expected a 2-D tensor, got " +
                         shape_string(t.shape()));
    }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
    }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("from_rows: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::rows() const {
    return shape_.empty() ? 1 : shape_.front();
}

std::size_t Tensor::cols() const {
    return shape_.empty() ? 1 : shape_.back();
}

void Tensor::fill(double v) {
    std::fill(data_.begin(), data_.end(), v);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor out = Tensor::matrix(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double* o = &out[i * m];
        for (std::size_t p = 0; p < k; ++p) {
            const double s = a[i * k + p];
            const double* br = &b[p * m];
            for (std::size_t j = 0; j < m; ++j) o[j] += s * br[j];
        }
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: inner dimensions differ " + shape_string(a.shape()) +
                         " * " + shape_string(b.shape()) + "^T");
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    Tensor out = Tensor::matrix(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
            out[i * m + j] = s;
        }
    }
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_tn");
    require_matrix(b, "matmul_tn");
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn: inner dimensions differ " + shape_string(a.shape()) +
                         "^T * " + shape_string(b.shape()));
    }
    const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
    Tensor out = Tensor::matrix(n, m);
    for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t i = 0; i < n; ++i) {
            const double s = a[p * n + i];
            double* o = &out[i * m];
            const double* br = &b[p * m];
            for (std::size_t j = 0; j < m; ++j) o[j] += s * br[j];
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    Tensor out = Tensor::matrix(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    require_matrix(x, "softmax_rows");
    Tensor out = Tensor::matrix(x.rows(), x.cols());
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto in = x.row(i);
        auto o = out.row(i);
        double mx = neg_inf;
        for (double v : in)
            if (v != neg_inf) mx = std::max(mx, v);
        if (mx == neg_inf) {
            throw DegenerateRowError("softmax_rows: row " + std::to_string(i) +
                                     " has no finite entry");
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = in[j] == neg_inf ? 0.0 : std::exp(in[j] - mx);
            sum += o[j];
        }
        for (double& v : o) v /= sum;
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_matrix(x, "layer_norm");
    const std::size_t d = x.cols();
    if (gain.size() != d || bias.size() != d) {
        throw ShapeError("layer_norm: gain/bias must match last dimension " + std::to_string(d));
    }
    Tensor out = Tensor::matrix(x.rows(), d);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto in = x.row(i);
        double mean = 0.0;
        for (double v : in) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : in) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        auto o = out.row(i);
        for (std::size_t j = 0; j < d; ++j) o[j] = (in[j] - mean) * inv * gain[j] + bias[j];
    }
    return out;
}

}  // namespace roleattn
