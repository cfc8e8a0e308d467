#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace jam {

class Rng;

// Dense row-major tensor of 64-bit floats.
//
// Rank 0 holds a scalar, rank 1 a vector, rank 2 a matrix. Every
// differentiable op in the library works on rank <= 2; rows()/cols() treat a
// vector as a single row.
class Tensor {
public:
    using Shape = std::vector<std::size_t>;

    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }
    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);
    static Tensor randn(Shape shape, double stddev, Rng& rng);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }
    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(data_).subspan(r * cols(), cols());
    }

    double item() const;
    bool all_finite() const;

    // Bitwise equality of shape and contents.
    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

std::size_t shape_size(const Tensor::Shape& shape);
std::string shape_string(const Tensor::Shape& shape);

// Throws NumericError naming `what` if any element is NaN or infinite.
void require_finite(const Tensor& t, const char* what);

// Plain kernels shared by the autodiff ops and by inference code paths.
namespace kernels {

// out = a * b for a (m x k), b (k x n).
Tensor matmul(const Tensor& a, const Tensor& b);
// out = a * b^T for a (m x k), b (n x k).
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// out = a^T * b for a (k x m), b (k x n).
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Numerically stable log(sum(exp(x))) over a row.
double log_sum_exp(std::span<const double> row);

// Rounds every element through IEEE single precision.
Tensor round_to_f32(const Tensor& t);

}  // namespace kernels

}  // namespace jam
