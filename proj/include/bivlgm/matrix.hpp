#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bivlgm {

/// Raised when operand shapes are incompatible. The message names both shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles. Every matrix has at least one row and
/// one column.
class Matrix {
public:
    Matrix() : Matrix(1, 1) {}
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix scalar(double v) { return Matrix(1, 1, v); }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_string() const;

    bool operator==(const Matrix& o) const = default;

    Matrix& operator+=(const Matrix& o);
    Matrix& operator-=(const Matrix& o);
    Matrix& operator*=(double s);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

// Plain (non-differentiable) kernels. The tape in autodiff.hpp wraps these.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // transpose(a) * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * transpose(b)
Matrix transpose(const Matrix& a);
Matrix row_softmax(const Matrix& a);
Matrix hadamard(const Matrix& a, const Matrix& b);

std::vector<double> row_sums(const Matrix& a);
std::vector<double> col_sums(const Matrix& a);
double sum(const Matrix& a);
double mean(const Matrix& a);
double max_abs(const Matrix& a);
double frobenius_norm(const Matrix& a);
bool all_finite(const Matrix& a);

/// Largest |row sum - 1| and |col sum - 1|.
double doubly_stochastic_deviation(const Matrix& a);

/// Permutation matrix P with P(i, perm[i]) = 1, so (P * X) row i is X row perm[i].
Matrix permutation_matrix(std::span<const std::size_t> perm);

void require_same_shape(const Matrix& a, const Matrix& b, const char* what);

}  // namespace bivlgm
