#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace ivtf {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
///
/// Constructing from caller-supplied entries validates shape and finiteness;
/// arithmetic results are built in place and are not re-checked (a diverging
/// iteration must be able to hold Inf so the caller can detect it).
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

    static Matrix identity(std::size_t n);
    static Matrix diagonal(std::span<const double> d);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix column_vector(std::span<const double> v);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    bool is_square() const noexcept { return rows_ == cols_; }

    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }
    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    Vector column(std::size_t j) const;
    void set_column(std::size_t j, std::span<const double> v);

    Matrix transpose() const;
    bool all_finite() const noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);
Matrix& operator+=(Matrix& a, const Matrix& b);
Matrix& operator-=(Matrix& a, const Matrix& b);

Matrix matmul(const Matrix& a, const Matrix& b);      // A B
Matrix matmul_tn(const Matrix& a, const Matrix& b);   // Aᵀ B
Matrix gram(const Matrix& a);                         // Aᵀ A, exactly symmetric
Vector matvec(const Matrix& a, std::span<const double> x);    // A x
Vector matvec_t(const Matrix& a, std::span<const double> x);  // Aᵀ x

double max_abs(const Matrix& a) noexcept;
double frobenius_norm(const Matrix& a) noexcept;

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v) noexcept;
double max_abs(std::span<const double> v) noexcept;
bool all_finite(std::span<const double> v) noexcept;
Vector operator-(const Vector& a, const Vector& b);
Vector operator+(const Vector& a, const Vector& b);
Vector operator*(double s, const Vector& v);

}  // namespace ivtf
