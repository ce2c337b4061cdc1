#include "ivtf/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ivtf/errors.hpp"

namespace ivtf {

namespace {

constexpr double kAsymmetryTol = 1e-10;
constexpr double kJacobiTol = 1e-12;
constexpr int kMaxSweeps = 100;

double off_diagonal_norm(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
}

void rotate(Matrix& a, Matrix& v, std::size_t p, std::size_t q) {
    const double apq = a(p, q);
    const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
    const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
    const double c = 1.0 / std::sqrt(t * t + 1.0);
    const double s = t * c;
    const std::size_t n = a.rows();
    for (std::size_t k = 0; k < n; ++k) {
        const double akp = a(k, p);
        const double akq = a(k, q);
        a(k, p) = c * akp - s * akq;
        a(k, q) = s * akp + c * akq;
    }
    for (std::size_t k = 0; k < n; ++k) {
        const double apk = a(p, k);
        const double aqk = a(q, k);
        a(p, k) = c * apk - s * aqk;
        a(q, k) = s * apk + c * aqk;
    }
    a(p, q) = 0.0;
    a(q, p) = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double vkp = v(k, p);
        const double vkq = v(k, q);
        v(k, p) = c * vkp - s * vkq;
        v(k, q) = s * vkp + c * vkq;
    }
}

// Eigenvalues below -tol*scale are a PSD violation; those within ±tol*scale are rank-deficient.
double checked_psd_scale(const SymEigen& e, double rel_tol) {
    double scale = 0.0;
    for (double l : e.values) scale = std::max(scale, std::abs(l));
    if (!e.values.empty() && e.min() < -rel_tol * scale) {
        throw NotPsdError("matrix is not positive semidefinite (eigenvalue " + std::to_string(e.min()) + ")");
    }
    return scale;
}

}  // namespace

SymEigen sym_eigen(const Matrix& input) {
    if (!input.is_square()) throw DimensionError("sym_eigen: matrix is not square");
    const std::size_t n = input.rows();
    const double scale = max_abs(input);
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (std::abs(input(i, j) - input(j, i)) > kAsymmetryTol * scale) {
                throw AsymmetryError("sym_eigen: matrix is not symmetric at (" + std::to_string(i) + ", " +
                                     std::to_string(j) + ")");
            }
            a(i, j) = 0.5 * (input(i, j) + input(j, i));
        }
    }

    Matrix v = Matrix::identity(n);
    const double target = kJacobiTol * frobenius_norm(a);
    for (int sweep = 0; sweep < kMaxSweeps && off_diagonal_norm(a) > target; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q)
                if (a(p, q) != 0.0) rotate(a, v, p, q);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

    SymEigen out{Vector(n), Matrix(n, n)};
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t src = order[k];
        out.values[k] = a(src, src);
        // sign convention: the largest-magnitude component of each eigenvector is positive
        std::size_t arg = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (std::abs(v(i, src)) > std::abs(v(arg, src))) arg = i;
        const double sign = v(arg, src) < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = sign * v(i, src);
    }
    return out;
}

Matrix pseudo_inverse(const Matrix& a, double rel_tol) {
    const SymEigen e = sym_eigen(a);
    const double scale = checked_psd_scale(e, rel_tol);
    const std::size_t n = a.rows();
    Matrix out(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const double l = e.values[k];
        if (l <= rel_tol * scale || l <= 0.0) continue;
        const double inv = 1.0 / l;
        for (std::size_t i = 0; i < n; ++i) {
            const double vi = e.vectors(i, k) * inv;
            for (std::size_t j = 0; j < n; ++j) out(i, j) += vi * e.vectors(j, k);
        }
    }
    return out;
}

Matrix least_squares(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw DimensionError("least_squares: row counts differ");
    return matmul(pseudo_inverse(gram(a)), matmul_tn(a, b));
}

Vector least_squares(const Matrix& a, std::span<const double> b) {
    if (a.rows() != b.size()) throw DimensionError("least_squares: row counts differ");
    return matvec(pseudo_inverse(gram(a)), matvec_t(a, b));
}

Matrix symmetric_sqrt(const Matrix& a, double rel_tol) {
    const SymEigen e = sym_eigen(a);
    const double scale = checked_psd_scale(e, rel_tol);
    const std::size_t n = a.rows();
    Matrix out(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const double l = e.values[k];
        if (l <= rel_tol * scale || l <= 0.0) continue;
        const double r = std::sqrt(l);
        for (std::size_t i = 0; i < n; ++i) {
            const double vi = e.vectors(i, k) * r;
            for (std::size_t j = 0; j < n; ++j) out(i, j) += vi * e.vectors(j, k);
        }
    }
    return out;
}

double sigma_max_squared(const Matrix& a) {
    if (a.empty()) return 0.0;
    return std::max(0.0, sym_eigen(gram(a)).max());
}

double sigma_min(const Matrix& a) {
    if (a.empty()) return 0.0;
    return std::sqrt(std::max(0.0, sym_eigen(gram(a)).min()));
}

double contraction_radius(const Matrix& s, double step) {
    const SymEigen e = sym_eigen(s);
    double r = 0.0;
    for (double l : e.values) r = std::max(r, std::abs(1.0 - step * l));
    return r;
}

}  // namespace ivtf
