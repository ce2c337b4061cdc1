#pragma once

#include "ivtf/matrix.hpp"

namespace ivtf {

/// Eigenpairs of a symmetric matrix. Eigenvalues are sorted descending and
/// `vectors` holds the matching orthonormal eigenvectors as columns.
struct SymEigen {
    Vector values;
    Matrix vectors;

    double max() const { return values.front(); }
    double min() const { return values.back(); }
};

inline constexpr double kDefaultRankTol = 1e-10;

/// Cyclic Jacobi eigensolver. Stops when the off-diagonal Frobenius norm falls
/// below 1e-12 of the input's Frobenius norm.
///
/// Throws DimensionError for a non-square input and AsymmetryError when
/// max|A - Aᵀ| exceeds 1e-10 * max|A|.
SymEigen sym_eigen(const Matrix& a);

/// Moore-Penrose inverse of a symmetric PSD matrix. Eigenvalues at or below
/// rel_tol * max|λ| are treated as zero; an eigenvalue below -rel_tol * max|λ|
/// raises NotPsdError.
Matrix pseudo_inverse(const Matrix& a, double rel_tol = kDefaultRankTol);

/// argmin_S ‖A S - B‖_F, minimum-norm when AᵀA is rank deficient.
Matrix least_squares(const Matrix& a, const Matrix& b);

/// Vector right-hand side convenience for least_squares.
Vector least_squares(const Matrix& a, std::span<const double> b);

/// Symmetric PSD square root V diag(√λ) Vᵀ, with eigenvalues inside the
/// rank tolerance clamped to zero. Raises NotPsdError like pseudo_inverse.
Matrix symmetric_sqrt(const Matrix& a, double rel_tol = kDefaultRankTol);

/// Largest squared singular value of A, i.e. λ_max(AᵀA). Zero for an empty or zero matrix.
double sigma_max_squared(const Matrix& a);

/// Smallest singular value of a tall (or square) A, √λ_min(AᵀA).
double sigma_min(const Matrix& a);

/// Spectral radius of I - step * S for symmetric S, computed as max_i |1 - step λ_i(S)|.
double contraction_radius(const Matrix& s, double step);

}  // namespace ivtf
