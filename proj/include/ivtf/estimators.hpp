#pragma once

#include <optional>
#include <string>

#include "ivtf/datagen.hpp"
#include "ivtf/matrix.hpp"

namespace ivtf {

enum class Method { Ols, TwoSls, RidgeTwoSls };

std::string method_name(Method m);

struct EstimatorOutput {
    Vector beta_hat;
    std::optional<Matrix> theta_hat;  // first stage; absent for OLS
    Method method = Method::Ols;

    double predict(std::span<const double> x) const { return dot(beta_hat, x); }
};

/// Penalty scaling for the ridge first/second stages.
enum class RidgeConvention {
    /// (ZᵀZ + τI)⁻¹ZᵀX and (Θ̂ᵀZᵀZΘ̂ + λI)⁻¹Θ̂ᵀZᵀY; fixed point of the ridge GD updates.
    GradientStep,
    /// Stationary point of (1/n)‖·‖² + (τ/2)‖·‖², i.e. ((2/n)ZᵀZ + τI)⁻¹(2/n)ZᵀX.
    NormalizedObjective,
};

EstimatorOutput ols(const Dataset& data);
EstimatorOutput two_sls(const Dataset& data);
EstimatorOutput ridge_two_sls(const Dataset& data, double lambda, double tau,
                              RidgeConvention convention = RidgeConvention::GradientStep);

/// β̂ rescaled onto the radius-B_β ball (same operator as datagen's clip).
Vector clipped_beta(const EstimatorOutput& out, double bound);

/// Sample canonical correlations between the columns of Z and X (uncentred
/// second moments), descending, min(p, q) of them, each in [0, 1].
Vector canonical_correlations(const Dataset& data);

/// Mean of canonical_correlations(data); a diagnostic of instrument strength.
double mean_canonical_correlation(const Dataset& data);

/// Bound-related constants. Any B left at kUnbounded makes K or K₀ zero.
struct BoundInputs {
    double b_beta = 1.0;
    double b_theta = 1.0;
    double b_z = 1.0;
    double b_eps2 = 1.0;
    std::optional<double> sigma1_sq;  // variance of ε₁; taken from the task when absent
    double c_const = 1.0;
};

/// Diagnostic evaluation of the 2SLS MSE envelope (q/n)(B_β²/K + C(n)²σ₁²)
/// with the hidden absolute constant set to 1. This is a scale, not a
/// certified bound.
struct BoundReport {
    double K = 0.0;
    double K0 = 0.0;
    double C_n = 0.0;
    double C_limit = 0.0;  // C(n) as n → ∞
    std::size_t n_min = 0;
    double mse_bound = 0.0;
    bool degenerate = false;  // a denominator in C(n) is not positive at this n
    double c_const = 1.0;
    double b_beta = 0.0, b_theta = 0.0, b_z = 0.0, b_eps2 = 0.0;
    double sigma1_sq = 0.0;
    double lambda_min_sigma_z = 0.0;
    double sigma_min_theta = 0.0;
};

/// Sample-size threshold: the largest of the three conditions, rounded up.
std::size_t bound_n_min(std::size_t p, std::size_t q, double K, double K0, double b_z, double c_const);

/// C(n) alone; returns +inf when the expression's denominators are not positive.
double bound_C(std::size_t n, std::size_t p, std::size_t q, const BoundReport& constants);

/// K, K₀, n_min and the limit of C(n); the n-dependent fields are left at zero.
BoundReport bound_constants(const TaskParams& task, const BoundInputs& inputs);

/// Throws ThresholdNotMetError when n < n_min.
BoundReport mse_bound(const TaskParams& task, const BoundInputs& inputs, std::size_t n);

}  // namespace ivtf
