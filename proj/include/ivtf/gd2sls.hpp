#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivtf/datagen.hpp"
#include "ivtf/matrix.hpp"

namespace ivtf {

/// Step sizes for the coupled updates: α drives β, η drives Θ.
struct LearningRates {
    double alpha = 0.0;
    double eta = 0.0;
};

/// Iterate of the bi-level gradient procedure.
struct GDState {
    Matrix theta;  // q x p
    Vector beta;   // p
    std::size_t t = 0;

    static GDState zeros(std::size_t p, std::size_t q);
};

struct RateThresholds {
    double alpha_max = 0.0;  // 2 / σ_max²(ZΘ̂)
    double eta_max = 0.0;    // 2 / σ_max²(Z)
};

/// Spectral radii certifying geometric convergence; lambda = max(gamma, kappa).
struct ContractionReport {
    double gamma = 0.0;
    double kappa = 0.0;
    double lambda = 0.0;
};

/// A trajectory of iterates together with distances to the closed-form 2SLS solution.
struct Trajectory {
    std::vector<GDState> states;
    std::vector<double> dist_to_2sls;  // ‖β^(t) - β̂_2SLS‖
    std::vector<double> dist_theta;    // ‖Θ^(t) - Θ̂‖_F
};

/// Raised when an iterate has a non-finite entry or one above 1e30 in magnitude.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(GDState last_finite, std::size_t t, Trajectory partial)
        : std::runtime_error("gradient iteration diverged at t=" + std::to_string(t)),
          last_finite_(std::move(last_finite)),
          t_(t),
          partial_(std::move(partial)) {}

    const GDState& last_finite() const noexcept { return last_finite_; }
    std::size_t t() const noexcept { return t_; }
    const Trajectory& partial() const noexcept { return partial_; }

private:
    GDState last_finite_;
    std::size_t t_;
    Trajectory partial_;
};

inline constexpr double kDivergenceMagnitude = 1e30;

RateThresholds max_learning_rates(const Dataset& data);

/// fraction * thresholds; the default 0.75 is the "safe" mode.
LearningRates safe_rates(const Dataset& data, double fraction = 0.75);

/// α* = 1/σ_max²(ZΘ̂), η* = 1/σ_max²(Z).
LearningRates optimal_rates(const Dataset& data);

/// Thresholds of the ridge iteration: 2/(σ_max²(ZΘ̂_ridge) + λ) and 2/(σ_max²(Z) + τ).
RateThresholds ridge_max_learning_rates(const Dataset& data, double lambda, double tau);
LearningRates ridge_safe_rates(const Dataset& data, double lambda, double tau, double fraction = 0.75);

ContractionReport contraction_factors(const Dataset& data, const LearningRates& rates);

/// Ridge variant: radii of I - η(ZᵀZ + τI) and I - α(Θ̂ᵀZᵀZΘ̂ + λI), with Θ̂ the ridge first stage.
ContractionReport ridge_contraction_factors(const Dataset& data, const LearningRates& rates, double lambda, double tau);

/// One exact update:
///   Θ⁺ = Θ - η Zᵀ(ZΘ - X)
///   β⁺ = β - α Θᵀ Zᵀ(ZΘβ - Y)      (β uses the pre-update Θ)
GDState gd_step(const GDState& state, const Dataset& data, const LearningRates& rates);

/// gd_step plus the ridge terms -ητΘ and -αλβ.
GDState ridge_gd_step(const GDState& state, const Dataset& data, const LearningRates& rates, double lambda, double tau);

bool is_diverged(const GDState& s) noexcept;

/// T steps from init (zeros when omitted). Distances are measured against
/// two_sls(data). Throws DivergenceError carrying the finite prefix.
Trajectory run_gd(const Dataset& data, const LearningRates& rates, std::size_t T, const GDState* init = nullptr);

/// Same with the ridge update; distances measured against ridge_two_sls (gradient-step convention).
Trajectory run_ridge_gd(const Dataset& data, const LearningRates& rates, std::size_t T, double lambda, double tau,
                        const GDState* init = nullptr);

}  // namespace ivtf
