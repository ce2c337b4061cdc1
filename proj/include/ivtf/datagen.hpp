#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <variant>

#include "ivtf/matrix.hpp"
#include "ivtf/rng.hpp"

namespace ivtf {

inline constexpr double kUnbounded = std::numeric_limits<double>::infinity();

/// Parameters of one IV task:
///   x = Θᵀ z + Φᵀ u + ω,   y = βᵀ x + φᵀ u + ε
/// with z ~ N(0, Σ_z), u ~ N(0, Σ_u), ω ~ N(0, Σ_ω), ε ~ N(0, σ_ε²).
struct TaskParams {
    Matrix theta;         // q x p, first-stage coefficients Θ
    Vector beta;          // p, structural coefficients β
    Matrix confound_x;    // p x p, Φ: how u enters x
    Vector confound_y;    // p, φ: how u enters y
    Matrix sigma_z;       // q x q
    Matrix sigma_u;       // p x p
    Matrix sigma_omega;   // p x p
    double sigma_eps = 1.0;

    std::size_t p() const noexcept { return theta.cols(); }
    std::size_t q() const noexcept { return theta.rows(); }

    /// Shapes, symmetry and PSD-ness of the covariance fields.
    void validate() const;

    /// Variance of the structural error ε₁ = φᵀu + ε, i.e. φᵀΣ_uφ + σ_ε².
    double structural_error_variance() const;
};

/// Norm clipping radii. kUnbounded disables a bound.
struct ClipBounds {
    double z = kUnbounded;
    double x = kUnbounded;
    double y = kUnbounded;
    double beta = kUnbounded;

    void validate() const;
};

/// Observed prompt: n training rows plus one query row.
struct Dataset {
    Matrix Z;  // n x q
    Matrix X;  // n x p
    Vector Y;  // n
    Vector z_query;
    Vector x_query;
    double y_query = 0.0;

    std::size_t n() const noexcept { return Z.rows(); }
    std::size_t p() const noexcept { return X.cols(); }
    std::size_t q() const noexcept { return Z.cols(); }

    /// n >= 1, consistent shapes, all entries finite.
    void validate() const;
};

/// Every random draw behind one prompt. Row n of `z`, `omega` and `eps` is the
/// query; the query row never receives a u draw.
struct GenerationTrace {
    Matrix z;      // (n+1) x q, already N(0, Σ_z)
    Matrix u;      // n x p, N(0, Σ_u)
    Matrix omega;  // (n+1) x p, N(0, Σ_ω)
    Vector eps;    // n+1, N(0, σ_ε²)
    // variant-specific extras, empty unless the variant needs them
    Matrix mlp_hidden;   // hidden x q
    Matrix mlp_output;   // p x hidden
    Matrix dup_x_noise;  // (n+1) x dup_x, standard normal
    Matrix dup_z_noise;  // (n+1) x dup_z, standard normal
};

namespace scenario {
struct Standard {};
/// Θ scaled by r when generating x.
struct IvStrength {
    double r = 1.0;
};
/// x = Θᵀ(z ⊙ z) + endogenous error.
struct QuadraticIv {};
/// Instruments q_eff.. are zeroed (rows keep the ambient width q).
struct UnderIdentified {
    std::size_t q_eff = 3;
};
/// The last dup_x columns of X (dup_z of Z) are near-copies, 2·col[j - dup] + N(0, jitter).
struct Multicollinearity {
    std::size_t dup_x = 1;
    std::size_t dup_z = 1;
    double jitter = 1e-6;
};
/// x = W₂ relu(W₁ z) + endogenous error, W entries N(0, 1), no biases.
struct NonlinearMlp {
    std::size_t hidden = 16;
};
/// u scaled by r.
struct EndogeneityStrength {
    double r = 1.0;
};
}  // namespace scenario

using ScenarioVariant = std::variant<scenario::Standard, scenario::IvStrength, scenario::QuadraticIv,
                                     scenario::UnderIdentified, scenario::Multicollinearity,
                                     scenario::NonlinearMlp, scenario::EndogeneityStrength>;

/// Throws std::invalid_argument when the variant's parameters are out of range for (p, q).
void validate_variant(const ScenarioVariant& v, std::size_t p, std::size_t q);

std::string variant_name(const ScenarioVariant& v);

/// Task with Θ, β, Φ, φ entries i.i.d. N(0, 1), identity covariances and σ_ε = 1.
TaskParams sample_task(std::size_t p, std::size_t q, RngStream& rng);

/// Draws the randomness for one prompt (consumes rng in a fixed order: per
/// training row z, u, ω, ε; then the query's z, ω, ε; then variant extras).
GenerationTrace draw_trace(const TaskParams& task, std::size_t n, const ScenarioVariant& variant, RngStream& rng);

/// Deterministic map from draws to the observed prompt, applying the variant
/// and then clipping.
Dataset assemble_prompt(const TaskParams& task, const GenerationTrace& trace, const ClipBounds& bounds,
                        const ScenarioVariant& variant);

std::pair<Dataset, GenerationTrace> generate_prompt(const TaskParams& task, std::size_t n, const ClipBounds& bounds,
                                                    const ScenarioVariant& variant, RngStream& rng);

/// Rescales v onto the ball of radius bound when ‖v‖ > bound.
Vector clip(std::span<const double> v, double bound);
double clip(double v, double bound);

}  // namespace ivtf
