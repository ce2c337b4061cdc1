#include "ivtf/gd2sls.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ivtf/errors.hpp"
#include "ivtf/estimators.hpp"
#include "ivtf/linalg.hpp"

namespace ivtf {

namespace {

double threshold(double sigma_sq) {
    return sigma_sq > 0.0 ? 2.0 / sigma_sq : std::numeric_limits<double>::infinity();
}

void check_state(const GDState& s, const Dataset& d) {
    if (s.theta.rows() != d.q() || s.theta.cols() != d.p() || s.beta.size() != d.p()) {
        throw DimensionError("gradient state does not match the dataset dimensions");
    }
}

GDState step_impl(const GDState& s, const Dataset& d, const LearningRates& r, double lambda, double tau) {
    check_state(s, d);
    const Matrix fitted = matmul(d.Z, s.theta);  // ZΘ
    const Matrix first_resid = fitted - d.X;
    Vector second_resid = matvec(fitted, s.beta);
    for (std::size_t i = 0; i < second_resid.size(); ++i) second_resid[i] -= d.Y[i];

    GDState next;
    next.theta = s.theta - r.eta * matmul_tn(d.Z, first_resid);
    if (tau != 0.0) next.theta -= (r.eta * tau) * s.theta;
    next.beta = s.beta - r.alpha * matvec_t(fitted, second_resid);
    if (lambda != 0.0) next.beta = next.beta - (r.alpha * lambda) * s.beta;
    next.t = s.t + 1;
    return next;
}

template <class Step>
Trajectory run_impl(const GDState& start, std::size_t T, const EstimatorOutput& target, Step step) {
    if (T < 1) throw std::invalid_argument("run_gd: T must be >= 1");
    const Matrix& theta_hat = *target.theta_hat;
    Trajectory tr;
    tr.states.reserve(T + 1);
    auto record = [&](GDState s) {
        tr.dist_to_2sls.push_back(norm2(s.beta - target.beta_hat));
        tr.dist_theta.push_back(frobenius_norm(s.theta - theta_hat));
        tr.states.push_back(std::move(s));
    };
    record(start);
    for (std::size_t t = 0; t < T; ++t) {
        GDState next = step(tr.states.back());
        if (is_diverged(next)) {
            GDState last = tr.states.back();
            throw DivergenceError(std::move(last), next.t, std::move(tr));
        }
        record(std::move(next));
    }
    return tr;
}

}  // namespace

GDState GDState::zeros(std::size_t p, std::size_t q) { return {Matrix(q, p), Vector(p, 0.0), 0}; }

RateThresholds max_learning_rates(const Dataset& data) {
    data.validate();
    const EstimatorOutput first = two_sls(data);
    return {threshold(sigma_max_squared(matmul(data.Z, *first.theta_hat))), threshold(sigma_max_squared(data.Z))};
}

static LearningRates scaled(const RateThresholds& th, double fraction) {
    // a zero Gram matrix makes every step size admissible; use a unit step
    auto pick = [&](double m) { return std::isfinite(m) ? fraction * m : 1.0; };
    return {pick(th.alpha_max), pick(th.eta_max)};
}

LearningRates safe_rates(const Dataset& data, double fraction) { return scaled(max_learning_rates(data), fraction); }

RateThresholds ridge_max_learning_rates(const Dataset& data, double lambda, double tau) {
    data.validate();
    const EstimatorOutput first = ridge_two_sls(data, lambda, tau);
    return {threshold(sigma_max_squared(matmul(data.Z, *first.theta_hat)) + lambda),
            threshold(sigma_max_squared(data.Z) + tau)};
}

LearningRates ridge_safe_rates(const Dataset& data, double lambda, double tau, double fraction) {
    return scaled(ridge_max_learning_rates(data, lambda, tau), fraction);
}

LearningRates optimal_rates(const Dataset& data) { return safe_rates(data, 0.5); }

ContractionReport contraction_factors(const Dataset& data, const LearningRates& rates) {
    data.validate();
    if (!(rates.alpha > 0.0) || !(rates.eta > 0.0)) throw std::invalid_argument("learning rates must be positive");
    const EstimatorOutput est = two_sls(data);
    ContractionReport r;
    r.gamma = contraction_radius(gram(matmul(data.Z, *est.theta_hat)), rates.alpha);
    r.kappa = contraction_radius(gram(data.Z), rates.eta);
    r.lambda = std::max(r.gamma, r.kappa);
    return r;
}

ContractionReport ridge_contraction_factors(const Dataset& data, const LearningRates& rates, double lambda, double tau) {
    data.validate();
    const EstimatorOutput est = ridge_two_sls(data, lambda, tau);
    Matrix ff = gram(matmul(data.Z, *est.theta_hat));
    Matrix zz = gram(data.Z);
    for (std::size_t i = 0; i < ff.rows(); ++i) ff(i, i) += lambda;
    for (std::size_t i = 0; i < zz.rows(); ++i) zz(i, i) += tau;
    ContractionReport r;
    r.gamma = contraction_radius(ff, rates.alpha);
    r.kappa = contraction_radius(zz, rates.eta);
    r.lambda = std::max(r.gamma, r.kappa);
    return r;
}

GDState gd_step(const GDState& state, const Dataset& data, const LearningRates& rates) {
    return step_impl(state, data, rates, 0.0, 0.0);
}

GDState ridge_gd_step(const GDState& state, const Dataset& data, const LearningRates& rates, double lambda, double tau) {
    return step_impl(state, data, rates, lambda, tau);
}

bool is_diverged(const GDState& s) noexcept {
    auto bad = [](std::span<const double> v) {
        for (double x : v)
            if (!std::isfinite(x) || std::abs(x) > kDivergenceMagnitude) return true;
        return false;
    };
    return bad(s.theta.data()) || bad(s.beta);
}

Trajectory run_gd(const Dataset& data, const LearningRates& rates, std::size_t T, const GDState* init) {
    data.validate();
    const GDState start = init ? *init : GDState::zeros(data.p(), data.q());
    check_state(start, data);
    const EstimatorOutput target = two_sls(data);
    return run_impl(start, T, target, [&](const GDState& s) { return gd_step(s, data, rates); });
}

Trajectory run_ridge_gd(const Dataset& data, const LearningRates& rates, std::size_t T, double lambda, double tau,
                        const GDState* init) {
    data.validate();
    const GDState start = init ? *init : GDState::zeros(data.p(), data.q());
    check_state(start, data);
    const EstimatorOutput target = ridge_two_sls(data, lambda, tau);
    return run_impl(start, T, target, [&](const GDState& s) { return ridge_gd_step(s, data, rates, lambda, tau); });
}

}  // namespace ivtf
