#include "ivtf/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ivtf/errors.hpp"
#include "ivtf/linalg.hpp"

namespace ivtf {

std::string method_name(Method m) {
    switch (m) {
        case Method::Ols: return "ols";
        case Method::TwoSls: return "2sls";
        case Method::RidgeTwoSls: return "ridge-2sls";
    }
    return "unknown";
}

EstimatorOutput ols(const Dataset& data) {
    data.validate();
    return {least_squares(data.X, data.Y), std::nullopt, Method::Ols};
}

EstimatorOutput two_sls(const Dataset& data) {
    data.validate();
    Matrix theta = least_squares(data.Z, data.X);
    const Matrix fitted = matmul(data.Z, theta);  // ZΘ̂
    Vector beta = matvec(pseudo_inverse(gram(fitted)), matvec_t(fitted, data.Y));
    return {std::move(beta), std::move(theta), Method::TwoSls};
}

EstimatorOutput ridge_two_sls(const Dataset& data, double lambda, double tau, RidgeConvention convention) {
    data.validate();
    if (!(lambda >= 0.0) || !(tau >= 0.0)) throw std::invalid_argument("ridge_two_sls: lambda and tau must be >= 0");
    const double w = convention == RidgeConvention::GradientStep ? 1.0 : 2.0 / static_cast<double>(data.n());

    Matrix zz = w * gram(data.Z);
    for (std::size_t i = 0; i < zz.rows(); ++i) zz(i, i) += tau;
    Matrix theta = matmul(pseudo_inverse(zz), w * matmul_tn(data.Z, data.X));

    const Matrix fitted = matmul(data.Z, theta);
    Matrix ff = w * gram(fitted);
    for (std::size_t i = 0; i < ff.rows(); ++i) ff(i, i) += lambda;
    Vector beta = matvec(pseudo_inverse(ff), w * matvec_t(fitted, data.Y));
    return {std::move(beta), std::move(theta), Method::RidgeTwoSls};
}

Vector clipped_beta(const EstimatorOutput& out, double bound) { return clip(out.beta_hat, bound); }

Vector canonical_correlations(const Dataset& data) {
    const std::size_t p = data.X.cols(), q = data.Z.cols();
    const Matrix sxx_isqrt = pseudo_inverse(symmetric_sqrt(gram(data.X)));
    const Matrix szx = matmul_tn(data.Z, data.X);
    const Matrix a = matmul(szx, sxx_isqrt);  // q x p
    Matrix m = matmul_tn(a, matmul(pseudo_inverse(gram(data.Z)), a));
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < i; ++j) m(i, j) = m(j, i) = 0.5 * (m(i, j) + m(j, i));
    const SymEigen eig = sym_eigen(m);
    Vector out(std::min(p, q));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(std::clamp(eig.values[i], 0.0, 1.0));
    return out;
}

double mean_canonical_correlation(const Dataset& data) {
    const Vector rho = canonical_correlations(data);
    if (rho.empty()) return 0.0;
    double s = 0.0;
    for (double v : rho) s += v;
    return s / static_cast<double>(rho.size());
}

std::size_t bound_n_min(std::size_t p, std::size_t q, double K, double K0, double b_z, double c_const) {
    const double pd = static_cast<double>(p);
    const double qd = static_cast<double>(q);
    const double cb = c_const * c_const * std::pow(b_z, 4);
    const double first = 4.0 * cb * (qd + std::log(4.0 * cb * K / qd) - 1.5);
    const double second = qd * std::exp(1.5) / K;
    const double third = pd * pd * (qd + 1.0) * (qd + 1.0) * K / (qd * K0 * K0);
    const double m = std::max({first, second, third, 1.0});
    if (!std::isfinite(m)) throw std::domain_error("bound_n_min: threshold is not finite (check K and K0)");
    return static_cast<std::size_t>(std::ceil(m));
}

double bound_C(std::size_t n, std::size_t p, std::size_t q, const BoundReport& k) {
    const double nd = static_cast<double>(n);
    const double qd = static_cast<double>(q);
    const double log_term = std::log(k.K / qd * nd);
    const double dev =
        std::sqrt(2.0 * static_cast<double>(p) * (qd + 1.0) * k.b_eps2 * k.b_eps2 * log_term / (k.lambda_min_sigma_z * nd));
    const double shrink = 1.0 - k.c_const * k.b_z * k.b_z * (std::sqrt(qd) + std::sqrt(log_term - 0.5)) / std::sqrt(nd);
    const double gap = k.sigma_min_theta - dev;
    if (!(log_term > 0.5) || !(shrink > 0.0) || !(gap > 0.0)) return std::numeric_limits<double>::infinity();
    return (k.b_theta + dev) * k.b_z / (k.lambda_min_sigma_z * shrink * shrink * gap * gap);
}

BoundReport bound_constants(const TaskParams& task, const BoundInputs& in) {
    task.validate();
    BoundReport r;
    r.c_const = in.c_const;
    r.b_beta = in.b_beta;
    r.b_theta = in.b_theta;
    r.b_z = in.b_z;
    r.b_eps2 = in.b_eps2;
    r.sigma1_sq = in.sigma1_sq.value_or(task.structural_error_variance());
    r.lambda_min_sigma_z = sym_eigen(task.sigma_z).min();
    r.sigma_min_theta = sigma_min(task.theta);

    r.K = r.lambda_min_sigma_z / (6.0 * in.b_z * in.b_z);
    r.K0 = r.lambda_min_sigma_z * r.sigma_min_theta * r.sigma_min_theta / (2.0 * in.b_eps2 * in.b_eps2);
    r.n_min = bound_n_min(task.p(), task.q(), r.K, r.K0, in.b_z, in.c_const);
    r.C_limit = in.b_theta * in.b_z / (r.lambda_min_sigma_z * r.sigma_min_theta * r.sigma_min_theta);
    return r;
}

BoundReport mse_bound(const TaskParams& task, const BoundInputs& in, std::size_t n) {
    BoundReport r = bound_constants(task, in);
    if (n < r.n_min) throw ThresholdNotMetError(n, r.n_min);

    r.C_n = bound_C(n, task.p(), task.q(), r);
    r.degenerate = !std::isfinite(r.C_n);
    const double qn = static_cast<double>(task.q()) / static_cast<double>(n);
    r.mse_bound = qn * (r.b_beta * r.b_beta / r.K + r.C_n * r.C_n * r.sigma1_sq);
    return r;
}

}  // namespace ivtf
