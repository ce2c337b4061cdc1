#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "ivtf/errors.hpp"
#include "ivtf/estimators.hpp"
#include "ivtf/gd2sls.hpp"
#include "oracles.hpp"

using namespace ivtf;

namespace {

Dataset make(Matrix Z, Matrix X, Vector Y) {
    Dataset d;
    d.z_query = Vector(Z.cols(), 0.0);
    d.x_query = Vector(X.cols(), 0.0);
    d.Z = std::move(Z);
    d.X = std::move(X);
    d.Y = std::move(Y);
    return d;
}

TaskParams unit_task() {
    TaskParams t;
    t.theta = Matrix::from_rows({{1}});
    t.beta = {1.0};
    t.confound_x = Matrix::from_rows({{1}});
    t.confound_y = {1.0};
    t.sigma_z = Matrix::identity(1);
    t.sigma_u = Matrix::identity(1);
    t.sigma_omega = Matrix::identity(1);
    t.sigma_eps = 1.0;
    return t;
}

}  // namespace

TEST_SUITE("estimators") {
    TEST_CASE("ols examples") {
        const auto scalar = ols(make(Matrix::from_rows({{1}, {1}}), Matrix::from_rows({{1}, {2}}), {2, 4}));
        CHECK(std::abs(scalar.beta_hat[0] - 2.0) <= 1e-14);
        CHECK_FALSE(scalar.theta_hat.has_value());

        RngStream rng(1, 0);
        const Matrix X = testutil::random_matrix(20, 3, rng);
        const Vector beta{1.0, -2.0, 0.5};
        const auto exact = ols(make(testutil::random_matrix(20, 2, rng), X, matvec(X, beta)));
        CHECK(oracle::max_diff(exact.beta_hat, beta) <= 1e-12);
    }

    TEST_CASE("two_sls scalar projection") {
        const auto out = two_sls(make(Matrix::from_rows({{2}}), Matrix::from_rows({{4}}), {8}));
        CHECK(std::abs((*out.theta_hat)(0, 0) - 2.0) <= 1e-14);
        CHECK(std::abs(out.beta_hat[0] - 2.0) <= 1e-14);
        CHECK(out.method == Method::TwoSls);
    }

    TEST_CASE("two_sls is exact without noise") {
        RngStream rng(2, 0);
        auto task = sample_task(3, 5, rng);
        task.sigma_u = Matrix(3, 3);
        task.sigma_omega = Matrix(3, 3);
        task.sigma_eps = 0.0;
        RngStream prng(3, 0);
        const auto d = generate_prompt(task, 30, {}, scenario::Standard{}, prng).first;
        CHECK(oracle::max_diff(two_sls(d).beta_hat, task.beta) <= 1e-10);
        // X lies in the column space of Z, so OLS coincides
        CHECK(oracle::max_diff(ols(d).beta_hat, two_sls(d).beta_hat) <= 1e-10);
    }

    TEST_CASE("two_sls matches the projection-matrix oracle") {
        for (std::uint64_t s = 0; s < 10; ++s) {
            const auto d = testutil::standard_prompt(5, 10, 50, 100 + s);
            const auto expected = oracle::two_sls(oracle::from(d.Z), oracle::from(d.X), d.Y);
            CHECK(oracle::max_diff(two_sls(d).beta_hat, expected) <= 1e-9);
        }
    }

    TEST_CASE("two_sls is invariant to rescaling the instruments") {
        const auto d = testutil::standard_prompt(3, 6, 40, 7);
        Dataset scaled = d;
        scaled.Z = -3.5 * d.Z;
        CHECK(oracle::max_diff(two_sls(d).beta_hat, two_sls(scaled).beta_hat) <= 1e-9);
    }

    TEST_CASE("irrelevant instruments still give finite output") {
        RngStream rng(8, 0);
        const Matrix Z = testutil::random_matrix(20, 4, rng);
        const auto out = two_sls(make(Z, Matrix(20, 2), testutil::random_vector(20, rng)));
        for (double b : out.beta_hat) CHECK(std::isfinite(b));
    }

    TEST_CASE("ridge_two_sls reductions") {
        const auto d = testutil::standard_prompt(3, 6, 40, 9);
        CHECK(oracle::max_diff(ridge_two_sls(d, 0.0, 0.0).beta_hat, two_sls(d).beta_hat) <= 1e-10);
        const auto big = ridge_two_sls(d, 0.0, 1e12);
        CHECK(frobenius_norm(*big.theta_hat) <= 1e-6);
        CHECK(big.method == Method::RidgeTwoSls);
    }

    TEST_CASE("ridge_two_sls matches the closed forms of both conventions") {
        const auto d = testutil::standard_prompt(2, 3, 25, 10);
        const double lambda = 0.7, tau = 1.3;
        const auto Z = oracle::from(d.Z), X = oracle::from(d.X);
        const double n = static_cast<double>(d.n());

        auto reg = [](oracle::Mat g, double s) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i][i] += s;
            return g;
        };
        const auto th = oracle::mul(oracle::inverse(reg(oracle::mul(oracle::tr(Z), Z), tau)), oracle::mul(oracle::tr(Z), X));
        const auto zt = oracle::mul(Z, th);
        const auto b = oracle::mul(oracle::inverse(reg(oracle::mul(oracle::tr(zt), zt), lambda)),
                                   oracle::mul(oracle::tr(zt), oracle::column(d.Y)));
        const auto out = ridge_two_sls(d, lambda, tau);
        CHECK(oracle::max_diff(th, *out.theta_hat) <= 1e-10);
        CHECK(std::abs(out.beta_hat[0] - b[0][0]) <= 1e-10);
        CHECK(std::abs(out.beta_hat[1] - b[1][0]) <= 1e-10);

        const auto zz = oracle::mul(oracle::tr(Z), Z);
        oracle::Mat scaled = zz;
        for (auto& r : scaled)
            for (auto& v : r) v *= 2.0 / n;
        auto zx = oracle::mul(oracle::tr(Z), X);
        for (auto& r : zx)
            for (auto& v : r) v *= 2.0 / n;
        const auto th_norm = oracle::mul(oracle::inverse(reg(scaled, tau)), zx);
        const auto norm_out = ridge_two_sls(d, lambda, tau, RidgeConvention::NormalizedObjective);
        CHECK(oracle::max_diff(th_norm, *norm_out.theta_hat) <= 1e-10);
    }

    TEST_CASE("ridge_two_sls equals the fixed point of ridge gradient descent") {
        const auto d = testutil::standard_prompt(3, 5, 40, 11);
        const double lambda = 0.5, tau = 2.0;
        const auto rates = ridge_safe_rates(d, lambda, tau);
        GDState s = GDState::zeros(3, 5);
        GDState prev;
        for (int t = 0; t < 200000; ++t) {
            prev = s;
            s = ridge_gd_step(s, d, rates, lambda, tau);
            if (max_abs(s.theta - prev.theta) <= 1e-15 && max_abs(s.beta - prev.beta) <= 1e-15) break;
        }
        const auto out = ridge_two_sls(d, lambda, tau);
        CHECK(oracle::max_diff(s.beta, out.beta_hat) <= 1e-7);
        CHECK(max_abs(s.theta - *out.theta_hat) <= 1e-7);
    }

    TEST_CASE("2SLS beats OLS under endogeneity at large n") {
        double mse_ols = 0.0, mse_2sls = 0.0;
        const std::size_t p = 3;
        for (std::uint64_t s = 0; s < 200; ++s) {
            TaskParams task;
            RngStream rng(12, s);
            auto task_rng = rng.child(0);
            task = sample_task(p, 5, task_rng);
            task.confound_x = Matrix::identity(p);
            task.confound_y = Vector(p, 1.0);
            auto prompt_rng = rng.child(1);
            const auto d = generate_prompt(task, 2000, {}, scenario::Standard{}, prompt_rng).first;
            const Vector e1 = ols(d).beta_hat - task.beta;
            const Vector e2 = clipped_beta(two_sls(d), kUnbounded) - task.beta;
            mse_ols += dot(e1, e1);
            mse_2sls += dot(e2, e2);
        }
        CHECK(mse_2sls < mse_ols);
    }

    TEST_CASE("clipped_beta follows the clip contract") {
        EstimatorOutput out;
        out.beta_hat = {3.0, 4.0};
        const auto c = clipped_beta(out, 1.0);
        CHECK(std::abs(c[0] - 0.6) <= 1e-15);
        CHECK(std::abs(c[1] - 0.8) <= 1e-15);
        CHECK(clipped_beta(out, 5.0) == out.beta_hat);
        CHECK(clipped_beta(out, kUnbounded) == out.beta_hat);
    }

    TEST_CASE("bound constants") {
        const auto task = unit_task();
        BoundInputs in;
        const auto r = bound_constants(task, in);
        CHECK(r.K == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
        CHECK(r.K0 == doctest::Approx(0.5).epsilon(1e-14));
        CHECK(r.sigma1_sq == doctest::Approx(2.0));
        CHECK(r.n_min >= 1);
        CHECK_THROWS_AS(mse_bound(task, in, r.n_min - 1), ThresholdNotMetError);
        try {
            mse_bound(task, in, r.n_min - 1);
        } catch (const ThresholdNotMetError& e) {
            CHECK(e.n_min() == r.n_min);
        }
    }

    TEST_CASE("bound decays with n and C(n) approaches its limit") {
        const auto task = unit_task();
        BoundInputs in;
        const auto b2000 = mse_bound(task, in, 2000);
        const auto b4000 = mse_bound(task, in, 4000);
        CHECK(b2000.mse_bound >= 0.0);
        CHECK(b4000.mse_bound < b2000.mse_bound);

        const auto gap = [&](std::size_t n) { return std::abs(mse_bound(task, in, n).C_n - b2000.C_limit); };
        const double g4 = gap(10000), g6 = gap(1000000), g8 = gap(100000000);
        CHECK(g6 < g4);
        CHECK(g8 < g6);
    }

    TEST_CASE("canonical correlations") {
        // p = 1: ρ² = xᵀP_Z x / xᵀx.
        RngStream rng(41, 0);
        const Matrix Z = testutil::random_matrix(30, 3, rng);
        const Matrix X = testutil::random_matrix(30, 1, rng);
        const Dataset d = make(Z, X, Vector(30, 0.0));
        const auto z = oracle::from(Z), x = oracle::from(X);
        const auto proj = oracle::mul(oracle::mul(z, oracle::inverse(oracle::mul(oracle::tr(z), z))), oracle::tr(z));
        const double num = oracle::mul(oracle::mul(oracle::tr(x), proj), x)[0][0];
        const double den = oracle::mul(oracle::tr(x), x)[0][0];
        const Vector rho = canonical_correlations(d);
        REQUIRE(rho.size() == 1);
        CHECK(rho[0] == doctest::Approx(std::sqrt(num / den)).epsilon(1e-10));

        // X inside span(Z) is perfectly correlated; X orthogonal to Z is not.
        Matrix Zs(4, 2), Xin(4, 2), Xout(4, 1);
        Zs(0, 0) = 1; Zs(1, 1) = 1;
        Xin(0, 0) = 2; Xin(0, 1) = 1; Xin(1, 1) = 3;
        Xout(2, 0) = 1; Xout(3, 0) = -2;
        const Vector full = canonical_correlations(make(Zs, Xin, Vector(4, 0.0)));
        REQUIRE(full.size() == 2);
        CHECK(full[0] == doctest::Approx(1.0));
        CHECK(full[1] == doctest::Approx(1.0));
        CHECK(mean_canonical_correlation(make(Zs, Xout, Vector(4, 0.0))) == doctest::Approx(0.0));

        // Descending, at most min(p, q) values.
        const Matrix X3 = testutil::random_matrix(30, 5, rng);
        const Vector r3 = canonical_correlations(make(Z, X3, Vector(30, 0.0)));
        REQUIRE(r3.size() == 3);
        CHECK(r3[0] >= r3[1]);
        CHECK(r3[1] >= r3[2]);
        CHECK(r3[2] >= 0.0);
        CHECK(r3[0] <= 1.0);
    }
}
