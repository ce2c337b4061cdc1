#include <doctest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "ivtf/errors.hpp"
#include "ivtf/estimators.hpp"
#include "ivtf/format.hpp"
#include "ivtf/harness.hpp"

using namespace ivtf;

namespace {

std::string sweep_csv(const ExperimentConfig& cfg) {
    std::ostringstream out;
    write_sweep_csv(out, run_experiment(cfg));
    return out.str();
}

ExperimentConfig small_config() {
    ExperimentConfig cfg;
    cfg.p = 2;
    cfg.q = 3;
    cfg.n_grid = {15, 25};
    cfg.sims = 12;
    cfg.seed = 5;
    cfg.loops = 20;
    cfg.estimators = {Estimator::Ols, Estimator::TwoSls, Estimator::RidgeTwoSls, Estimator::Tf, Estimator::TfRidge};
    return cfg;
}

Dataset noiseless_prompt(std::size_t p, std::size_t q, std::size_t n, std::uint64_t seed) {
    RngStream rng(seed, 0);
    auto task_rng = rng.child(0);
    auto task = sample_task(p, q, task_rng);
    task.sigma_u = Matrix(p, p);
    task.sigma_omega = Matrix(p, p);
    task.sigma_eps = 0.0;
    auto prompt_rng = rng.child(1);
    return generate_prompt(task, n, {}, scenario::Standard{}, prompt_rng).first;
}

}  // namespace

TEST_SUITE("harness") {
    TEST_CASE("names and rate specs parse") {
        for (auto e : {Estimator::Ols, Estimator::TwoSls, Estimator::RidgeTwoSls, Estimator::Tf, Estimator::TfRidge})
            CHECK(parse_estimator(estimator_name(e)) == e);
        CHECK_THROWS(parse_estimator("gmm"));
        CHECK(parse_rates("safe").mode == RatesMode::Safe);
        CHECK(parse_rates("optimal").mode == RatesMode::Optimal);
        const auto r = parse_rates("a=0.001,e=0.02");
        CHECK(r.mode == RatesMode::Explicit);
        CHECK(r.explicit_rates.alpha == 0.001);
        CHECK(r.explicit_rates.eta == 0.02);
        CHECK_THROWS(parse_rates("fast"));
        CHECK_THROWS(parse_rates("a=x,e=1"));
    }

    TEST_CASE("config validation") {
        ExperimentConfig cfg;
        CHECK_NOTHROW(cfg.validate());
        cfg.sims = 0;
        CHECK_THROWS(cfg.validate());
        cfg = {};
        cfg.delta = 0.0;
        CHECK_THROWS(cfg.validate());
        cfg = {};
        cfg.n_grid.clear();
        CHECK_THROWS(cfg.validate());
        cfg = {};
        cfg.scenario = scenario::UnderIdentified{3};
        CHECK(cfg.scenario_label().find("non-identified") != std::string::npos);
    }

    TEST_CASE("noise-free prompts give zero prediction error for every estimator") {
        std::vector<Dataset> prompts;
        for (std::uint64_t s = 0; s < 5; ++s) prompts.push_back(noiseless_prompt(2, 3, 20, 40 + s));
        TfPredictorOptions tf;
        tf.loops = 4000;
        CHECK(icl_loss_empirical([](const Dataset& d) { return ols(d).predict(d.x_query); }, prompts) <= 1e-20);
        CHECK(icl_loss_empirical([](const Dataset& d) { return two_sls(d).predict(d.x_query); }, prompts) <= 1e-20);
        CHECK(icl_loss_empirical(tf_predictor(tf), prompts) <= 1e-16);
    }

    TEST_CASE("icl loss examples") {
        std::vector<Dataset> prompts;
        for (std::uint64_t s = 0; s < 4; ++s) {
            auto d = testutil::standard_prompt(2, 3, 10, 50 + s);
            d.y_query = 3.0;
            prompts.push_back(d);
        }
        CHECK(icl_loss_empirical([](const Dataset& d) { return d.y_query; }, prompts) == 0.0);
        CHECK(icl_loss_empirical([](const Dataset&) { return 0.0; }, prompts) == 9.0);
    }

    TEST_CASE("constructed predictor matches 2SLS on shared prompts") {
        TfPredictorOptions opt;
        opt.loops = 500;
        const Predictor tf = tf_predictor(opt);
        std::vector<double> diff;
        for (std::uint64_t s = 0; s < 200; ++s) {
            const auto d = testutil::standard_prompt(5, 10, 50, 1000 + s);
            const double e_tf = tf(d) - d.y_query;
            const double e_iv = two_sls(d).predict(d.x_query) - d.y_query;
            diff.push_back(e_tf * e_tf - e_iv * e_iv);
        }
        const auto sum = summarize(diff);
        CHECK(std::abs(sum.mean) <= 2.0 * sum.standard_error + 1e-12);
    }

    TEST_CASE("sweep output schema and determinism") {
        const auto cfg = small_config();
        const auto records = run_experiment(cfg);
        CHECK(records.size() == cfg.n_grid.size() * cfg.estimators.size());
        for (const auto& r : records) {
            CHECK(r.sims + r.diverged == cfg.sims);
            CHECK(std::isfinite(r.icpe_mean));
            CHECK(r.icpe_mean >= 0.0);
            CHECK(r.icpe_stderr >= 0.0);
            CHECK(r.coef_mse_mean >= 0.0);
        }
        const std::string a = sweep_csv(cfg);
        CHECK(a.rfind("scenario,sweep_value,estimator,icpe_mean,icpe_stderr,coef_mse_mean,coef_mse_stderr,diverged,sims\n", 0) == 0);
        CHECK(a == sweep_csv(cfg));
        auto single = cfg;
        single.workers = 1;
        auto many = cfg;
        many.workers = 4;
        CHECK(sweep_csv(single) == sweep_csv(many));

        std::ostringstream wide;
        write_sweep_csv(wide, records, true);
        CHECK(wide.str().find(",icpe_stddev,coef_mse_stddev\n") != std::string::npos);
    }

    TEST_CASE("estimator choice changes values only") {
        auto cfg = small_config();
        cfg.estimators = {Estimator::TwoSls};
        const auto a = run_experiment(cfg);
        cfg.estimators = {Estimator::Ols};
        const auto b = run_experiment(cfg);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].sweep_value == b[i].sweep_value);
            CHECK(a[i].scenario == b[i].scenario);
        }
    }

    TEST_CASE("strength sweeps") {
        ExperimentConfig cfg = small_config();
        cfg.axis = SweepAxis::Strength;
        cfg.scenario = scenario::IvStrength{};
        cfg.r_grid = {0.5, 1.5};
        cfg.n = 30;
        cfg.estimators = {Estimator::TwoSls};
        const auto recs = run_experiment(cfg);
        REQUIRE(recs.size() == 2);
        CHECK(recs[0].sweep_value == 0.5);
        CHECK(recs[1].sweep_value == 1.5);
        // Stronger instruments raise the sample canonical correlation.
        REQUIRE(recs[0].canonical_corr_mean.has_value());
        CHECK(*recs[1].canonical_corr_mean > *recs[0].canonical_corr_mean);
        std::ostringstream out;
        write_sweep_csv(out, recs);
        CHECK(out.str().find(",sims,canonical_corr_mean\n") != std::string::npos);

        cfg.axis = SweepAxis::SampleSize;
        cfg.scenario = scenario::Standard{};
        cfg.n_grid = {30};
        const auto plain = run_experiment(cfg);
        CHECK_FALSE(plain[0].canonical_corr_mean.has_value());
        std::ostringstream out2;
        write_sweep_csv(out2, plain);
        CHECK(out2.str().find("canonical") == std::string::npos);
    }

    TEST_CASE("2SLS beats OLS on coefficients in the standard setting") {
        ExperimentConfig cfg;
        cfg.n_grid = {50};
        cfg.sims = 500;
        cfg.estimators = {Estimator::Ols, Estimator::TwoSls};
        const auto recs = run_experiment(cfg);
        CHECK(recs[1].coef_mse_mean < recs[0].coef_mse_mean);
    }

    TEST_CASE("standard errors shrink with the number of simulations") {
        ExperimentConfig cfg;
        cfg.n_grid = {50};
        cfg.estimators = {Estimator::TwoSls};
        cfg.sims = 200;
        const double se1 = run_experiment(cfg)[0].icpe_stderr;
        cfg.sims = 800;
        const double se4 = run_experiment(cfg)[0].icpe_stderr;
        CHECK(se4 / se1 == doctest::Approx(0.5).epsilon(0.3));
    }

    TEST_CASE("summaries") {
        const auto s = summarize({1.0, 2.0, 3.0, 4.0});
        CHECK(s.mean == 2.5);
        CHECK(s.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)));
        CHECK(s.standard_error == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
    }

    TEST_CASE("parallel_for covers every index and rethrows the lowest failure") {
        std::vector<int> hit(50, 0);
        parallel_for(50, 4, [&](std::size_t i) { hit[i] += 1; });
        for (int h : hit) CHECK(h == 1);
        try {
            parallel_for(20, 3, [](std::size_t i) {
                if (i == 7 || i == 13) throw std::runtime_error(std::to_string(i));
            });
            FAIL("expected an exception");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()) == "7");
        }
    }

    TEST_CASE("convergence report") {
        Dataset still;
        still.Z = testutil::standard_prompt(2, 3, 10, 60).Z;
        still.X = Matrix(10, 2);
        still.Y = Vector(10, 0.0);
        still.z_query = Vector(3, 0.0);
        still.x_query = Vector(2, 0.0);
        const auto fixed = convergence_report(still, safe_rates(still), 20);
        for (const auto& r : fixed.rows) {
            CHECK(r.dist_beta <= 1e-12);
            CHECK(r.dist_theta <= 1e-12);
        }

        const auto d = testutil::standard_prompt(2, 3, 30, 61);
        const auto rep = convergence_report(d, safe_rates(d), 2000);
        CHECK_FALSE(rep.diverged);
        CHECK(rep.rows.size() == 2001);
        std::vector<double> dist;
        for (const auto& r : rep.rows) dist.push_back(r.dist_beta);
        CHECK(testutil::tail_log_slope(dist) <= std::log(rep.contraction.lambda) + 0.05);
        std::ostringstream csv;
        write_convergence_csv(csv, rep);
        CHECK(csv.str().rfind("t,dist_beta,dist_theta,lambda_pow\n0,", 0) == 0);

        LearningRates bad = safe_rates(d);
        bad.eta = 1.1 * max_learning_rates(d).eta_max;
        const auto div = convergence_report(d, bad, 500);
        CHECK(div.diverged);
        CHECK(div.diverged_at < 500);
        CHECK(std::isinf(div.rows.back().dist_theta));
    }

    TEST_CASE("numbers format round trip") {
        for (double v : {0.1, -2.5e-300, 1.0 / 3.0, 123456789.0, 0.0}) {
            double back = 0.0;
            REQUIRE(parse_double(format_double(v), back));
            CHECK(back == v);
        }
        CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
        double x = 0.0;
        CHECK(parse_double(" +1.5\r", x));
        CHECK(x == 1.5);
        CHECK_FALSE(parse_double("1.5x", x));
        CHECK_FALSE(parse_double("", x));
    }

    TEST_CASE("csv export and ingest round trip") {
        Dataset d;
        d.Z = Matrix::from_rows({{1.5, -2.0}, {0.25, 3.0}});
        d.X = Matrix::from_rows({{0.1}, {0.2}});
        d.Y = {1.0, -1.0};
        d.z_query = {4.0, 5.0};
        d.x_query = {0.3};
        d.y_query = 7.0;
        std::stringstream ss;
        export_csv(ss, d);
        CHECK(ss.str().rfind("z1,z2,x1,y\n", 0) == 0);
        const auto back = ingest_csv(ss, {"z1", "z2"}, {"x1"}, "y");
        CHECK(back.Z == d.Z);
        CHECK(back.X == d.X);
        CHECK(back.Y == d.Y);
        CHECK(back.z_query == d.z_query);
        CHECK(back.x_query == d.x_query);
        CHECK(back.y_query == d.y_query);
    }

    TEST_CASE("ingest selects named columns in any order") {
        std::istringstream in("y,noise,x,z\n1,9,2,3\n4,9,5,6\n7,9,8,10\n");
        const auto d = ingest_csv(in, {"z"}, {"x"}, "y");
        CHECK(d.n() == 2);
        CHECK(d.Z(0, 0) == 3.0);
        CHECK(d.X(1, 0) == 5.0);
        CHECK(d.Y[1] == 4.0);
        CHECK(d.z_query[0] == 10.0);
        CHECK(d.y_query == 7.0);

        std::istringstream again("y,noise,x,z\n1,9,2,3\n4,9,5,6\n7,9,8,10\n");
        const auto q = ingest_csv(again, {"z"}, {"x"}, "y", 1);
        CHECK(q.y_query == 1.0);
        CHECK(q.Y[0] == 4.0);
    }

    TEST_CASE("ingest reports coordinates of bad input") {
        auto expect = [](const std::string& text, std::size_t row, std::size_t col) {
            std::istringstream in(text);
            try {
                ingest_csv(in, {"z"}, {"x"}, "y");
                FAIL("expected a parse error");
            } catch (const ParseError& e) {
                CHECK(e.row() == row);
                CHECK(e.col() == col);
            }
        };
        expect("z,x\n1,2\n3,4\n", 1, 0);
        expect("z,x,y\n1,2,3\n4,oops,6\n", 3, 2);
        expect("z,x,y\n1,2,3\n4,5\n", 3, 3);
        expect("z,x,y\n1,2,3\n", 2, 0);
    }

    TEST_CASE("an exported generated prompt reproduces 2SLS exactly") {
        const auto d = testutil::standard_prompt(3, 5, 40, 70);
        std::stringstream ss;
        export_csv(ss, d);
        const auto back = ingest_csv(ss, {"z1", "z2", "z3", "z4", "z5"}, {"x1", "x2", "x3"}, "y");
        CHECK(two_sls(back).beta_hat == two_sls(d).beta_hat);
    }

    TEST_CASE("json config") {
        ExperimentConfig cfg;
        apply_json_config(R"({"scenario": {"kind": "underid", "q_eff": 2}, "n_grid": [10, 20], "sims": 7,
                              "seed": 3, "rates": {"alpha": 0.01, "eta": 0.02}, "estimators": ["ols", "tf"],
                              "clip": {"z": 5}})",
                          cfg);
        CHECK(std::holds_alternative<scenario::UnderIdentified>(cfg.scenario));
        CHECK(std::get<scenario::UnderIdentified>(cfg.scenario).q_eff == 2);
        CHECK(cfg.n_grid == std::vector<std::size_t>{10, 20});
        CHECK(cfg.sims == 7);
        CHECK(cfg.seed == 3);
        CHECK(cfg.rates.mode == RatesMode::Explicit);
        CHECK(cfg.estimators.size() == 2);
        CHECK(cfg.clip.z == 5.0);
        CHECK_THROWS_AS(apply_json_config(R"({"simz": 3})", cfg), ParseError);
        CHECK_THROWS_AS(apply_json_config("{", cfg), ParseError);
    }

    TEST_CASE("svg output") {
        auto cfg = small_config();
        cfg.estimators = {Estimator::Ols, Estimator::TwoSls};
        const auto series = sweep_series(run_experiment(cfg), "coef_mse");
        CHECK(series.size() == 2);
        CHECK(series[0].x.size() == 2);
        std::ostringstream out;
        write_svg(out, series, {"title", "n", "mse", true});
        CHECK(out.str().find("<svg") != std::string::npos);
        CHECK(out.str().find("</svg>") != std::string::npos);
    }
}
