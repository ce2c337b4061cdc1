#include "ivtf/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "ivtf/errors.hpp"
#include "ivtf/estimators.hpp"
#include "ivtf/format.hpp"
#include "ivtf/rng.hpp"

namespace ivtf {

std::string estimator_name(Estimator e) {
    switch (e) {
        case Estimator::Ols: return "ols";
        case Estimator::TwoSls: return "2sls";
        case Estimator::RidgeTwoSls: return "ridge-2sls";
        case Estimator::Tf: return "tf";
        case Estimator::TfRidge: return "tf-ridge";
    }
    return "unknown";
}

Estimator parse_estimator(const std::string& name) {
    for (Estimator e : {Estimator::Ols, Estimator::TwoSls, Estimator::RidgeTwoSls, Estimator::Tf, Estimator::TfRidge}) {
        if (estimator_name(e) == name) return e;
    }
    throw std::invalid_argument("unknown estimator '" + name + "'");
}

RatesSpec parse_rates(const std::string& text) {
    if (text == "safe") return {RatesMode::Safe, {}};
    if (text == "optimal") return {RatesMode::Optimal, {}};
    RatesSpec spec{RatesMode::Explicit, {}};
    bool have_a = false, have_e = false;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t end = std::min(text.find(',', start), text.size());
        const std::string item = text.substr(start, end - start);
        const std::size_t eq = item.find('=');
        double v = 0.0;
        if (eq == std::string::npos || !parse_double(item.substr(eq + 1), v) || !(v > 0.0)) {
            throw std::invalid_argument("rates must be 'safe', 'optimal' or 'a=<alpha>,e=<eta>' with positive values");
        }
        const std::string key = item.substr(0, eq);
        if (key == "a" || key == "alpha") {
            spec.explicit_rates.alpha = v;
            have_a = true;
        } else if (key == "e" || key == "eta") {
            spec.explicit_rates.eta = v;
            have_e = true;
        } else {
            throw std::invalid_argument("unknown rate key '" + key + "'");
        }
        start = end + 1;
    }
    if (!have_a || !have_e) throw std::invalid_argument("explicit rates need both a= and e=");
    return spec;
}

void ExperimentConfig::validate() const {
    if (sims < 1) throw std::invalid_argument("sims must be >= 1");
    if (p < 1 || q < 1) throw std::invalid_argument("p and q must be >= 1");
    if (!(delta != 0.0) || !std::isfinite(delta)) throw std::invalid_argument("delta must be nonzero");
    if (loops < 1) throw std::invalid_argument("loops must be >= 1");
    if (estimators.empty()) throw std::invalid_argument("at least one estimator is required");
    if (!(lambda >= 0.0) || !(tau >= 0.0)) throw std::invalid_argument("lambda and tau must be >= 0");
    clip.validate();
    if (axis == SweepAxis::SampleSize) {
        if (n_grid.empty()) throw std::invalid_argument("n grid is empty");
        for (std::size_t v : n_grid)
            if (v < 1) throw std::invalid_argument("n grid values must be >= 1");
    } else {
        if (r_grid.empty()) throw std::invalid_argument("strength grid is empty");
        if (n < 1) throw std::invalid_argument("n must be >= 1");
        if (!std::holds_alternative<scenario::IvStrength>(scenario) &&
            !std::holds_alternative<scenario::EndogeneityStrength>(scenario)) {
            throw std::invalid_argument("strength sweeps need the iv-strength or endogeneity scenario");
        }
    }
    for (std::size_t k = 0; k < points(); ++k) validate_variant(variant_at(k), p, q);
}

double ExperimentConfig::sweep_value(std::size_t point) const {
    return axis == SweepAxis::SampleSize ? static_cast<double>(n_grid.at(point)) : r_grid.at(point);
}

std::size_t ExperimentConfig::n_at(std::size_t point) const {
    return axis == SweepAxis::SampleSize ? n_grid.at(point) : n;
}

ScenarioVariant ExperimentConfig::variant_at(std::size_t point) const {
    if (axis == SweepAxis::SampleSize) return scenario;
    const double r = r_grid.at(point);
    if (std::holds_alternative<scenario::EndogeneityStrength>(scenario)) return scenario::EndogeneityStrength{r};
    return scenario::IvStrength{r};
}

std::string ExperimentConfig::scenario_label() const {
    if (!label.empty()) return label;
    if (std::holds_alternative<scenario::UnderIdentified>(scenario)) return "underid[non-identified]";
    return variant_name(scenario);
}

Summary summarize(const std::vector<double>& values) {
    Summary s;
    const std::size_t m = values.size();
    if (m == 0) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        return {nan, nan, nan};
    }
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(m);
    if (m > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(m - 1));
        s.standard_error = s.stddev / std::sqrt(static_cast<double>(m));
    }
    return s;
}

double icl_loss_empirical(const std::function<double(const Dataset&)>& predictor, const std::vector<Dataset>& prompts) {
    if (prompts.empty()) throw std::invalid_argument("icl_loss_empirical: no prompts");
    double sum = 0.0;
    for (const auto& d : prompts) {
        const double e = d.y_query - predictor(d);
        sum += e * e;
    }
    return sum / static_cast<double>(prompts.size());
}

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& body) {
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, std::max<std::size_t>(count, 1));
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto run = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                body(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers <= 1) {
        run();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
        for (auto& t : pool) t.join();
    }
    // report the lowest failing index so the error is schedule independent
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

namespace {

TfPredictorOptions tf_options(const ExperimentConfig& cfg, bool ridge) {
    TfPredictorOptions o;
    o.loops = cfg.loops;
    o.rate_fraction = cfg.rates.mode == RatesMode::Optimal ? 0.5 : 0.75;
    if (cfg.rates.mode == RatesMode::Explicit) o.explicit_rates = &cfg.rates.explicit_rates;
    o.ridge = ridge;
    o.lambda = cfg.lambda;
    o.tau = cfg.tau;
    return o;
}

double squared_error(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

SimOutcome evaluate(const ExperimentConfig& cfg, Estimator est, const Dataset& d, const TaskParams& task) {
    SimOutcome out;
    auto closed_form = [&](const EstimatorOutput& e) {
        const double err = e.predict(d.x_query) - d.y_query;
        out.icpe = err * err;
        out.coef_mse = squared_error(clipped_beta(e, cfg.clip.beta), task.beta);
    };
    switch (est) {
        case Estimator::Ols: closed_form(ols(d)); return out;
        case Estimator::TwoSls: closed_form(two_sls(d)); return out;
        case Estimator::RidgeTwoSls: closed_form(ridge_two_sls(d, cfg.lambda, cfg.tau)); return out;
        case Estimator::Tf:
        case Estimator::TfRidge: break;
    }
    const TfPredictorOptions opts = tf_options(cfg, est == Estimator::TfRidge);
    try {
        const double y_hat = tf_predict(d, opts);
        const double err = y_hat - d.y_query;
        out.icpe = err * err;
        if (cfg.tf_coefficients) {
            bool first = true;
            const Predictor f = [&](const Dataset& shifted) {
                if (first) {
                    first = false;
                    return y_hat;  // baseline already computed
                }
                return tf_predict(shifted, opts);
            };
            out.coef_mse = squared_error(clip(extract_coefficients(f, d, cfg.delta), cfg.clip.beta), task.beta);
        } else {
            out.coef_mse = std::numeric_limits<double>::quiet_NaN();
        }
    } catch (const LoopDivergenceError&) {
        out.diverged = true;
    } catch (const DivergenceError&) {
        out.diverged = true;
    } catch (const NonFiniteError&) {
        out.diverged = true;
    }
    return out;
}

}  // namespace

SimTable run_simulations(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::size_t P = cfg.points(), E = cfg.estimators.size();
    SimTable table(P, std::vector<std::vector<SimOutcome>>(E, std::vector<SimOutcome>(cfg.sims)));
    parallel_for(cfg.sims, cfg.workers, [&](std::size_t s) {
        const RngStream base(cfg.seed, s);
        RngStream task_rng = base.child(0);
        const TaskParams task = sample_task(cfg.p, cfg.q, task_rng);
        for (std::size_t k = 0; k < P; ++k) {
            RngStream prompt_rng = base.child(1 + k);
            const Dataset d = generate_prompt(task, cfg.n_at(k), cfg.clip, cfg.variant_at(k), prompt_rng).first;
            const double rho = cfg.axis == SweepAxis::Strength ? mean_canonical_correlation(d)
                                                               : std::numeric_limits<double>::quiet_NaN();
            for (std::size_t e = 0; e < E; ++e) {
                table[k][e][s] = evaluate(cfg, cfg.estimators[e], d, task);
                table[k][e][s].canonical_corr = rho;
            }
        }
    });
    return table;
}

std::vector<MetricRecord> aggregate(const ExperimentConfig& cfg, const SimTable& table) {
    std::vector<MetricRecord> records;
    for (std::size_t k = 0; k < table.size(); ++k) {
        for (std::size_t e = 0; e < table[k].size(); ++e) {
            std::vector<double> icpe, coef, rho;
            std::size_t diverged = 0;
            for (const SimOutcome& o : table[k][e]) {
                if (!std::isnan(o.canonical_corr)) rho.push_back(o.canonical_corr);
                if (o.diverged) {
                    ++diverged;
                    continue;
                }
                icpe.push_back(o.icpe);
                if (!std::isnan(o.coef_mse)) coef.push_back(o.coef_mse);
            }
            const Summary si = summarize(icpe), sc = summarize(coef);
            MetricRecord r;
            r.scenario = cfg.scenario_label();
            r.sweep_value = cfg.sweep_value(k);
            r.estimator = estimator_name(cfg.estimators[e]);
            r.icpe_mean = si.mean;
            r.icpe_stderr = si.standard_error;
            r.icpe_stddev = si.stddev;
            r.coef_mse_mean = sc.mean;
            r.coef_mse_stderr = sc.standard_error;
            r.coef_mse_stddev = sc.stddev;
            r.diverged = diverged;
            r.sims = table[k][e].size();
            if (!rho.empty()) r.canonical_corr_mean = summarize(rho).mean;
            records.push_back(std::move(r));
        }
    }
    return records;
}

std::vector<MetricRecord> run_experiment(const ExperimentConfig& cfg) { return aggregate(cfg, run_simulations(cfg)); }

ConvergenceReport convergence_report(const Dataset& data, const LearningRates& rates, std::size_t T) {
    ConvergenceReport rep;
    rep.contraction = contraction_factors(data, rates);
    auto emit = [&](const Trajectory& tr) {
        for (std::size_t t = 0; t < tr.states.size(); ++t) {
            rep.rows.push_back({tr.states[t].t, tr.dist_to_2sls[t], tr.dist_theta[t],
                                std::pow(rep.contraction.lambda, static_cast<double>(tr.states[t].t))});
        }
    };
    try {
        emit(run_gd(data, rates, T));
    } catch (const DivergenceError& err) {
        emit(err.partial());
        rep.diverged = true;
        rep.diverged_at = err.t();
        const double inf = std::numeric_limits<double>::infinity();
        rep.rows.push_back({err.t(), inf, inf, std::pow(rep.contraction.lambda, static_cast<double>(err.t()))});
    }
    return rep;
}

void write_convergence_csv(std::ostream& out, const ConvergenceReport& report) {
    out << "t,dist_beta,dist_theta,lambda_pow\n";
    for (const auto& r : report.rows) {
        out << r.t << ',' << format_double(r.dist_beta) << ',' << format_double(r.dist_theta) << ','
            << format_double(r.lambda_pow) << '\n';
    }
}

void write_sweep_csv(std::ostream& out, const std::vector<MetricRecord>& records, bool with_stddev) {
    out << "scenario,sweep_value,estimator,icpe_mean,icpe_stderr,coef_mse_mean,coef_mse_stderr,diverged,sims";
    if (with_stddev) out << ",icpe_stddev,coef_mse_stddev";
    const bool with_rho = std::any_of(records.begin(), records.end(),
                                      [](const MetricRecord& r) { return r.canonical_corr_mean.has_value(); });
    if (with_rho) out << ",canonical_corr_mean";
    out << '\n';
    for (const auto& r : records) {
        out << r.scenario << ',' << format_double(r.sweep_value) << ',' << r.estimator << ','
            << format_double(r.icpe_mean) << ',' << format_double(r.icpe_stderr) << ','
            << format_double(r.coef_mse_mean) << ',' << format_double(r.coef_mse_stderr) << ',' << r.diverged << ','
            << r.sims;
        if (with_stddev) out << ',' << format_double(r.icpe_stddev) << ',' << format_double(r.coef_mse_stddev);
        if (with_rho) out << ',' << format_double(r.canonical_corr_mean.value_or(std::nan("")));
        out << '\n';
    }
}

}  // namespace ivtf
