#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ivtf/datagen.hpp"
#include "ivtf/gd2sls.hpp"
#include "ivtf/transformer.hpp"

namespace ivtf {

enum class Estimator { Ols, TwoSls, RidgeTwoSls, Tf, TfRidge };

std::string estimator_name(Estimator e);
Estimator parse_estimator(const std::string& name);

enum class RatesMode { Safe, Optimal, Explicit };

struct RatesSpec {
    RatesMode mode = RatesMode::Safe;
    LearningRates explicit_rates;  // used when mode == Explicit
};

/// Parses "safe", "optimal" or "a=<alpha>,e=<eta>".
RatesSpec parse_rates(const std::string& text);

/// What the sweep varies: the prompt length, or the strength r of an
/// IvStrength / EndogeneityStrength scenario at fixed n.
enum class SweepAxis { SampleSize, Strength };

struct ExperimentConfig {
    ScenarioVariant scenario = scenario::Standard{};
    std::string label;  // scenario column; defaults to the variant name
    SweepAxis axis = SweepAxis::SampleSize;
    std::vector<std::size_t> n_grid{20, 30, 40, 50};
    std::vector<double> r_grid{0.1, 0.25, 0.5, 1.0, 1.5, 2.0};
    std::size_t n = 50;  // fixed prompt length for strength sweeps
    std::size_t p = 5;
    std::size_t q = 10;
    std::size_t sims = 200;
    std::uint64_t seed = 0;
    RatesSpec rates;
    std::size_t loops = 60;
    double delta = 5.0;
    double lambda = 1.0;
    double tau = 1.0;
    std::vector<Estimator> estimators{Estimator::Ols, Estimator::TwoSls, Estimator::Tf};
    ClipBounds clip;
    bool tf_coefficients = true;  // finite-difference extraction for TF coefficient MSE
    std::size_t workers = 0;      // 0 = hardware concurrency

    void validate() const;
    std::size_t points() const { return axis == SweepAxis::SampleSize ? n_grid.size() : r_grid.size(); }
    double sweep_value(std::size_t point) const;
    std::size_t n_at(std::size_t point) const;
    ScenarioVariant variant_at(std::size_t point) const;
    std::string scenario_label() const;
};

struct MetricRecord {
    std::string scenario;
    double sweep_value = 0.0;
    std::string estimator;
    double icpe_mean = 0.0;
    double icpe_stderr = 0.0;
    double icpe_stddev = 0.0;
    double coef_mse_mean = 0.0;
    double coef_mse_stderr = 0.0;
    double coef_mse_stddev = 0.0;
    std::size_t diverged = 0;
    std::size_t sims = 0;
    std::optional<double> canonical_corr_mean;  // strength sweeps only
};

/// Per-simulation outcome for one sweep point and estimator.
struct SimOutcome {
    double icpe = 0.0;
    double coef_mse = 0.0;
    bool diverged = false;
    double canonical_corr = std::numeric_limits<double>::quiet_NaN();  // of the shared prompt
};

/// outcomes[point][estimator][sim], the paired raw material behind run_experiment.
using SimTable = std::vector<std::vector<std::vector<SimOutcome>>>;

/// Runs every simulation. Sim s draws its task from RngStream(seed, s).child(0)
/// and the prompt at sweep point k from .child(1 + k), so every estimator sees
/// the same prompts and the result does not depend on the worker count.
SimTable run_simulations(const ExperimentConfig& cfg);

std::vector<MetricRecord> aggregate(const ExperimentConfig& cfg, const SimTable& table);
std::vector<MetricRecord> run_experiment(const ExperimentConfig& cfg);

/// Mean, standard deviation (n-1) and standard error of a sample.
struct Summary {
    double mean = 0.0;
    double stddev = 0.0;
    double standard_error = 0.0;
};
Summary summarize(const std::vector<double>& values);

/// Mean squared query error (1/N) Σ (y_query - predictor(prompt))².
double icl_loss_empirical(const std::function<double(const Dataset&)>& predictor, const std::vector<Dataset>& prompts);

/// Deterministic parallel map over [0, count) writing results by index.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& body);

struct ConvergenceRow {
    std::size_t t = 0;
    double dist_beta = 0.0;
    double dist_theta = 0.0;
    double lambda_pow = 0.0;
};

struct ConvergenceReport {
    std::vector<ConvergenceRow> rows;
    ContractionReport contraction;
    bool diverged = false;
    std::size_t diverged_at = 0;
};

/// Wraps run_gd. On divergence the finite prefix is kept and a final row with
/// infinite distances marks the step that blew up.
ConvergenceReport convergence_report(const Dataset& data, const LearningRates& rates, std::size_t T);

void write_convergence_csv(std::ostream& out, const ConvergenceReport& report);
void write_sweep_csv(std::ostream& out, const std::vector<MetricRecord>& records, bool with_stddev = false);

/// Reads a CSV with a header row. The last data row is the query unless
/// query_row (1-based among data rows) selects another one.
Dataset ingest_csv(const std::string& path, const std::vector<std::string>& z_columns,
                   const std::vector<std::string>& x_columns, const std::string& y_column,
                   std::optional<std::size_t> query_row = std::nullopt);
Dataset ingest_csv(std::istream& in, const std::vector<std::string>& z_columns,
                   const std::vector<std::string>& x_columns, const std::string& y_column,
                   std::optional<std::size_t> query_row = std::nullopt);

/// Header z1..zq,x1..xp,y; training rows followed by the query row.
void export_csv(std::ostream& out, const Dataset& data);

struct PlotSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct PlotOptions {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_y = false;
};

void write_svg(std::ostream& out, const std::vector<PlotSeries>& series, const PlotOptions& options);

/// One series per estimator of the chosen metric ("icpe" or "coef_mse").
std::vector<PlotSeries> sweep_series(const std::vector<MetricRecord>& records, const std::string& metric);

/// Applies a JSON config document onto cfg; unknown keys are rejected.
void apply_json_config(const std::string& json_text, ExperimentConfig& cfg);

}  // namespace ivtf
