#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ivtf/errors.hpp"
#include "ivtf/estimators.hpp"
#include "ivtf/format.hpp"
#include "ivtf/harness.hpp"
#include "ivtf/linalg.hpp"
#include "ivtf/rng.hpp"

using namespace ivtf;

namespace {

struct SweepOptions {
    std::string config_path;
    std::string p, q, sims, seed, loops, delta, lambda, tau, workers, rates, n_list, r_list, estimators;
    bool sims_500 = false;
    bool stddev = false;
    std::string out, svg;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <class T>
T parse_number(const std::string& flag, const std::string& text) {
    double v = 0.0;
    if (!parse_double(text, v)) throw CLI::ValidationError(flag, "not a number: " + text);
    if constexpr (std::is_integral_v<T>) {
        if (v < 0 || v != static_cast<double>(static_cast<T>(v))) {
            throw CLI::ValidationError(flag, "expected a nonnegative integer: " + text);
        }
    }
    return static_cast<T>(v);
}

void add_common(CLI::App* cmd, SweepOptions& o) {
    cmd->add_option("--config", o.config_path, "JSON config file; flags override its values");
    cmd->add_option("--p", o.p, "dimension of the endogenous variable");
    cmd->add_option("--q", o.q, "dimension of the instrument");
    cmd->add_option("--sims", o.sims, "simulations per sweep point (default 200)");
    cmd->add_flag("--sims-500", o.sims_500, "use 500 simulations");
    cmd->add_option("--seed", o.seed, "base seed");
    cmd->add_option("--rates", o.rates, "safe | optimal | a=<alpha>,e=<eta>");
    cmd->add_option("--loops", o.loops, "looped-transformer depth (default 60)");
    cmd->add_option("--delta", o.delta, "finite-difference step for coefficient extraction (default 5)");
    cmd->add_option("--lambda", o.lambda, "second-stage ridge penalty");
    cmd->add_option("--tau", o.tau, "first-stage ridge penalty");
    cmd->add_option("--workers", o.workers, "worker threads (0 = all cores)");
    cmd->add_option("--estimators", o.estimators, "comma list of ols,2sls,ridge-2sls,tf,tf-ridge");
    cmd->add_flag("--stddev", o.stddev, "append standard-deviation columns");
    cmd->add_option("--out", o.out, "CSV output path (default stdout)");
    cmd->add_option("--svg", o.svg, "also write an SVG plot of the coefficient MSE and ICPE");
}

ExperimentConfig build_config(const SweepOptions& o, ExperimentConfig cfg) {
    if (!o.config_path.empty()) {
        std::ifstream in(o.config_path);
        if (!in) throw std::runtime_error("cannot open config '" + o.config_path + "'");
        std::stringstream buf;
        buf << in.rdbuf();
        apply_json_config(buf.str(), cfg);
    }
    if (!o.p.empty()) cfg.p = parse_number<std::size_t>("--p", o.p);
    if (!o.q.empty()) cfg.q = parse_number<std::size_t>("--q", o.q);
    if (!o.sims.empty()) cfg.sims = parse_number<std::size_t>("--sims", o.sims);
    if (o.sims_500) cfg.sims = 500;
    if (!o.seed.empty()) cfg.seed = parse_number<std::uint64_t>("--seed", o.seed);
    if (!o.rates.empty()) cfg.rates = parse_rates(o.rates);
    if (!o.loops.empty()) cfg.loops = parse_number<std::size_t>("--loops", o.loops);
    if (!o.delta.empty()) cfg.delta = parse_number<double>("--delta", o.delta);
    if (!o.lambda.empty()) cfg.lambda = parse_number<double>("--lambda", o.lambda);
    if (!o.tau.empty()) cfg.tau = parse_number<double>("--tau", o.tau);
    if (!o.workers.empty()) cfg.workers = parse_number<std::size_t>("--workers", o.workers);
    if (!o.estimators.empty()) {
        cfg.estimators.clear();
        for (const auto& e : split_list(o.estimators)) cfg.estimators.push_back(parse_estimator(e));
    }
    if (!o.n_list.empty()) {
        std::vector<std::size_t> grid;
        for (const auto& v : split_list(o.n_list)) grid.push_back(parse_number<std::size_t>("--n", v));
        if (cfg.axis == SweepAxis::SampleSize) {
            cfg.n_grid = grid;
        } else {
            if (grid.size() != 1) throw CLI::ValidationError("--n", "strength sweeps take a single n");
            cfg.n = grid.front();
        }
    }
    if (!o.r_list.empty()) {
        cfg.r_grid.clear();
        for (const auto& v : split_list(o.r_list)) cfg.r_grid.push_back(parse_number<double>("--r", v));
    }
    cfg.validate();
    return cfg;
}

void emit(const std::string& path, const std::function<void(std::ostream&)>& write) {
    if (path.empty() || path == "-") {
        write(std::cout);
        return;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    write(out);
}

std::string svg_path_for(const std::string& base, const std::string& suffix) {
    const auto dot = base.rfind(".svg");
    return dot == std::string::npos ? base + "_" + suffix + ".svg" : base.substr(0, dot) + "_" + suffix + ".svg";
}

void run_sweep(const SweepOptions& o, const ExperimentConfig& defaults) {
    const ExperimentConfig cfg = build_config(o, defaults);
    const auto records = run_experiment(cfg);
    emit(o.out, [&](std::ostream& s) { write_sweep_csv(s, records, o.stddev); });
    if (!o.svg.empty()) {
        const std::string x = cfg.axis == SweepAxis::SampleSize ? "n" : "r";
        for (const char* metric : {"coef_mse", "icpe"}) {
            emit(svg_path_for(o.svg, metric), [&](std::ostream& s) {
                write_svg(s, sweep_series(records, metric), {cfg.scenario_label() + " " + metric, x, metric, false});
            });
        }
    }
}

Dataset demo_prompt(std::size_t p, std::size_t q, std::size_t n, std::uint64_t seed) {
    const RngStream base(seed, 0);
    RngStream task_rng = base.child(0), prompt_rng = base.child(1);
    const TaskParams task = sample_task(p, q, task_rng);
    return generate_prompt(task, n, ClipBounds{}, scenario::Standard{}, prompt_rng).first;
}

LearningRates resolve_rates(const RatesSpec& spec, const Dataset& d) {
    switch (spec.mode) {
        case RatesMode::Safe: return safe_rates(d);
        case RatesMode::Optimal: return optimal_rates(d);
        case RatesMode::Explicit: return spec.explicit_rates;
    }
    return safe_rates(d);
}

void print_vector(std::ostream& out, const std::string& name, const Vector& v) {
    out << name;
    for (double x : v) out << ',' << format_double(x);
    out << '\n';
}

// Reads a CSV exported by export_csv (or any file with z*, x* and y columns).
Dataset read_prompt(const std::string& path, std::optional<std::size_t> query_row) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'", 0, 0);
    std::string header;
    std::getline(in, header);
    std::vector<std::string> zs, xs;
    for (const auto& h : split_list(header)) {
        if (h.size() > 1 && h[0] == 'z') zs.push_back(h);
        if (h.size() > 1 && h[0] == 'x') xs.push_back(h);
    }
    return ingest_csv(path, zs, xs, "y", query_row);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Instrumental-variable regression with in-context transformers"};
    app.require_subcommand(1);

    SweepOptions o;
    struct SweepCmd {
        const char* name;
        const char* help;
        ExperimentConfig defaults;
    };
    std::vector<SweepCmd> sweeps;
    {
        ExperimentConfig c;
        sweeps.push_back({"sweep-n", "standard endogenous sweep over n", c});
        c.scenario = scenario::IvStrength{};
        c.axis = SweepAxis::Strength;
        sweeps.push_back({"sweep-iv-strength", "sweep over the IV strength r at fixed n", c});
        c.scenario = scenario::EndogeneityStrength{};
        sweeps.push_back({"endogeneity", "sweep over the endogeneity strength r at fixed n", c});
        c = ExperimentConfig{};
        c.scenario = scenario::QuadraticIv{};
        sweeps.push_back({"quadratic", "quadratic first stage, sweep over n", c});
        c.scenario = scenario::UnderIdentified{};
        sweeps.push_back({"underid", "under-identified instruments (q_eff = 3), sweep over n", c});
        c.scenario = scenario::NonlinearMlp{};
        sweeps.push_back({"nonlinear", "ReLU-network first stage, sweep over n", c});
    }
    std::vector<std::pair<CLI::App*, const SweepCmd*>> sweep_cmds;
    for (const auto& s : sweeps) {
        CLI::App* cmd = app.add_subcommand(s.name, s.help);
        add_common(cmd, o);
        cmd->add_option("--n", o.n_list, "comma-separated n grid (strength sweeps: the fixed n)");
        if (s.defaults.axis == SweepAxis::Strength) cmd->add_option("--r", o.r_list, "comma-separated r grid");
        sweep_cmds.emplace_back(cmd, &s);
    }

    bool heavy = false;
    CLI::App* multi = app.add_subcommand("multicollinearity", "near-duplicate columns in X and Z, sweep over n");
    add_common(multi, o);
    multi->add_option("--n", o.n_list, "comma-separated n grid");
    multi->add_flag("--heavy", heavy, "2 duplicated X columns and 5 duplicated Z columns with ridge estimators");

    std::size_t conv_p = 5, conv_q = 10, conv_n = 50, conv_T = 200;
    std::uint64_t conv_seed = 0;
    std::string conv_rates = "safe", conv_out, conv_svg;
    CLI::App* conv = app.add_subcommand("convergence", "GD-2SLS distance to the closed form per iteration");
    conv->add_option("--p", conv_p);
    conv->add_option("--q", conv_q);
    conv->add_option("--n", conv_n);
    conv->add_option("--seed", conv_seed);
    conv->add_option("--rates", conv_rates, "safe | optimal | a=<alpha>,e=<eta>");
    conv->add_option("--loops,-T", conv_T, "iterations");
    conv->add_option("--out", conv_out);
    conv->add_option("--svg", conv_svg);

    std::size_t bc_p = 5, bc_q = 10, bc_sims = 200;
    std::string bc_n = "50,100,200,400,800";
    std::uint64_t bc_seed = 0;
    BoundInputs bc_in;
    bc_in.b_beta = 0.0;  // 0: take ‖β‖ of the sampled task
    bc_in.b_theta = 0.0; // 0: take σ_max(Θ) of the sampled task
    std::string bc_out;
    CLI::App* bc = app.add_subcommand("bound-check", "MSE envelope diagnostics next to the empirical clipped 2SLS MSE");
    bc->add_option("--p", bc_p);
    bc->add_option("--q", bc_q);
    bc->add_option("--n", bc_n, "comma-separated n grid");
    bc->add_option("--sims", bc_sims);
    bc->add_option("--seed", bc_seed);
    bc->add_option("--b-beta", bc_in.b_beta, "clip radius for beta (default: norm of the sampled beta)");
    bc->add_option("--b-theta", bc_in.b_theta, "bound on Theta (default: its largest singular value)");
    bc->add_option("--b-z", bc_in.b_z);
    bc->add_option("--b-eps2", bc_in.b_eps2);
    bc->add_option("--c", bc_in.c_const, "the hidden absolute constant");
    bc->add_option("--out", bc_out);

    std::string fit_data, fit_z, fit_x, fit_y, fit_rates = "safe";
    std::size_t fit_query = 0, fit_loops = 60;
    double fit_delta = 5.0;
    CLI::App* fit = app.add_subcommand("fit", "OLS, 2SLS and transformer estimates from a CSV file");
    fit->add_option("--data", fit_data)->required();
    fit->add_option("--z", fit_z, "comma-separated instrument columns")->required();
    fit->add_option("--x", fit_x, "comma-separated endogenous columns")->required();
    fit->add_option("--y", fit_y, "outcome column")->required();
    fit->add_option("--query-row", fit_query, "1-based data row used as the query (default: last)");
    fit->add_option("--loops", fit_loops);
    fit->add_option("--delta", fit_delta);
    fit->add_option("--rates", fit_rates);

    std::string ex_prompt, ex_dump, ex_rates = "safe";
    std::size_t ex_loops = 60, ex_query = 0;
    std::vector<double> ex_deltas{5.0};
    CLI::App* ex = app.add_subcommand("extract", "finite-difference coefficient extraction on a saved prompt");
    ex->add_option("--prompt", ex_prompt, "CSV with z*, x* and y columns")->required();
    ex->add_option("--loops", ex_loops);
    ex->add_option("--delta", ex_deltas, "one or more finite-difference steps")->delimiter(',');
    ex->add_option("--rates", ex_rates);
    ex->add_option("--query-row", ex_query);
    ex->add_option("--dump-model", ex_dump, "write the constructed model as CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        for (const auto& [cmd, s] : sweep_cmds) {
            if (cmd->parsed()) run_sweep(o, s->defaults);
        }
        if (multi->parsed()) {
            ExperimentConfig c;
            if (heavy) {
                c.scenario = scenario::Multicollinearity{2, 5, 1e-6};
                c.estimators = {Estimator::Ols, Estimator::TwoSls, Estimator::RidgeTwoSls, Estimator::TfRidge};
            } else {
                c.scenario = scenario::Multicollinearity{};
            }
            run_sweep(o, c);
        }
        if (conv->parsed()) {
            const Dataset d = demo_prompt(conv_p, conv_q, conv_n, conv_seed);
            const LearningRates rates = resolve_rates(parse_rates(conv_rates), d);
            const ConvergenceReport rep = convergence_report(d, rates, conv_T);
            emit(conv_out, [&](std::ostream& s) { write_convergence_csv(s, rep); });
            if (rep.diverged) std::cerr << "diverged at t=" << rep.diverged_at << '\n';
            if (!conv_svg.empty()) {
                PlotSeries b{"beta", {}, {}}, th{"theta", {}, {}}, env{"lambda^t", {}, {}};
                for (const auto& r : rep.rows) {
                    for (auto* s : {&b, &th, &env}) s->x.push_back(static_cast<double>(r.t));
                    b.y.push_back(r.dist_beta);
                    th.y.push_back(r.dist_theta);
                    env.y.push_back(r.lambda_pow);
                }
                emit(conv_svg, [&](std::ostream& s) {
                    write_svg(s, {b, th, env}, {"GD-2SLS convergence", "t", "distance", true});
                });
            }
        }
        if (bc->parsed()) {
            std::vector<std::size_t> grid;
            for (const auto& v : split_list(bc_n)) grid.push_back(parse_number<std::size_t>("--n", v));
            RngStream task_rng = RngStream(bc_seed, 0).child(0);
            const TaskParams task = sample_task(bc_p, bc_q, task_rng);
            if (bc_in.b_beta <= 0.0) bc_in.b_beta = norm2(task.beta);
            if (bc_in.b_theta <= 0.0) bc_in.b_theta = std::sqrt(sigma_max_squared(task.theta));
            emit(bc_out, [&](std::ostream& s) {
                s << "n,n_min,K,K0,C_n,C_limit,mse_bound,degenerate,empirical_mse,empirical_stderr\n";
                for (std::size_t k = 0; k < grid.size(); ++k) {
                    const std::size_t n = grid[k];
                    std::vector<double> errs(bc_sims);
                    parallel_for(bc_sims, 0, [&](std::size_t sim) {
                        RngStream rng = RngStream(bc_seed, sim).child(1 + k);
                        const Dataset d = generate_prompt(task, n, ClipBounds{}, scenario::Standard{}, rng).first;
                        const Vector b = clipped_beta(two_sls(d), bc_in.b_beta);
                        double e = 0.0;
                        for (std::size_t i = 0; i < b.size(); ++i) e += (b[i] - task.beta[i]) * (b[i] - task.beta[i]);
                        errs[sim] = e;
                    });
                    const Summary sm = summarize(errs);
                    std::string bound = "nan", c_n = "nan", degenerate = "below_n_min";
                    BoundReport rep = bound_constants(task, bc_in);
                    try {
                        rep = mse_bound(task, bc_in, n);
                        bound = format_double(rep.mse_bound);
                        c_n = format_double(rep.C_n);
                        degenerate = rep.degenerate ? "1" : "0";
                    } catch (const ThresholdNotMetError&) {
                    }
                    s << n << ',' << rep.n_min << ',' << format_double(rep.K) << ',' << format_double(rep.K0) << ','
                      << c_n << ',' << format_double(rep.C_limit) << ',' << bound << ',' << degenerate << ','
                      << format_double(sm.mean) << ',' << format_double(sm.standard_error) << '\n';
                }
            });
        }
        if (fit->parsed()) {
            const Dataset d = ingest_csv(fit_data, split_list(fit_z), split_list(fit_x), fit_y,
                                         fit_query ? std::optional<std::size_t>(fit_query) : std::nullopt);
            const LearningRates rates = resolve_rates(parse_rates(fit_rates), d);
            TfPredictorOptions opts;
            opts.loops = fit_loops;
            opts.explicit_rates = &rates;
            const Predictor tf = tf_predictor(opts);
            std::cout << "estimator,prediction,beta\n";
            for (const auto& e : {ols(d), two_sls(d)}) {
                std::cout << method_name(e.method) << ',' << format_double(e.predict(d.x_query));
                for (double b : e.beta_hat) std::cout << ',' << format_double(b);
                std::cout << '\n';
            }
            const double y_tf = tf(d);
            std::cout << "tf," << format_double(y_tf);
            for (double b : extract_coefficients(tf, d, fit_delta)) std::cout << ',' << format_double(b);
            std::cout << '\n';
        }
        if (ex->parsed()) {
            const Dataset d = read_prompt(ex_prompt, ex_query ? std::optional<std::size_t>(ex_query) : std::nullopt);
            const LearningRates rates = resolve_rates(parse_rates(ex_rates), d);
            TfPredictorOptions opts;
            opts.loops = ex_loops;
            opts.explicit_rates = &rates;
            const Predictor tf = tf_predictor(opts);
            std::cout << "delta,beta\n";
            for (double delta : ex_deltas) print_vector(std::cout, format_double(delta), extract_coefficients(tf, d, delta));
            print_vector(std::cout, "2sls", two_sls(d).beta_hat);
            if (!ex_dump.empty()) {
                const MaskBounds mb = compute_mask_bounds(d, rates, ex_loops);
                const LoopedModel m = make_looped_model(
                    std::make_shared<const BlockParams>(build_block(d.p(), d.q(), d.n(), rates, mb)), ex_loops);
                emit(ex_dump, [&](std::ostream& s) { dump_model(s, m); });
            }
        }
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
