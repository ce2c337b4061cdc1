#include "ivtf/datagen.hpp"

#include <cmath>
#include <stdexcept>

#include "ivtf/errors.hpp"
#include "ivtf/linalg.hpp"

namespace ivtf {

namespace {

void require_shape(const Matrix& m, std::size_t r, std::size_t c, const char* what) {
    if (m.rows() != r || m.cols() != c) {
        throw DimensionError(std::string(what) + ": expected " + std::to_string(r) + "x" + std::to_string(c) +
                             ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
}

void require_psd(const Matrix& m, const char* what) {
    try {
        (void)symmetric_sqrt(m);
    } catch (const std::invalid_argument& e) {
        throw NotPsdError(std::string(what) + ": " + e.what());
    }
}

Matrix gaussian_matrix(std::size_t r, std::size_t c, RngStream& rng) {
    Matrix m(r, c);
    for (double& v : m.data()) v = rng.normal();
    return m;
}

Vector gaussian_vector(std::size_t n, RngStream& rng) {
    Vector v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

// Per-variant knobs resolved once before assembling rows.
struct Plan {
    double theta_scale = 1.0;
    double u_scale = 1.0;
    bool quadratic = false;
    bool mlp = false;
    std::size_t zero_from = 0;  // instruments [zero_from, q) are zeroed; q means none
    std::size_t dup_x = 0;
    std::size_t dup_z = 0;
    double jitter_sd = 0.0;
};

Plan make_plan(const ScenarioVariant& variant, std::size_t q) {
    Plan plan;
    plan.zero_from = q;
    std::visit(
        [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, scenario::IvStrength>) {
                plan.theta_scale = v.r;
            } else if constexpr (std::is_same_v<T, scenario::QuadraticIv>) {
                plan.quadratic = true;
            } else if constexpr (std::is_same_v<T, scenario::UnderIdentified>) {
                plan.zero_from = v.q_eff;
            } else if constexpr (std::is_same_v<T, scenario::Multicollinearity>) {
                plan.dup_x = v.dup_x;
                plan.dup_z = v.dup_z;
                plan.jitter_sd = std::sqrt(v.jitter);
            } else if constexpr (std::is_same_v<T, scenario::NonlinearMlp>) {
                plan.mlp = true;
            } else if constexpr (std::is_same_v<T, scenario::EndogeneityStrength>) {
                plan.u_scale = v.r;
            }
        },
        variant);
    return plan;
}

}  // namespace

void TaskParams::validate() const {
    const std::size_t p_ = p();
    const std::size_t q_ = q();
    if (p_ == 0 || q_ == 0) throw DimensionError("task: p and q must be positive");
    if (beta.size() != p_) throw DimensionError("task: beta must have length p");
    if (confound_y.size() != p_) throw DimensionError("task: phi must have length p");
    require_shape(confound_x, p_, p_, "task Phi");
    require_shape(sigma_z, q_, q_, "task Sigma_z");
    require_shape(sigma_u, p_, p_, "task Sigma_u");
    require_shape(sigma_omega, p_, p_, "task Sigma_omega");
    require_psd(sigma_z, "Sigma_z");
    require_psd(sigma_u, "Sigma_u");
    require_psd(sigma_omega, "Sigma_omega");
    if (!(sigma_eps >= 0.0) || !std::isfinite(sigma_eps)) throw std::invalid_argument("task: sigma_eps must be >= 0");
}

double TaskParams::structural_error_variance() const {
    return dot(confound_y, matvec(sigma_u, confound_y)) + sigma_eps * sigma_eps;
}

void ClipBounds::validate() const {
    for (double b : {z, x, y, beta}) {
        if (!(b > 0.0)) throw std::invalid_argument("clip bounds must be positive or unbounded");
    }
}

void Dataset::validate() const {
    if (n() < 1) throw DimensionError("dataset: need at least one training row");
    if (X.rows() != n() || Y.size() != n()) throw DimensionError("dataset: Z, X, Y row counts differ");
    if (z_query.size() != q() || x_query.size() != p()) throw DimensionError("dataset: query dimensions differ");
    if (!Z.all_finite() || !X.all_finite() || !all_finite(Y) || !all_finite(z_query) || !all_finite(x_query) ||
        !std::isfinite(y_query)) {
        throw NonFiniteError("dataset contains non-finite values");
    }
}

void validate_variant(const ScenarioVariant& variant, std::size_t p, std::size_t q) {
    std::visit(
        [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, scenario::IvStrength> || std::is_same_v<T, scenario::EndogeneityStrength>) {
                if (!(v.r >= 0.0 && v.r <= 2.0)) throw std::invalid_argument("strength factor r must lie in [0, 2]");
            } else if constexpr (std::is_same_v<T, scenario::UnderIdentified>) {
                if (v.q_eff < 1 || v.q_eff >= q) throw std::invalid_argument("under-identified: need 1 <= q_eff < q");
            } else if constexpr (std::is_same_v<T, scenario::Multicollinearity>) {
                if (v.dup_x >= p || v.dup_z >= q) throw std::invalid_argument("multicollinearity: too many duplicates");
                if (v.dup_x > p - v.dup_x || v.dup_z > q - v.dup_z) {
                    throw std::invalid_argument("multicollinearity: duplicates must not exceed base columns");
                }
                if (!(v.jitter >= 0.0)) throw std::invalid_argument("multicollinearity: jitter must be >= 0");
            } else if constexpr (std::is_same_v<T, scenario::NonlinearMlp>) {
                if (v.hidden < 1) throw std::invalid_argument("nonlinear: hidden width must be >= 1");
            }
        },
        variant);
}

std::string variant_name(const ScenarioVariant& variant) {
    return std::visit(
        [](const auto& v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, scenario::Standard>) return "standard";
            else if constexpr (std::is_same_v<T, scenario::IvStrength>) return "iv-strength";
            else if constexpr (std::is_same_v<T, scenario::QuadraticIv>) return "quadratic";
            else if constexpr (std::is_same_v<T, scenario::UnderIdentified>) return "underid";
            else if constexpr (std::is_same_v<T, scenario::Multicollinearity>) return "multicollinearity";
            else if constexpr (std::is_same_v<T, scenario::NonlinearMlp>) return "nonlinear";
            else return "endogeneity";
        },
        variant);
}

TaskParams sample_task(std::size_t p, std::size_t q, RngStream& rng) {
    if (p == 0 || q == 0) throw DimensionError("sample_task: p and q must be positive");
    TaskParams t;
    t.theta = gaussian_matrix(q, p, rng);
    t.beta = gaussian_vector(p, rng);
    t.confound_x = gaussian_matrix(p, p, rng);
    t.confound_y = gaussian_vector(p, rng);
    t.sigma_z = Matrix::identity(q);
    t.sigma_u = Matrix::identity(p);
    t.sigma_omega = Matrix::identity(p);
    t.sigma_eps = 1.0;
    return t;
}

GenerationTrace draw_trace(const TaskParams& task, std::size_t n, const ScenarioVariant& variant, RngStream& rng) {
    task.validate();
    if (n < 1) throw DimensionError("generate_prompt: n must be >= 1");
    const std::size_t p = task.p();
    const std::size_t q = task.q();
    validate_variant(variant, p, q);

    const GaussianSampler z_draw(task.sigma_z);
    const GaussianSampler u_draw(task.sigma_u);
    const GaussianSampler w_draw(task.sigma_omega);

    GenerationTrace tr{Matrix(n + 1, q), Matrix(n, p), Matrix(n + 1, p), Vector(n + 1), {}, {}, {}, {}};
    auto put = [](std::span<double> dst, const Vector& src) { std::copy(src.begin(), src.end(), dst.begin()); };
    for (std::size_t i = 0; i < n; ++i) {
        put(tr.z.row(i), z_draw.sample(rng));
        put(tr.u.row(i), u_draw.sample(rng));
        put(tr.omega.row(i), w_draw.sample(rng));
        tr.eps[i] = task.sigma_eps * rng.normal();
    }
    put(tr.z.row(n), z_draw.sample(rng));
    put(tr.omega.row(n), w_draw.sample(rng));
    tr.eps[n] = task.sigma_eps * rng.normal();

    if (const auto* mlp = std::get_if<scenario::NonlinearMlp>(&variant)) {
        tr.mlp_hidden = gaussian_matrix(mlp->hidden, q, rng);
        tr.mlp_output = gaussian_matrix(p, mlp->hidden, rng);
    }
    if (const auto* mc = std::get_if<scenario::Multicollinearity>(&variant)) {
        tr.dup_x_noise = gaussian_matrix(n + 1, mc->dup_x, rng);
        tr.dup_z_noise = gaussian_matrix(n + 1, mc->dup_z, rng);
    }
    return tr;
}

Dataset assemble_prompt(const TaskParams& task, const GenerationTrace& tr, const ClipBounds& bounds,
                        const ScenarioVariant& variant) {
    bounds.validate();
    const std::size_t p = task.p();
    const std::size_t q = task.q();
    const std::size_t n = tr.u.rows();
    validate_variant(variant, p, q);
    if (tr.z.rows() != n + 1 || tr.z.cols() != q || tr.u.cols() != p || tr.omega.rows() != n + 1 ||
        tr.omega.cols() != p || tr.eps.size() != n + 1) {
        throw DimensionError("assemble_prompt: trace shapes do not match the task");
    }

    const Plan plan = make_plan(variant, q);
    const std::size_t p_base = p - plan.dup_x;
    const std::size_t q_base = q - plan.dup_z;
    const Matrix theta = plan.theta_scale * task.theta;

    Dataset d{Matrix(n, q), Matrix(n, p), Vector(n), Vector(q), Vector(p), 0.0};

    for (std::size_t i = 0; i <= n; ++i) {
        const bool query = i == n;
        Vector z(tr.z.row(i).begin(), tr.z.row(i).end());
        for (std::size_t l = plan.zero_from; l < q; ++l) z[l] = 0.0;
        for (std::size_t k = 0; k < plan.dup_z; ++k) {
            const std::size_t j = q_base + k;
            z[j] = 2.0 * z[j - plan.dup_z] + plan.jitter_sd * tr.dup_z_noise(i, k);
        }

        // instrument signal on the first p_base regressors
        Vector x(p, 0.0);
        if (plan.mlp) {
            Vector h = matvec(tr.mlp_hidden, z);
            for (double& v : h) v = v > 0.0 ? v : 0.0;
            x = matvec(tr.mlp_output, h);
        } else {
            for (std::size_t k = 0; k < p_base; ++k) {
                double s = 0.0;
                for (std::size_t l = 0; l < q_base; ++l) s += theta(l, k) * (plan.quadratic ? z[l] * z[l] : z[l]);
                x[k] = s;
            }
        }

        // endogenous error Φᵀu + ω; the query has no u
        Vector u(p, 0.0);
        if (!query) {
            for (std::size_t k = 0; k < p_base; ++k) u[k] = plan.u_scale * tr.u(i, k);
        }
        for (std::size_t k = 0; k < p_base; ++k) {
            double e = tr.omega(i, k);
            for (std::size_t m = 0; m < p_base; ++m) e += task.confound_x(m, k) * u[m];
            x[k] += e;
        }
        for (std::size_t k = 0; k < plan.dup_x; ++k) {
            const std::size_t j = p_base + k;
            x[j] = 2.0 * x[j - plan.dup_x] + plan.jitter_sd * tr.dup_x_noise(i, k);
        }

        double y = dot(task.beta, x) + tr.eps[i];
        for (std::size_t k = 0; k < p_base; ++k) y += task.confound_y[k] * u[k];

        z = clip(z, bounds.z);
        x = clip(x, bounds.x);
        y = clip(y, bounds.y);
        if (query) {
            d.z_query = std::move(z);
            d.x_query = std::move(x);
            d.y_query = y;
        } else {
            std::copy(z.begin(), z.end(), d.Z.row(i).begin());
            std::copy(x.begin(), x.end(), d.X.row(i).begin());
            d.Y[i] = y;
        }
    }
    return d;
}

std::pair<Dataset, GenerationTrace> generate_prompt(const TaskParams& task, std::size_t n, const ClipBounds& bounds,
                                                    const ScenarioVariant& variant, RngStream& rng) {
    GenerationTrace tr = draw_trace(task, n, variant, rng);
    Dataset d = assemble_prompt(task, tr, bounds, variant);
    return {std::move(d), std::move(tr)};
}

Vector clip(std::span<const double> v, double bound) {
    Vector out(v.begin(), v.end());
    if (std::isinf(bound)) return out;
    const double norm = norm2(v);
    if (norm > bound) {
        const double s = bound / norm;
        for (double& x : out) x *= s;
    }
    return out;
}

double clip(double v, double bound) {
    if (std::isinf(bound) || std::abs(v) <= bound) return v;
    return v > 0.0 ? bound : -bound;
}

}  // namespace ivtf
