#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "ivtf/datagen.hpp"
#include "ivtf/gd2sls.hpp"
#include "ivtf/matrix.hpp"
#include "ivtf/rng.hpp"

namespace testutil {

inline ivtf::Matrix random_matrix(std::size_t r, std::size_t c, ivtf::RngStream& rng, double scale = 1.0) {
    ivtf::Matrix m(r, c);
    for (auto& v : m.data()) v = scale * rng.normal();
    return m;
}

inline ivtf::Vector random_vector(std::size_t n, ivtf::RngStream& rng, double scale = 1.0) {
    ivtf::Vector v(n);
    for (auto& e : v) e = scale * rng.normal();
    return v;
}

/// Standard endogenous prompt from a freshly sampled task.
inline ivtf::Dataset standard_prompt(std::size_t p, std::size_t q, std::size_t n, std::uint64_t seed,
                                     std::uint64_t stream = 0) {
    ivtf::RngStream rng(seed, stream);
    auto task_rng = rng.child(0);
    auto prompt_rng = rng.child(1);
    const auto task = ivtf::sample_task(p, q, task_rng);
    return ivtf::generate_prompt(task, n, ivtf::ClipBounds{}, ivtf::scenario::Standard{}, prompt_rng).first;
}

inline ivtf::GDState random_state(std::size_t p, std::size_t q, ivtf::RngStream& rng, double scale = 1.0) {
    ivtf::GDState s;
    s.theta = random_matrix(q, p, rng, scale);
    s.beta = random_vector(p, rng, scale);
    return s;
}

/// Least-squares slope of log(values[t]) against t over the monotone tail:
/// the second half of the prefix that stays above rel_floor * values[0], which
/// keeps the fit clear of the round-off plateau.
inline double tail_log_slope(const std::vector<double>& values, double rel_floor = 1e-9) {
    if (values.empty()) return 0.0;
    const double floor = rel_floor * values[0];
    std::size_t end = 0;
    while (end < values.size() && values[end] > floor && std::isfinite(values[end])) ++end;
    const std::size_t begin = end / 2;
    if (end < begin + 3) return 0.0;
    double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
    const double m = static_cast<double>(end - begin);
    for (std::size_t t = begin; t < end; ++t) {
        const double x = static_cast<double>(t);
        const double y = std::log(values[t]);
        st += x;
        sy += y;
        stt += x * x;
        sty += x * y;
    }
    return (m * sty - st * sy) / (m * stt - st * st);
}

}  // namespace testutil
