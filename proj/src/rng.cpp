#include "ivtf/rng.hpp"

#include <cmath>

#include "ivtf/linalg.hpp"

namespace ivtf {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(splitmix64(seed ^ splitmix64(stream ^ 0xA0761D6478BD642Full))) {}

RngStream RngStream::child(std::uint64_t k) const {
    return RngStream(seed_, splitmix64(stream_ + 0x632BE59BD9B4E019ull * (k + 1)));
}

double RngStream::uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
    if (spare_) {
        const double v = *spare_;
        spare_.reset();
        return v;
    }
    double u = 0.0;
    double v = 0.0;
    double s = 0.0;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    return u * m;
}

GaussianSampler::GaussianSampler(const Matrix& covariance) : root_(symmetric_sqrt(covariance)) {}

Vector GaussianSampler::sample(RngStream& rng) const {
    Vector g(dim());
    for (double& x : g) x = rng.normal();
    return matvec(root_, g);
}

Vector sample_gaussian(const Matrix& covariance, RngStream& rng) {
    return GaussianSampler(covariance).sample(rng);
}

}  // namespace ivtf
