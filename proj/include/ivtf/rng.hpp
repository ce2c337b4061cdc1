#pragma once

#include <cstdint>
#include <optional>
#include <random>

#include "ivtf/matrix.hpp"

namespace ivtf {

/// Reproducible random stream keyed by (seed, stream id).
///
/// The engine is std::mt19937_64 (bit-exact across standard libraries) seeded
/// from a SplitMix64 mix of the two keys. Uniforms use the top 53 bits; normals
/// use the Marsaglia polar method. Standard-library distributions are avoided
/// on purpose because their output is implementation-defined.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

    /// Independent stream derived from this one's keys (not its position).
    RngStream child(std::uint64_t k) const;

    std::uint64_t next_u64() { return engine_(); }
    double uniform();  // open interval (0, 1)
    double normal();   // N(0, 1)

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
    std::optional<double> spare_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Draws N(0, Σ) via the symmetric square root of Σ, computed once.
/// Always consumes exactly dim() standard normals per draw, including Σ = 0.
class GaussianSampler {
public:
    explicit GaussianSampler(const Matrix& covariance);

    std::size_t dim() const noexcept { return root_.rows(); }
    const Matrix& root() const noexcept { return root_; }
    Vector sample(RngStream& rng) const;

private:
    Matrix root_;
};

/// One N(0, Σ) draw. Throws NotPsdError for an indefinite Σ.
Vector sample_gaussian(const Matrix& covariance, RngStream& rng);

}  // namespace ivtf
