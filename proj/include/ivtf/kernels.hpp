#pragma once

// Data-parallel inner loops used by the dense matrix code and the attention
// forward pass. Every kernel has a scalar reference implementation; on x86-64
// an AVX2/FMA variant is selected at runtime when the CPU supports it.
//
// The two backends do not round identically (FMA, lane-wise partial sums), so
// results agree to a few ulps rather than bitwise. Within one backend every
// kernel is deterministic.

#include <cstddef>
#include <span>
#include <string_view>

namespace ivtf::kernels {

enum class Backend { Scalar, Avx2 };

/// Backend used by the dispatching entry points below.
Backend active_backend() noexcept;

/// Best backend this CPU supports.
Backend detected_backend() noexcept;

/// Overrides the dispatch choice (tests and `IVTF_KERNELS=scalar`). Requesting
/// Avx2 on a CPU without it falls back to Scalar.
void set_backend(Backend b) noexcept;

std::string_view backend_name(Backend b) noexcept;

// Dispatching entry points. Spans must have equal lengths where paired.
double dot(std::span<const double> a, std::span<const double> b) noexcept;
void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept;   // y += alpha * x
void relu(std::span<const double> x, std::span<double> out) noexcept;               // out = max(x, 0)
double sum_squares(std::span<const double> x) noexcept;

namespace scalar {
double dot(std::span<const double> a, std::span<const double> b) noexcept;
void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept;
void relu(std::span<const double> x, std::span<double> out) noexcept;
double sum_squares(std::span<const double> x) noexcept;
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define IVTF_HAVE_AVX2_KERNELS 1
namespace avx2 {
double dot(std::span<const double> a, std::span<const double> b) noexcept;
void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept;
void relu(std::span<const double> x, std::span<double> out) noexcept;
double sum_squares(std::span<const double> x) noexcept;
}  // namespace avx2
#else
#define IVTF_HAVE_AVX2_KERNELS 0
#endif

}  // namespace ivtf::kernels
