#include "ivtf/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace ivtf::kernels {

namespace {

Backend detect() noexcept {
#if IVTF_HAVE_AVX2_KERNELS && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Backend::Avx2;
#endif
    return Backend::Scalar;
}

Backend initial() noexcept {
    const Backend best = detect();
    if (const char* env = std::getenv("IVTF_KERNELS"); env != nullptr && std::strcmp(env, "scalar") == 0) {
        return Backend::Scalar;
    }
    return best;
}

std::atomic<Backend>& current() noexcept {
    static std::atomic<Backend> b{initial()};
    return b;
}

}  // namespace

Backend detected_backend() noexcept {
    static const Backend b = detect();
    return b;
}

Backend active_backend() noexcept { return current().load(std::memory_order_relaxed); }

void set_backend(Backend b) noexcept {
    if (b == Backend::Avx2 && detected_backend() != Backend::Avx2) b = Backend::Scalar;
    current().store(b, std::memory_order_relaxed);
}

std::string_view backend_name(Backend b) noexcept {
    switch (b) {
        case Backend::Scalar: return "scalar";
        case Backend::Avx2: return "avx2";
    }
    return "unknown";
}

#if IVTF_HAVE_AVX2_KERNELS
#define IVTF_DISPATCH(fn, ...)                                            \
    (active_backend() == Backend::Avx2 ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__))
#else
#define IVTF_DISPATCH(fn, ...) scalar::fn(__VA_ARGS__)
#endif

double dot(std::span<const double> a, std::span<const double> b) noexcept { return IVTF_DISPATCH(dot, a, b); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept {
    IVTF_DISPATCH(axpy, alpha, x, y);
}

void relu(std::span<const double> x, std::span<double> out) noexcept { IVTF_DISPATCH(relu, x, out); }

double sum_squares(std::span<const double> x) noexcept { return IVTF_DISPATCH(sum_squares, x); }

#undef IVTF_DISPATCH

}  // namespace ivtf::kernels
