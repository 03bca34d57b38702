#include <omp.h>

#include <cstdlib>
#include <string>

#include "clops/kernels.hpp"
#include "kernels_impl.hpp"

namespace {
struct OmpLoop {
    template <class F>
    static void run(std::size_t n, F&& f) {
        const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (count > 1)
        for (std::ptrdiff_t i = 0; i < count; ++i) f(static_cast<std::size_t>(i));
    }
};
}  // namespace

#define CLOPS_KERNEL_NS parallel
#define CLOPS_KERNEL_LOOP OmpLoop
#include "kernels_frontend.inc"

namespace clops::kernels {

namespace {
int g_default_threads = 0;
}

void set_num_threads(int n) {
    if (g_default_threads == 0) g_default_threads = omp_get_max_threads();
    omp_set_num_threads(n > 0 ? n : g_default_threads);
}

int num_threads() { return omp_get_max_threads(); }

void configure_threads_from_env() {
    if (const char* env = std::getenv("CLOPS_THREADS")) {
        try {
            set_num_threads(std::stoi(env));
        } catch (const std::exception&) {
            // ignore malformed values
        }
    }
}

}  // namespace clops::kernels

namespace clops::kernels {

namespace {
Backend g_backend = Backend::parallel;
}

void set_backend(Backend b) { g_backend = b; }
Backend backend() { return g_backend; }

}  // namespace clops::kernels
