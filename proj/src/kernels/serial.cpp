#include "clops/kernels.hpp"
#include "kernels_impl.hpp"

namespace {
struct SerialLoop {
    template <class F>
    static void run(std::size_t n, F&& f) {
        for (std::size_t i = 0; i < n; ++i) f(i);
    }
};
}  // namespace

#define CLOPS_KERNEL_NS serial
#define CLOPS_KERNEL_LOOP SerialLoop
#include "kernels_frontend.inc"
