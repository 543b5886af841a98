#include "basil/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string_view>

namespace basil::kernels {

#if defined(BASIL_HAVE_AVX2)
const KernelTable& avx2_table_unchecked() noexcept;
#endif

const KernelTable* avx2_table() noexcept {
#if defined(BASIL_HAVE_AVX2)
    static const bool supported = [] {
        __builtin_cpu_init();
        return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    }();
    return supported ? &avx2_table_unchecked() : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable* find_table(std::string_view name) noexcept {
    if (name == "scalar") return &scalar_table();
    if (name == "avx2") return avx2_table();
    return nullptr;
}

namespace {

const KernelTable* pick_default() noexcept {
    if (const char* env = std::getenv("BASIL_KERNELS")) {
        if (const KernelTable* t = find_table(env)) return t;
    }
    if (const KernelTable* t = avx2_table()) return t;
    return &scalar_table();
}

std::atomic<const KernelTable*>& slot() noexcept {
    static std::atomic<const KernelTable*> table{pick_default()};
    return table;
}

} // namespace

const KernelTable& active() noexcept { return *slot().load(std::memory_order_relaxed); }

void set_active(const KernelTable& table) noexcept {
    slot().store(&table, std::memory_order_relaxed);
}

} // namespace basil::kernels
