#include <atomic>
#include <cstdlib>
#include <string>

#include "logos/error.hpp"
#include "logos/kernels.hpp"

namespace logos::kernels {
namespace {

const KernelTable* detect() {
  if (const char* env = std::getenv("LOGOSKIT_KERNELS")) {
    if (std::string(env) == "scalar") return &scalar_table();
  }
  if (isa_supported(Isa::kAvx2)) return &table_for(Isa::kAvx2);
  return &scalar_table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{detect()};
  return current;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(LOGOS_HAVE_AVX2_KERNELS)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table_for(Isa isa) {
  if (!isa_supported(isa)) {
    throw ConfigError("kernel set '" + std::string(isa_name(isa)) + "' is not supported here");
  }
#if defined(LOGOS_HAVE_AVX2_KERNELS)
  if (isa == Isa::kAvx2) return avx2_table();
#endif
  return scalar_table();
}

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

void set_active(Isa isa) { slot().store(&table_for(isa), std::memory_order_release); }

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

}  // namespace logos::kernels
