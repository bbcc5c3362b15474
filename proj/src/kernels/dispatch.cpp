#include <atomic>
#include <cstdlib>
#include <string>

#include "pcal/error.hpp"
#include "pcal/kernels.hpp"

namespace pcal::kernels {

namespace scalar {
extern const KernelTable kTable;
}
#if PCAL_HAVE_AVX2
namespace avx2 {
extern const KernelTable kTable;
}
#endif

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
  }
  return "unknown";
}

bool supported(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar: return true;
    case Isa::Avx2:
#if PCAL_HAVE_AVX2
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa detect() noexcept {
  if (const char* env = std::getenv("PCAL_SIMD"); env && std::string(env) == "scalar") {
    return Isa::Scalar;
  }
  return supported(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

const KernelTable& table(Isa isa) {
  if (!supported(isa)) {
    throw InvalidParameter("kernel variant not supported on this CPU: " +
                           std::string(isa_name(isa)));
  }
#if PCAL_HAVE_AVX2
  if (isa == Isa::Avx2) return avx2::kTable;
#endif
  return scalar::kTable;
}

namespace {
std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{&table(detect())};
  return current;
}
}  // namespace

const KernelTable& active() noexcept { return *slot().load(std::memory_order_relaxed); }

void set_active(Isa isa) { slot().store(&table(isa), std::memory_order_relaxed); }

}  // namespace pcal::kernels
