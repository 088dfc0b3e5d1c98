#include <cstdlib>
#include <string_view>

#include "iwc/kernels.hpp"

namespace iwc::kernels {
namespace {

Isa select_isa() {
  if (const char* forced = std::getenv("IWC_SIMD")) {
    if (std::string_view(forced) == "scalar") return Isa::kScalar;
  }
  return avx2_table() != nullptr ? Isa::kAvx2 : Isa::kScalar;
}

}  // namespace

Isa active_isa() {
  static const Isa isa = select_isa();
  return isa;
}

const KernelTable& active() {
  static const KernelTable& table =
      active_isa() == Isa::kAvx2 ? *avx2_table() : scalar_table();
  return table;
}

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

}  // namespace iwc::kernels
