#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "esma/kernels.hpp"

namespace esma::kernels {

#if !(defined(__x86_64__) || defined(_M_X64) || defined(__i386__))
const KernelTable* avx2_table() { return nullptr; }
#endif
#if !(defined(__aarch64__) || defined(_M_ARM64))
const KernelTable* neon_table() { return nullptr; }
#endif

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "unknown";
}

namespace {

const KernelTable* best_available() {
  if (const char* env = std::getenv("ESMA_KERNELS"); env && std::string(env) == "scalar") {
    return &scalar_table();
  }
  if (const auto* t = avx2_table()) return t;
  if (const auto* t = neon_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*> g_active{nullptr};

}  // namespace

const KernelTable& active() {
  const KernelTable* t = g_active.load(std::memory_order_acquire);
  if (!t) {
    t = best_available();
    g_active.store(t, std::memory_order_release);
  }
  return *t;
}

void select(Isa isa) {
  const KernelTable* t = nullptr;
  switch (isa) {
    case Isa::scalar: t = &scalar_table(); break;
    case Isa::avx2: t = avx2_table(); break;
    case Isa::neon: t = neon_table(); break;
  }
  if (!t) throw std::runtime_error("kernel ISA not available: " + std::string(isa_name(isa)));
  g_active.store(t, std::memory_order_release);
}

}  // namespace esma::kernels
