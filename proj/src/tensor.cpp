#include "dynret/tensor.hpp"

namespace dynret {

namespace {
std::atomic<unsigned> g_threads{0};
}  // namespace

void set_num_threads(unsigned n) { g_threads = n; }

unsigned num_threads() {
  if (unsigned n = g_threads; n != 0) return n;
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace dynret
