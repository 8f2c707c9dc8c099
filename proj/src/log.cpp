#include "dynret/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace dynret::log {
namespace {
std::atomic<bool> g_quiet{false};
std::mutex g_mu;
}  // namespace

void set_quiet(bool q) { g_quiet = q; }
bool quiet() { return g_quiet; }

void info(std::string_view msg) {
  if (g_quiet) return;
  std::lock_guard lock(g_mu);
  std::cerr << "[info] " << msg << '\n';
}

void warn(std::string_view msg) {
  std::lock_guard lock(g_mu);
  std::cerr << "[warn] " << msg << '\n';
}

}  // namespace dynret::log
