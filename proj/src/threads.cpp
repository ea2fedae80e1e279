#include "posebench/threads.hpp"

#include <omp.h>

#include <atomic>
#include <cstdlib>

namespace posebench {

namespace {

std::atomic<int> g_override{0};

int env_cap() {
  static const int cap = [] {
    const char* value = std::getenv("POSEBENCH_THREADS");
    if (value == nullptr) return 0;
    const int parsed = std::atoi(value);
    return parsed > 0 ? parsed : 0;
  }();
  return cap;
}

}  // namespace

int max_threads() {
  const int forced = g_override.load(std::memory_order_relaxed);
  if (forced > 0) return forced;
  int n = omp_get_max_threads();
  const int cap = env_cap();
  if (cap > 0 && cap < n) n = cap;
  return n > 0 ? n : 1;
}

void set_max_threads(int n) {
  g_override.store(n > 0 ? n : 0, std::memory_order_relaxed);
}

ScopedThreadLimit::ScopedThreadLimit(int n)
    : previous_(g_override.load(std::memory_order_relaxed)) {
  set_max_threads(n);
}

ScopedThreadLimit::~ScopedThreadLimit() {
  g_override.store(previous_, std::memory_order_relaxed);
}

}  // namespace posebench
