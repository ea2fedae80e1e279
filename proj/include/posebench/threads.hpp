#pragma once

namespace posebench {

// Effective worker count for parallel kernels: the smaller of the OpenMP
// thread budget, the POSEBENCH_THREADS environment variable (when set),
// and any override installed via set_max_threads. Always >= 1.
int max_threads();

// Overrides the thread budget for the current process. 0 restores the
// automatic behavior. Serial mode (1) makes every kernel bit-reproducible.
void set_max_threads(int n);

// RAII guard forcing a thread budget for a scope, used by tests and the
// acceptance suite to pin serial mode.
class ScopedThreadLimit {
 public:
  explicit ScopedThreadLimit(int n);
  ~ScopedThreadLimit();
  ScopedThreadLimit(const ScopedThreadLimit&) = delete;
  ScopedThreadLimit& operator=(const ScopedThreadLimit&) = delete;

 private:
  int previous_;
};

}  // namespace posebench
