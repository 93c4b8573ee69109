#pragma once

#include <cstdint>

namespace ilnet {

// Process-wide floating point operation counter. Ops report an analytic
// count once per call (multiply-accumulates count as 2, elementwise work as
// 1 per element), so activating it does not perturb the computation.
// Not thread-safe across concurrent counting runs; count from one thread.
class FlopCounter {
 public:
  static void begin();
  static int64_t end();
  static bool active() { return active_; }
  static void add(int64_t n) {
    if (active_) total_ += n;
  }

 private:
  static bool active_;
  static int64_t total_;
};

}  // namespace ilnet
