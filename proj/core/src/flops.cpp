#include "ilnet/flops.hpp"

namespace ilnet {

bool FlopCounter::active_ = false;
int64_t FlopCounter::total_ = 0;

void FlopCounter::begin() {
  active_ = true;
  total_ = 0;
}

int64_t FlopCounter::end() {
  active_ = false;
  return total_;
}

}  // namespace ilnet
