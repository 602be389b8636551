#pragma once

// Window min/max morphology over a 0/1 mask; outside the mask counts as 0.

#include <vector>

namespace oracle {

inline std::vector<char> morph(const std::vector<char>& mask, long r, bool dilate) {
  const long n = static_cast<long>(mask.size());
  std::vector<char> out(mask.size(), 0);
  for (long i = 0; i < n; ++i) {
    bool any = false, all = true;
    for (long j = i - r; j <= i + r; ++j) {
      bool v = j >= 0 && j < n && mask[j];
      any = any || v;
      all = all && v;
    }
    out[i] = dilate ? any : all;
  }
  return out;
}

}  // namespace oracle
