#pragma once

// Brute-force cursor transition for the default keep/remove policies,
// computed from entry keys and durations alone.

#include <algorithm>
#include <string>
#include <vector>

namespace oracle {

struct EntryDesc {
  std::string key;
  double duration = 0;
};

inline std::vector<double> starts(const std::vector<EntryDesc>& v) {
  std::vector<double> s;
  double acc = 0;
  for (const auto& e : v) {
    s.push_back(acc);
    acc += e.duration;
  }
  return s;
}

inline double total(const std::vector<EntryDesc>& v) {
  double acc = 0;
  for (const auto& e : v) acc += e.duration;
  return acc;
}

inline long find_key(const std::vector<EntryDesc>& v, const std::string& key) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i].key == key) return static_cast<long>(i);
  return -1;
}

/// Expected new time for a cursor at `t` moving from `prev` to `next`.
inline double default_transition(const std::vector<EntryDesc>& prev, const std::vector<EntryDesc>& next, double t) {
  const double new_total = total(next);
  if (prev.empty()) return 0;
  t = std::clamp(t, 0.0, total(prev));
  auto ps = starts(prev), ns = starts(next);
  // Boundaries belong to the following entry; the very end to the last one.
  std::size_t e = 0;
  for (std::size_t i = 0; i < prev.size(); ++i)
    if (ps[i] <= t) e = i;
  double result = 0;
  long j = find_key(next, prev[e].key);
  if (j >= 0) {
    result = ns[j] + (t - ps[e]);
  } else {
    bool found = false;
    for (std::size_t i = e + 1; i < prev.size() && !found; ++i)
      if (long k = find_key(next, prev[i].key); k >= 0) {
        result = ns[k];
        found = true;
      }
    for (long i = static_cast<long>(e) - 1; i >= 0 && !found; --i)
      if (long k = find_key(next, prev[i].key); k >= 0) {
        result = ns[k];
        found = true;
      }
  }
  return std::clamp(result, 0.0, new_total);
}

}  // namespace oracle
