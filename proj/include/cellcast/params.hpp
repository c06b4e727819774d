#pragma once

#include <map>
#include <string>

#include "cellcast/tensor.hpp"

namespace cellcast {

// Named collection of parameter tensors. std::map keeps iteration order
// stable, which every reduction in the toolkit relies on for bit
// reproducibility.
using ParamMap = std::map<std::string, Tensor>;

inline ParamMap zeros_like(const ParamMap& p) {
  ParamMap out;
  for (const auto& [k, v] : p) out.emplace(k, Tensor::zeros(v.shape()));
  return out;
}

inline void check_mirrors(const ParamMap& a, const ParamMap& b, const char* what) {
  if (a.size() != b.size()) {
    throw ConfigError(std::string(what) + ": collections have different slot counts");
  }
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !ia->second.same_shape(ib->second)) {
      throw ConfigError(std::string(what) + ": slot '" + ia->first + "' does not mirror '" +
                        ib->first + "'");
    }
  }
}

// y += alpha * x over mirrored collections.
inline void axpy(double alpha, const ParamMap& x, ParamMap& y) {
  check_mirrors(x, y, "axpy");
  auto iy = y.begin();
  for (auto ix = x.begin(); ix != x.end(); ++ix, ++iy) {
    for (std::size_t i = 0; i < ix->second.size(); ++i)
      iy->second[i] += alpha * ix->second[i];
  }
}

inline void scale_inplace(ParamMap& p, double alpha) {
  for (auto& [k, v] : p)
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= alpha;
}

inline double dot(const ParamMap& a, const ParamMap& b) {
  check_mirrors(a, b, "dot");
  double acc = 0.0;
  auto ib = b.begin();
  for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
    for (std::size_t i = 0; i < ia->second.size(); ++i)
      acc += ia->second[i] * ib->second[i];
  }
  return acc;
}

inline double norm2(const ParamMap& p) {
  double acc = 0.0;
  for (const auto& [k, v] : p)
    for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * v[i];
  return std::sqrt(acc);
}

inline std::size_t param_count(const ParamMap& p) {
  std::size_t n = 0;
  for (const auto& [k, v] : p) n += v.size();
  return n;
}

inline bool all_finite(const ParamMap& p) {
  for (const auto& [k, v] : p)
    if (!v.all_finite()) return false;
  return true;
}

// Sub-collection of the slots whose names start with the given prefix.
inline ParamMap filter_prefix(const ParamMap& p, const std::string& prefix) {
  ParamMap out;
  for (const auto& [k, v] : p)
    if (k.rfind(prefix, 0) == 0) out.emplace(k, v);
  return out;
}

// Copies the slots of src into dst (slot names must already exist in dst).
inline void overwrite(ParamMap& dst, const ParamMap& src) {
  for (const auto& [k, v] : src) {
    auto it = dst.find(k);
    if (it == dst.end()) throw ConfigError("overwrite: unknown slot '" + k + "'");
    if (!it->second.same_shape(v))
      throw ConfigError("overwrite: slot '" + k + "' shape mismatch");
    it->second = v;
  }
}

inline ParamMap merged(const ParamMap& a, const ParamMap& b) {
  ParamMap out = a;
  for (const auto& [k, v] : b) {
    if (!out.emplace(k, v).second)
      throw ConfigError("merged: duplicate slot '" + k + "'");
  }
  return out;
}

}  // namespace cellcast
