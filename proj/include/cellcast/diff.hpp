#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "cellcast/graph.hpp"
#include "cellcast/params.hpp"

namespace cellcast::num {

// Selects the examples an evaluation runs over. The stamp keys stochastic
// regularization (dropout masks) so evaluation is pure given
// (parameters, batch, stamp).
struct Batch {
  std::vector<std::size_t> indices;
  std::uint64_t stamp = 0;

  static Batch full(std::size_t n, std::uint64_t stamp = 0) {
    Batch b;
    b.indices.resize(n);
    std::iota(b.indices.begin(), b.indices.end(), std::size_t{0});
    b.stamp = stamp;
    return b;
  }
};

template <class T>
using BoundParams = std::map<std::string, ad::NodeId>;

// A differentiable parameterized loss. Implementations build the loss graph
// once per evaluation; the same builder runs in double and in Dual
// arithmetic, which is what gives exact Hessian-vector products.
class DiffFunction {
 public:
  virtual ~DiffFunction() = default;

  // Expected slot names and shapes.
  virtual ParamMap slots() const = 0;

  virtual std::size_t num_examples() const = 0;

  virtual ad::NodeId build(ad::Graph<double>& g, const BoundParams<double>& params,
                           const Batch& batch) const = 0;
  virtual ad::NodeId build(ad::Graph<Dual>& g, const BoundParams<Dual>& params,
                           const Batch& batch) const = 0;
};

// CRTP helper so concrete functions implement a single templated
// build_loss<T> member.
template <class Derived>
class DiffFunctionBase : public DiffFunction {
 public:
  ad::NodeId build(ad::Graph<double>& g, const BoundParams<double>& params,
                   const Batch& batch) const override {
    return static_cast<const Derived*>(this)->template build_loss<double>(g, params, batch);
  }
  ad::NodeId build(ad::Graph<Dual>& g, const BoundParams<Dual>& params,
                   const Batch& batch) const override {
    return static_cast<const Derived*>(this)->template build_loss<Dual>(g, params, batch);
  }
};

namespace detail {

inline void check_params_match(const DiffFunction& fn, const ParamMap& params) {
  const ParamMap expect = fn.slots();
  if (expect.size() != params.size())
    throw ConfigError("parameter collection has " + std::to_string(params.size()) +
                      " slots, function expects " + std::to_string(expect.size()));
  auto ie = expect.begin();
  for (auto ip = params.begin(); ip != params.end(); ++ip, ++ie) {
    if (ip->first != ie->first)
      throw ConfigError("unexpected parameter slot '" + ip->first + "' (expected '" +
                        ie->first + "')");
    if (!ip->second.same_shape(ie->second))
      throw ConfigError("slot '" + ip->first + "' has shape " + shape_str(ip->second.shape()) +
                        ", function expects " + shape_str(ie->second.shape()));
  }
}

inline void check_batch(const Batch& batch) {
  if (batch.indices.empty()) throw ConfigError("batch must be nonempty");
}

}  // namespace detail

struct EvalResult {
  double loss = 0.0;
  ParamMap grads;
};

// Loss and per-slot gradients at the given parameters.
inline EvalResult eval_with_grad(const DiffFunction& fn, const ParamMap& params,
                                 const Batch& batch) {
  detail::check_params_match(fn, params);
  detail::check_batch(batch);
  ad::Graph<double> g;
  BoundParams<double> bound;
  for (const auto& [k, v] : params) bound.emplace(k, g.param(v));
  const ad::NodeId root = fn.build(g, bound, batch);
  const double loss = g.val(root)[0];
  if (!std::isfinite(loss)) throw NumericError("loss evaluation produced a non-finite value");
  g.backward(root);
  EvalResult out;
  out.loss = loss;
  for (const auto& [k, id] : bound) out.grads.emplace(k, g.grad(id));
  if (!all_finite(out.grads)) throw NumericError("gradient evaluation produced non-finite values");
  return out;
}

// Forward-only loss; the finite-difference oracles are built on this.
inline double eval_loss(const DiffFunction& fn, const ParamMap& params, const Batch& batch) {
  detail::check_params_match(fn, params);
  detail::check_batch(batch);
  ad::Graph<double> g;
  BoundParams<double> bound;
  for (const auto& [k, v] : params) bound.emplace(k, g.constant(v));
  const ad::NodeId root = fn.build(g, bound, batch);
  const double loss = g.val(root)[0];
  if (!std::isfinite(loss)) throw NumericError("loss evaluation produced a non-finite value");
  return loss;
}

// Hessian-vector product via a dual-number pass over the gradient
// computation. Slots present in v seed the direction; the returned
// collection mirrors params and holds d/dt grad(params + t*v) at t=0, i.e.
// rows of the full second-derivative matrix restricted to the seeded
// direction. Exact up to rounding, hence exactly linear in v.
inline ParamMap hvp(const DiffFunction& fn, const ParamMap& params, const Batch& batch,
                    const ParamMap& v) {
  detail::check_params_match(fn, params);
  detail::check_batch(batch);
  ad::Graph<Dual> g;
  BoundParams<Dual> bound;
  for (const auto& [k, value] : params) {
    auto iv = v.find(k);
    if (iv == v.end()) {
      bound.emplace(k, g.param(widen<Dual>(value)));
    } else {
      if (!iv->second.same_shape(value))
        throw ConfigError("hvp direction slot '" + k + "' does not mirror the parameter shape");
      bound.emplace(k, g.param(dual_seeded(value, iv->second)));
    }
  }
  const ad::NodeId root = fn.build(g, bound, batch);
  if (!std::isfinite(real_part(g.val(root)[0])))
    throw NumericError("loss evaluation produced a non-finite value");
  g.backward(root);
  ParamMap out;
  for (const auto& [k, id] : bound) out.emplace(k, deriv_parts(g.grad(id)));
  if (!all_finite(out)) throw NumericError("hvp produced non-finite values");
  return out;
}

// One explicit gradient-descent step: params' = params - lr * grads.
inline ParamMap sgd_step(const ParamMap& params, const ParamMap& grads, double lr) {
  if (lr <= 0.0) throw ConfigError("sgd_step requires lr > 0");
  check_mirrors(params, grads, "sgd_step");
  ParamMap out = params;
  axpy(-lr, grads, out);
  return out;
}

// ---- finite-difference verification utilities ----

inline ParamMap fd_gradient(const DiffFunction& fn, const ParamMap& params, const Batch& batch,
                            double h = 1e-5) {
  ParamMap out = zeros_like(params);
  ParamMap work = params;
  for (auto& [k, v] : work) {
    Tensor& dst = out.at(k);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double up = eval_loss(fn, work, batch);
      v[i] = keep - h;
      const double dn = eval_loss(fn, work, batch);
      v[i] = keep;
      dst[i] = (up - dn) / (2.0 * h);
    }
  }
  return out;
}

inline ParamMap fd_hvp(const DiffFunction& fn, const ParamMap& params, const Batch& batch,
                       const ParamMap& v, double h = 1e-5) {
  ParamMap up = params;
  ParamMap dn = params;
  for (const auto& [k, dir] : v) {
    auto iu = up.find(k);
    if (iu == up.end()) throw ConfigError("fd_hvp: unknown slot '" + k + "'");
    Tensor& tu = iu->second;
    Tensor& td = dn.at(k);
    for (std::size_t i = 0; i < dir.size(); ++i) {
      tu[i] += h * dir[i];
      td[i] -= h * dir[i];
    }
  }
  const ParamMap gu = eval_with_grad(fn, up, batch).grads;
  const ParamMap gd = eval_with_grad(fn, dn, batch).grads;
  ParamMap out = gu;
  axpy(-1.0, gd, out);
  scale_inplace(out, 1.0 / (2.0 * h));
  return out;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_err(const ParamMap& a, const ParamMap& b, double floor = 1e-6) {
  check_mirrors(a, b, "max_rel_err");
  double worst = 0.0;
  auto ib = b.begin();
  for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib)
    for (std::size_t i = 0; i < ia->second.size(); ++i)
      worst = std::max(worst, rel_err(ia->second[i], ib->second[i], floor));
  return worst;
}

}  // namespace cellcast::num
