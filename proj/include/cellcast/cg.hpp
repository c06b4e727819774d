#pragma once

#include <functional>

#include "cellcast/params.hpp"

namespace cellcast::num {

struct CgConfig {
  int max_iters = 10;        // Q
  double residual_tol = 1e-10;
  double damping = 0.0;      // lambda added to the operator diagonal

  void validate() const {
    if (max_iters < 1) throw ConfigError("cg: max_iters must be >= 1");
    if (residual_tol < 0.0) throw ConfigError("cg: residual_tol must be >= 0");
    if (damping < 0.0) throw ConfigError("cg: damping must be >= 0");
  }
};

struct CgResult {
  ParamMap x;
  int iters = 0;
  double residual_norm = 0.0;
  std::vector<double> residual_history;
};

using LinearOperator = std::function<ParamMap(const ParamMap&)>;

// Conjugate gradient for symmetric positive (semi-)definite operators over
// named tensor collections. Solves (A + damping*I) x = b starting from
// x0 = 0; returns the iterate once the residual norm drops below
// residual_tol or after max_iters steps.
inline CgResult cg_solve(const LinearOperator& apply_a, const ParamMap& b, const CgConfig& cfg) {
  cfg.validate();
  if (!all_finite(b)) throw NumericError("cg: right-hand side is not finite");

  CgResult res;
  res.x = zeros_like(b);
  ParamMap r = b;
  ParamMap p = r;
  double rr = dot(r, r);
  res.residual_norm = std::sqrt(rr);
  res.residual_history.push_back(res.residual_norm);
  if (res.residual_norm <= cfg.residual_tol) return res;

  for (int it = 0; it < cfg.max_iters; ++it) {
    ParamMap ap = apply_a(p);
    check_mirrors(ap, p, "cg operator");
    if (cfg.damping > 0.0) axpy(cfg.damping, p, ap);
    if (!all_finite(ap)) throw NumericError("cg: operator produced non-finite values");
    const double pap = dot(p, ap);
    if (!std::isfinite(pap)) throw NumericError("cg: curvature is not finite");
    if (pap <= 0.0) break;  // lost positive definiteness; keep the best iterate
    const double alpha = rr / pap;
    axpy(alpha, p, res.x);
    axpy(-alpha, ap, r);
    const double rr_next = dot(r, r);
    if (!std::isfinite(rr_next)) throw NumericError("cg: residual is not finite");
    res.iters = it + 1;
    res.residual_norm = std::sqrt(rr_next);
    res.residual_history.push_back(res.residual_norm);
    if (res.residual_norm <= cfg.residual_tol) break;
    const double beta = rr_next / rr;
    rr = rr_next;
    scale_inplace(p, beta);
    axpy(1.0, r, p);
  }
  return res;
}

}  // namespace cellcast::num
