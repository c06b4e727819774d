#include "cellcast/meta.hpp"

#include <cmath>

namespace cellcast::meta {

void MetaConfig::validate() const {
  if (inner_steps < 1) throw ConfigError("meta: inner_steps must be >= 1");
  if (cg_iters < 1) throw ConfigError("meta: cg_iters must be >= 1");
  if (epochs < 1) throw ConfigError("meta: epochs must be >= 1");
  if (inner_lr <= 0.0 || outer_lr <= 0.0 || finetune_lr <= 0.0)
    throw ConfigError("meta: learning rates must be > 0");
  if (damping < 0.0) throw ConfigError("meta: damping must be >= 0");
  if (finetune_steps < 0) throw ConfigError("meta: finetune_steps must be >= 0");
}

namespace {

bool is_head_key(const std::string& key) { return model::is_head_slot(key); }

ParamMap head_part(const ParamMap& full) {
  ParamMap out;
  for (const auto& [k, v] : full)
    if (is_head_key(k)) out.emplace(k, v);
  return out;
}

ParamMap body_part(const ParamMap& full) {
  ParamMap out;
  for (const auto& [k, v] : full)
    if (!is_head_key(k)) out.emplace(k, v);
  return out;
}

void check_divergence(double loss, const std::string& where) {
  if (!std::isfinite(loss) || loss > kDivergenceCap) {
    throw DivergenceError("divergent loss at " + where + ": " + std::to_string(loss));
  }
}

}  // namespace

ParamMap inner_adapt(const num::DiffFunction& support_loss, const ParamMap& body,
                     const ParamMap& head, int steps, double lr, std::uint64_t stamp_base) {
  if (steps < 1) throw ConfigError("inner_adapt: steps must be >= 1");
  if (head.empty()) throw ConfigError("inner_adapt: empty head collection");
  ParamMap current_head = head;
  for (int step = 0; step < steps; ++step) {
    const ParamMap full = merged(body, current_head);
    num::Batch batch = num::Batch::full(support_loss.num_examples(),
                                        Rng::mix(stamp_base, static_cast<std::uint64_t>(step)));
    num::EvalResult res;
    try {
      res = num::eval_with_grad(support_loss, full, batch);
    } catch (const NumericError&) {
      throw DivergenceError("inner_adapt: non-finite loss at step " + std::to_string(step));
    }
    check_divergence(res.loss, "inner_adapt step " + std::to_string(step));
    current_head = num::sgd_step(current_head, head_part(res.grads), lr);
  }
  return current_head;
}

HypergradientResult hypergradient(const std::vector<BilevelTask>& tasks, const ParamMap& body,
                                  const std::vector<ParamMap>& heads, int cg_iters,
                                  double damping, double cg_tol, std::uint64_t stamp_base) {
  if (tasks.empty() || tasks.size() != heads.size())
    throw ConfigError("hypergradient: task and head counts must match");
  const double inv_n = 1.0 / static_cast<double>(tasks.size());

  // Query-loss gradients: the direct body term and the right-hand side of
  // the inner Hessian system, both task-concatenated with 1/N scaling.
  HypergradientResult out;
  out.body_grad = zeros_like(body);
  ParamMap rhs;  // keys: t<i>/<head slot>
  std::vector<ParamMap> query_full(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const ParamMap full = merged(body, heads[i]);
    query_full[i] = full;
    num::Batch batch = num::Batch::full(tasks[i].query->num_examples(),
                                        Rng::mix(stamp_base, 0x71u + i));
    const num::EvalResult res = num::eval_with_grad(*tasks[i].query, full, batch);
    out.query_loss += res.loss * inv_n;
    for (const auto& [k, gv] : res.grads) {
      if (is_head_key(k)) {
        Tensor scaled = gv;
        for (std::size_t j = 0; j < scaled.size(); ++j) scaled[j] *= inv_n;
        rhs.emplace("t" + std::to_string(i) + "/" + k, std::move(scaled));
      } else {
        Tensor& acc = out.body_grad.at(k);
        for (std::size_t j = 0; j < gv.size(); ++j) acc[j] += inv_n * gv[j];
      }
    }
  }

  // Inner-Hessian operator over the concatenated heads; the Hessian of the
  // averaged support loss is block diagonal across tasks.
  auto apply_hessian = [&](const ParamMap& v) {
    ParamMap result = zeros_like(v);
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const std::string prefix = "t" + std::to_string(i) + "/";
      ParamMap direction;
      for (const auto& [k, tv] : v)
        if (k.rfind(prefix, 0) == 0) direction.emplace(k.substr(prefix.size()), tv);
      num::Batch batch = num::Batch::full(tasks[i].support->num_examples(),
                                          Rng::mix(stamp_base, 0x8cu + i));
      const ParamMap hv = num::hvp(*tasks[i].support, query_full[i], batch, direction);
      for (const auto& [k, tv] : hv) {
        if (!is_head_key(k)) continue;
        Tensor& dst = result.at(prefix + k);
        for (std::size_t j = 0; j < tv.size(); ++j) dst[j] = inv_n * tv[j];
      }
    }
    return result;
  };

  num::CgConfig cg_cfg;
  cg_cfg.max_iters = cg_iters;
  cg_cfg.residual_tol = cg_tol;
  cg_cfg.damping = damping;
  const num::CgResult solved = num::cg_solve(apply_hessian, rhs, cg_cfg);
  out.cg_iters_used = solved.iters;

  // Mixed-derivative term: body components of the support-loss derivative
  // seeded along the solved head direction.
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const std::string prefix = "t" + std::to_string(i) + "/";
    ParamMap direction;
    for (const auto& [k, tv] : solved.x)
      if (k.rfind(prefix, 0) == 0) direction.emplace(k.substr(prefix.size()), tv);
    num::Batch batch = num::Batch::full(tasks[i].support->num_examples(),
                                        Rng::mix(stamp_base, 0x8cu + i));
    const ParamMap cross = num::hvp(*tasks[i].support, query_full[i], batch, direction);
    for (const auto& [k, tv] : cross) {
      if (is_head_key(k)) continue;
      Tensor& dst = out.body_grad.at(k);
      for (std::size_t j = 0; j < tv.size(); ++j) dst[j] -= inv_n * tv[j];
    }
  }
  return out;
}

MetaTrainResult meta_train_core(const std::vector<BilevelTask>& tasks, const ParamMap& body0,
                                const std::vector<ParamMap>& heads0, const MetaConfig& cfg) {
  cfg.validate();
  if (tasks.empty() || tasks.size() != heads0.size())
    throw ConfigError("meta_train: task and head counts must match");
  for (const auto& t : tasks) {
    if (t.support == nullptr || t.query == nullptr ||
        t.support->num_examples() == 0 || t.query->num_examples() == 0)
      throw ConfigError("meta_train: every task needs nonempty support and query losses");
  }

  MetaTrainResult res;
  res.body = body0;
  res.heads = heads0;
  const Rng stamps(cfg.seed);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::uint64_t epoch_stamp = stamps.fork("epoch").fork(static_cast<std::uint64_t>(epoch)).seed();
    if (cfg.reinit_heads_each_epoch) res.heads = heads0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      try {
        res.heads[i] = inner_adapt(*tasks[i].support, res.body, res.heads[i], cfg.inner_steps,
                                   cfg.inner_lr, Rng::mix(epoch_stamp, i));
      } catch (const DivergenceError& e) {
        throw DivergenceError("meta_train epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    const HypergradientResult hg =
        hypergradient(tasks, res.body, res.heads, cfg.cg_iters, cfg.damping, cfg.cg_tol,
                      Rng::mix(epoch_stamp, 0xf00du));
    if (!std::isfinite(hg.query_loss) || hg.query_loss > kDivergenceCap) {
      throw DivergenceError("meta_train diverged at epoch " + std::to_string(epoch));
    }
    res.loss_history.push_back(hg.query_loss);
    res.body = num::sgd_step(res.body, hg.body_grad, cfg.outer_lr);
  }
  return res;
}

ParamMap finetune(const num::DiffFunction& loss, const ParamMap& params, int steps, double lr,
                  std::uint64_t stamp_base) {
  if (steps < 0) throw ConfigError("finetune: steps must be >= 0");
  if (loss.num_examples() == 0) throw ConfigError("finetune: empty training set");
  ParamMap current = params;
  for (int step = 0; step < steps; ++step) {
    num::Batch batch = num::Batch::full(loss.num_examples(),
                                        Rng::mix(stamp_base, static_cast<std::uint64_t>(step)));
    num::EvalResult res;
    try {
      res = num::eval_with_grad(loss, current, batch);
    } catch (const NumericError&) {
      throw DivergenceError("finetune: non-finite loss at step " + std::to_string(step));
    }
    if (!std::isfinite(res.loss) || res.loss > kDivergenceCap) {
      throw DivergenceError("finetune diverged at step " + std::to_string(step));
    }
    current = num::sgd_step(current, res.grads, lr);
  }
  return current;
}

ModelMetaResult meta_train_model(const data::MetaDataset& tasks, const model::ModelConfig& mcfg,
                                 const MetaConfig& cfg) {
  cfg.validate();
  if (tasks.tasks.empty()) throw ConfigError("meta_train_model: no tasks");

  std::vector<std::unique_ptr<model::ModelLoss>> support_losses, query_losses;
  std::vector<BilevelTask> bilevel;
  for (std::size_t i = 0; i < tasks.tasks.size(); ++i) {
    const auto& t = tasks.tasks[i];
    support_losses.push_back(std::make_unique<model::ModelLoss>(
        mcfg, std::make_shared<const std::vector<data::MultimodalWindow>>(t.support),
        t.adjacency_normalized, /*train_mode=*/true, Rng::mix(cfg.seed, 2 * i)));
    query_losses.push_back(std::make_unique<model::ModelLoss>(
        mcfg, std::make_shared<const std::vector<data::MultimodalWindow>>(t.query),
        t.adjacency_normalized, /*train_mode=*/false, Rng::mix(cfg.seed, 2 * i + 1)));
    bilevel.push_back({support_losses.back().get(), query_losses.back().get()});
  }

  const ParamMap init = model::init_params(mcfg, cfg.seed);
  ParamMap body0, head0;
  for (const auto& [k, v] : init) (model::is_head_slot(k) ? head0 : body0).emplace(k, v);
  const std::vector<ParamMap> heads0(tasks.tasks.size(), head0);

  const MetaTrainResult core = meta_train_core(bilevel, body0, heads0, cfg);
  return {core.body, core.loss_history};
}

ParamMap finetune_model(const model::ModelConfig& mcfg, const ParamMap& init_params,
                        const std::vector<data::MultimodalWindow>& train_windows,
                        const Tensor& adjacency_normalized, int steps, double lr,
                        std::uint64_t seed) {
  model::ModelLoss loss(mcfg,
                        std::make_shared<const std::vector<data::MultimodalWindow>>(train_windows),
                        adjacency_normalized, /*train_mode=*/true, seed);
  return finetune(loss, init_params, steps, lr, Rng::mix(seed, 0xf17eu));
}

}  // namespace cellcast::meta
