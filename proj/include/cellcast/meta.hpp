#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "cellcast/cg.hpp"
#include "cellcast/diff.hpp"
#include "cellcast/model.hpp"

namespace cellcast::meta {

struct MetaConfig {
  int inner_steps = 5;        // P
  double inner_lr = 0.01;
  int cg_iters = 10;          // Q
  double cg_tol = 1e-10;
  double damping = 1e-4;      // lambda on the inner Hessian
  double outer_lr = 0.001;
  int epochs = 200;           // J (paper-scale runs use 2000)
  int finetune_steps = 200;
  double finetune_lr = 0.001;
  bool reinit_heads_each_epoch = false;
  std::uint64_t seed = 1;

  void validate() const;
};

constexpr double kDivergenceCap = 1e12;

// One bi-level task: the inner loss g trains the head on the support set,
// the outer loss f scores it on the query set. Both losses see the full
// parameter collection; head slots are the ones named by is_head.
struct BilevelTask {
  const num::DiffFunction* support = nullptr;
  const num::DiffFunction* query = nullptr;
};

using SlotPredicate = std::function<bool(const std::string&)>;

// P gradient steps on the support loss updating only the head slots; the
// body slots are untouched by construction.
ParamMap inner_adapt(const num::DiffFunction& support_loss, const ParamMap& body,
                     const ParamMap& head, int steps, double lr,
                     std::uint64_t stamp_base = 0);

struct HypergradientResult {
  ParamMap body_grad;
  int cg_iters_used = 0;
  double query_loss = 0.0;
};

// Implicit-differentiation estimate of the outer gradient: solves the inner
// Hessian system with conjugate gradient and subtracts the mixed-derivative
// term from the direct body gradient.
HypergradientResult hypergradient(const std::vector<BilevelTask>& tasks, const ParamMap& body,
                                  const std::vector<ParamMap>& heads, int cg_iters,
                                  double damping, double cg_tol = 1e-10,
                                  std::uint64_t stamp_base = 0);

struct MetaTrainResult {
  ParamMap body;                   // trained shared parameters
  std::vector<ParamMap> heads;     // per-task heads after the last epoch
  std::vector<double> loss_history;  // mean query loss per epoch
};

// Generic bi-level loop; task order is fixed and every reduction is
// sequential, so a seed pins the whole trajectory.
MetaTrainResult meta_train_core(const std::vector<BilevelTask>& tasks, const ParamMap& body0,
                                const std::vector<ParamMap>& heads0, const MetaConfig& cfg);

// Full-parameter gradient descent on one loss; used for the meta-test stage.
ParamMap finetune(const num::DiffFunction& loss, const ParamMap& params, int steps, double lr,
                  std::uint64_t stamp_base = 0);

// ---- model-facing conveniences ----

struct ModelMetaResult {
  ParamMap body;
  std::vector<double> loss_history;
};

// Meta-trains the forecaster on simulator tasks: builds per-task losses,
// initializes parameters from cfg.seed, runs the bi-level loop.
ModelMetaResult meta_train_model(const data::MetaDataset& tasks, const model::ModelConfig& mcfg,
                                 const MetaConfig& cfg);

// Fine-tunes body+head on a target window set starting from a trained body
// and a freshly initialized head.
ParamMap finetune_model(const model::ModelConfig& mcfg, const ParamMap& init_params,
                        const std::vector<data::MultimodalWindow>& train_windows,
                        const Tensor& adjacency_normalized, int steps, double lr,
                        std::uint64_t seed);

}  // namespace cellcast::meta
