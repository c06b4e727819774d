#pragma once

#include <map>
#include <vector>

#include "cellcast/data.hpp"
#include "cellcast/model.hpp"

namespace cellcast::conformal {

// Pooled nonconformity scores: one row per calibration sample, one column
// per output dimension, plus the significance level the pool will be
// queried at.
struct ScorePool {
  Tensor scores;       // L x D, nonnegative
  double alpha = 0.1;  // significance level in (0,1)

  std::size_t samples() const { return scores.rows(); }
  std::size_t dims() const { return scores.cols(); }
  void validate() const;
};

// Per-dimension absolute residual |y - yhat|.
Tensor nonconformity(const Tensor& truth, const Tensor& prediction);

// 1-indexed rank used for the empirical quantile: ceil((1-alpha)(L+1)).
std::size_t quantile_rank(std::size_t samples, double alpha);

// Per dimension, the rank-th smallest pooled score.
Tensor empirical_quantile(const ScorePool& pool);

struct IntervalForecast {
  Tensor prediction;  // yhat, R^D
  Tensor epsilon;     // nonconformity quantile, R^D
  Tensor lower;       // yhat - epsilon
  Tensor upper;       // yhat + epsilon
  double alpha = 0.1;
};

IntervalForecast predict_interval(const Tensor& prediction, const Tensor& epsilon, double alpha);

// Fraction of truth entries inside the (inclusive) intervals.
double coverage_rate(const Tensor& truth, const std::vector<IntervalForecast>& intervals);
// Mean interval width over all entries.
double width_length(const std::vector<IntervalForecast>& intervals);

// Pools |truth - prediction| rows over the calibration folds of a plan;
// used directly when the predictor is fixed (no per-fold fitting).
ScorePool pool_scores_over_folds(const Tensor& truth, const Tensor& predictions,
                                 const data::FoldPlan& plan, double alpha);

// ---- model-facing calibration ----

struct CalibrationConfig {
  int folds = 5;                      // K; 2 reduces to the inductive split
  std::vector<double> alphas = {0.1};
  int finetune_steps = 200;
  double finetune_lr = 0.001;
  std::uint64_t seed = 1;

  void validate() const;
};

struct CalibrationResult {
  ParamMap final_params;              // fine-tuned on the full training range
  ScorePool pool;                     // pooled scores in original units
  std::map<double, Tensor> eps_by_alpha;
};

// Denormalized point predictions for a window set (rows ordered as given).
Tensor predict_windows(const model::ModelConfig& cfg, const ParamMap& params,
                       const std::vector<data::MultimodalWindow>& windows,
                       const Tensor& adjacency_normalized, const data::Normalizer& normalizer);

// Cross conformal calibration under the growing-window plan: each pair
// fine-tunes a fresh copy of the initial parameters on its cumulative
// training window and scores the next fold; scores are pooled in fold
// order before one quantile extraction per alpha.
CalibrationResult ccp_calibrate(const model::ModelConfig& cfg, const ParamMap& init_params,
                                const std::vector<data::MultimodalWindow>& train_samples,
                                const Tensor& adjacency_normalized,
                                const data::Normalizer& normalizer,
                                const CalibrationConfig& calib);

// Inductive calibration: a single chronological train/calibrate split,
// sized exactly like the K=2 fold plan.
CalibrationResult icp_calibrate(const model::ModelConfig& cfg, const ParamMap& init_params,
                                const std::vector<data::MultimodalWindow>& train_samples,
                                const Tensor& adjacency_normalized,
                                const data::Normalizer& normalizer,
                                const CalibrationConfig& calib);

}  // namespace cellcast::conformal
