#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cellcast/tensor.hpp"

namespace cellcast::data {

constexpr std::int64_t kSecondsPerHour = 3600;
constexpr std::int64_t kHoursPerDay = 24;

// Hour-of-day and Monday-based day-of-week for an epoch timestamp (UTC).
int hour_of_day(std::int64_t epoch_s);
int day_of_week(std::int64_t epoch_s);
std::int64_t epoch_day(std::int64_t epoch_s);

// Parses "YYYY-MM-DD" into an epoch day number.
std::int64_t parse_iso_date(const std::string& text);

// Gap-free hourly multivariate series.
struct SeriesFrame {
  std::vector<std::int64_t> timestamps;  // epoch seconds, strictly increasing
  Tensor values;                         // T x D
  std::vector<int> cell_ids;             // D entries

  std::size_t steps() const { return timestamps.size(); }
  std::size_t dims() const { return cell_ids.size(); }
  void validate() const;

  // Time slice [begin, end) as a standalone frame.
  SeriesFrame slice(std::size_t begin, std::size_t end) const;
};

SeriesFrame load_traffic_csv(const std::string& path);
void write_traffic_csv(const std::string& path, const SeriesFrame& frame);

// Per-dimension min-max scaling fitted on the training range only.
class Normalizer {
 public:
  Normalizer() = default;
  static Normalizer fit(const Tensor& train_values);

  Tensor apply(const Tensor& values) const;
  Tensor invert(const Tensor& values) const;

  const std::vector<double>& mins() const { return min_; }
  const std::vector<double>& maxs() const { return max_; }
  std::size_t dims() const { return min_.size(); }

 private:
  std::vector<double> min_, max_;
};

// One-hot calendar features: [hour-of-day(24) | day-of-week(7) | holiday(1)].
constexpr std::size_t kMetadataDims = 32;
Tensor one_hot_metadata(const std::vector<std::int64_t>& timestamps,
                        const std::set<std::int64_t>& holiday_days);
std::set<std::int64_t> load_holiday_file(const std::string& path);

struct WindowSpec {
  int closeness_steps = 3;  // most recent hours fed to the short-term branch
  int period_steps = 3;     // same-hour samples from previous days
  int horizon = 1;          // hours ahead of the last observation

  void validate() const;
  // Input rows consumed per daily-period sample.
  static constexpr int kPeriodStride = 24;
};

// One training/inference example. Inputs are stored in normalized units; the
// task's Normalizer recovers original volumes.
struct MultimodalWindow {
  Tensor closeness;       // p_c x D
  Tensor period;          // p_p x D
  Tensor exog_closeness;  // p_c x D_txt
  Tensor exog_period;     // p_p x D_txt
  std::shared_ptr<const Tensor> image;  // W x H x C, shared per task
  Tensor target;          // D
  std::int64_t target_time = 0;
  int horizon = 1;
};

// Sliding multimodal windows ordered by target time. exog must align with
// frame row-for-row.
std::vector<MultimodalWindow> make_windows(const SeriesFrame& frame, const Tensor& exog,
                                           const WindowSpec& spec,
                                           std::shared_ptr<const Tensor> image = nullptr);

// Time-ordered growing-window fold plan: fold k+1 calibrates the model
// fine-tuned on folds 1..k.
struct FoldPlan {
  struct Range {
    std::size_t begin = 0, end = 0;  // half-open sample index range
    std::size_t size() const { return end - begin; }
  };
  struct Pair {
    Range train;      // cumulative window over earlier folds
    Range calibrate;  // the next fold
  };

  int k = 0;
  std::vector<Range> folds;
  std::vector<Pair> pairs;

  std::size_t total_calibration_samples() const;
  void validate() const;
};

FoldPlan growing_window_folds(std::size_t n_samples, int k);

// Symmetric nonnegative spatial-correlation graph with zero diagonal.
struct SpatialGraph {
  Tensor coefficients;  // D x D

  std::size_t dims() const { return coefficients.rows(); }
  void validate() const;
};

SpatialGraph build_adjacency(const std::vector<std::pair<double, double>>& cell_positions,
                             double length_scale);

// Symmetric renormalization with self-loops: Deg^{-1/2} (G + I) Deg^{-1/2}.
Tensor normalized_adjacency(const SpatialGraph& graph);

// Per-task support/query example sets plus everything the model needs to
// consume them.
struct TaskDataset {
  std::vector<MultimodalWindow> support;
  std::vector<MultimodalWindow> query;
  Normalizer normalizer;
  Tensor adjacency_normalized;  // D x D, ready for the graph stream
  std::shared_ptr<const Tensor> image;
};

struct MetaDataset {
  std::vector<TaskDataset> tasks;
};

}  // namespace cellcast::data
