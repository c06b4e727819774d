#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cellcast/data.hpp"
#include "cellcast/rng.hpp"
#include "cellcast/tensor.hpp"

namespace cellcast::sim {

// Multicell/multiuser traffic generator. Base stations sit on a
// ceil(sqrt(B)) grid; each carries three 120-degree sectors. Users produce a
// sinusoidal daily load plus Gaussian noise and roam during working hours
// with boundary reflection and nearest-station handover.
struct SimConfig {
  int n_base_stations = 4;
  double spacing_m = 500.0;
  int users_per_sector = 5;
  int horizon_hours = 24 * 14;
  double amp_lo = 1.0, amp_hi = 3.0;        // seasonal amplitude range
  double base_lo = 4.0, base_hi = 8.0;      // base load range
  double noise_sigma = 0.3;
  double user_speed_m_per_h = 60.0;
  double event_rate_per_day = 0.2;          // expected events per day
  double event_burst = 2.5;                 // traffic multiplier during events
  int image_size = 16;                      // W = H of the synthetic map
  std::int64_t start_epoch_s = 0;
  std::uint64_t seed = 1;

  static constexpr int kSectorsPerBs = 3;
  static constexpr int kWorkStartHour = 8;
  static constexpr int kWorkEndHour = 18;
  static constexpr int kImageChannels = 2;  // station density, road mask

  int cells() const { return kSectorsPerBs * n_base_stations; }
  int grid_side() const;
  double extent_m() const;
  void validate() const;
};

struct UserState {
  double x = 0.0, y = 0.0;
  double heading = 0.0;  // radians
  double amp = 0.0;
  double phase = 0.0;    // hours
  double base_load = 0.0;
  int cell = 0;
};

struct SimOutput {
  Tensor traffic;      // T x D, nonnegative
  Tensor event_flags;  // T x 1, 1.0 while an event burst is active
  Tensor image;        // W x H x C, channels scaled to [0,1]
  std::vector<std::pair<double, double>> cell_positions;  // D entries
  std::vector<std::int64_t> timestamps;                   // epoch seconds
  // Sum of all users' instantaneous traffic per hour, accumulated on a
  // separate path from the per-cell scatter; conservation checks compare
  // the two.
  std::vector<double> user_totals;

  data::SeriesFrame frame() const;
};

// Instantaneous load of one user: max(0, base + amp*sin(2*pi*(t+phase)/24) + noise).
double user_traffic(double t_hours, const UserState& user, double noise_sigma, Rng& rng);

// Advances one mobility step; outside working hours the position is frozen.
// The heading mirrors whenever the boundary is hit.
UserState step_mobility(const UserState& user, double dt_hours, double t_hours,
                        double extent_m, double speed_m_per_h);

// Nearest base station, sector selected by the bearing wedge; distance ties
// resolve to the lowest cell id.
int handover(double x, double y, const std::vector<std::pair<double, double>>& bs_positions);

std::vector<std::pair<double, double>> base_station_grid(const SimConfig& cfg);
std::vector<std::pair<double, double>> cell_positions(const SimConfig& cfg);

SimOutput run(const SimConfig& cfg);

// Exogenous feature block for a simulation: [event flag | calendar one-hots].
Tensor assemble_exog(const SimOutput& out);
constexpr std::size_t kExogDims = 1 + data::kMetadataDims;

// Relative perturbations applied per auxiliary task; identity (all zero)
// makes tasks distributionally identical.
struct ShiftSpec {
  double amp_jitter = 0.25;
  double base_jitter = 0.25;
  double sigma_jitter = 0.25;

  static ShiftSpec identity() { return {0.0, 0.0, 0.0}; }
};

SimConfig perturbed_config(const SimConfig& cfg, const ShiftSpec& shift, std::uint64_t task_seed);

// N auxiliary tasks drawn from per-task perturbed configs with disjoint RNG
// streams, each split into support/query by time.
data::MetaDataset make_meta_tasks(const SimConfig& cfg, int n_tasks, const ShiftSpec& shift,
                                  const data::WindowSpec& window_spec, double support_ratio,
                                  double adjacency_length_scale);

// Builds one TaskDataset from a simulation output (shared by the task
// factory and the experiment pipelines).
data::TaskDataset make_task_dataset(const SimOutput& out, const data::WindowSpec& window_spec,
                                    double support_ratio, double adjacency_length_scale);

}  // namespace cellcast::sim
