#include "cellcast/sim.hpp"

#include <algorithm>
#include <cmath>

#include "cellcast/errors.hpp"

namespace cellcast::sim {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

int SimConfig::grid_side() const {
  return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_base_stations))));
}

double SimConfig::extent_m() const { return grid_side() * spacing_m; }

void SimConfig::validate() const {
  if (n_base_stations < 1) throw ConfigError("sim: need at least one base station");
  if (users_per_sector < 1) throw ConfigError("sim: need at least one user per sector");
  if (horizon_hours < 48) throw ConfigError("sim: horizon must be >= 48 hours");
  if (noise_sigma < 0.0) throw ConfigError("sim: noise sigma must be >= 0");
  if (amp_lo < 0.0 || amp_hi < amp_lo) throw ConfigError("sim: amplitude range invalid");
  if (base_lo < 0.0 || base_hi < base_lo) throw ConfigError("sim: base load range invalid");
  if (spacing_m <= 0.0) throw ConfigError("sim: spacing must be > 0");
  if (user_speed_m_per_h < 0.0) throw ConfigError("sim: user speed must be >= 0");
  if (event_rate_per_day < 0.0) throw ConfigError("sim: event rate must be >= 0");
  if (event_burst < 1.0) throw ConfigError("sim: event burst must be >= 1");
  if (image_size < 4) throw ConfigError("sim: image size must be >= 4");
}

data::SeriesFrame SimOutput::frame() const {
  data::SeriesFrame f;
  f.timestamps = timestamps;
  f.values = traffic;
  f.cell_ids.resize(traffic.cols());
  for (std::size_t c = 0; c < f.cell_ids.size(); ++c) f.cell_ids[c] = static_cast<int>(c);
  f.validate();
  return f;
}

double user_traffic(double t_hours, const UserState& user, double noise_sigma, Rng& rng) {
  // fmod keeps the sinusoid argument bit-stable across whole days, so a
  // noise-free run is exactly 24-periodic.
  const double phase_hours = std::fmod(t_hours + user.phase, 24.0);
  double v = user.base_load + user.amp * std::sin(kTwoPi * phase_hours / 24.0);
  if (noise_sigma > 0.0) v += noise_sigma * rng.normal();
  return std::max(0.0, v);
}

UserState step_mobility(const UserState& user, double dt_hours, double t_hours,
                        double extent_m, double speed_m_per_h) {
  if (dt_hours <= 0.0) throw ConfigError("sim: mobility step must have dt > 0");
  const int hour = static_cast<int>(std::fmod(t_hours, 24.0));
  UserState next = user;
  if (hour < SimConfig::kWorkStartHour || hour >= SimConfig::kWorkEndHour) return next;

  double nx = user.x + speed_m_per_h * dt_hours * std::cos(user.heading);
  double ny = user.y + speed_m_per_h * dt_hours * std::sin(user.heading);
  double cx = std::cos(user.heading);
  double cy = std::sin(user.heading);
  // Mirror at the walls until the position lands inside.
  for (int guard = 0; guard < 8; ++guard) {
    bool bounced = false;
    if (nx < 0.0) {
      nx = -nx;
      cx = -cx;
      bounced = true;
    } else if (nx > extent_m) {
      nx = 2.0 * extent_m - nx;
      cx = -cx;
      bounced = true;
    }
    if (ny < 0.0) {
      ny = -ny;
      cy = -cy;
      bounced = true;
    } else if (ny > extent_m) {
      ny = 2.0 * extent_m - ny;
      cy = -cy;
      bounced = true;
    }
    if (!bounced) break;
  }
  next.x = std::clamp(nx, 0.0, extent_m);
  next.y = std::clamp(ny, 0.0, extent_m);
  next.heading = std::atan2(cy, cx);
  return next;
}

int handover(double x, double y, const std::vector<std::pair<double, double>>& bs_positions) {
  if (bs_positions.empty()) throw ConfigError("handover: empty base station list");
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < bs_positions.size(); ++b) {
    const double dx = x - bs_positions[b].first;
    const double dy = y - bs_positions[b].second;
    const double d2 = dx * dx + dy * dy;
    if (d2 < best_d2) {  // strict: ties keep the lowest id
      best_d2 = d2;
      best = b;
    }
  }
  // Compass bearing from the station to the user; 0 points north (+y).
  const double dx = x - bs_positions[best].first;
  const double dy = y - bs_positions[best].second;
  double bearing = std::atan2(dx, dy);
  if (bearing < 0.0) bearing += kTwoPi;
  // Sector axes at 0, 120, 240 degrees; wedge k covers [axis-60, axis+60).
  const double shifted = std::fmod(bearing + kTwoPi / 6.0, kTwoPi);
  int sector = static_cast<int>(shifted / (kTwoPi / 3.0));
  if (sector > 2) sector = 2;
  return static_cast<int>(best) * SimConfig::kSectorsPerBs + sector;
}

std::vector<std::pair<double, double>> base_station_grid(const SimConfig& cfg) {
  const int side = cfg.grid_side();
  std::vector<std::pair<double, double>> out;
  out.reserve(static_cast<std::size_t>(cfg.n_base_stations));
  for (int b = 0; b < cfg.n_base_stations; ++b) {
    const int gx = b % side;
    const int gy = b / side;
    out.emplace_back((gx + 0.5) * cfg.spacing_m, (gy + 0.5) * cfg.spacing_m);
  }
  return out;
}

std::vector<std::pair<double, double>> cell_positions(const SimConfig& cfg) {
  const auto bs = base_station_grid(cfg);
  std::vector<std::pair<double, double>> out;
  out.reserve(bs.size() * SimConfig::kSectorsPerBs);
  const double offset = cfg.spacing_m / 4.0;
  for (std::size_t b = 0; b < bs.size(); ++b) {
    for (int s = 0; s < SimConfig::kSectorsPerBs; ++s) {
      const double axis = s * kTwoPi / 3.0;  // compass: 0 = north
      out.emplace_back(bs[b].first + offset * std::sin(axis),
                       bs[b].second + offset * std::cos(axis));
    }
  }
  return out;
}

namespace {

struct Event {
  int start_hour = 0;
  int end_hour = 0;  // exclusive
  int base_station = 0;
};

std::vector<Event> draw_events(const SimConfig& cfg, Rng rng) {
  std::vector<Event> events;
  const int days = (cfg.horizon_hours + 23) / 24;
  for (int day = 0; day < days; ++day) {
    // Per-day Poisson count via inversion sampling.
    const double u = rng.uniform();
    double p = std::exp(-cfg.event_rate_per_day);
    double acc = p;
    int count = 0;
    while (u > acc && count < 8) {
      ++count;
      p *= cfg.event_rate_per_day / count;
      acc += p;
    }
    for (int e = 0; e < count; ++e) {
      Event ev;
      ev.start_hour = day * 24 + static_cast<int>(rng.below(24));
      ev.end_hour = ev.start_hour + 1 + static_cast<int>(rng.below(3));
      ev.base_station = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_base_stations)));
      events.push_back(ev);
    }
  }
  return events;
}

Tensor render_image(const SimConfig& cfg, const std::vector<std::pair<double, double>>& bs) {
  const int n = cfg.image_size;
  Tensor img = Tensor::zeros({static_cast<std::size_t>(n), static_cast<std::size_t>(n),
                              static_cast<std::size_t>(SimConfig::kImageChannels)});
  const double extent = cfg.extent_m();
  const double px = extent / n;
  const double blur = cfg.spacing_m / 3.0;
  // Channel 0: station density as Gaussian blobs.
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double cx = (j + 0.5) * px;
      const double cy = (i + 0.5) * px;
      double v = 0.0;
      for (const auto& [bx, by] : bs) {
        const double d2 = (cx - bx) * (cx - bx) + (cy - by) * (cy - by);
        v += std::exp(-d2 / (2.0 * blur * blur));
      }
      img(static_cast<std::size_t>(i), static_cast<std::size_t>(j), 0) = v;
    }
  }
  double peak = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      peak = std::max(peak, img(static_cast<std::size_t>(i), static_cast<std::size_t>(j), 0));
  if (peak > 0.0) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        img(static_cast<std::size_t>(i), static_cast<std::size_t>(j), 0) /= peak;
  }
  // Channel 1: road mask along the station grid lines.
  const int side = cfg.grid_side();
  for (int g = 0; g < side; ++g) {
    const double line = (g + 0.5) * cfg.spacing_m;
    const int pix = std::clamp(static_cast<int>(line / px), 0, n - 1);
    for (int k = 0; k < n; ++k) {
      img(static_cast<std::size_t>(pix), static_cast<std::size_t>(k), 1) = 1.0;
      img(static_cast<std::size_t>(k), static_cast<std::size_t>(pix), 1) = 1.0;
    }
  }
  return img;
}

}  // namespace

SimOutput run(const SimConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);
  const auto bs = base_station_grid(cfg);
  const int n_users = cfg.cells() * cfg.users_per_sector;

  // Place users per sector: uniform radius inside the wedge around the home
  // station so the initial attachment matches the sector they fill.
  std::vector<UserState> users;
  users.reserve(static_cast<std::size_t>(n_users));
  Rng place = root.fork("placement");
  for (int b = 0; b < cfg.n_base_stations; ++b) {
    for (int s = 0; s < SimConfig::kSectorsPerBs; ++s) {
      for (int u = 0; u < cfg.users_per_sector; ++u) {
        UserState st;
        st.amp = place.uniform(cfg.amp_lo, cfg.amp_hi);
        st.phase = place.uniform(0.0, 24.0);
        st.base_load = place.uniform(cfg.base_lo, cfg.base_hi);
        const double axis = s * kTwoPi / 3.0;
        const double bearing = axis + place.uniform(-kTwoPi / 6.0, kTwoPi / 6.0);
        const double radius = place.uniform(cfg.spacing_m * 0.05, cfg.spacing_m * 0.45);
        st.x = std::clamp(bs[static_cast<std::size_t>(b)].first + radius * std::sin(bearing),
                          0.0, cfg.extent_m());
        st.y = std::clamp(bs[static_cast<std::size_t>(b)].second + radius * std::cos(bearing),
                          0.0, cfg.extent_m());
        st.heading = place.uniform(0.0, kTwoPi);
        st.cell = handover(st.x, st.y, bs);
        users.push_back(st);
      }
    }
  }

  const auto events = draw_events(cfg, root.fork("events"));
  std::vector<Rng> noise;
  noise.reserve(users.size());
  for (std::size_t u = 0; u < users.size(); ++u)
    noise.push_back(root.fork("noise").fork(static_cast<std::uint64_t>(u)));

  SimOutput out;
  const std::size_t t_total = static_cast<std::size_t>(cfg.horizon_hours);
  const std::size_t d = static_cast<std::size_t>(cfg.cells());
  out.traffic = Tensor::zeros({t_total, d});
  out.event_flags = Tensor::zeros({t_total, 1});
  out.cell_positions = cell_positions(cfg);
  out.image = render_image(cfg, bs);
  out.timestamps.resize(t_total);
  for (std::size_t t = 0; t < t_total; ++t)
    out.timestamps[t] = cfg.start_epoch_s + static_cast<std::int64_t>(t) * data::kSecondsPerHour;
  out.user_totals.assign(t_total, 0.0);

  for (std::size_t t = 0; t < t_total; ++t) {
    // Active events and the stations they touch.
    bool any_event = false;
    std::vector<bool> station_boosted(static_cast<std::size_t>(cfg.n_base_stations), false);
    for (const auto& ev : events) {
      if (static_cast<int>(t) >= ev.start_hour && static_cast<int>(t) < ev.end_hour) {
        any_event = true;
        station_boosted[static_cast<std::size_t>(ev.base_station)] = true;
      }
    }
    if (any_event) out.event_flags(t, 0) = 1.0;

    for (std::size_t u = 0; u < users.size(); ++u) {
      double v = user_traffic(static_cast<double>(t), users[u], cfg.noise_sigma, noise[u]);
      const int station = users[u].cell / SimConfig::kSectorsPerBs;
      if (any_event && station_boosted[static_cast<std::size_t>(station)]) v *= cfg.event_burst;
      out.traffic(t, static_cast<std::size_t>(users[u].cell)) += v;
      out.user_totals[t] += v;
    }

    if (cfg.user_speed_m_per_h > 0.0) {
      for (std::size_t u = 0; u < users.size(); ++u) {
        users[u] = step_mobility(users[u], 1.0, static_cast<double>(t), cfg.extent_m(),
                                 cfg.user_speed_m_per_h);
        users[u].cell = handover(users[u].x, users[u].y, bs);
      }
    }
  }
  return out;
}

Tensor assemble_exog(const SimOutput& out) {
  const Tensor meta = data::one_hot_metadata(out.timestamps, {});
  const std::size_t t_total = out.timestamps.size();
  Tensor exog = Tensor::zeros({t_total, kExogDims});
  for (std::size_t t = 0; t < t_total; ++t) {
    exog(t, 0) = out.event_flags(t, 0);
    for (std::size_t c = 0; c < data::kMetadataDims; ++c) exog(t, 1 + c) = meta(t, c);
  }
  return exog;
}

SimConfig perturbed_config(const SimConfig& cfg, const ShiftSpec& shift, std::uint64_t task_seed) {
  Rng rng(task_seed);
  SimConfig out = cfg;
  const double amp_f = 1.0 + shift.amp_jitter * rng.uniform(-1.0, 1.0);
  const double base_f = 1.0 + shift.base_jitter * rng.uniform(-1.0, 1.0);
  const double sigma_f = 1.0 + shift.sigma_jitter * rng.uniform(-1.0, 1.0);
  out.amp_lo = cfg.amp_lo * amp_f;
  out.amp_hi = cfg.amp_hi * amp_f;
  out.base_lo = cfg.base_lo * base_f;
  out.base_hi = cfg.base_hi * base_f;
  out.noise_sigma = cfg.noise_sigma * std::max(0.0, sigma_f);
  out.seed = task_seed;
  return out;
}

data::TaskDataset make_task_dataset(const SimOutput& out, const data::WindowSpec& window_spec,
                                    double support_ratio, double adjacency_length_scale) {
  if (support_ratio <= 0.0 || support_ratio >= 1.0) {
    throw ConfigError("support ratio must lie in (0,1)");
  }
  data::TaskDataset task;
  const data::SeriesFrame frame = out.frame();
  task.normalizer = data::Normalizer::fit(frame.values);
  data::SeriesFrame normalized = frame;
  normalized.values = task.normalizer.apply(frame.values);
  task.image = std::make_shared<const Tensor>(out.image);
  const data::SpatialGraph graph =
      data::build_adjacency(out.cell_positions, adjacency_length_scale);
  task.adjacency_normalized = data::normalized_adjacency(graph);
  auto windows = data::make_windows(normalized, assemble_exog(out), window_spec, task.image);
  const std::size_t n_support =
      static_cast<std::size_t>(support_ratio * static_cast<double>(windows.size()));
  if (n_support == 0 || n_support >= windows.size()) {
    throw SizingError("task has too few windows (" + std::to_string(windows.size()) +
                      ") for a support/query split");
  }
  task.support.assign(windows.begin(), windows.begin() + static_cast<long>(n_support));
  task.query.assign(windows.begin() + static_cast<long>(n_support), windows.end());
  return task;
}

data::MetaDataset make_meta_tasks(const SimConfig& cfg, int n_tasks, const ShiftSpec& shift,
                                  const data::WindowSpec& window_spec, double support_ratio,
                                  double adjacency_length_scale) {
  if (n_tasks < 1) throw ConfigError("meta task factory needs N >= 1");
  data::MetaDataset meta;
  const Rng root(cfg.seed);
  for (int i = 0; i < n_tasks; ++i) {
    const std::uint64_t task_seed = root.fork("task").fork(static_cast<std::uint64_t>(i)).seed();
    const SimConfig task_cfg = perturbed_config(cfg, shift, task_seed);
    const SimOutput out = run(task_cfg);
    meta.tasks.push_back(
        make_task_dataset(out, window_spec, support_ratio, adjacency_length_scale));
  }
  return meta;
}

}  // namespace cellcast::sim
