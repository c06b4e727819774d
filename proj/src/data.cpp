#include "cellcast/data.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "cellcast/errors.hpp"

namespace cellcast::data {

int hour_of_day(std::int64_t epoch_s) {
  std::int64_t h = (epoch_s / kSecondsPerHour) % kHoursPerDay;
  if (h < 0) h += kHoursPerDay;
  return static_cast<int>(h);
}

std::int64_t epoch_day(std::int64_t epoch_s) {
  std::int64_t d = epoch_s / 86400;
  if (epoch_s % 86400 < 0) --d;
  return d;
}

int day_of_week(std::int64_t epoch_s) {
  // Epoch day 0 (1970-01-01) is a Thursday; index 0 means Monday.
  std::int64_t dow = (epoch_day(epoch_s) + 3) % 7;
  if (dow < 0) dow += 7;
  return static_cast<int>(dow);
}

std::int64_t parse_iso_date(const std::string& text) {
  int y = 0, m = 0, d = 0;
  if (std::sscanf(text.c_str(), "%d-%d-%d", &y, &m, &d) != 3) {
    throw IngestError("unparseable ISO-8601 date: '" + text + "'");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(m)},
                           day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) throw IngestError("invalid calendar date: '" + text + "'");
  return sys_days{ymd}.time_since_epoch().count();
}

void SeriesFrame::validate() const {
  if (dims() < 1) throw ConfigError("series frame needs at least one cell");
  if (values.rank() != 2 || values.rows() != steps() || values.cols() != dims()) {
    throw ConfigError("series frame values must be T x D");
  }
  for (std::size_t t = 1; t < timestamps.size(); ++t) {
    if (timestamps[t] - timestamps[t - 1] != kSecondsPerHour) {
      throw IngestError("series must be hourly and gap-free; offending timestamp index " +
                        std::to_string(t));
    }
  }
}

SeriesFrame SeriesFrame::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > steps()) throw ConfigError("series slice out of range");
  SeriesFrame out;
  out.cell_ids = cell_ids;
  out.timestamps.assign(timestamps.begin() + begin, timestamps.begin() + end);
  const std::size_t d = dims();
  out.values = Tensor::zeros({end - begin, d});
  for (std::size_t t = begin; t < end; ++t)
    for (std::size_t c = 0; c < d; ++c) out.values(t - begin, c) = values(t, c);
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t row, const char* what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || !std::isfinite(v)) {
    throw IngestError("row " + std::to_string(row) + ": non-numeric " + what + " '" + s + "'");
  }
  return v;
}

std::int64_t parse_int(const std::string& s, std::size_t row, const char* what) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') {
    throw IngestError("row " + std::to_string(row) + ": non-integer " + what + " '" + s + "'");
  }
  return static_cast<std::int64_t>(v);
}

}  // namespace

SeriesFrame load_traffic_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open traffic CSV: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IngestError("empty traffic CSV: " + path);
  if (line != "timestamp,cell_id,volume") {
    throw IngestError("traffic CSV must start with header 'timestamp,cell_id,volume', got '" +
                      line + "'");
  }

  std::map<std::int64_t, std::map<int, double>> grid;
  std::set<int> cells;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 3) {
      throw IngestError("row " + std::to_string(row) + ": expected 3 fields, got " +
                        std::to_string(fields.size()));
    }
    const std::int64_t ts = parse_int(fields[0], row, "timestamp");
    const int cell = static_cast<int>(parse_int(fields[1], row, "cell_id"));
    const double vol = parse_double(fields[2], row, "volume");
    auto& at_t = grid[ts];
    if (!at_t.emplace(cell, vol).second) {
      throw IngestError("row " + std::to_string(row) + ": duplicate (timestamp, cell) pair (" +
                        fields[0] + ", " + fields[1] + ")");
    }
    cells.insert(cell);
  }
  if (grid.empty()) throw IngestError("traffic CSV has no data rows: " + path);

  SeriesFrame frame;
  frame.cell_ids.assign(cells.begin(), cells.end());
  frame.timestamps.reserve(grid.size());
  frame.values = Tensor::zeros({grid.size(), cells.size()});
  std::size_t t = 0;
  for (const auto& [ts, at_t] : grid) {
    frame.timestamps.push_back(ts);
    if (at_t.size() != cells.size()) {
      throw IngestError("timestamp " + std::to_string(ts) + " has " +
                        std::to_string(at_t.size()) + " cells, expected " +
                        std::to_string(cells.size()) + " (missing pair)");
    }
    std::size_t c = 0;
    for (const auto& [cell, vol] : at_t) frame.values(t, c++) = vol;
    ++t;
  }
  frame.validate();
  return frame;
}

void write_traffic_csv(const std::string& path, const SeriesFrame& frame) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot open for writing: " + path);
  out << "timestamp,cell_id,volume\n";
  char buf[64];
  for (std::size_t t = 0; t < frame.steps(); ++t) {
    for (std::size_t c = 0; c < frame.dims(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", frame.values(t, c));
      out << frame.timestamps[t] << ',' << frame.cell_ids[c] << ',' << buf << '\n';
    }
  }
}

Normalizer Normalizer::fit(const Tensor& train_values) {
  if (train_values.rank() != 2 || train_values.rows() == 0) {
    throw ConfigError("normalizer expects a nonempty T x D matrix");
  }
  Normalizer n;
  const std::size_t rows = train_values.rows(), cols = train_values.cols();
  n.min_.assign(cols, 0.0);
  n.max_.assign(cols, 0.0);
  for (std::size_t c = 0; c < cols; ++c) {
    double lo = train_values(0, c), hi = train_values(0, c);
    for (std::size_t r = 1; r < rows; ++r) {
      lo = std::min(lo, train_values(r, c));
      hi = std::max(hi, train_values(r, c));
    }
    n.min_[c] = lo;
    n.max_[c] = hi;
  }
  return n;
}

Tensor Normalizer::apply(const Tensor& values) const {
  const std::size_t cols = dims();
  if (values.size() % cols != 0) throw ConfigError("normalizer dimension mismatch");
  Tensor out = values;
  const std::size_t rows = values.size() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double span = max_[c] - min_[c];
      double& v = out[r * cols + c];
      v = span > 0.0 ? (v - min_[c]) / span : 0.0;
    }
  }
  return out;
}

Tensor Normalizer::invert(const Tensor& values) const {
  const std::size_t cols = dims();
  if (values.size() % cols != 0) throw ConfigError("normalizer dimension mismatch");
  Tensor out = values;
  const std::size_t rows = values.size() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double span = max_[c] - min_[c];
      double& v = out[r * cols + c];
      v = span > 0.0 ? v * span + min_[c] : min_[c];
    }
  }
  return out;
}

Tensor one_hot_metadata(const std::vector<std::int64_t>& timestamps,
                        const std::set<std::int64_t>& holiday_days) {
  Tensor out = Tensor::zeros({timestamps.size(), kMetadataDims});
  for (std::size_t t = 0; t < timestamps.size(); ++t) {
    out(t, static_cast<std::size_t>(hour_of_day(timestamps[t]))) = 1.0;
    out(t, 24 + static_cast<std::size_t>(day_of_week(timestamps[t]))) = 1.0;
    if (holiday_days.count(epoch_day(timestamps[t]))) out(t, 31) = 1.0;
  }
  return out;
}

std::set<std::int64_t> load_holiday_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open holiday file: " + path);
  std::set<std::int64_t> days;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    days.insert(parse_iso_date(line));
  }
  return days;
}

void WindowSpec::validate() const {
  if (closeness_steps < 1) throw ConfigError("window spec: closeness_steps must be >= 1");
  if (period_steps < 1) throw ConfigError("window spec: period_steps must be >= 1");
  if (horizon < 1) throw ConfigError("window spec: horizon must be >= 1");
}

std::vector<MultimodalWindow> make_windows(const SeriesFrame& frame, const Tensor& exog,
                                           const WindowSpec& spec,
                                           std::shared_ptr<const Tensor> image) {
  spec.validate();
  frame.validate();
  const std::size_t t_total = frame.steps();
  const std::size_t d = frame.dims();
  if (exog.rank() != 2 || exog.rows() != t_total) {
    throw ConfigError("exogenous features must align with the frame rows");
  }
  const std::size_t d_txt = exog.cols();

  // Earliest valid target index: all closeness rows and all daily-period
  // rows must exist.
  const long horizon = spec.horizon;
  const long earliest_target =
      std::max<long>(spec.closeness_steps - 1 + horizon,
                     static_cast<long>(spec.period_steps) * WindowSpec::kPeriodStride);
  const long min_len = earliest_target + 1;
  if (static_cast<long>(t_total) < min_len) {
    throw SizingError("series too short for windowing: need at least " +
                      std::to_string(min_len) + " hourly samples, got " +
                      std::to_string(t_total));
  }

  std::vector<MultimodalWindow> out;
  for (long target = earliest_target; target < static_cast<long>(t_total); ++target) {
    MultimodalWindow w;
    const long last_obs = target - horizon;
    w.closeness = Tensor::zeros({static_cast<std::size_t>(spec.closeness_steps), d});
    w.exog_closeness = Tensor::zeros({static_cast<std::size_t>(spec.closeness_steps), d_txt});
    for (int i = 0; i < spec.closeness_steps; ++i) {
      const std::size_t row = static_cast<std::size_t>(last_obs - spec.closeness_steps + 1 + i);
      for (std::size_t c = 0; c < d; ++c) w.closeness(i, c) = frame.values(row, c);
      for (std::size_t c = 0; c < d_txt; ++c) w.exog_closeness(i, c) = exog(row, c);
    }
    w.period = Tensor::zeros({static_cast<std::size_t>(spec.period_steps), d});
    w.exog_period = Tensor::zeros({static_cast<std::size_t>(spec.period_steps), d_txt});
    for (int i = 0; i < spec.period_steps; ++i) {
      // Oldest first; sample i sits (period_steps - i) days before the target.
      const std::size_t row = static_cast<std::size_t>(
          target - static_cast<long>(spec.period_steps - i) * WindowSpec::kPeriodStride);
      for (std::size_t c = 0; c < d; ++c) w.period(i, c) = frame.values(row, c);
      for (std::size_t c = 0; c < d_txt; ++c) w.exog_period(i, c) = exog(row, c);
    }
    w.target = Tensor::zeros({d});
    for (std::size_t c = 0; c < d; ++c) w.target[c] = frame.values(static_cast<std::size_t>(target), c);
    w.target_time = frame.timestamps[static_cast<std::size_t>(target)];
    w.horizon = spec.horizon;
    w.image = image;
    out.push_back(std::move(w));
  }
  return out;
}

std::size_t FoldPlan::total_calibration_samples() const {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.calibrate.size();
  return n;
}

void FoldPlan::validate() const {
  if (k < 2) throw ConfigError("fold plan needs K >= 2");
  if (static_cast<int>(folds.size()) != k) throw ConfigError("fold plan is inconsistent");
  for (std::size_t i = 0; i < folds.size(); ++i) {
    if (folds[i].begin >= folds[i].end) throw ConfigError("fold plan has an empty fold");
    if (i > 0 && folds[i].begin != folds[i - 1].end)
      throw ConfigError("folds must be contiguous and ordered");
  }
  for (const auto& p : pairs) {
    if (p.train.end > p.calibrate.begin)
      throw ConfigError("calibration fold must start strictly after its training window");
  }
}

FoldPlan growing_window_folds(std::size_t n_samples, int k) {
  if (k < 2) throw SizingError("growing-window folds need K >= 2");
  if (n_samples < static_cast<std::size_t>(k)) {
    throw SizingError("growing-window folds need at least K samples: n=" +
                      std::to_string(n_samples) + ", K=" + std::to_string(k));
  }
  FoldPlan plan;
  plan.k = k;
  const std::size_t base = n_samples / static_cast<std::size_t>(k);
  const std::size_t remainder = n_samples % static_cast<std::size_t>(k);
  std::size_t begin = 0;
  for (int f = 0; f < k; ++f) {
    const std::size_t len = base + (static_cast<std::size_t>(f) < remainder ? 1 : 0);
    plan.folds.push_back({begin, begin + len});
    begin += len;
  }
  for (int f = 0; f + 1 < k; ++f) {
    FoldPlan::Pair p;
    p.train = {0, plan.folds[static_cast<std::size_t>(f)].end};
    p.calibrate = plan.folds[static_cast<std::size_t>(f) + 1];
    plan.pairs.push_back(p);
  }
  plan.validate();
  return plan;
}

void SpatialGraph::validate() const {
  const std::size_t d = dims();
  if (coefficients.rank() != 2 || coefficients.cols() != d) {
    throw ConfigError("spatial graph must be square");
  }
  for (std::size_t i = 0; i < d; ++i) {
    if (coefficients(i, i) != 0.0) throw ConfigError("spatial graph diagonal must be zero");
    for (std::size_t j = 0; j < d; ++j) {
      const double v = coefficients(i, j);
      if (v < 0.0 || v > 1.0) throw ConfigError("spatial graph entries must lie in [0,1]");
      if (v != coefficients(j, i)) throw ConfigError("spatial graph must be symmetric");
    }
  }
}

SpatialGraph build_adjacency(const std::vector<std::pair<double, double>>& cell_positions,
                             double length_scale) {
  if (cell_positions.empty()) throw ConfigError("adjacency needs at least one cell");
  if (length_scale <= 0.0) throw ConfigError("adjacency length scale must be > 0");
  const std::size_t d = cell_positions.size();
  SpatialGraph g;
  g.coefficients = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      const double dx = cell_positions[i].first - cell_positions[j].first;
      const double dy = cell_positions[i].second - cell_positions[j].second;
      const double w = std::exp(-(dx * dx + dy * dy) / (length_scale * length_scale));
      g.coefficients(i, j) = w;
      g.coefficients(j, i) = w;
    }
  }
  return g;
}

Tensor normalized_adjacency(const SpatialGraph& graph) {
  graph.validate();
  const std::size_t d = graph.dims();
  Tensor a = graph.coefficients;
  for (std::size_t i = 0; i < d; ++i) a(i, i) = 1.0;  // self loops
  std::vector<double> inv_sqrt_deg(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < d; ++j) deg += a(i, j);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) a(i, j) *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
  return a;
}

}  // namespace cellcast::data
