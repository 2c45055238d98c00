#pragma once

// CASAS raw log ingestion: line parsing, activity labelling, total ordering,
// sliding-window segmentation and per-dataset class filtering.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gnnxar/error.hpp"

namespace gnnxar {

enum class SensorKind { Explicit, AutoOff };
enum class EventType { On, Off };

inline const char* to_string(SensorKind k) { return k == SensorKind::Explicit ? "explicit" : "auto_off"; }
inline const char* to_string(EventType t) { return t == EventType::On ? "ON" : "OFF"; }

inline SensorKind parse_sensor_kind(std::string_view s) {
  if (s == "explicit" || s == "Explicit") return SensorKind::Explicit;
  if (s == "auto_off" || s == "AutoOff" || s == "autooff") return SensorKind::AutoOff;
  throw DataError("unknown sensor kind '" + std::string(s) + "'");
}

// CASAS naming: motion sensors (M*) switch themselves off, everything else
// binary is treated as an explicit open/close style sensor.
inline SensorKind infer_sensor_kind(std::string_view sensor_id) {
  return !sensor_id.empty() && sensor_id.front() == 'M' ? SensorKind::AutoOff : SensorKind::Explicit;
}

struct SensorMeta {
  std::string id;
  SensorKind kind = SensorKind::Explicit;
  std::string location_phrase;
};

class SensorRegistry {
 public:
  SensorRegistry() = default;
  explicit SensorRegistry(std::vector<SensorMeta> sensors) {
    for (auto& s : sensors) add(std::move(s));
  }

  std::size_t add(SensorMeta meta) {
    if (index_.count(meta.id)) throw DataError("duplicate sensor id '" + meta.id + "' in registry");
    index_.emplace(meta.id, sensors_.size());
    sensors_.push_back(std::move(meta));
    return sensors_.size() - 1;
  }

  std::optional<std::size_t> index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t require(std::string_view id) const {
    auto idx = index_of(id);
    if (!idx) throw DataError("sensor '" + std::string(id) + "' is not in the registry");
    return *idx;
  }

  const SensorMeta& operator[](std::size_t i) const { return sensors_[i]; }
  std::size_t size() const noexcept { return sensors_.size(); }
  bool empty() const noexcept { return sensors_.empty(); }
  const std::vector<SensorMeta>& sensors() const noexcept { return sensors_; }

 private:
  std::vector<SensorMeta> sensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct SensorEvent {
  std::string sensor_id;
  EventType type = EventType::On;
  double timestamp = 0.0;
  std::optional<std::string> activity;

  friend bool operator==(const SensorEvent&, const SensorEvent&) = default;
};

struct ActivityMarker {
  std::string activity;
  bool begin = true;

  friend bool operator==(const ActivityMarker&, const ActivityMarker&) = default;
};

struct MarkedEvent {
  SensorEvent event;
  std::optional<ActivityMarker> marker;
  std::size_t line = 0;
  std::string value_token;  // as written in the log (ON/OFF/OPEN/CLOSE)
};

namespace detail {

template <class T>
bool parse_int(std::string_view s, T& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace detail

// "YYYY-MM-DD" and "HH:MM:SS[.ffffff]" to seconds since the Unix epoch (UTC).
inline std::optional<double> parse_casas_timestamp(std::string_view date, std::string_view time) {
  if (date.size() != 10 || date[4] != '-' || date[7] != '-') return std::nullopt;
  int y = 0;
  unsigned mo = 0, d = 0;
  if (!detail::parse_int(date.substr(0, 4), y) || !detail::parse_int(date.substr(5, 2), mo) ||
      !detail::parse_int(date.substr(8, 2), d))
    return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{mo},
                                        std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;

  if (time.size() < 8 || time[2] != ':' || time[5] != ':') return std::nullopt;
  int h = 0, mi = 0;
  double sec = 0.0;
  if (!detail::parse_int(time.substr(0, 2), h) || !detail::parse_int(time.substr(3, 2), mi) ||
      !detail::parse_double(time.substr(6), sec))
    return std::nullopt;
  if (h < 0 || h > 23 || mi < 0 || mi > 59 || !(sec >= 0.0) || sec >= 61.0) return std::nullopt;

  const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
  return static_cast<double>(days) * 86400.0 + h * 3600.0 + mi * 60.0 + sec;
}

inline std::string format_casas_timestamp(double ts) {
  const double day_f = std::floor(ts / 86400.0);
  const auto days = static_cast<long long>(day_f);
  const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days}}};
  double rem = ts - day_f * 86400.0;
  long long micros = std::llround(rem * 1e6);
  const long long h = micros / 3600000000LL;
  micros -= h * 3600000000LL;
  const long long mi = micros / 60000000LL;
  micros -= mi * 60000000LL;
  const long long s = micros / 1000000LL;
  micros -= s * 1000000LL;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02lld:%02lld:%02lld.%06lld",
                static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), h, mi, s, micros);
  return buf;
}

// Parses one CASAS line. Returns nullopt for blank lines and for sensors
// reporting non-binary (numeric) values.
inline std::optional<MarkedEvent> parse_event_line(std::string_view line, std::size_t line_no) {
  const auto tok = detail::split_ws(line);
  if (tok.empty()) return std::nullopt;
  if (tok.size() < 4) throw ParseError(line_no, "expected at least 4 fields, got " + std::to_string(tok.size()));

  const auto ts = parse_casas_timestamp(tok[0], tok[1]);
  if (!ts) throw ParseError(line_no, "malformed date/time '" + std::string(tok[0]) + " " + std::string(tok[1]) + "'");

  MarkedEvent out;
  out.line = line_no;
  out.event.sensor_id = std::string(tok[2]);
  out.event.timestamp = *ts;

  const std::string_view value = tok[3];
  out.value_token = std::string(value);
  if (value == "ON" || value == "OPEN") {
    out.event.type = EventType::On;
  } else if (value == "OFF" || value == "CLOSE") {
    out.event.type = EventType::Off;
  } else {
    double numeric = 0.0;
    if (detail::parse_double(value, numeric)) return std::nullopt;
    throw ParseError(line_no, "unknown value token '" + std::string(value) + "'");
  }

  if (tok.size() == 4) return out;
  if (tok.size() != 6 || (tok[5] != "begin" && tok[5] != "end")) {
    throw ParseError(line_no, "malformed activity marker");
  }
  out.marker = ActivityMarker{std::string(tok[4]), tok[5] == "begin"};
  return out;
}

inline std::string format_event_line(const MarkedEvent& e) {
  const std::string value =
      !e.value_token.empty() ? e.value_token : std::string(to_string(e.event.type));
  std::string out = format_casas_timestamp(e.event.timestamp) + " " + e.event.sensor_id + " " + value;
  if (e.marker) out += " " + e.marker->activity + (e.marker->begin ? " begin" : " end");
  return out;
}

// Stable sort by timestamp, then bump every tie to the next representable
// double above its predecessor so timestamps are strictly increasing.
inline void enforce_total_order(std::vector<MarkedEvent>& events) {
  std::stable_sort(events.begin(), events.end(), [](const MarkedEvent& a, const MarkedEvent& b) {
    return a.event.timestamp < b.event.timestamp;
  });
  for (std::size_t i = 1; i < events.size(); ++i) {
    double& t = events[i].event.timestamp;
    const double prev = events[i - 1].event.timestamp;
    if (t <= prev) t = std::nextafter(prev, std::numeric_limits<double>::infinity());
  }
}

inline void enforce_total_order(std::vector<SensorEvent>& events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const SensorEvent& a, const SensorEvent& b) { return a.timestamp < b.timestamp; });
  for (std::size_t i = 1; i < events.size(); ++i) {
    double& t = events[i].timestamp;
    if (t <= events[i - 1].timestamp)
      t = std::nextafter(events[i - 1].timestamp, std::numeric_limits<double>::infinity());
  }
}

struct LabelResult {
  std::vector<SensorEvent> events;
  std::vector<std::string> warnings;
};

// Pairs begin/end markers (an end closes the most recent open begin of the
// same activity) and labels every event inside a closed interval. When
// intervals overlap, the one that began last wins. Unpaired markers are
// reported and ignored.
inline LabelResult label_stream(const std::vector<MarkedEvent>& stream) {
  struct Interval {
    std::size_t begin, end;
    std::string activity;
  };
  LabelResult result;
  std::vector<Interval> intervals;
  std::map<std::string, std::vector<std::size_t>> open;  // activity -> begin positions
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const auto& m = stream[i].marker;
    if (!m) continue;
    if (m->begin) {
      open[m->activity].push_back(i);
    } else {
      auto it = open.find(m->activity);
      if (it == open.end() || it->second.empty()) {
        result.warnings.push_back("line " + std::to_string(stream[i].line) + ": end of '" +
                                  m->activity + "' without matching begin");
        continue;
      }
      intervals.push_back({it->second.back(), i, m->activity});
      it->second.pop_back();
    }
  }
  for (const auto& [activity, begins] : open) {
    for (std::size_t b : begins) {
      result.warnings.push_back("line " + std::to_string(stream[b].line) + ": begin of '" +
                                activity + "' never ended");
    }
  }

  // Sweep: at each position the active interval with the largest begin wins.
  std::sort(intervals.begin(), intervals.end(),
            [](const Interval& a, const Interval& b) { return a.begin < b.begin; });
  std::multimap<std::size_t, std::size_t, std::greater<>> active;  // begin -> interval idx
  std::size_t next = 0;
  result.events.reserve(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) {
    while (next < intervals.size() && intervals[next].begin <= i) {
      active.emplace(intervals[next].begin, next);
      ++next;
    }
    for (auto it = active.begin(); it != active.end();) {
      if (intervals[it->second].end < i) it = active.erase(it);
      else ++it;
    }
    SensorEvent e = stream[i].event;
    e.activity.reset();
    if (!active.empty()) e.activity = intervals[active.begin()->second].activity;
    result.events.push_back(std::move(e));
  }
  return result;
}

struct Window {
  std::vector<SensorEvent> events;
  double start_ts = 0.0;
  double end_ts = 0.0;
  std::string label;
  std::size_t id = 0;
};

struct SegmentConfig {
  double window_secs = 360.0;
  double overlap = 0.8;

  double stride() const { return window_secs * (1.0 - overlap); }
};

struct SegmentStats {
  std::size_t considered = 0;
  std::size_t empty = 0;
  std::size_t unlabeled = 0;
};

// Majority vote over all events, with "no label" competing as its own
// candidate. Ties go to whichever tied candidate the latest event carries.
inline std::optional<std::string> majority_label(std::span<const SensorEvent> events) {
  std::map<std::optional<std::string>, std::size_t> counts;
  for (const auto& e : events) ++counts[e.activity];
  std::size_t best = 0;
  for (const auto& [label, c] : counts) best = std::max(best, c);
  for (auto it = events.rbegin(); it != events.rend(); ++it) {
    if (counts[it->activity] == best) return it->activity;
  }
  return std::nullopt;
}

// Fixed-size sliding windows starting at the first event, one every
// window_secs * (1 - overlap) seconds. Window k covers
// [t0 + k*stride, t0 + k*stride + window_secs).
inline std::vector<Window> segment(const std::vector<SensorEvent>& events, const SegmentConfig& cfg,
                                   SegmentStats* stats = nullptr) {
  if (!(cfg.window_secs > 0.0)) throw DataError("window size must be positive");
  if (!(cfg.overlap >= 0.0 && cfg.overlap < 1.0)) throw DataError("overlap must lie in [0, 1)");
  std::vector<Window> out;
  if (events.empty()) return out;

  const double stride = cfg.stride();
  const double t0 = events.front().timestamp;
  const double last = events.back().timestamp;
  auto by_ts = [](const SensorEvent& e, double t) { return e.timestamp < t; };
  SegmentStats local;
  for (std::size_t k = 0;; ++k) {
    const double start = t0 + static_cast<double>(k) * stride;
    if (start > last) break;
    const double end = start + cfg.window_secs;
    ++local.considered;
    auto lo = std::lower_bound(events.begin(), events.end(), start, by_ts);
    auto hi = std::lower_bound(lo, events.end(), end, by_ts);
    if (lo == hi) {
      ++local.empty;
      continue;
    }
    const std::span<const SensorEvent> slice(&*lo, static_cast<std::size_t>(hi - lo));
    auto label = majority_label(slice);
    if (!label) {
      ++local.unlabeled;
      continue;
    }
    Window w;
    w.events.assign(lo, hi);
    w.start_ts = start;
    w.end_ts = end;
    w.label = *label;
    w.id = k;
    out.push_back(std::move(w));
  }
  if (stats) *stats = local;
  return out;
}

struct DatasetSpec {
  std::set<std::string> dropped_classes;
  std::map<std::string, std::string> merged_classes;
  SensorRegistry sensor_registry;

  void validate() const {
    for (const auto& [from, to] : merged_classes) {
      if (dropped_classes.count(to)) {
        throw DataError("merge target '" + to + "' is also a dropped class");
      }
    }
  }
};

inline std::vector<Window> apply_dataset_spec(std::vector<Window> windows, const DatasetSpec& spec) {
  spec.validate();
  std::vector<Window> out;
  out.reserve(windows.size());
  for (auto& w : windows) {
    if (spec.dropped_classes.count(w.label)) continue;
    if (auto it = spec.merged_classes.find(w.label); it != spec.merged_classes.end()) w.label = it->second;
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace gnnxar
