#pragma once

// Synthetic smart-home data with known causes. Every activity class owns a
// signature sequence of sensors (motion, door, motion) that is replayed a
// few times inside the window; the remaining events are noise drawn from
// sensors outside the signature.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "gnnxar/ingest.hpp"

namespace gnnxar {

struct SyntheticConfig {
  std::size_t num_classes = 3;
  std::size_t windows_per_class = 300;
  double noise_fraction = 0.2;  // share of events coming from noise items
  double window_secs = 360.0;
  std::uint64_t seed = 7;
};

struct SyntheticDataset {
  SensorRegistry registry;
  std::vector<std::string> class_names;
  std::vector<std::string> display_names;
  std::vector<std::vector<std::size_t>> signatures;  // class -> registry indices
  std::vector<Window> windows;
};

namespace detail {

inline const std::vector<std::string>& synthetic_rooms() {
  static const std::vector<std::string> rooms = {"the fridge", "the stove",       "the pantry",
                                                 "the sofa",   "the bookshelf",   "the armchair",
                                                 "the hall",   "the front door",  "the coat rack",
                                                 "the desk",   "the wardrobe",    "the bathtub"};
  return rooms;
}

}  // namespace detail

inline SyntheticDataset make_synthetic_registry(const SyntheticConfig& cfg) {
  SyntheticDataset ds;
  const auto& rooms = detail::synthetic_rooms();
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    const std::string tag = std::to_string(c);
    std::vector<std::size_t> sig;
    sig.push_back(ds.registry.add({"M" + tag + "A", SensorKind::AutoOff, rooms[(3 * c) % rooms.size()]}));
    sig.push_back(ds.registry.add({"D" + tag, SensorKind::Explicit, rooms[(3 * c + 1) % rooms.size()]}));
    sig.push_back(ds.registry.add({"M" + tag + "B", SensorKind::AutoOff, rooms[(3 * c + 2) % rooms.size()]}));
    ds.signatures.push_back(sig);
    ds.class_names.push_back("Activity_" + tag);
    ds.display_names.push_back("activity " + tag);
  }
  ds.registry.add({"M90", SensorKind::AutoOff, "the corridor"});
  ds.registry.add({"M91", SensorKind::AutoOff, "the stairs"});
  ds.registry.add({"D90", SensorKind::Explicit, "the closet"});
  return ds;
}

// Events of one synthetic episode of class c starting at `base`.
inline std::vector<SensorEvent> synthetic_episode(const SyntheticDataset& ds, std::size_t c, double base,
                                                  const SyntheticConfig& cfg, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> reps_d(2, 3);
  std::uniform_real_distribution<double> gap_d(5.0, 25.0);
  std::uniform_real_distribution<double> motion_d(2.0, 20.0);
  std::uniform_real_distribution<double> door_d(3.0, 30.0);
  const double horizon = cfg.window_secs * 0.95;
  std::uniform_real_distribution<double> noise_t(0.0, horizon);

  std::vector<SensorEvent> events;
  const std::string label = ds.class_names[c];
  auto emit = [&](std::size_t sensor, double t) {
    const auto& meta = ds.registry[sensor];
    const double dur = meta.kind == SensorKind::AutoOff ? motion_d(rng) : door_d(rng);
    events.push_back({meta.id, EventType::On, base + t, label});
    events.push_back({meta.id, EventType::Off, base + std::min(t + dur, horizon), label});
  };

  const int reps = reps_d(rng);
  double t = gap_d(rng) * 0.5;
  std::size_t items = 0;
  for (int r = 0; r < reps; ++r) {
    for (std::size_t s : ds.signatures[c]) {
      if (t >= horizon) break;
      emit(s, t);
      ++items;
      t += gap_d(rng);
    }
  }

  std::set<std::size_t> sig(ds.signatures[c].begin(), ds.signatures[c].end());
  std::vector<std::size_t> noise_sensors;
  for (std::size_t s = 0; s < ds.registry.size(); ++s)
    if (!sig.count(s)) noise_sensors.push_back(s);
  const auto noise_items = static_cast<std::size_t>(
      std::llround(static_cast<double>(items) * cfg.noise_fraction / (1.0 - cfg.noise_fraction)));
  std::uniform_int_distribution<std::size_t> pick(0, noise_sensors.size() - 1);
  for (std::size_t i = 0; i < noise_items; ++i) emit(noise_sensors[pick(rng)], noise_t(rng));

  // Per-sensor overlap would make ON/OFF pairs ambiguous; keep each sensor's
  // intervals disjoint by dropping clashing items.
  std::stable_sort(events.begin(), events.end(),
                   [](const SensorEvent& a, const SensorEvent& b) { return a.timestamp < b.timestamp; });
  std::vector<SensorEvent> clean;
  std::set<std::string> active;
  std::set<std::string> skipping;
  for (auto& e : events) {
    if (e.type == EventType::On) {
      if (active.count(e.sensor_id)) {
        skipping.insert(e.sensor_id);
        continue;
      }
      active.insert(e.sensor_id);
      clean.push_back(std::move(e));
    } else {
      if (skipping.erase(e.sensor_id)) continue;
      active.erase(e.sensor_id);
      clean.push_back(std::move(e));
    }
  }
  enforce_total_order(clean);
  return clean;
}

// windows_per_class windows per class, interleaved by class, each holding a
// single episode.
inline SyntheticDataset make_synthetic_dataset(const SyntheticConfig& cfg) {
  SyntheticDataset ds = make_synthetic_registry(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::size_t id = 0;
  for (std::size_t k = 0; k < cfg.windows_per_class; ++k) {
    for (std::size_t c = 0; c < cfg.num_classes; ++c, ++id) {
      Window w;
      w.id = id;
      w.start_ts = 1.0e9 + static_cast<double>(id) * 10.0 * cfg.window_secs;
      w.end_ts = w.start_ts + cfg.window_secs;
      w.events = synthetic_episode(ds, c, w.start_ts, cfg, rng);
      w.label = ds.class_names[c];
      ds.windows.push_back(std::move(w));
    }
  }
  return ds;
}

// A CASAS-format raw log: episodes separated by idle gaps with a little
// unlabeled activity, each episode wrapped in begin/end markers. A few
// temperature readings are mixed in.
inline std::vector<std::string> make_synthetic_log(const SyntheticDataset& ds, std::size_t episodes_per_class,
                                                   const SyntheticConfig& cfg) {
  std::mt19937_64 rng(cfg.seed + 1);
  std::vector<MarkedEvent> stream;
  double base = 1.26e9;
  for (std::size_t k = 0; k < episodes_per_class; ++k) {
    for (std::size_t c = 0; c < ds.class_names.size(); ++c) {
      auto ev = synthetic_episode(ds, c, base, cfg, rng);
      for (std::size_t i = 0; i < ev.size(); ++i) {
        MarkedEvent m;
        m.event = ev[i];
        m.event.activity.reset();
        const bool door = ds.registry[ds.registry.require(m.event.sensor_id)].kind == SensorKind::Explicit;
        m.value_token = m.event.type == EventType::On ? (door ? "OPEN" : "ON") : (door ? "CLOSE" : "OFF");
        if (i == 0) m.marker = ActivityMarker{ds.class_names[c], true};
        if (i + 1 == ev.size()) m.marker = ActivityMarker{ds.class_names[c], false};
        stream.push_back(std::move(m));
      }
      base += cfg.window_secs * 3.0;
      // Unlabeled wandering between episodes.
      MarkedEvent idle;
      idle.event = {"M90", EventType::On, base - cfg.window_secs, std::nullopt};
      idle.value_token = "ON";
      stream.push_back(idle);
      idle.event.type = EventType::Off;
      idle.event.timestamp += 4.0;
      idle.value_token = "OFF";
      stream.push_back(idle);
    }
  }
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    lines.push_back(format_event_line(stream[i]));
    if (i % 25 == 0) lines.push_back(format_casas_timestamp(stream[i].event.timestamp) + " T001 21.5");
  }
  return lines;
}

}  // namespace gnnxar
