#pragma once

// Window -> ActivityGraph.
//
// Explicit sensors contribute one event node per ON/OFF event; auto-off
// sensors contribute one state node per ON->OFF interval, anchored at its ON
// timestamp. Temporal arcs connect
//   (1,2) consecutive items of the same sensor, and
//   (3) items i -> j of different sensors a, b when no item of a or b lies
//       strictly between them.
// One super node per registry sensor receives a ToSuper arc from every item
// of that sensor.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gnnxar/error.hpp"
#include "gnnxar/ingest.hpp"

namespace gnnxar {

struct ActiveState {
  std::string sensor_id;
  double on_ts = 0.0;
  double off_ts = 0.0;
  double duration = 0.0;
};

// Events of one auto-off sensor, time ordered. Each ON is closed by the next
// OFF; an ON left open at window end is truncated there, an OFF with no open
// ON is dropped. A repeated ON while already active is absorbed into the
// running state.
inline std::vector<ActiveState> pair_states(std::span<const SensorEvent> events, double window_end) {
  std::vector<ActiveState> out;
  bool open = false;
  double on_ts = 0.0;
  std::string id;
  for (const auto& e : events) {
    id = e.sensor_id;
    if (e.type == EventType::On) {
      if (!open) on_ts = e.timestamp;
      open = true;
    } else if (open) {
      out.push_back({e.sensor_id, on_ts, e.timestamp, e.timestamp - on_ts});
      open = false;
    }
  }
  if (open) out.push_back({id, on_ts, window_end, std::max(0.0, window_end - on_ts)});
  return out;
}

enum class NodeKind { Event, State, Super };
enum class ArcKind { Temporal, ToSuper };

inline const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Event: return "event";
    case NodeKind::State: return "state";
    default: return "super";
  }
}
inline const char* to_string(ArcKind k) { return k == ArcKind::Temporal ? "temporal" : "to_super"; }

// Categorical node type fed to the kind embedding.
enum class NodeCategory : std::size_t { EventOn = 0, EventOff = 1, State = 2, Super = 3 };
inline constexpr std::size_t kNodeCategories = 4;

struct GraphNode {
  std::size_t id = 0;
  NodeKind kind = NodeKind::Event;
  std::size_t sensor = 0;
  std::optional<EventType> event_type;
  double duration = 0.0;
  double anchor_ts = std::numeric_limits<double>::quiet_NaN();
  double duration_feature = 0.0;

  NodeCategory category() const {
    if (kind == NodeKind::Super) return NodeCategory::Super;
    if (kind == NodeKind::State) return NodeCategory::State;
    return event_type == EventType::Off ? NodeCategory::EventOff : NodeCategory::EventOn;
  }
};

struct GraphArc {
  std::size_t src = 0;
  std::size_t dst = 0;
  double delta_t = 0.0;
  ArcKind kind = ArcKind::Temporal;
  double feature = 0.0;

  friend bool operator==(const GraphArc&, const GraphArc&) = default;
};

struct ActivityGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphArc> arcs;
  int label = -1;
  std::size_t num_sensors = 0;
  bool featurized = false;
  std::string feature_transform;  // recorded by featurize()
  std::size_t window_id = 0;

  // Event/state nodes come first in anchor order, super nodes last in
  // registry order.
  std::size_t num_items() const { return nodes.size() - num_sensors; }
  std::size_t super_node(std::size_t sensor) const { return num_items() + sensor; }
  bool is_super(std::size_t node) const { return nodes[node].kind == NodeKind::Super; }

  std::vector<std::size_t> temporal_arcs() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < arcs.size(); ++i)
      if (arcs[i].kind == ArcKind::Temporal) out.push_back(i);
    return out;
  }

  // Index of the ToSuper arc leaving each node (nullopt for super nodes).
  std::vector<std::optional<std::size_t>> to_super_arc_of_node() const {
    std::vector<std::optional<std::size_t>> out(nodes.size());
    for (std::size_t i = 0; i < arcs.size(); ++i)
      if (arcs[i].kind == ArcKind::ToSuper) out[arcs[i].src] = i;
    return out;
  }
};

// Item = event/state node before ids are assigned.
struct GraphItem {
  std::size_t sensor;
  NodeKind kind;
  std::optional<EventType> type;
  double anchor;
  double duration;
};

// Temporal arcs over items sorted by anchor. O(n * k): for each item j and
// each other sensor a, only the latest item of a before j can connect to j,
// and it does iff no item of j's own sensor sits between them.
inline std::vector<GraphArc> temporal_arcs_for(std::span<const GraphItem> items, std::size_t num_sensors) {
  std::vector<GraphArc> arcs;
  constexpr auto none = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> last(num_sensors, none);
  for (std::size_t j = 0; j < items.size(); ++j) {
    const std::size_t b = items[j].sensor;
    const std::size_t prev_same = last[b];
    if (prev_same != none) {
      arcs.push_back({prev_same, j, items[j].anchor - items[prev_same].anchor, ArcKind::Temporal, 0.0});
    }
    for (std::size_t a = 0; a < num_sensors; ++a) {
      if (a == b || last[a] == none) continue;
      const std::size_t i = last[a];
      if (prev_same == none || prev_same < i) {
        arcs.push_back({i, j, items[j].anchor - items[i].anchor, ArcKind::Temporal, 0.0});
      }
    }
    last[b] = j;
  }
  return arcs;
}

inline ActivityGraph build_graph(const Window& window, const SensorRegistry& registry, int label = -1) {
  const std::size_t k = registry.size();
  std::vector<std::vector<SensorEvent>> per_sensor(k);
  std::vector<GraphItem> items;
  // Explicit events keep window order for stable tie handling.
  for (const auto& e : window.events) {
    const std::size_t s = registry.require(e.sensor_id);
    if (registry[s].kind == SensorKind::Explicit) {
      items.push_back({s, NodeKind::Event, e.type, e.timestamp, 0.0});
    } else {
      per_sensor[s].push_back(e);
    }
  }
  for (std::size_t s = 0; s < k; ++s) {
    if (per_sensor[s].empty()) continue;
    for (const auto& st : pair_states(per_sensor[s], window.end_ts)) {
      items.push_back({s, NodeKind::State, std::nullopt, st.on_ts, st.duration});
    }
  }
  if (items.empty()) throw EmptyGraphError("window " + std::to_string(window.id) + " has no event or state nodes");
  std::stable_sort(items.begin(), items.end(),
                   [](const GraphItem& x, const GraphItem& y) { return x.anchor < y.anchor; });

  ActivityGraph g;
  g.label = label;
  g.num_sensors = k;
  g.window_id = window.id;
  for (std::size_t i = 0; i < items.size(); ++i) {
    GraphNode n;
    n.id = i;
    n.kind = items[i].kind;
    n.sensor = items[i].sensor;
    n.event_type = items[i].type;
    n.duration = items[i].duration;
    n.anchor_ts = items[i].anchor;
    g.nodes.push_back(n);
  }
  for (std::size_t s = 0; s < k; ++s) {
    GraphNode n;
    n.id = items.size() + s;
    n.kind = NodeKind::Super;
    n.sensor = s;
    g.nodes.push_back(n);
  }
  g.arcs = temporal_arcs_for(items, k);
  for (std::size_t i = 0; i < items.size(); ++i) {
    g.arcs.push_back({i, items.size() + items[i].sensor, 0.0, ArcKind::ToSuper, 0.0});
  }
  return g;
}

// Attaches numeric features: log(1 + seconds) for state durations and arc
// time deltas.
inline ActivityGraph featurize(ActivityGraph g) {
  for (auto& n : g.nodes) {
    if (n.duration < 0.0 || !std::isfinite(n.duration)) {
      throw DataError("node " + std::to_string(n.id) + " has invalid duration " + std::to_string(n.duration));
    }
    n.duration_feature = std::log1p(n.duration);
  }
  for (auto& a : g.arcs) {
    if (a.delta_t < 0.0 || !std::isfinite(a.delta_t)) {
      throw DataError("arc " + std::to_string(a.src) + "->" + std::to_string(a.dst) +
                      " has invalid delta_t " + std::to_string(a.delta_t));
    }
    a.feature = std::log1p(a.delta_t);
  }
  g.featurized = true;
  g.feature_transform = "log1p_seconds";
  return g;
}

struct GraphInvariantReport {
  bool acyclic = true;
  bool one_to_super_per_item = true;
  bool super_count_matches = true;
  bool super_nodes_no_out_arcs = true;
  bool temporal_forward = true;

  bool ok() const {
    return acyclic && one_to_super_per_item && super_count_matches && super_nodes_no_out_arcs && temporal_forward;
  }
};

// Structural checks that every constructed graph must satisfy.
inline GraphInvariantReport check_graph_invariants(const ActivityGraph& g) {
  GraphInvariantReport r;
  std::size_t supers = 0;
  for (const auto& n : g.nodes) supers += n.kind == NodeKind::Super;
  r.super_count_matches = supers == g.num_sensors;

  std::vector<std::size_t> to_super(g.nodes.size(), 0);
  std::vector<std::size_t> indeg(g.nodes.size(), 0);
  std::vector<std::vector<std::size_t>> out(g.nodes.size());
  for (const auto& a : g.arcs) {
    if (g.nodes[a.src].kind == NodeKind::Super) r.super_nodes_no_out_arcs = false;
    if (a.kind == ArcKind::ToSuper) {
      ++to_super[a.src];
      const auto& dst = g.nodes[a.dst];
      if (dst.kind != NodeKind::Super || dst.sensor != g.nodes[a.src].sensor) r.one_to_super_per_item = false;
    } else {
      if (!(g.nodes[a.src].anchor_ts < g.nodes[a.dst].anchor_ts) || !(a.delta_t > 0.0)) r.temporal_forward = false;
      out[a.src].push_back(a.dst);
      ++indeg[a.dst];
    }
  }
  for (const auto& n : g.nodes) {
    if (n.kind != NodeKind::Super && to_super[n.id] != 1) r.one_to_super_per_item = false;
  }
  // Kahn's algorithm over temporal arcs.
  std::vector<std::size_t> ready;
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    if (indeg[i] == 0) ready.push_back(i);
  std::size_t visited = 0;
  while (!ready.empty()) {
    const std::size_t u = ready.back();
    ready.pop_back();
    ++visited;
    for (std::size_t v : out[u])
      if (--indeg[v] == 0) ready.push_back(v);
  }
  r.acyclic = visited == g.nodes.size();
  return r;
}

}  // namespace gnnxar
