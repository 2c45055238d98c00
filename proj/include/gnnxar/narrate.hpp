#pragma once

// Explanation subgraph -> sentence. The longest path through the important
// arcs is read in time order; each node becomes a clause from its sensor's
// phrase template and runs of the same clause collapse into
// "... multiple times".

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "gnnxar/error.hpp"
#include "gnnxar/explain.hpp"
#include "gnnxar/graph.hpp"
#include "gnnxar/ingest.hpp"

namespace gnnxar {

struct SensorPhrases {
  std::string approach;  // auto-off sensors, e.g. "was near the fridge"
  std::string open;      // explicit ON
  std::string close;     // explicit OFF
};

struct PhraseMap {
  std::map<std::string, SensorPhrases> sensors;
  std::vector<std::string> activities;  // class index -> display name
  std::string resident = "the resident";
  std::string pronoun = "they";

  // Templates derived from each sensor's location phrase, used for any
  // sensor without an explicit template.
  static SensorPhrases defaults_for(const SensorMeta& meta) {
    const std::string where = meta.location_phrase.empty() ? "sensor " + meta.id : meta.location_phrase;
    return {"was near " + where, "opened " + where, "closed " + where};
  }

  static PhraseMap from_registry(const SensorRegistry& registry, std::vector<std::string> activities) {
    PhraseMap p;
    for (const auto& s : registry.sensors()) p.sensors.emplace(s.id, defaults_for(s));
    p.activities = std::move(activities);
    return p;
  }

  const SensorPhrases& phrases(const std::string& sensor_id) const {
    auto it = sensors.find(sensor_id);
    if (it == sensors.end()) throw DataError("no phrase template for sensor '" + sensor_id + "'");
    return it->second;
  }

  std::string activity(std::size_t cls) const {
    if (cls >= activities.size()) throw DataError("no display name for class " + std::to_string(cls));
    return activities[cls];
  }
};

struct Explanation {
  std::string text;
  std::vector<std::size_t> path;
  std::size_t predicted_class = 0;
};

// Longest path by arc count through the A* digraph (acyclic: temporal arcs
// point forward in time). Ties prefer the larger time span, then the earlier
// start; remaining ties go to lower node ids. With no arcs the path is the
// single most important node.
inline std::vector<std::size_t> longest_path(const ExplanationSubgraph& sub, const ActivityGraph& g) {
  if (sub.arcs.empty()) {
    if (sub.nodes.empty()) return {};
    auto best = std::max_element(sub.nodes.begin(), sub.nodes.end(), [](const auto& a, const auto& b) {
      return a.second < b.second || (a.second == b.second && a.first > b.first);
    });
    return {best->first};
  }

  std::set<std::size_t> members;
  std::map<std::size_t, std::vector<std::size_t>> preds;
  for (const auto& [arc_idx, score] : sub.arcs) {
    const auto& a = g.arcs.at(arc_idx);
    members.insert(a.src);
    members.insert(a.dst);
    preds[a.dst].push_back(a.src);
  }
  std::vector<std::size_t> order(members.begin(), members.end());
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return std::tie(g.nodes[x].anchor_ts, x) < std::tie(g.nodes[y].anchor_ts, y);
  });

  // Best path ending at v: max length, then earliest start.
  struct Best {
    std::size_t length = 0;
    double start = 0.0;
    std::optional<std::size_t> prev;
  };
  std::map<std::size_t, Best> best;
  for (std::size_t v : order) {
    Best b{0, g.nodes[v].anchor_ts, std::nullopt};
    auto it = preds.find(v);
    if (it != preds.end()) {
      auto ps = it->second;
      std::sort(ps.begin(), ps.end());
      for (std::size_t u : ps) {
        const Best& bu = best.at(u);
        const std::size_t len = bu.length + 1;
        if (len > b.length || (len == b.length && bu.start < b.start)) b = {len, bu.start, u};
      }
    }
    best[v] = b;
  }

  std::optional<std::size_t> end;
  for (std::size_t v : order) {
    if (!end) {
      end = v;
      continue;
    }
    const Best& bv = best.at(v);
    const Best& be = best.at(*end);
    const double span_v = g.nodes[v].anchor_ts - bv.start;
    const double span_e = g.nodes[*end].anchor_ts - be.start;
    if (bv.length > be.length || (bv.length == be.length && span_v > span_e) ||
        (bv.length == be.length && span_v == span_e && bv.start < be.start)) {
      end = v;
    }
  }
  std::vector<std::size_t> path;
  for (std::optional<std::size_t> v = end; v; v = best.at(*v).prev) path.push_back(*v);
  std::reverse(path.begin(), path.end());
  return path;
}

inline const std::string& node_phrase(const GraphNode& n, const SensorRegistry& registry, const PhraseMap& phrases) {
  const auto& meta = registry[n.sensor];
  const auto& p = phrases.phrases(meta.id);
  if (n.kind == NodeKind::State) return p.approach;
  if (n.kind == NodeKind::Event) return n.event_type == EventType::Off ? p.close : p.open;
  throw DataError("super nodes cannot be narrated");
}

inline Explanation render(std::span<const std::size_t> path, const ActivityGraph& g, const SensorRegistry& registry,
                          const PhraseMap& phrases, std::size_t predicted_class) {
  if (path.empty()) throw DataError("cannot render an empty path");
  struct Clause {
    std::size_t sensor;
    std::string phrase;
    std::size_t count;
  };
  std::vector<Clause> clauses;
  for (std::size_t id : path) {
    const auto& n = g.nodes.at(id);
    const std::string& phrase = node_phrase(n, registry, phrases);
    if (!clauses.empty() && clauses.back().sensor == n.sensor && clauses.back().phrase == phrase) {
      ++clauses.back().count;
    } else {
      clauses.push_back({n.sensor, phrase, 1});
    }
  }
  Explanation out;
  out.path.assign(path.begin(), path.end());
  out.predicted_class = predicted_class;
  out.text = "I predicted " + phrases.activity(predicted_class) + " mainly due to the following observations: ";
  for (std::size_t i = 0; i < clauses.size(); ++i) {
    if (i > 0) out.text += ", then ";
    out.text += (i == 0 ? phrases.resident : phrases.pronoun) + " " + clauses[i].phrase;
    if (clauses[i].count >= 2) out.text += " multiple times";
  }
  return out;
}

struct ExplanationRecord {
  std::size_t window_id = 0;
  std::string predicted;
  std::string truth;
  std::string text;
  std::vector<std::size_t> path;
};

struct ExplanationPair {
  std::size_t window_id = 0;
  std::string true_label;
  std::string explanation_a;
  std::string explanation_b;
  bool a_first = true;  // presentation order
};

// Pairs explanations of the same windows from two systems. Only correct
// predictions of side A are eligible; up to per_class windows are sampled per
// true label, and each pair's presentation order is drawn at random.
inline std::vector<ExplanationPair> export_pairs(const std::vector<ExplanationRecord>& a,
                                                 const std::vector<ExplanationRecord>& b, std::size_t per_class,
                                                 std::uint64_t seed) {
  if (a.empty() || b.empty()) throw DataError("both explanation sets must be nonempty");
  std::map<std::size_t, const ExplanationRecord*> by_window;
  for (const auto& r : b) by_window[r.window_id] = &r;
  std::set<std::size_t> a_ids;
  for (const auto& r : a) a_ids.insert(r.window_id);
  if (a_ids.size() != by_window.size() ||
      !std::equal(a_ids.begin(), a_ids.end(), by_window.begin(), [](std::size_t id, const auto& kv) { return id == kv.first; })) {
    throw DataError("explanation sets cover different windows");
  }

  std::map<std::string, std::vector<const ExplanationRecord*>> by_class;
  for (const auto& r : a)
    if (r.predicted == r.truth) by_class[r.truth].push_back(&r);

  std::mt19937_64 rng(seed);
  std::vector<ExplanationPair> out;
  for (auto& [label, recs] : by_class) {
    std::sort(recs.begin(), recs.end(), [](auto* x, auto* y) { return x->window_id < y->window_id; });
    std::shuffle(recs.begin(), recs.end(), rng);
    if (recs.size() > per_class) recs.resize(per_class);
    std::sort(recs.begin(), recs.end(), [](auto* x, auto* y) { return x->window_id < y->window_id; });
    for (const auto* r : recs) {
      std::bernoulli_distribution coin(0.5);
      out.push_back({r->window_id, label, r->text, by_window.at(r->window_id)->text, coin(rng)});
    }
  }
  return out;
}

}  // namespace gnnxar
