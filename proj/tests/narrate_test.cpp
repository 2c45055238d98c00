#include "gnnxar/narrate.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "gnnxar/testing/oracles.hpp"

using namespace gnnxar;
namespace oracle = gnnxar::testing;

namespace {

GraphNode item(std::size_t id, std::size_t sensor, NodeKind kind, double ts, EventType t = EventType::On) {
  GraphNode n;
  n.id = id;
  n.kind = kind;
  n.sensor = sensor;
  if (kind == NodeKind::Event) n.event_type = t;
  n.anchor_ts = ts;
  return n;
}

// Nodes with the given timestamps (all sensor 0 events) and temporal arcs;
// A* = every arc.
std::pair<ActivityGraph, ExplanationSubgraph> dag(const std::vector<double>& ts,
                                                  const std::vector<std::pair<std::size_t, std::size_t>>& arcs) {
  ActivityGraph g;
  g.num_sensors = 1;
  for (std::size_t i = 0; i < ts.size(); ++i) g.nodes.push_back(item(i, 0, NodeKind::Event, ts[i]));
  ExplanationSubgraph sub;
  for (const auto& [s, d] : arcs) {
    sub.arcs.emplace_back(g.arcs.size(), 1.0);
    g.arcs.push_back({s, d, ts[d] - ts[s], ArcKind::Temporal, 0.0});
  }
  return {g, sub};
}

struct Kitchen {
  SensorRegistry registry;
  ActivityGraph graph;
  PhraseMap phrases;
};

Kitchen fridge_example() {
  Kitchen k;
  k.registry = SensorRegistry({{"M_FRIDGE", SensorKind::AutoOff, "the fridge"},
                               {"D_FRIDGE", SensorKind::Explicit, "the fridge"}});
  k.graph.num_sensors = 2;
  k.graph.nodes = {item(0, 0, NodeKind::State, 10.0), item(1, 1, NodeKind::Event, 20.0),
                   item(2, 1, NodeKind::Event, 40.0)};
  k.phrases = PhraseMap::from_registry(k.registry, {"preparing a meal"});
  k.phrases.resident = "Bob";
  k.phrases.pronoun = "he";
  return k;
}

}  // namespace

TEST(Render, FridgeSentenceExact) {
  auto k = fridge_example();
  std::vector<std::size_t> path = {0, 1, 2};
  auto e = render(path, k.graph, k.registry, k.phrases, 0);
  EXPECT_EQ(e.text,
            "I predicted preparing a meal mainly due to the following observations: Bob was near the fridge, "
            "then he opened the fridge multiple times");
  EXPECT_EQ(e.path, path);
}

TEST(Render, DefaultResidentName) {
  auto k = fridge_example();
  k.phrases.resident = PhraseMap{}.resident;
  std::vector<std::size_t> path = {0};
  auto e = render(path, k.graph, k.registry, k.phrases, 0);
  EXPECT_EQ(e.text,
            "I predicted preparing a meal mainly due to the following observations: the resident was near the fridge");
  EXPECT_EQ(e.text.find("then"), std::string::npos);
}

TEST(Render, MotionRunCollapsesBeforeDoor) {
  SensorRegistry reg({{"M_HALL", SensorKind::AutoOff, "the hall"}, {"D_FRONT", SensorKind::Explicit, "the front door"}});
  ActivityGraph g;
  g.num_sensors = 2;
  g.nodes = {item(0, 0, NodeKind::State, 1.0), item(1, 0, NodeKind::State, 5.0),
             item(2, 1, NodeKind::Event, 9.0), item(3, 1, NodeKind::Event, 12.0, EventType::Off)};
  auto phrases = PhraseMap::from_registry(reg, {"leaving home"});
  phrases.resident = "Bob";
  phrases.pronoun = "he";
  phrases.sensors["M_HALL"].approach = "approached the area between the dining room and the hall";
  std::vector<std::size_t> path = {0, 1, 2, 3};
  EXPECT_EQ(render(path, g, reg, phrases, 0).text,
            "I predicted leaving home mainly due to the following observations: Bob approached the area between the "
            "dining room and the hall multiple times, then he opened the front door, then he closed the front door");
}

TEST(Render, MissingTemplateNamesSensor) {
  auto k = fridge_example();
  k.phrases.sensors.erase("D_FRIDGE");
  std::vector<std::size_t> path = {0, 1};
  try {
    render(path, k.graph, k.registry, k.phrases, 0);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("D_FRIDGE"), std::string::npos);
  }
  EXPECT_THROW(render(std::span<const std::size_t>(), k.graph, k.registry, k.phrases, 0), DataError);
}

TEST(Render, ClauseCountChronologyAndNoSpuriousCollapse) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto rw = oracle::random_window(rng, 12, 4);
    if (oracle::oracle_items(rw.window, rw.registry).empty()) continue;
    auto g = build_graph(rw.window, rw.registry);
    ExplanationSubgraph sub;
    for (auto a : g.temporal_arcs()) sub.arcs.emplace_back(a, 1.0);
    for (std::size_t i = 0; i < g.num_items(); ++i) sub.nodes.emplace_back(i, 1.0);
    auto path = longest_path(sub, g);
    ASSERT_FALSE(path.empty());
    for (std::size_t i = 1; i < path.size(); ++i) EXPECT_LT(g.nodes[path[i - 1]].anchor_ts, g.nodes[path[i]].anchor_ts);
    auto phrases = PhraseMap::from_registry(rw.registry, {"x"});
    auto e = render(path, g, rw.registry, phrases, 0);
    // Collapsed clauses + extra repeats = path length.
    std::size_t clauses = 1, repeats = 0;
    for (std::size_t i = 1; i < path.size(); ++i) {
      const bool same = g.nodes[path[i]].sensor == g.nodes[path[i - 1]].sensor &&
                        node_phrase(g.nodes[path[i]], rw.registry, phrases) ==
                            node_phrase(g.nodes[path[i - 1]], rw.registry, phrases);
      same ? ++repeats : ++clauses;
    }
    EXPECT_EQ(clauses + repeats, path.size());
    std::size_t thens = 0;
    for (std::size_t p = e.text.find(", then "); p != std::string::npos; p = e.text.find(", then ", p + 1)) ++thens;
    EXPECT_EQ(thens + 1, clauses);
    if (repeats == 0) {
      EXPECT_EQ(e.text.find("multiple times"), std::string::npos);
    }
  }
}

TEST(LongestPath, ChainBeatsIsolatedArc) {
  auto [g, sub] = dag({0, 1, 2, 3, 4}, {{0, 1}, {1, 2}, {3, 4}});
  EXPECT_EQ(longest_path(sub, g), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(LongestPath, EqualLengthPrefersLongerSpan) {
  // 0->1 spans 10 s, 2->3 spans 30 s.
  auto [g, sub] = dag({0, 10, 20, 50}, {{0, 1}, {2, 3}});
  EXPECT_EQ(longest_path(sub, g), (std::vector<std::size_t>{2, 3}));
}

TEST(LongestPath, EqualSpanPrefersEarlierStart) {
  auto [g, sub] = dag({0, 10, 20, 30}, {{0, 1}, {2, 3}});
  EXPECT_EQ(longest_path(sub, g), (std::vector<std::size_t>{0, 1}));
}

TEST(LongestPath, NoArcsFallsBackToTopNode) {
  auto [g, sub] = dag({0, 1, 2}, {});
  sub.nodes = {{0, 0.2}, {2, 0.9}, {1, 0.5}};
  EXPECT_EQ(longest_path(sub, g), (std::vector<std::size_t>{2}));
}

TEST(LongestPath, MatchesExhaustiveEnumeration) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> nn(2, 8);
  std::uniform_int_distribution<int> gap(1, 4);  // small integers produce span ties
  std::bernoulli_distribution keep(0.35);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = nn(rng);
    std::vector<double> ts(n);
    double t = 0;
    for (auto& x : ts) x = (t += gap(rng));
    std::vector<std::pair<std::size_t, std::size_t>> arcs;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (keep(rng)) arcs.emplace_back(i, j);
    if (arcs.empty()) continue;
    auto [g, sub] = dag(ts, arcs);
    const auto path = longest_path(sub, g);
    std::set<std::pair<std::size_t, std::size_t>> arc_set(arcs.begin(), arcs.end());
    for (std::size_t i = 1; i < path.size(); ++i) ASSERT_TRUE(arc_set.count({path[i - 1], path[i]}));
    const auto best = oracle::best_path_score(arcs, ts);
    ASSERT_EQ(path.size() - 1, best.length) << "trial " << trial;
    ASSERT_EQ(ts[path.back()] - ts[path.front()], best.span) << "trial " << trial;
    ASSERT_EQ(ts[path.front()], best.start) << "trial " << trial;
  }
}

namespace {

std::vector<ExplanationRecord> records(std::size_t n, const std::string& tag, std::size_t classes) {
  std::vector<ExplanationRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string label = "act" + std::to_string(i % classes);
    // Every fifth window is misclassified.
    const std::string pred = i % 5 == 4 ? "wrong" : label;
    out.push_back({i, pred, label, tag + std::to_string(i), {i}});
  }
  return out;
}

}  // namespace

TEST(ExportPairs, ThirtyPerClassCorrectOnly) {
  auto a = records(300, "A", 3), b = records(300, "B", 3);
  auto pairs = export_pairs(a, b, 30, 1);
  std::map<std::string, std::size_t> per;
  std::set<bool> orders;
  for (const auto& p : pairs) {
    ++per[p.true_label];
    EXPECT_NE(p.window_id % 5, 4u);
    EXPECT_EQ(p.explanation_a, "A" + std::to_string(p.window_id));
    EXPECT_EQ(p.explanation_b, "B" + std::to_string(p.window_id));
    orders.insert(p.a_first);
  }
  EXPECT_EQ(per.size(), 3u);
  for (auto [label, c] : per) EXPECT_EQ(c, 30u);
  EXPECT_EQ(orders.size(), 2u);
}

TEST(ExportPairs, DeterministicGivenSeed) {
  auto a = records(90, "A", 3), b = records(90, "B", 3);
  auto x = export_pairs(a, b, 10, 4), y = export_pairs(a, b, 10, 4), z = export_pairs(a, b, 10, 5);
  ASSERT_EQ(x.size(), y.size());
  bool all_same = x.size() == z.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].window_id, y[i].window_id);
    EXPECT_EQ(x[i].a_first, y[i].a_first);
    if (all_same) all_same = x[i].window_id == z[i].window_id && x[i].a_first == z[i].a_first;
  }
  EXPECT_FALSE(all_same);
}

TEST(ExportPairs, Errors) {
  auto a = records(10, "A", 2);
  EXPECT_THROW(export_pairs(a, {}, 30, 0), DataError);
  EXPECT_THROW(export_pairs({}, a, 30, 0), DataError);
  auto b = records(9, "B", 2);
  EXPECT_THROW(export_pairs(a, b, 30, 0), DataError);
}
