#include "gnnxar/graph.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <map>
#include <random>

#include "gnnxar/testing/oracles.hpp"

using namespace gnnxar;
namespace oracle = gnnxar::testing;

namespace {

SensorEvent on(const char* s, double t) { return {s, EventType::On, t, std::nullopt}; }
SensorEvent off(const char* s, double t) { return {s, EventType::Off, t, std::nullopt}; }

SensorRegistry reg_m1_d1_d2() {
  return SensorRegistry({{"M1", SensorKind::AutoOff, "the hall"},
                         {"D1", SensorKind::Explicit, "the fridge"},
                         {"D2", SensorKind::Explicit, "the door"}});
}

Window window_of(std::vector<SensorEvent> ev) {
  Window w;
  w.events = std::move(ev);
  w.start_ts = 0.0;
  w.end_ts = 360.0;
  return w;
}

bool has_arc(const ActivityGraph& g, std::size_t s, std::size_t d, ArcKind k) {
  for (const auto& a : g.arcs)
    if (a.src == s && a.dst == d && a.kind == k) return true;
  return false;
}

}  // namespace

TEST(PairStates, OnOff) {
  std::vector<SensorEvent> e = {on("M1", 10), off("M1", 25)};
  auto s = pair_states(e, 360);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].on_ts, 10.0);
  EXPECT_EQ(s[0].off_ts, 25.0);
  EXPECT_EQ(s[0].duration, 15.0);
}

TEST(PairStates, TruncatedAtWindowEnd) {
  std::vector<SensorEvent> e = {on("M1", 300)};
  auto s = pair_states(e, 360);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].duration, 60.0);
}

TEST(PairStates, UnmatchedOffDropped) {
  std::vector<SensorEvent> e = {off("M1", 5)};
  EXPECT_TRUE(pair_states(e, 360).empty());
}

// Random single-sensor sequences against a naive re-scan.
TEST(PairStates, MatchesScanOracle) {
  std::mt19937_64 rng(17);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> gap(0.1, 40.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<SensorEvent> e;
    double t = 0;
    for (int i = 0; i < 10; ++i) {
      t += gap(rng);
      if (t >= 360) break;
      e.push_back({"M1", coin(rng) ? EventType::On : EventType::Off, t, std::nullopt});
    }
    // Oracle: for every ON not preceded by an unclosed ON, look forward for
    // the first OFF.
    std::vector<std::pair<double, double>> expected;
    std::size_t i = 0;
    while (i < e.size()) {
      if (e[i].type != EventType::On) {
        ++i;
        continue;
      }
      std::size_t j = i + 1;
      while (j < e.size() && e[j].type != EventType::Off) ++j;
      expected.emplace_back(e[i].timestamp, j < e.size() ? e[j].timestamp : 360.0);
      i = j + 1;
    }
    auto got = pair_states(e, 360);
    ASSERT_EQ(got.size(), expected.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      EXPECT_EQ(got[k].on_ts, expected[k].first);
      EXPECT_EQ(got[k].off_ts, expected[k].second);
      EXPECT_GE(got[k].duration, 0.0);
      EXPECT_DOUBLE_EQ(got[k].duration, got[k].off_ts - got[k].on_ts);
    }
  }
}

TEST(BuildGraph, ExplicitOnOffPair) {
  auto reg = reg_m1_d1_d2();
  auto g = build_graph(window_of({on("D1", 5), off("D1", 9)}), reg);
  ASSERT_EQ(g.num_items(), 2u);
  ASSERT_EQ(g.nodes.size(), 5u);
  EXPECT_EQ(g.nodes[0].event_type, EventType::On);
  EXPECT_EQ(g.nodes[1].event_type, EventType::Off);
  auto temporal = g.temporal_arcs();
  ASSERT_EQ(temporal.size(), 1u);
  EXPECT_EQ(g.arcs[temporal[0]].src, 0u);
  EXPECT_EQ(g.arcs[temporal[0]].dst, 1u);
  EXPECT_EQ(g.arcs[temporal[0]].delta_t, 4.0);
  EXPECT_TRUE(has_arc(g, 0, g.super_node(1), ArcKind::ToSuper));
  EXPECT_TRUE(has_arc(g, 1, g.super_node(1), ArcKind::ToSuper));
  EXPECT_EQ(g.arcs.size(), 3u);  // supers of M1 and D2 stay unconnected
}

TEST(BuildGraph, MixedStatesAndEvents) {
  auto reg = reg_m1_d1_d2();
  auto g = build_graph(window_of({on("M1", 0), off("M1", 4), on("D1", 6), on("M1", 10), off("M1", 12)}), reg);
  ASSERT_EQ(g.num_items(), 3u);
  EXPECT_EQ(g.nodes[0].kind, NodeKind::State);
  EXPECT_EQ(g.nodes[0].duration, 4.0);
  EXPECT_EQ(g.nodes[1].kind, NodeKind::Event);
  EXPECT_EQ(g.nodes[2].anchor_ts, 10.0);
  std::map<std::pair<std::size_t, std::size_t>, double> t;
  for (auto i : g.temporal_arcs()) t[{g.arcs[i].src, g.arcs[i].dst}] = g.arcs[i].delta_t;
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ((t[{0, 2}]), 10.0);
  EXPECT_EQ((t[{0, 1}]), 6.0);
  EXPECT_EQ((t[{1, 2}]), 4.0);
}

TEST(BuildGraph, SingleStateHasNoTemporalArcs) {
  auto reg = reg_m1_d1_d2();
  auto g = build_graph(window_of({on("M1", 0), off("M1", 4)}), reg);
  EXPECT_TRUE(g.temporal_arcs().empty());
  EXPECT_EQ(g.arcs.size(), 1u);
  EXPECT_EQ(g.nodes.size(), 4u);
}

TEST(BuildGraph, EmptyAfterPairingThrows) {
  auto reg = reg_m1_d1_d2();
  EXPECT_THROW(build_graph(window_of({off("M1", 4)}), reg), EmptyGraphError);
  EXPECT_THROW(build_graph(window_of({on("X9", 4)}), reg), DataError);
}

TEST(BuildGraph, MatchesBruteForceOracleOn1000Windows) {
  std::mt19937_64 rng(1);
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto rw = oracle::random_window(rng, 12, 4);
    const auto expected_items = oracle::oracle_items(rw.window, rw.registry);
    if (expected_items.empty()) {
      EXPECT_THROW(build_graph(rw.window, rw.registry), EmptyGraphError);
      continue;
    }
    auto g = build_graph(rw.window, rw.registry);
    auto items = oracle::items_of(g);
    ASSERT_EQ(items.size(), expected_items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      ASSERT_EQ(items[i].sensor, expected_items[i].sensor);
      ASSERT_EQ(items[i].anchor, expected_items[i].anchor);
    }
    ASSERT_EQ(oracle::temporal_arc_set(g), oracle::brute_force_arcs(items)) << "trial " << trial;
    ++checked;
  }
  EXPECT_GT(checked, 900u);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 5.0);
}

TEST(BuildGraph, StructuralInvariantsOnRandomWindows) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    auto rw = oracle::random_window(rng, 40, 6);
    if (oracle::oracle_items(rw.window, rw.registry).empty()) continue;
    auto g = build_graph(rw.window, rw.registry);
    auto r = check_graph_invariants(g);
    ASSERT_TRUE(r.ok()) << "trial " << trial;

    // Same-sensor arcs form one chain per sensor.
    std::vector<std::size_t> items_per(g.num_sensors, 0), chain_per(g.num_sensors, 0);
    for (std::size_t i = 0; i < g.num_items(); ++i) ++items_per[g.nodes[i].sensor];
    for (auto i : g.temporal_arcs()) {
      const auto& a = g.arcs[i];
      if (g.nodes[a.src].sensor == g.nodes[a.dst].sensor) ++chain_per[g.nodes[a.src].sensor];
    }
    for (std::size_t s = 0; s < g.num_sensors; ++s) {
      if (items_per[s] > 0) {
        EXPECT_EQ(chain_per[s], items_per[s] - 1);
      }
    }

    // Sparse: linear in n. A sensor with three items blocks its first->third
    // pair, so the DAG cannot be complete.
    const std::size_t n = g.num_items(), k = g.num_sensors;
    EXPECT_LE(g.temporal_arcs().size(), 2 * n * k);
    const bool triple = std::any_of(items_per.begin(), items_per.end(), [](std::size_t c) { return c >= 3; });
    if (triple) {
      EXPECT_LT(g.temporal_arcs().size(), n * (n - 1) / 2);
    }
  }
}

TEST(BuildGraph, NeverFullyConnectedWithManyItems) {
  // Alternating two sensors: only adjacent items connect.
  SensorRegistry reg({{"D1", SensorKind::Explicit, ""}, {"D2", SensorKind::Explicit, ""}});
  std::vector<SensorEvent> ev;
  for (int i = 0; i < 10; ++i) ev.push_back(on(i % 2 ? "D2" : "D1", 1.0 + i));
  auto g = build_graph(window_of(ev), reg);
  EXPECT_EQ(g.temporal_arcs().size(), 8u + 9u);
  EXPECT_LT(g.temporal_arcs().size(), 45u);
}

TEST(CheckInvariants, DetectsViolations) {
  auto reg = reg_m1_d1_d2();
  auto g = build_graph(window_of({on("D1", 5), off("D1", 9)}), reg);
  auto bad = g;
  bad.arcs.push_back({1, 0, 4.0, ArcKind::Temporal, 0.0});
  EXPECT_FALSE(check_graph_invariants(bad).acyclic);
  EXPECT_FALSE(check_graph_invariants(bad).temporal_forward);
  bad = g;
  bad.arcs.pop_back();
  EXPECT_FALSE(check_graph_invariants(bad).one_to_super_per_item);
  bad = g;
  bad.nodes.pop_back();
  EXPECT_FALSE(check_graph_invariants(bad).super_count_matches);
}

TEST(Featurize, KnownValues) {
  auto reg = reg_m1_d1_d2();
  Window w = window_of({on("D1", 0.0), off("D1", std::exp(1.0) - 1.0)});
  auto g = featurize(build_graph(w, reg));
  EXPECT_TRUE(g.featurized);
  EXPECT_EQ(g.feature_transform, "log1p_seconds");
  EXPECT_EQ(g.nodes[0].duration_feature, 0.0);
  EXPECT_NEAR(g.arcs[g.temporal_arcs()[0]].feature, 1.0, 1e-15);
}

TEST(Featurize, NegativeValuesRejected) {
  auto reg = reg_m1_d1_d2();
  auto g = build_graph(window_of({on("D1", 5), off("D1", 9)}), reg);
  g.arcs[0].delta_t = -1.0;
  EXPECT_THROW(featurize(g), DataError);
  g = build_graph(window_of({on("D1", 5), off("D1", 9)}), reg);
  g.nodes[0].duration = -0.5;
  EXPECT_THROW(featurize(g), DataError);
}

TEST(Featurize, DeterministicAndPermutationEquivariant) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto rw = oracle::random_window(rng, 12, 4);
    if (oracle::oracle_items(rw.window, rw.registry).empty()) continue;
    auto g = build_graph(rw.window, rw.registry);
    // Random node relabelling applied to nodes and arc endpoints.
    std::vector<std::size_t> perm(g.nodes.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ActivityGraph p = g;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      p.nodes[perm[i]] = g.nodes[i];
      p.nodes[perm[i]].id = perm[i];
    }
    for (auto& a : p.arcs) {
      a.src = perm[a.src];
      a.dst = perm[a.dst];
    }
    auto fg = featurize(g);
    auto fp = featurize(p);
    auto again = featurize(g);
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      EXPECT_EQ(fg.nodes[i].duration_feature, fp.nodes[perm[i]].duration_feature);
      EXPECT_EQ(fg.nodes[i].duration_feature, again.nodes[i].duration_feature);
    }
    for (std::size_t i = 0; i < g.arcs.size(); ++i) EXPECT_EQ(fg.arcs[i].feature, fp.arcs[i].feature);
  }
}
