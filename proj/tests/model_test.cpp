#include "gnnxar/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "gnnxar/testing/oracles.hpp"

using namespace gnnxar;
namespace oracle = gnnxar::testing;

namespace {

GraphNode item(std::size_t id, std::size_t sensor, EventType t) {
  GraphNode n;
  n.id = id;
  n.kind = NodeKind::Event;
  n.sensor = sensor;
  n.event_type = t;
  n.anchor_ts = static_cast<double>(id);
  return n;
}

GraphNode super(std::size_t id, std::size_t sensor) {
  GraphNode n;
  n.id = id;
  n.kind = NodeKind::Super;
  n.sensor = sensor;
  return n;
}

// Two items of sensor 0 and its super node, wired as a chain 0 -> 1 -> 2.
ActivityGraph chain_graph() {
  ActivityGraph g;
  g.num_sensors = 1;
  g.nodes = {item(0, 0, EventType::On), item(1, 0, EventType::Off), super(2, 0)};
  g.arcs = {{0, 1, 1.0, ArcKind::Temporal, 1.0}, {1, 2, 0.0, ArcKind::ToSuper, 0.0}};
  g.label = 0;
  return g;
}

ModelConfig scalar_config() {
  ModelConfig c;
  c.embed_dim = 1;
  c.hidden_dim = 1;
  c.num_mp_rounds = 1;
  c.num_classes = 2;
  c.num_sensors = 1;
  return c;
}

ModelParams hand_params() {
  ModelParams p;
  p.sensor_embedding = Tensor({1, 1}, {1.0});
  p.kind_embedding = Tensor({4, 1}, {0.5, -0.5, 0.0, 2.0});
  p.input_weight = Tensor({3, 1}, {1.0, 1.0, 1.0});
  p.input_bias = Tensor({1, 1}, {0.0});
  p.message_weight = Tensor({2, 1}, {2.0, 1.0});
  p.message_bias = Tensor({1, 1}, {0.1});
  p.l1_weight = Tensor({1, 1}, {0.5});
  p.l1_bias = Tensor({1, 1}, {-1.0});
  p.l2_weight = Tensor({1, 2}, {1.0, -1.0});
  p.l2_bias = Tensor({1, 2}, {0.0, 0.0});
  return p;
}

struct Fixture {
  SensorRegistry registry;
  ActivityGraph graph;
};

Fixture random_graph(std::mt19937_64& rng, std::size_t max_events = 12) {
  for (;;) {
    auto rw = oracle::random_window(rng, max_events, 4);
    if (oracle::oracle_items(rw.window, rw.registry).empty()) continue;
    auto g = featurize(build_graph(rw.window, rw.registry, 0));
    return {rw.registry, g};
  }
}

ModelConfig small_config(std::size_t sensors) {
  ModelConfig c;
  c.embed_dim = 4;
  c.hidden_dim = 5;
  c.num_classes = 3;
  c.num_sensors = sensors;
  return c;
}

}  // namespace

TEST(Model, HandComputedChainPropagation) {
  GnnModel m(scalar_config(), hand_params());
  auto g = chain_graph();
  Tensor h0 = m.init_node_states(g);
  // Initial states: sensor 1 + kind {0.5, -0.5, 2} + duration 0.
  EXPECT_DOUBLE_EQ(h0.at(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(h0.at(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(h0.at(2, 0), 3.0);
  // Phase 1: m01 = 2*1.5 + 1*1 + 0.1 = 4.1, m12 = 2*0.5 + 0 + 0.1 = 1.1.
  // Phase 2 adds the phase-1 states of the sources: 1.5 and 4.6.
  Tensor h = m.message_pass(g, h0);
  EXPECT_NEAR(h.at(0, 0), 1.5, 1e-15);
  EXPECT_NEAR(h.at(1, 0), 6.1, 1e-14);
  EXPECT_NEAR(h.at(2, 0), 8.7, 1e-14);
  // Head: 0.5*8.7 - 1 = 3.35 -> scores {3.35, -3.35} -> LeakyReLU.
  const double s0 = 3.35, s1 = -0.0335;
  const double z = std::exp(s0) + std::exp(s1);
  auto p = m.forward(g);
  EXPECT_NEAR(p.probabilities[0], std::exp(s0) / z, 1e-13);
  EXPECT_NEAR(p.probabilities[1], std::exp(s1) / z, 1e-13);
  EXPECT_EQ(p.predicted, 0u);
}

TEST(Model, ZeroEmbeddingsLeaveOnlyDurationPathway) {
  std::mt19937_64 rng(4);
  auto fx = random_graph(rng);
  auto cfg = small_config(fx.registry.size());
  auto params = ModelParams::init(cfg, 1);
  params.sensor_embedding = Tensor::zeros(params.sensor_embedding.shape());
  params.kind_embedding = Tensor::zeros(params.kind_embedding.shape());
  GnnModel m(cfg, params);
  Tensor h = m.init_node_states(fx.graph);
  const std::size_t e = cfg.embed_dim;
  for (std::size_t i = 0; i < fx.graph.nodes.size(); ++i) {
    for (std::size_t c = 0; c < cfg.node_dim(); ++c) {
      const double expected = fx.graph.nodes[i].duration_feature * params.input_weight.at(2 * e, c) +
                              params.input_bias.at(0, c);
      EXPECT_NEAR(h.at(i, c), expected, 1e-14);
    }
  }
}

TEST(Model, IdenticalNodesGetIdenticalStatesAndKindsDiffer) {
  SensorRegistry reg({{"M1", SensorKind::AutoOff, ""}, {"D1", SensorKind::Explicit, ""}});
  Window w;
  w.end_ts = 360;
  w.events = {{"D1", EventType::On, 1, {}}, {"D1", EventType::On, 5, {}}, {"M1", EventType::On, 8, {}},
              {"M1", EventType::Off, 8, {}}};
  auto g = featurize(build_graph(w, reg));
  GnnModel m = GnnModel::create(small_config(2), 3);
  Tensor h = m.init_node_states(g);
  // Nodes 0 and 1: same sensor, kind, duration.
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(h.at(0, c), h.at(1, c));
  // A zero-length state of M1 differs from its super node only by kind.
  bool differs = false;
  for (std::size_t c = 0; c < 4; ++c) differs |= h.at(2, c) != h.at(g.super_node(0), c);
  EXPECT_TRUE(differs);
}

TEST(Model, ZeroArcGraphLeavesStatesUnchanged) {
  auto g = chain_graph();
  g.arcs.clear();
  GnnModel m(scalar_config(), hand_params());
  Tensor h0 = m.init_node_states(g);
  Tensor h = m.message_pass(g, h0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(h.at(i, 0), h0.at(i, 0));
}

TEST(Model, MaskAllZerosEqualsNoArcsAndAllOnesEqualsNoMask) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto fx = random_graph(rng);
    GnnModel m = GnnModel::create(small_config(fx.registry.size()), static_cast<std::uint64_t>(trial));
    const std::size_t a = fx.graph.arcs.size();
    Tensor ones({a, 1}, std::vector<double>(a, 1.0));
    Tensor zeros = Tensor::zeros({a, 1});
    auto plain = m.forward(fx.graph);
    auto masked = m.forward(fx.graph, &ones);
    EXPECT_EQ(plain.probabilities, masked.probabilities);

    auto bare = fx.graph;
    bare.arcs.clear();
    auto none = m.forward(bare);
    auto zeroed = m.forward(fx.graph, &zeros);
    for (std::size_t c = 0; c < none.probabilities.size(); ++c)
      EXPECT_NEAR(none.probabilities[c], zeroed.probabilities[c], 1e-15);
  }
}

TEST(Model, OutputIsADistribution) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    auto fx = random_graph(rng);
    GnnModel m = GnnModel::create(small_config(fx.registry.size()), 11);
    auto p = m.forward(fx.graph);
    double s = 0.0;
    for (double v : p.probabilities) {
      EXPECT_GT(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Model, InvariantToNodeReindexingAndArcOrder) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto fx = random_graph(rng);
    const auto& g = fx.graph;
    GnnModel m = GnnModel::create(small_config(fx.registry.size()), 12);
    const std::size_t n = g.nodes.size();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ActivityGraph p = g;
    for (std::size_t i = 0; i < n; ++i) {
      p.nodes[perm[i]] = g.nodes[i];
      p.nodes[perm[i]].id = perm[i];
    }
    for (auto& a : p.arcs) {
      a.src = perm[a.src];
      a.dst = perm[a.dst];
    }
    std::shuffle(p.arcs.begin(), p.arcs.end(), rng);
    auto x = m.forward(g), y = m.forward(p);
    for (std::size_t c = 0; c < x.probabilities.size(); ++c)
      EXPECT_NEAR(x.probabilities[c], y.probabilities[c], 1e-9);
  }
}

TEST(Model, IdleSensorSuperNodeKeepsInitialState) {
  SensorRegistry reg({{"D1", SensorKind::Explicit, ""}, {"D2", SensorKind::Explicit, ""}});
  Window w;
  w.end_ts = 360;
  w.events = {{"D1", EventType::On, 1, {}}, {"D1", EventType::Off, 5, {}}};
  auto g = featurize(build_graph(w, reg));
  GnnModel m = GnnModel::create(small_config(2), 3);
  Tensor h0 = m.init_node_states(g);
  Tensor h = m.message_pass(g, h0);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(h.at(g.super_node(1), c), h0.at(g.super_node(1), c));
}

TEST(Model, ErrorsOnBadInputs) {
  GnnModel m(scalar_config(), hand_params());
  auto g = chain_graph();
  Tensor wrong = Tensor::zeros({3, 1});
  EXPECT_THROW(m.forward(g, &wrong), ShapeError);
  auto bad = g;
  bad.nodes[0].sensor = 4;
  EXPECT_THROW(m.forward(bad), DataError);
  auto nosuper = g;
  nosuper.nodes[2].kind = NodeKind::Event;
  nosuper.nodes[2].event_type = EventType::On;
  EXPECT_THROW(m.forward(nosuper), DataError);
  auto cfg = scalar_config();
  cfg.num_mp_rounds = 0;
  EXPECT_THROW(GnnModel(cfg, hand_params()), DataError);
  auto params = hand_params();
  params.l2_weight = Tensor({1, 3}, {1, 2, 3});
  EXPECT_THROW(GnnModel(scalar_config(), params), ShapeError);
}

TEST(Model, Deterministic) {
  std::mt19937_64 rng(8);
  auto fx = random_graph(rng);
  auto a = GnnModel::create(small_config(fx.registry.size()), 99).forward(fx.graph);
  auto b = GnnModel::create(small_config(fx.registry.size()), 99).forward(fx.graph);
  EXPECT_EQ(a.probabilities, b.probabilities);
}

// Finite differences through the whole forward + loss, every parameter.
TEST(Model, FullLossPassesGradCheck) {
  std::mt19937_64 rng(9);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto fx = random_graph(rng, 8);
    auto cfg = small_config(fx.registry.size());
    GnnModel m = GnnModel::create(cfg, seed);
    std::vector<Tensor> params;
    for (Tensor* t : m.mutable_params().mutable_list()) params.push_back(*t);
    auto f = [&] { return m.loss(fx.graph, seed % cfg.num_classes); };
    auto r = grad_check(f, params);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed << " worst " << r.worst_param;
    EXPECT_GT(r.checked, 100u);
  }
}

TEST(Model, FrozenCopyDoesNotAccumulateGradients) {
  GnnModel m(scalar_config(), hand_params().clone(true));
  GnnModel f = m.frozen();
  auto g = chain_graph();
  Tensor mask({2, 1}, {0.5, 0.5}, true);
  f.loss(g, 0, &mask).backward();
  EXPECT_NE(mask.grad()[0], 0.0);
  for (const auto& p : m.named_params())
    for (double v : p.tensor.grad()) EXPECT_EQ(v, 0.0);
}
