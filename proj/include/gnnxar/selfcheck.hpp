#pragma once

// Oracle suites run by `gnnxar selfcheck` and by the acceptance binary:
// graph construction vs brute force, finite-difference gradients, importance
// rescaling and clustering vs exhaustive search, and the fridge sentence.

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gnnxar/explain.hpp"
#include "gnnxar/graph.hpp"
#include "gnnxar/model.hpp"
#include "gnnxar/narrate.hpp"
#include "gnnxar/tensor.hpp"
#include "gnnxar/testing/oracles.hpp"

namespace gnnxar {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

namespace detail {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, bool grad = true) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(s.rows * s.cols);
  for (auto& x : v) x = n(rng);
  return Tensor(s, std::move(v), grad);
}

// Entries bounded away from the leaky-relu kink.
inline Tensor away_from_zero(Shape s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.5);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(s.rows * s.cols);
  for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return Tensor(s, std::move(v), true);
}

// A random projection turns a matrix output into a scalar.
inline Tensor weighted_sum(const Tensor& x, const Tensor& w) { return sum(mul(x, w)); }

}  // namespace detail

struct GradCase {
  std::string name;
  std::function<Tensor()> f;
  std::vector<Tensor> params;
};

inline std::vector<GradCase> primitive_grad_cases(std::mt19937_64& rng) {
  using detail::random_tensor;
  using detail::weighted_sum;
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), m = random_tensor({4, 2}, rng);
  Tensor bias = random_tensor({1, 4}, rng), col = random_tensor({3, 1}, rng);
  Tensor kinky = detail::away_from_zero({3, 4}, rng);
  std::uniform_real_distribution<double> pos(0.5, 2.0);
  std::vector<double> pv(12);
  for (auto& v : pv) v = pos(rng);
  Tensor positive({3, 4}, pv, true);
  Tensor w34 = random_tensor({3, 4}, rng, false), w32 = random_tensor({3, 2}, rng, false);
  Tensor w24 = random_tensor({2, 4}, rng, false), w35 = random_tensor({3, 5}, rng, false);
  Tensor w44 = random_tensor({4, 4}, rng, false), w112 = random_tensor({1, 12}, rng, false);
  return {
      {"matmul", [=] { return weighted_sum(matmul(a, m), w32); }, {a, m}},
      {"add", [=] { return weighted_sum(add(a, b), w34); }, {a, b}},
      {"mul", [=] { return weighted_sum(mul(a, b), w34); }, {a, b}},
      {"add_bias", [=] { return weighted_sum(add_bias(a, bias), w34); }, {a, bias}},
      {"scale", [=] { return weighted_sum(scale(a, -1.7), w34); }, {a}},
      {"add_scalar", [=] { return weighted_sum(add_scalar(a, 0.3), w34); }, {a}},
      {"concat_cols", [=] { return weighted_sum(concat_cols(a, col), w35); }, {a, col}},
      {"gather_rows", [=] { return weighted_sum(gather_rows(a, {2, 0, 2, 1}), w44); }, {a}},
      {"reshape", [=] { return weighted_sum(reshape(a, {1, 12}), w112); }, {a}},
      {"scale_rows", [=] { return weighted_sum(scale_rows(a, col), w34); }, {a, col}},
      {"segment_sum", [=] { return weighted_sum(segment_sum(a, {1, 0, 1}, 2), w24); }, {a}},
      {"leaky_relu", [=] { return weighted_sum(leaky_relu(kinky, 0.01), w34); }, {kinky}},
      {"sigmoid", [=] { return weighted_sum(sigmoid(a), w34); }, {a}},
      {"log", [=] { return weighted_sum(log(positive), w34); }, {positive}},
      {"sum", [=] { return sum(a); }, {a}},
      {"mean", [=] { return mean(a); }, {a}},
      {"softmax", [=] { return weighted_sum(softmax(a), w34); }, {a}},
      {"softmax_cross_entropy", [=] { return softmax_cross_entropy(a, {3, 0, 1}); }, {a}},
  };
}

// Every primitive, the full model loss over all parameters, and the loss as a
// function of the arc mask, on `seeds` seeds.
inline CheckResult check_gradients(std::size_t seeds = 20, double tolerance = 1e-4) {
  detail::Stopwatch sw;
  CheckResult r{"gradient checks", true, "", 0.0};
  double worst = 0.0;
  std::string worst_name;
  std::size_t cases = 0;
  auto record = [&](const std::string& name, const GradCheckResult& g) {
    ++cases;
    if (!(g.max_rel_error < tolerance)) r.passed = false;
    if (!(g.max_rel_error <= worst)) {
      worst = g.max_rel_error;
      worst_name = name;
    }
  };
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    std::mt19937_64 rng(seed);
    for (auto& c : primitive_grad_cases(rng)) record(c.name, grad_check(c.f, c.params));

    testing::RandomWindow rw;
    do rw = testing::random_window(rng, 10, 4);
    while (testing::oracle_items(rw.window, rw.registry).empty());
    const auto g = featurize(build_graph(rw.window, rw.registry, 0));
    ModelConfig cfg;
    cfg.embed_dim = 4;
    cfg.hidden_dim = 5;
    cfg.num_classes = 3;
    cfg.num_sensors = rw.registry.size();
    GnnModel model = GnnModel::create(cfg, seed);
    const std::size_t target = seed % cfg.num_classes;
    std::vector<Tensor> params;
    for (Tensor* t : model.mutable_params().mutable_list()) params.push_back(*t);
    record("model loss", grad_check([&] { return model.loss(g, target); }, params));

    std::uniform_real_distribution<double> u(0.1, 0.9);
    std::vector<double> mv(g.arcs.size());
    for (auto& x : mv) x = u(rng);
    std::vector<Tensor> mask{Tensor({g.arcs.size(), 1}, mv, true)};
    const GnnModel frozen = model.frozen();
    record("model loss wrt arc mask", grad_check([&] { return frozen.loss(g, target, &mask[0]); }, mask));
  }
  std::ostringstream os;
  os << cases << " cases over " << seeds << " seeds; worst relative error " << worst << " (" << worst_name << ")";
  r.detail = os.str();
  r.seconds = sw.seconds();
  return r;
}

// build_graph against the brute-force arc rules on random windows.
inline CheckResult check_graph_oracle(std::size_t windows = 1000, std::uint64_t seed = 1) {
  detail::Stopwatch sw;
  CheckResult r{"graph construction oracle", true, "", 0.0};
  std::mt19937_64 rng(seed);
  std::size_t built = 0, empty = 0, mismatches = 0, violations = 0;
  for (std::size_t trial = 0; trial < windows; ++trial) {
    auto rw = testing::random_window(rng, 12, 4);
    const auto expected_items = testing::oracle_items(rw.window, rw.registry);
    if (expected_items.empty()) {
      ++empty;
      try {
        build_graph(rw.window, rw.registry);
        ++mismatches;
      } catch (const EmptyGraphError&) {
      }
      continue;
    }
    const auto g = build_graph(rw.window, rw.registry);
    ++built;
    const auto items = testing::items_of(g);
    bool same = items.size() == expected_items.size();
    for (std::size_t i = 0; same && i < items.size(); ++i)
      same = items[i].sensor == expected_items[i].sensor && items[i].anchor == expected_items[i].anchor;
    if (!same || testing::temporal_arc_set(g) != testing::brute_force_arcs(items)) ++mismatches;
    if (!check_graph_invariants(g).ok()) ++violations;
  }
  r.seconds = sw.seconds();
  r.passed = mismatches == 0 && violations == 0 && r.seconds < 5.0;
  std::ostringstream os;
  os << built << " graphs + " << empty << " empty windows, " << mismatches << " arc-set mismatches, " << violations
     << " invariant violations, " << r.seconds << " s";
  r.detail = os.str();
  return r;
}

// Rescale means and two-means clustering against exhaustive search.
inline CheckResult check_rescale_and_cluster(std::size_t sets = 1000, std::uint64_t seed = 44) {
  detail::Stopwatch sw;
  CheckResult r{"rescale and cluster oracle", true, "", 0.0};
  std::mt19937_64 rng(seed);
  std::size_t mean_fail = 0, split_fail = 0, order_fail = 0, rescaled = 0;
  double worst_gap = 0.0;
  std::uniform_real_distribution<double> u01(0.001, 0.999);
  for (std::size_t trial = 0; trial < sets; ++trial) {
    testing::RandomWindow rw;
    do rw = testing::random_window(rng, 12, 4);
    while (testing::oracle_items(rw.window, rw.registry).empty());
    const auto g = build_graph(rw.window, rw.registry);
    std::vector<double> mask(g.arcs.size());
    for (auto& x : mask) x = u01(rng);
    const auto s = derive_importance(g, mask);
    if (!s.arc_importance.empty() && !s.rescale_skipped) {
      ++rescaled;
      double nm = 0.0, am = 0.0;
      for (auto [id, v] : s.node_importance) nm += v;
      for (auto [id, v] : s.arc_importance) am += v;
      nm /= static_cast<double>(s.node_importance.size());
      am /= static_cast<double>(s.arc_importance.size());
      worst_gap = std::max(worst_gap, std::abs(nm - am));
      if (!(std::abs(nm - am) < 1e-9)) ++mean_fail;
      for (std::size_t i = 0; i + 1 < s.arc_importance.size(); ++i) {
        const bool before = mask[s.arc_importance[i].first] < mask[s.arc_importance[i + 1].first];
        const bool after = s.arc_importance[i].second < s.arc_importance[i + 1].second;
        if (before != after) ++order_fail;
      }
    }
    std::vector<double> pooled;
    for (auto [id, v] : s.node_importance) pooled.push_back(v);
    for (auto [id, v] : s.arc_importance) pooled.push_back(v);
    // Every third set is snapped to a coarse grid so ties are exercised.
    if (trial % 3 == 0)
      for (auto& v : pooled) v = std::round(v * 5.0) / 5.0;
    const auto expected = testing::exhaustive_split_boundary(pooled);
    const auto got = two_means_1d(pooled);
    if (expected ? (got.degenerate || got.boundary != *expected) : !got.degenerate) ++split_fail;
  }
  r.passed = mean_fail == 0 && split_fail == 0 && order_fail == 0;
  std::ostringstream os;
  os << sets << " score sets (" << rescaled << " rescaled): max |mean node - mean arc| " << worst_gap << ", "
     << split_fail << " split mismatches, " << order_fail << " ordering changes";
  r.detail = os.str();
  r.seconds = sw.seconds();
  return r;
}

// The constructed kitchen example: a motion state near the fridge followed by
// two fridge-door openings.
inline CheckResult check_fridge_sentence(const std::string& resident = "Bob", const std::string& pronoun = "he") {
  detail::Stopwatch sw;
  CheckResult r{"fridge sentence", false, "", 0.0};
  SensorRegistry reg({{"M_FRIDGE", SensorKind::AutoOff, "the fridge"}, {"D_FRIDGE", SensorKind::Explicit, "the fridge"}});
  Window w;
  w.start_ts = 0.0;
  w.end_ts = 360.0;
  w.events = {{"M_FRIDGE", EventType::On, 10.0, {}}, {"M_FRIDGE", EventType::Off, 15.0, {}},
              {"D_FRIDGE", EventType::On, 20.0, {}}, {"D_FRIDGE", EventType::On, 40.0, {}}};
  const auto g = build_graph(w, reg);
  ExplanationSubgraph sub;
  for (auto a : g.temporal_arcs()) sub.arcs.emplace_back(a, 1.0);
  for (std::size_t i = 0; i < g.num_items(); ++i) sub.nodes.emplace_back(i, 1.0);
  auto phrases = PhraseMap::from_registry(reg, {"preparing a meal"});
  phrases.resident = resident;
  phrases.pronoun = pronoun;
  const auto path = longest_path(sub, g);
  const auto e = render(path, g, reg, phrases, 0);
  const std::string expected = "I predicted preparing a meal mainly due to the following observations: " + resident +
                               " was near the fridge, then " + pronoun + " opened the fridge multiple times";
  r.passed = e.text == expected;
  r.detail = r.passed ? "\"" + e.text + "\"" : "got \"" + e.text + "\"";
  r.seconds = sw.seconds();
  return r;
}

}  // namespace gnnxar
