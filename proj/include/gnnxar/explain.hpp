#pragma once

// Arc-mask explainer. Each run optimizes one sigmoid-gated weight per arc
// (temporal and to-super alike) so that the masked model keeps predicting the
// target class while the mask stays small and close to binary. Runs are
// averaged; node importance is read from each node's to-super arc, arc
// importance from temporal arcs. Arc scores are rescaled to the node mean and
// the pooled scores are split into two clusters by exact 1-D 2-means.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gnnxar/adam.hpp"
#include "gnnxar/error.hpp"
#include "gnnxar/graph.hpp"
#include "gnnxar/model.hpp"
#include "gnnxar/tensor.hpp"

namespace gnnxar {

enum class EntropyReduction { Mean, Sum };

struct ExplainConfig {
  std::size_t runs = 10;
  std::size_t epochs = 100;
  double mask_lr = 0.01;
  double size_coef = 0.005;
  double entropy_coef = 1.0;
  EntropyReduction entropy_reduction = EntropyReduction::Mean;
  std::uint64_t base_seed = 0;
};

struct MaskRun {
  std::vector<double> logits;
  std::vector<double> mask;
  double final_loss = 0.0;
  std::uint64_t seed = 0;
};

// Loss for one mask: -log p(target) + size_coef * sum(m) + entropy_coef * H(m),
// with H the elementwise binary entropy reduced by mean or sum.
inline Tensor mask_objective(const GnnModel& model, const ActivityGraph& g, std::size_t target,
                             const Tensor& logits, const ExplainConfig& cfg) {
  const Tensor m = sigmoid(logits);
  constexpr double eps = 1e-15;
  const Tensor one_minus = add_scalar(scale(m, -1.0), 1.0);
  const Tensor ent = scale(add(mul(m, log(add_scalar(m, eps))), mul(one_minus, log(add_scalar(one_minus, eps)))), -1.0);
  const Tensor ent_term = cfg.entropy_reduction == EntropyReduction::Mean ? mean(ent) : sum(ent);
  return add(add(model.loss(g, target, &m), scale(sum(m), cfg.size_coef)), scale(ent_term, cfg.entropy_coef));
}

inline GnnModel frozen_view(const GnnModel& model) {
  return model.params().sensor_embedding.requires_grad() ? model.frozen() : model;
}

// Logits start at N(0, sqrt(2) * sqrt(2 / (2 * num_nodes))) as in the
// reference explainer. Model parameters are never updated.
inline MaskRun optimize_mask(const GnnModel& trained, const ActivityGraph& g, std::size_t target,
                             std::uint64_t seed, const ExplainConfig& cfg) {
  const GnnModel model = frozen_view(trained);
  const std::size_t arcs = g.arcs.size();
  std::mt19937_64 rng(seed);
  const double std_dev = std::sqrt(2.0) * std::sqrt(2.0 / (2.0 * static_cast<double>(g.nodes.size())));
  std::normal_distribution<double> init(0.0, std_dev);
  std::vector<double> v(arcs);
  for (double& x : v) x = init(rng);
  Tensor logits = Tensor::column(std::move(v), true);

  Adam opt({{"arc_mask", logits}}, AdamConfig{cfg.mask_lr});
  MaskRun run;
  run.seed = seed;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.zero_grad();
    Tensor loss = mask_objective(model, g, target, logits, cfg);
    if (!std::isfinite(loss.item())) {
      throw NumericError("non-finite mask loss at epoch " + std::to_string(epoch) + " (seed " +
                         std::to_string(seed) + ")");
    }
    loss.backward();
    opt.step();
  }
  run.final_loss = mask_objective(model, g, target, logits, cfg).item();
  run.logits.assign(logits.values().begin(), logits.values().end());
  const Tensor m = sigmoid(logits.detach());
  run.mask.assign(m.values().begin(), m.values().end());
  return run;
}

inline std::vector<double> average_masks(std::span<const MaskRun> runs) {
  if (runs.empty()) throw DataError("need at least one mask run");
  const std::size_t n = runs.front().mask.size();
  std::vector<double> out(n, 0.0);
  for (const auto& r : runs) {
    if (r.mask.size() != n) {
      throw DataError("mask runs disagree on arc count (" + std::to_string(n) + " vs " +
                      std::to_string(r.mask.size()) + ")");
    }
    for (std::size_t i = 0; i < n; ++i) out[i] += r.mask[i];
  }
  for (double& x : out) x /= static_cast<double>(runs.size());
  return out;
}

struct ImportanceScores {
  std::vector<std::pair<std::size_t, double>> node_importance;  // node id -> score
  std::vector<std::pair<std::size_t, double>> arc_importance;   // arc index -> score (temporal only)
  double rescale_factor = 1.0;
  bool rescale_skipped = false;
};

inline ImportanceScores derive_importance(const ActivityGraph& g, std::span<const double> mask) {
  if (mask.size() != g.arcs.size()) throw DataError("mask length does not match arc count");
  ImportanceScores s;
  const auto to_super = g.to_super_arc_of_node();
  for (const auto& n : g.nodes) {
    if (n.kind == NodeKind::Super) continue;
    if (!to_super[n.id]) throw DataError("node " + std::to_string(n.id) + " has no to-super arc");
    s.node_importance.emplace_back(n.id, mask[*to_super[n.id]]);
  }
  for (std::size_t a : g.temporal_arcs()) s.arc_importance.emplace_back(a, mask[a]);
  if (s.arc_importance.empty() || s.node_importance.empty()) return s;

  double node_mean = 0.0, arc_mean = 0.0;
  for (const auto& [id, v] : s.node_importance) node_mean += v;
  for (const auto& [id, v] : s.arc_importance) arc_mean += v;
  node_mean /= static_cast<double>(s.node_importance.size());
  arc_mean /= static_cast<double>(s.arc_importance.size());
  if (arc_mean == 0.0) {
    s.rescale_skipped = node_mean != 0.0;
    return s;
  }
  s.rescale_factor = node_mean / arc_mean;
  for (auto& [id, v] : s.arc_importance) v *= s.rescale_factor;
  return s;
}

struct TwoMeansSplit {
  double boundary = 0.0;  // smallest value of the upper cluster
  bool degenerate = false;
};

// Exact 1-D 2-means. Sorts the values and scans every cut between distinct
// neighbours. Costs within a relative 1e-12 of each other count as tied and
// the lowest boundary wins, so exact ties do not depend on rounding.
inline TwoMeansSplit two_means_1d(std::span<const double> values) {
  if (values.empty()) throw DataError("cannot cluster an empty score set");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  TwoMeansSplit out;
  if (v.front() == v.back()) {
    out.boundary = v.front();
    out.degenerate = true;
    return out;
  }
  const std::size_t n = v.size();
  // Two-pass sum of squares; prefix-sum shortcuts lose precision on tight
  // clusters.
  auto sse = [&](std::size_t lo, std::size_t hi) {
    double m = 0.0;
    for (std::size_t i = lo; i < hi; ++i) m += v[i];
    m /= static_cast<double>(hi - lo);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += (v[i] - m) * (v[i] - m);
    return s;
  };
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < n; ++k) {
    if (v[k - 1] == v[k]) continue;
    const double cost = sse(0, k) + sse(k, n);
    if (best == std::numeric_limits<double>::infinity() || cost < best - 1e-12 * std::max(1.0, best)) {
      best = cost;
      out.boundary = v[k];
    }
  }
  return out;
}

struct ExplanationSubgraph {
  std::vector<std::pair<std::size_t, double>> nodes;  // V* with scores
  std::vector<std::pair<std::size_t, double>> arcs;   // A* (arc index) with scores
  std::size_t predicted_class = 0;
  double cluster_boundary = 0.0;
  bool degenerate_cluster = false;
  bool node_fallback = false;
  bool arc_fallback = false;
};

inline ExplanationSubgraph cluster_and_extract(const ImportanceScores& scores) {
  if (scores.node_importance.empty()) throw DataError("no node scores to cluster");
  std::vector<double> pooled;
  for (const auto& [id, v] : scores.node_importance) pooled.push_back(v);
  for (const auto& [id, v] : scores.arc_importance) pooled.push_back(v);
  const auto split = two_means_1d(pooled);

  ExplanationSubgraph out;
  out.cluster_boundary = split.boundary;
  out.degenerate_cluster = split.degenerate;
  for (const auto& p : scores.node_importance)
    if (p.second >= split.boundary) out.nodes.push_back(p);
  for (const auto& p : scores.arc_importance)
    if (p.second >= split.boundary) out.arcs.push_back(p);

  auto by_score = [](const auto& a, const auto& b) { return a.second < b.second; };
  if (out.nodes.empty()) {
    out.nodes.push_back(*std::max_element(scores.node_importance.begin(), scores.node_importance.end(), by_score));
    out.node_fallback = true;
  }
  if (out.arcs.empty() && !scores.arc_importance.empty()) {
    out.arcs.push_back(*std::max_element(scores.arc_importance.begin(), scores.arc_importance.end(), by_score));
    out.arc_fallback = true;
  }
  return out;
}

struct ExplanationResult {
  ExplanationSubgraph subgraph;
  ImportanceScores scores;
  std::vector<double> averaged_mask;
  std::vector<std::uint64_t> seeds;
};

inline std::uint64_t run_seed(std::uint64_t base, std::size_t run) {
  // splitmix64 of (base, run) so neighbouring base seeds do not share runs.
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (run + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Explains the model's own prediction for g.
inline ExplanationResult explain(const GnnModel& trained, const ActivityGraph& g, const ExplainConfig& cfg) {
  if (cfg.runs < 1) throw DataError("explainer needs at least one run");
  const GnnModel model = frozen_view(trained);
  const std::size_t target = model.forward(g).predicted;
  std::vector<MaskRun> runs;
  ExplanationResult out;
  for (std::size_t r = 0; r < cfg.runs; ++r) {
    const std::uint64_t seed = run_seed(cfg.base_seed, r);
    out.seeds.push_back(seed);
    runs.push_back(optimize_mask(model, g, target, seed, cfg));
  }
  out.averaged_mask = average_masks(runs);
  out.scores = derive_importance(g, out.averaged_mask);
  out.subgraph = cluster_and_extract(out.scores);
  out.subgraph.predicted_class = target;
  return out;
}

// Probability of `target` with the given arcs zeroed out (all others at 1).
inline double ablated_probability(const GnnModel& model, const ActivityGraph& g, std::size_t target,
                                  std::span<const std::size_t> zeroed_arcs) {
  std::vector<double> m(g.arcs.size(), 1.0);
  for (std::size_t a : zeroed_arcs) m.at(a) = 0.0;
  const Tensor mask = Tensor::column(std::move(m));
  return model.forward(g, &mask).probabilities.at(target);
}

}  // namespace gnnxar
