#pragma once

// Graph classifier: input projection of [sensor emb ; kind emb ; duration],
// rounds of two-phase message passing, super-node concatenation pooling and
// a two-layer LeakyReLU head followed by softmax.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gnnxar/adam.hpp"
#include "gnnxar/error.hpp"
#include "gnnxar/graph.hpp"
#include "gnnxar/tensor.hpp"

namespace gnnxar {

struct ModelConfig {
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t num_mp_rounds = 2;
  std::size_t num_classes = 0;
  std::size_t num_sensors = 0;
  double leaky_slope = 0.01;

  std::size_t node_dim() const { return embed_dim; }

  void validate() const {
    if (embed_dim < 1 || hidden_dim < 1 || num_classes < 1 || num_sensors < 1) {
      throw DataError("model dimensions must all be >= 1");
    }
    if (num_mp_rounds < 1) throw DataError("num_mp_rounds must be >= 1");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ModelParams {
  Tensor sensor_embedding;  // num_sensors x embed
  Tensor kind_embedding;    // kNodeCategories x embed
  Tensor input_weight;      // (2*embed + 1) x node_dim
  Tensor input_bias;        // 1 x node_dim
  Tensor message_weight;    // (node_dim + 1) x node_dim
  Tensor message_bias;      // 1 x node_dim
  Tensor l1_weight;         // (num_sensors*node_dim) x hidden
  Tensor l1_bias;           // 1 x hidden
  Tensor l2_weight;         // hidden x num_classes
  Tensor l2_bias;           // 1 x num_classes

  std::vector<NamedTensor> named() const {
    return {{"sensor_embedding", sensor_embedding}, {"kind_embedding", kind_embedding},
            {"input_weight", input_weight},         {"input_bias", input_bias},
            {"message_weight", message_weight},     {"message_bias", message_bias},
            {"l1_weight", l1_weight},               {"l1_bias", l1_bias},
            {"l2_weight", l2_weight},               {"l2_bias", l2_bias}};
  }

  std::vector<Tensor*> mutable_list() {
    return {&sensor_embedding, &kind_embedding, &input_weight, &input_bias, &message_weight,
            &message_bias,     &l1_weight,      &l1_bias,      &l2_weight,  &l2_bias};
  }

  // Deep copy; the clone shares no storage with this.
  ModelParams clone(bool requires_grad) const {
    ModelParams out = *this;
    for (Tensor* t : out.mutable_list()) *t = t->detach(requires_grad);
    return out;
  }

  // Embeddings ~ N(0, 1); linear layers ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    auto normal = [&](Shape s) {
      std::normal_distribution<double> d(0.0, 1.0);
      std::vector<double> v(s.size());
      for (double& x : v) x = d(rng);
      return Tensor(s, std::move(v), true);
    };
    auto uniform = [&](Shape s, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> d(-bound, bound);
      std::vector<double> v(s.size());
      for (double& x : v) x = d(rng);
      return Tensor(s, std::move(v), true);
    };
    const std::size_t e = cfg.embed_dim, d = cfg.node_dim(), h = cfg.hidden_dim;
    const std::size_t in = 2 * e + 1, msg_in = d + 1, pooled = cfg.num_sensors * d;
    ModelParams p;
    p.sensor_embedding = normal({cfg.num_sensors, e});
    p.kind_embedding = normal({kNodeCategories, e});
    p.input_weight = uniform({in, d}, in);
    p.input_bias = uniform({1, d}, in);
    p.message_weight = uniform({msg_in, d}, msg_in);
    p.message_bias = uniform({1, d}, msg_in);
    p.l1_weight = uniform({pooled, h}, pooled);
    p.l1_bias = uniform({1, h}, pooled);
    p.l2_weight = uniform({h, cfg.num_classes}, h);
    p.l2_bias = uniform({1, cfg.num_classes}, h);
    return p;
  }

  void check_shapes(const ModelConfig& cfg) const {
    const std::size_t e = cfg.embed_dim, d = cfg.node_dim(), h = cfg.hidden_dim;
    const std::vector<std::pair<const Tensor*, Shape>> want = {
        {&sensor_embedding, {cfg.num_sensors, e}}, {&kind_embedding, {kNodeCategories, e}},
        {&input_weight, {2 * e + 1, d}},           {&input_bias, {1, d}},
        {&message_weight, {d + 1, d}},             {&message_bias, {1, d}},
        {&l1_weight, {cfg.num_sensors * d, h}},    {&l1_bias, {1, h}},
        {&l2_weight, {h, cfg.num_classes}},        {&l2_bias, {1, cfg.num_classes}}};
    auto names = named();
    for (std::size_t i = 0; i < want.size(); ++i) {
      if (!want[i].first->defined() || want[i].first->shape() != want[i].second) {
        throw ShapeError("parameter '" + names[i].name + "' has shape " +
                         (want[i].first->defined() ? to_string(want[i].first->shape()) : "(none)") +
                         ", expected " + to_string(want[i].second));
      }
    }
  }
};

struct Prediction {
  std::vector<double> probabilities;
  std::size_t predicted = 0;
};

class GnnModel {
 public:
  GnnModel(ModelConfig cfg, ModelParams params) : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    params_.check_shapes(cfg_);
  }

  static GnnModel create(const ModelConfig& cfg, std::uint64_t seed) {
    return GnnModel(cfg, ModelParams::init(cfg, seed));
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  const ModelParams& params() const noexcept { return params_; }
  ModelParams& mutable_params() noexcept { return params_; }
  std::vector<NamedTensor> named_params() const { return params_.named(); }

  // Copy with detached parameters that never accumulate gradients; used by
  // the explainer so concurrent mask optimizations never touch shared grads.
  GnnModel frozen() const { return GnnModel(cfg_, params_.clone(false)); }

  Tensor init_node_states(const ActivityGraph& g) const {
    std::vector<std::size_t> sensors(g.nodes.size()), kinds(g.nodes.size());
    std::vector<double> durations(g.nodes.size());
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      const auto& n = g.nodes[i];
      if (n.sensor >= cfg_.num_sensors) {
        throw DataError("node " + std::to_string(i) + " sensor index " + std::to_string(n.sensor) +
                        " outside registry of " + std::to_string(cfg_.num_sensors));
      }
      sensors[i] = n.sensor;
      kinds[i] = static_cast<std::size_t>(n.category());
      durations[i] = n.duration_feature;
    }
    Tensor x = concat_cols(concat_cols(embedding_lookup(params_.sensor_embedding, std::move(sensors)),
                                       embedding_lookup(params_.kind_embedding, std::move(kinds))),
                           Tensor::column(std::move(durations)));
    return add_bias(matmul(x, params_.input_weight), params_.input_bias);
  }

  // Phase 1: h_j += sum_{i->j} m_ij * (W [h_i ; e_ij] + b).
  // Phase 2: h_j += sum_{i->j} m_ij * h_i.
  // Repeated num_mp_rounds times with shared weights.
  Tensor message_pass(const ActivityGraph& g, Tensor states, const Tensor* arc_mask = nullptr) const {
    const std::size_t arcs = g.arcs.size();
    if (arc_mask && (arc_mask->rows() != arcs || arc_mask->cols() != 1)) {
      throw ShapeError("arc mask shape " + to_string(arc_mask->shape()) + " does not match " +
                       std::to_string(arcs) + " arcs");
    }
    if (arcs == 0) return states;
    std::vector<std::size_t> src(arcs), dst(arcs);
    std::vector<double> feat(arcs);
    for (std::size_t a = 0; a < arcs; ++a) {
      src[a] = g.arcs[a].src;
      dst[a] = g.arcs[a].dst;
      feat[a] = g.arcs[a].feature;
    }
    const Tensor arc_features = Tensor::column(std::move(feat));
    const std::size_t n = g.nodes.size();
    for (std::size_t r = 0; r < cfg_.num_mp_rounds; ++r) {
      Tensor msg = add_bias(matmul(concat_cols(gather_rows(states, src), arc_features), params_.message_weight),
                            params_.message_bias);
      if (arc_mask) msg = scale_rows(msg, *arc_mask);
      states = add(states, segment_sum(msg, dst, n));

      Tensor spread = gather_rows(states, src);
      if (arc_mask) spread = scale_rows(spread, *arc_mask);
      states = add(states, segment_sum(spread, dst, n));
    }
    return states;
  }

  // Pre-softmax class scores: concat(super states) -> L1 -> LReLU -> L2 -> LReLU.
  Tensor class_scores(const ActivityGraph& g, const Tensor& states) const {
    std::vector<std::size_t> supers;
    supers.reserve(cfg_.num_sensors);
    for (std::size_t s = 0; s < cfg_.num_sensors; ++s) {
      std::optional<std::size_t> found;
      if (g.num_sensors == cfg_.num_sensors && g.super_node(s) < g.nodes.size() &&
          g.nodes[g.super_node(s)].kind == NodeKind::Super && g.nodes[g.super_node(s)].sensor == s) {
        found = g.super_node(s);
      } else {
        for (const auto& nd : g.nodes)
          if (nd.kind == NodeKind::Super && nd.sensor == s) found = nd.id;
      }
      if (!found) throw DataError("graph is missing the super node of sensor " + std::to_string(s));
      supers.push_back(*found);
    }
    const std::size_t d = cfg_.node_dim();
    Tensor pooled = reshape(gather_rows(states, std::move(supers)), {1, cfg_.num_sensors * d});
    Tensor h = leaky_relu(add_bias(matmul(pooled, params_.l1_weight), params_.l1_bias), cfg_.leaky_slope);
    return leaky_relu(add_bias(matmul(h, params_.l2_weight), params_.l2_bias), cfg_.leaky_slope);
  }

  Tensor pool_and_classify(const ActivityGraph& g, const Tensor& states) const {
    return softmax(class_scores(g, states));
  }

  Tensor scores(const ActivityGraph& g, const Tensor* arc_mask = nullptr) const {
    return class_scores(g, message_pass(g, init_node_states(g), arc_mask));
  }

  Prediction forward(const ActivityGraph& g, const Tensor* arc_mask = nullptr) const {
    Tensor p = softmax(scores(g, arc_mask));
    Prediction out;
    out.probabilities.assign(p.values().begin(), p.values().end());
    out.predicted = static_cast<std::size_t>(
        std::max_element(out.probabilities.begin(), out.probabilities.end()) - out.probabilities.begin());
    return out;
  }

  std::size_t predict(const ActivityGraph& g) const { return forward(g).predicted; }

  // Cross-entropy against the graph's own label (or an explicit target).
  Tensor loss(const ActivityGraph& g, std::optional<std::size_t> target = std::nullopt,
              const Tensor* arc_mask = nullptr) const {
    const std::size_t t = target ? *target : static_cast<std::size_t>(g.label);
    if (!target && g.label < 0) throw DataError("graph has no label");
    return softmax_cross_entropy(scores(g, arc_mask), {t});
  }

 private:
  ModelConfig cfg_;
  ModelParams params_;
};

}  // namespace gnnxar
