#include "gnnxar/tensor.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace gnnxar;

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng, bool rg = true) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(s.size());
  for (auto& x : v) x = d(rng);
  return Tensor(s, std::move(v), rg);
}

// Keeps values away from the LeakyReLU kink so finite differences are valid.
Tensor away_from_zero(Shape s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.2, 2.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(s.size());
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor(s, std::move(v), true);
}

// Reduces any tensor to a scalar with random weights so every output
// element contributes a distinct gradient.
Tensor weighted_sum(const Tensor& t, const Tensor& w) { return sum(mul(t, w)); }

}  // namespace

TEST(Tensor, SegmentSumForward) {
  Tensor v({3, 1}, {1, 2, 3});
  Tensor out = segment_sum(v, {0, 0, 1}, 2);
  ASSERT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(out.at(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(out.at(1, 0), 3.0);
}

TEST(Tensor, LeakyReluDefinition) {
  Tensor x({1, 2}, {-1.0, 2.0});
  Tensor y = leaky_relu(x, 0.01);
  EXPECT_DOUBLE_EQ(y.at(0, 0), -0.01);
  EXPECT_DOUBLE_EQ(y.at(0, 1), 2.0);
}

TEST(Tensor, CrossEntropyGradientAtUniformLogits) {
  for (std::size_t c : {2u, 3u, 7u}) {
    Tensor logits = Tensor::zeros({1, c}, true);
    softmax_cross_entropy(logits, {1}).backward();
    for (std::size_t j = 0; j < c; ++j) {
      const double expected = 1.0 / static_cast<double>(c) - (j == 1 ? 1.0 : 0.0);
      EXPECT_NEAR(logits.grad()[j], expected, 1e-15);
    }
  }
}

TEST(Tensor, ShapeMismatchNamesBothShapes) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("(2x3)"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("vs (2x3)"), std::string::npos);
  }
  EXPECT_THROW(add(a, Tensor::zeros({3, 2})), ShapeError);
  EXPECT_THROW(concat_cols(a, Tensor::zeros({3, 1})), ShapeError);
  EXPECT_THROW(segment_sum(a, {0}, 1), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, {1.0}), ShapeError);
}

TEST(Tensor, ConstantFunctionHasZeroGradient) {
  Tensor p = Tensor::scalar(3.0, true);
  Tensor c = Tensor::scalar(5.0);
  auto f = [&] { return add(scale(p, 0.0), c); };
  std::vector<Tensor> params{p};
  auto r = grad_check(f, params);
  EXPECT_EQ(r.max_rel_error, 0.0);
  EXPECT_EQ(p.grad()[0], 0.0);
}

TEST(Tensor, LinearLayerCrossEntropyGradCheck) {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({4, 5}, rng, false);
  Tensor w = random_tensor({5, 3}, rng);
  Tensor b = random_tensor({1, 3}, rng);
  auto f = [&] { return softmax_cross_entropy(add_bias(matmul(x, w), b), {0, 2, 1, 2}); };
  std::vector<Tensor> params{w, b};
  EXPECT_LT(grad_check(f, params).max_rel_error, 1e-6);
}

// Every differentiable primitive in isolation, on several seeds.
TEST(Tensor, EveryPrimitivePassesGradCheck) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor m = random_tensor({4, 2}, rng);
    Tensor bias = random_tensor({1, 4}, rng);
    Tensor col = random_tensor({3, 1}, rng);
    Tensor kinky = away_from_zero({3, 4}, rng);
    std::uniform_real_distribution<double> pos(0.5, 2.0);
    std::vector<double> pv(12);
    for (auto& v : pv) v = pos(rng);
    Tensor positive({3, 4}, pv, true);
    Tensor w34 = random_tensor({3, 4}, rng, false);
    Tensor w32 = random_tensor({3, 2}, rng, false);
    Tensor w24 = random_tensor({2, 4}, rng, false);
    Tensor w35 = random_tensor({3, 5}, rng, false);
    Tensor w44 = random_tensor({4, 4}, rng, false);
    Tensor w112 = random_tensor({1, 12}, rng, false);

    struct Case {
      const char* name;
      std::function<Tensor()> f;
      std::vector<Tensor> params;
    };
    std::vector<Case> cases = {
        {"matmul", [&] { return weighted_sum(matmul(a, m), w32); }, {a, m}},
        {"add", [&] { return weighted_sum(add(a, b), w34); }, {a, b}},
        {"mul", [&] { return weighted_sum(mul(a, b), w34); }, {a, b}},
        {"add_bias", [&] { return weighted_sum(add_bias(a, bias), w34); }, {a, bias}},
        {"scale", [&] { return weighted_sum(scale(a, -1.7), w34); }, {a}},
        {"add_scalar", [&] { return weighted_sum(add_scalar(a, 0.3), w34); }, {a}},
        {"concat_cols", [&] { return weighted_sum(concat_cols(a, col), w35); }, {a, col}},
        {"gather_rows", [&] { return weighted_sum(gather_rows(a, {2, 0, 2, 1}), w44); }, {a}},
        {"reshape", [&] { return weighted_sum(reshape(a, {1, 12}), w112); }, {a}},
        {"scale_rows", [&] { return weighted_sum(scale_rows(a, col), w34); }, {a, col}},
        {"segment_sum", [&] { return weighted_sum(segment_sum(a, {1, 0, 1}, 2), w24); }, {a}},
        {"leaky_relu", [&] { return weighted_sum(leaky_relu(kinky, 0.01), w34); }, {kinky}},
        {"sigmoid", [&] { return weighted_sum(sigmoid(a), w34); }, {a}},
        {"log", [&] { return weighted_sum(log(positive), w34); }, {positive}},
        {"sum", [&] { return sum(a); }, {a}},
        {"mean", [&] { return mean(a); }, {a}},
        {"softmax", [&] { return weighted_sum(softmax(a), w34); }, {a}},
        {"softmax_cross_entropy", [&] { return softmax_cross_entropy(a, {3, 0, 1}); }, {a}},
    };
    for (auto& c : cases) {
      auto r = grad_check(c.f, c.params);
      EXPECT_LT(r.max_rel_error, 1e-6) << c.name << " seed " << seed;
    }
  }
}

TEST(Tensor, BackwardAccumulatesAcrossCalls) {
  std::mt19937_64 rng(3);
  Tensor w = random_tensor({3, 2}, rng);
  Tensor x = random_tensor({2, 3}, rng, false);
  auto loss = [&] { return softmax_cross_entropy(leaky_relu(matmul(x, w), 0.01), {1, 0}); };
  w.zero_grad();
  loss().backward();
  std::vector<double> once(w.grad().begin(), w.grad().end());
  w.zero_grad();
  loss().backward();
  loss().backward();
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_DOUBLE_EQ(w.grad()[i], 2.0 * once[i]);
}

TEST(Tensor, RepeatedBackwardOnSameTapeRecomputesIntermediates) {
  Tensor a = Tensor::scalar(2.0, true);
  Tensor y = mul(add_scalar(a, 1.0), add_scalar(a, 1.0));
  y.backward();
  y.backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 12.0);
}

TEST(Tensor, DeterministicValues) {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tensor a = random_tensor({5, 5}, rng);
    Tensor b = random_tensor({5, 5}, rng);
    Tensor y = softmax(matmul(sigmoid(a), b));
    return std::vector<double>(y.values().begin(), y.values().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Tensor, NoTapeWithoutGradients) {
  Tensor a = Tensor::scalar(1.0);
  Tensor y = add(a, a);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}
