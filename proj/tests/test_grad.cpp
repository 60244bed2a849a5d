#include <doctest.h>

#include <random>

#include "bundle.hpp"
#include "fgcam/grad.hpp"
#include "oracles.hpp"

using namespace fgcam;

namespace {

int code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return static_cast<int>(e.code());
  }
  return -1;
}

}  // namespace

TEST_CASE("single linear layer: input gradient is the class row") {
  std::mt19937 rng(9);
  const Tensor w = oracle::random_tensor({4, 6}, rng);
  const ModelGraph m = oracle::make_model(
      {oracle::plain_layer("flat", LayerKind::kFlatten), oracle::linear_layer("fc", w, oracle::random_tensor({4}, rng))},
      {1, 2, 3}, 4);
  const ActivationTrace t = forward_trace(m, oracle::random_tensor({1, 2, 3}, rng));
  for (Index c = 0; c < 4; ++c) {
    const Tensor g = backward_class_gradient(m, {c, kInputLayer, &t});
    REQUIRE(g.shape() == Shape{1, 2, 3});
    for (Index i = 0; i < 6; ++i) CHECK(g[i] == w[c * 6 + i]);
  }
}

TEST_CASE("gradient at the logit layer is one-hot") {
  const ModelGraph& m = fixture::shared_model();
  const ActivationTrace t = forward_trace(m, preprocess(fixture::shared_bundle().samples[0].image, m));
  const Tensor g = backward_class_gradient(m, {6, "fc", &t});
  for (Index c = 0; c < 10; ++c) CHECK(g[c] == (c == 6 ? 1.0f : 0.0f));
}

TEST_CASE("request errors") {
  const ModelGraph& m = fixture::shared_model();
  const ActivationTrace t = forward_trace(m, preprocess(fixture::shared_bundle().samples[0].image, m));
  CHECK(code_of([&] { backward_class_gradient(m, {0, "nope", &t}); }) == int(ErrorCode::kUnknownLayer));
  CHECK(code_of([&] { backward_class_gradient(m, {10, "conv2", &t}); }) == int(ErrorCode::kInvalidArgument));
  CHECK(code_of([&] { backward_class_gradient(m, {-1, "conv2", &t}); }) == int(ErrorCode::kInvalidArgument));
}

TEST_CASE("relu and maxpool routing rules") {
  const ModelGraph& m = fixture::shared_model();
  const auto& bundle = fixture::shared_bundle();
  for (std::size_t k = 0; k < 5; ++k) {
    const ActivationTrace t = forward_trace(m, preprocess(bundle.samples[k].image, m));
    const Index c = bundle.samples[k].label;

    // Gradient entering a relu vanishes exactly where its activation is zero.
    for (auto [conv, relu] : {std::pair{"conv1", "relu1"}, std::pair{"conv2", "relu2"}}) {
      const Tensor g = backward_class_gradient(m, {c, conv, &t});
      const Tensor& a = t.output_of(relu);
      for (Index i = 0; i < a.size(); ++i) {
        if (a[i] == 0.0f) CHECK(g[i] == 0.0f);
      }
    }

    // Gradient reaching the pool input is nonzero only at argmax cells.
    const Tensor g = backward_class_gradient(m, {c, "relu1", &t});
    const auto& argmax = t.argmax[m.index_of("pool1")];
    std::vector<bool> winner(static_cast<std::size_t>(g.size()), false);
    for (Index a : argmax) winner[static_cast<std::size_t>(a)] = true;
    for (Index i = 0; i < g.size(); ++i) {
      if (!winner[static_cast<std::size_t>(i)]) CHECK(g[i] == 0.0f);
    }
  }
}

TEST_CASE("finite-difference agreement at every traced layer, three seeds") {
  const ModelGraph& m = fixture::shared_model();
  const auto& bundle = fixture::shared_bundle();
  for (std::uint32_t seed : {1u, 2u, 3u}) {
    std::mt19937 rng(seed);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, bundle.samples.size() - 1)(rng);
    const Index c = std::uniform_int_distribution<Index>(0, 9)(rng);
    const ActivationTrace t = forward_trace(m, preprocess(bundle.samples[k].image, m));
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      const auto r = oracle::finite_difference_check(m, t, i, c);
      INFO("seed " << seed << " layer " << m.layers[i].name);
      CHECK(r.checked > 0);
      CHECK(r.max_rel_error < 1e-2);
    }
  }
}
