#include <doctest.h>

#include <random>

#include "bundle.hpp"
#include "fgcam/relprop.hpp"
#include "oracles.hpp"

using namespace fgcam;

namespace {

const InputDomain kUnit{{0.0f}, {1.0f}};

double relative(double got, double want) {
  return std::abs(got - want) / std::max(1e-12, std::abs(want));
}

// Sum of output relevance over outputs with a positive z+ pre-activation.
double live_relevance(const Eigen::MatrixXd& w, const Eigen::VectorXd& x, const Tensor& r_out) {
  const Eigen::VectorXd z = w.cwiseMax(0.0) * x;
  double s = 0.0;
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    if (z(j) > 0.0) s += r_out[j];
  }
  return s;
}

}  // namespace

TEST_CASE("z+ on a linear layer") {
  const LayerSpec l = oracle::linear_layer("fc", Tensor({1, 2}, {1, 2}), Tensor({1}));
  const Tensor r = zplus_layer(l, Tensor({2}, {1, 1}), Tensor({1}, {3}));
  CHECK(r[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(r[1] == doctest::Approx(2.0).epsilon(1e-8));

  const LayerSpec neg = oracle::linear_layer("fc", Tensor({2, 3}, -0.5f), Tensor({2}));
  const Tensor none = zplus_layer(neg, Tensor({3}, 1.0f), Tensor({2}, {1, 4}));
  for (float v : none.values()) CHECK(v == 0.0f);

  // The bias takes no share.
  const LayerSpec biased = oracle::linear_layer("fc", Tensor({1, 2}, {1, 2}), Tensor({1}, {100}));
  CHECK(zplus_layer(biased, Tensor({2}, {1, 1}), Tensor({1}, {3}))[1] == doctest::Approx(2.0));
}

TEST_CASE("z+ conservation on random conv, linear, avgpool and flatten layers") {
  std::mt19937 rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor x = oracle::random_tensor({3, 6, 5}, rng, 0.0f, 1.0f);
    const Tensor wc = oracle::random_tensor({4, 3, 3, 3}, rng, 0.0f, 1.0f);
    const LayerSpec conv = oracle::conv_layer("c", wc, Tensor({4}), {1, 2}, {1, 0});
    const Eigen::MatrixXd mc = oracle::conv_matrix(wc, x.shape(), conv.stride, conv.padding);
    const Tensor rc = oracle::random_tensor({4, 6, 2}, rng);
    CHECK(relative(oracle::total(zplus_layer(conv, x, rc)), live_relevance(mc, oracle::as_vector(x), rc)) < 1e-4);

    const Tensor wl = oracle::random_tensor({7, 90}, rng, 0.0f, 1.0f);
    const LayerSpec lin = oracle::linear_layer("l", wl, Tensor({7}));
    const Tensor xl = x.reshaped({90});
    const Tensor rl = oracle::random_tensor({7}, rng);
    const Eigen::MatrixXd ml = wl.matrix(7, 90).cast<double>();
    CHECK(relative(oracle::total(zplus_layer(lin, xl, rl)), live_relevance(ml, oracle::as_vector(xl), rl)) < 1e-4);

    const LayerSpec pool = oracle::plain_layer("p", LayerKind::kAvgPool2d, {2, 2}, {2, 1});
    const Tensor rp = oracle::random_tensor({3, 3, 4}, rng);
    const Eigen::MatrixXd mp = oracle::avgpool_matrix(x.shape(), pool.kernel, pool.stride);
    CHECK(relative(oracle::total(zplus_layer(pool, x, rp)), live_relevance(mp, oracle::as_vector(x), rp)) < 1e-4);

    const LayerSpec flat = oracle::plain_layer("f", LayerKind::kFlatten);
    const Tensor rf = oracle::random_tensor({90}, rng);
    const Tensor back = zplus_layer(flat, x, rf);
    CHECK(back.shape() == x.shape());
    CHECK(back.values() == rf.values());
  }
}

TEST_CASE("z+ on a conv equals z+ on its dense equivalent") {
  std::mt19937 rng(44);
  for (int trial = 0; trial < 20; ++trial) {
    const Index h = std::uniform_int_distribution<Index>(3, 8)(rng);
    const Index w = std::uniform_int_distribution<Index>(3, 8)(rng);
    const Tensor x = oracle::random_tensor({2, h, w}, rng, 0.0f, 1.0f);
    const Tensor wt = oracle::random_tensor({3, 2, 3, 3}, rng);
    const LayerSpec conv = oracle::conv_layer("c", wt, Tensor({3}), {1, 1}, {1, 1});
    const Tensor r = oracle::random_tensor({3, h, w}, rng);
    const Tensor got = zplus_layer(conv, x, r);
    const Eigen::VectorXd want =
        oracle::zplus_dense(oracle::conv_matrix(wt, x.shape(), {1, 1}, {1, 1}), oracle::as_vector(x), oracle::as_vector(r));
    CHECK((oracle::as_vector(got) - want).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("maxpool routing") {
  const std::vector<Index> one{3};
  CHECK(maxpool_route(one, Tensor({1, 1, 1}, 5.0f), {1, 2, 2}) == Tensor({1, 2, 2}, {0, 0, 0, 5}));

  std::mt19937 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = oracle::random_tensor({2, 7, 7}, rng);
    for (float& v : x.values()) v = std::round(v * 3.0f);
    const auto pooled = maxpool2d(x, {3, 3}, {1, 2});  // overlapping windows
    const Tensor r = oracle::random_tensor(pooled.values.shape(), rng);
    const Tensor got = maxpool_route(pooled.argmax, r, x.shape());
    std::vector<double> want(static_cast<std::size_t>(x.size()), 0.0);
    for (std::size_t o = 0; o < pooled.argmax.size(); ++o) want[static_cast<std::size_t>(pooled.argmax[o])] += r[Index(o)];
    double in_total = 0.0;
    for (Index i = 0; i < x.size(); ++i) {
      CHECK(got[i] == doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-6));
      in_total += got[i];
    }
    CHECK(in_total == doctest::Approx(oracle::total(r)).epsilon(1e-6));
  }
}

TEST_CASE("z-beta at the input layer") {
  SUBCASE("single term passes relevance through") {
    const LayerSpec l = oracle::linear_layer("fc", Tensor({1, 1}, {-0.7f}), Tensor({1}));
    CHECK(zbeta_input(l, Tensor({1, 1, 1}, {0.3f}), kUnit, Tensor({1}, {2.5f}))[0] == doctest::Approx(2.5).epsilon(1e-6));
  }
  SUBCASE("two positive weights") {
    const LayerSpec l = oracle::linear_layer("fc", Tensor({1, 2}, {1, 1}), Tensor({1}));
    const Tensor r = zbeta_input(l, Tensor({1, 1, 2}, {0.5f, 0.5f}), kUnit, Tensor({1}, {1.0f}));
    CHECK(r[0] == doctest::Approx(0.5).epsilon(1e-8));
    CHECK(r[1] == doctest::Approx(0.5).epsilon(1e-8));
  }
  SUBCASE("conservation on a random conv") {
    std::mt19937 rng(13);
    const InputDomain domain = InputDomain::from_preprocessing({{0.485f, 0.456f, 0.406f}, {0.229f, 0.224f, 0.225f}});
    for (int trial = 0; trial < 10; ++trial) {
      Tensor x({3, 6, 6});
      for (Index c = 0; c < 3; ++c)
        for (Index i = 0; i < 36; ++i)
          x[c * 36 + i] = std::uniform_real_distribution<float>(domain.lower[c], domain.upper[c])(rng);
      const LayerSpec conv = oracle::conv_layer("c", oracle::random_tensor({4, 3, 3, 3}, rng), Tensor({4}), {1, 1}, {1, 1});
      const Tensor r = oracle::random_tensor({4, 6, 6}, rng);
      CHECK(relative(oracle::total(zbeta_input(conv, x, domain, r)), oracle::total(r)) < 1e-4);
    }
  }
  SUBCASE("degenerate domain is rejected") {
    const LayerSpec l = oracle::linear_layer("fc", Tensor({1, 1}, 1.0f), Tensor({1}));
    CHECK_THROWS_AS(zbeta_input(l, Tensor({1, 1, 1}), InputDomain{{1.0f}, {1.0f}}, Tensor({1}, 1.0f)), Error);
  }
}

TEST_CASE("improve_resolution on the fixture") {
  const ModelGraph& m = fixture::shared_model();
  const auto& s = fixture::shared_bundle().samples[2];
  const Tensor x = preprocess(s.image, m);
  const ActivationTrace t = forward_trace(m, x);
  const std::string anchor = feature_anchor(m);
  const InputDomain domain = InputDomain::from_preprocessing(m.preprocessing);
  const RelevanceStack comps = explanation_components(gradcam_weights(m, t, s.label, anchor), t, anchor);

  const RelevanceStack same = improve_resolution(m, t, comps, anchor, domain);
  CHECK(same.values == comps.values);

  for (const std::string& target : {std::string("conv2"), std::string("pool1"), std::string("relu1"),
                                    std::string("conv1"), std::string(kInputLayer)}) {
    const RelevanceStack r = improve_resolution(m, t, comps, target, domain);
    const Shape& want = target == kInputLayer ? t.input.shape() : t.output_of(target).shape();
    CHECK(r.values.shape() == want);
    CHECK(r.layer == target);
  }
  CHECK_THROWS_AS(improve_resolution(m, t, comps, "fc", domain), Error);
}

TEST_CASE("conservation through relu, positive conv and maxpool") {
  std::mt19937 rng(77);
  const ModelGraph m = oracle::make_model(
      {oracle::conv_layer("c1", oracle::random_tensor({3, 1, 3, 3}, rng), oracle::random_tensor({3}, rng), {1, 1}, {1, 1}),
       oracle::plain_layer("r1", LayerKind::kRelu), oracle::plain_layer("p1", LayerKind::kMaxPool2d, {2, 2}, {2, 2}),
       oracle::conv_layer("c2", oracle::random_tensor({4, 3, 3, 3}, rng, 0.0f, 1.0f), Tensor({4}), {1, 1}, {1, 1}),
       oracle::plain_layer("r2", LayerKind::kRelu), oracle::plain_layer("f", LayerKind::kFlatten),
       oracle::linear_layer("fc", oracle::random_tensor({2, 4 * 16}, rng), Tensor({2}))},
      {1, 8, 8}, 2);
  for (int trial = 0; trial < 5; ++trial) {
    const ActivationTrace t = forward_trace(m, oracle::random_tensor({1, 8, 8}, rng));
    RelevanceStack comps{"r2", relu(oracle::random_tensor({4, 4, 4}, rng)), false};
    // Only sites with live z+ pre-activations at c2 can pass relevance on.
    const Tensor& a = t.output_of("r2");
    for (Index i = 0; i < a.size(); ++i) {
      if (a[i] <= 0.0f) comps.values[i] = 0.0f;
    }
    const RelevanceStack r = improve_resolution(m, t, comps, "r1", {});
    CHECK(relative(oracle::total(r.values), oracle::total(comps.values)) < 1e-4);
  }
}

TEST_CASE("fg-cam pipeline") {
  const ModelGraph& m = fixture::shared_model();
  const auto& bundle = fixture::shared_bundle();
  const std::string anchor = feature_anchor(m);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& s = bundle.samples[k];
    const Tensor x = preprocess(s.image, m);
    const ActivationTrace t = forward_trace(m, x);

    SUBCASE("target at the anchor reduces to the plain cam") {
      for (CamBackend backend : {CamBackend::kGrad, CamBackend::kScore}) {
        const CamWeights w = backend == CamBackend::kGrad ? gradcam_weights(m, t, s.label, anchor)
                                                          : scorecam_weights(m, t, x, s.label, anchor);
        const Explanation fg = fg_cam_explain(m, t, x, s.label, {.backend = backend, .target_layer = anchor});
        CHECK(oracle::max_abs_diff(fg.map, cam_explanation(w, t, anchor).map) <= 1e-6);
      }
    }
    SUBCASE("unsigned maps are non-negative at every target") {
      for (const char* target : {"input", "conv1", "pool1", "conv2"}) {
        const Explanation e = fg_cam_explain(m, t, x, s.label, {.target_layer = target});
        CHECK_FALSE(e.is_signed);
        for (float v : e.map.values()) CHECK(v >= 0.0f);
      }
      const Explanation e = fg_cam_explain(m, t, x, s.label, {.denoise = true});
      CHECK(e.map.shape() == Shape{28, 28});
    }
    SUBCASE("positive homogeneity in the step-1 weights") {
      const InputDomain domain = InputDomain::from_preprocessing(m.preprocessing);
      CamWeights w = gradcam_weights(m, t, s.label, anchor);
      const Tensor base = channel_sum(improve_resolution(m, t, explanation_components(w, t, anchor), "input", domain).values);
      for (float& v : w.global) v *= 3.5f;
      const Tensor scaled = channel_sum(improve_resolution(m, t, explanation_components(w, t, anchor), "input", domain).values);
      for (Index i = 0; i < base.size(); ++i) {
        CHECK(scaled[i] == doctest::Approx(3.5 * base[i]).epsilon(1e-5).scale(oracle::max_abs(base)));
      }
    }
  }
}

TEST_CASE("lrp baseline") {
  SUBCASE("one linear layer: relevance proportional to w*x") {
    const Tensor w({2, 4}, {0.5f, 1.0f, 2.0f, 0.25f, 3, 3, 3, 3});
    const ModelGraph m = oracle::make_model(
        {oracle::plain_layer("f", LayerKind::kFlatten), oracle::linear_layer("fc", w, Tensor({2}))}, {1, 1, 4}, 2);
    const Tensor x({1, 1, 4}, {0.2f, 0.4f, 0.6f, 0.8f});
    const ActivationTrace t = forward_trace(m, x);
    const Explanation e = lrp_explain(m, t, 0, true);
    const double y = t.logits()[0];
    for (Index i = 0; i < 4; ++i) CHECK(e.map[i] == doctest::Approx(w[i] * x[i] / y * y).epsilon(1e-5));

    // Other classes' weights never matter.
    Tensor w2 = w;
    for (Index i = 4; i < 8; ++i) w2[i] = -7.0f;
    const ModelGraph m2 = oracle::make_model(
        {oracle::plain_layer("f", LayerKind::kFlatten), oracle::linear_layer("fc", w2, Tensor({2}))}, {1, 1, 4}, 2);
    CHECK(lrp_explain(m2, forward_trace(m2, x), 0, true).map == e.map);
  }
  SUBCASE("conservation on a positive, bias-free network") {
    std::mt19937 rng(90);
    const ModelGraph m = oracle::make_model(
        {oracle::conv_layer("c1", oracle::random_tensor({3, 1, 3, 3}, rng, 0.0f, 1.0f), Tensor({3}), {1, 1}, {1, 1}),
         oracle::plain_layer("r1", LayerKind::kRelu), oracle::plain_layer("p", LayerKind::kAvgPool2d, {2, 2}, {2, 2}),
         oracle::plain_layer("f", LayerKind::kFlatten),
         oracle::linear_layer("fc", oracle::random_tensor({3, 3 * 9}, rng, 0.0f, 1.0f), Tensor({3}))},
        {1, 6, 6}, 3);
    for (int trial = 0; trial < 5; ++trial) {
      const ActivationTrace t = forward_trace(m, oracle::random_tensor({1, 6, 6}, rng, 0.05f, 1.0f));
      const Index c = trial % 3;
      CHECK(relative(oracle::total(lrp_explain(m, t, c, true).map), t.logits()[c]) < 1e-3);
    }
  }
  SUBCASE("fixture maps") {
    const ModelGraph& m = fixture::shared_model();
    const auto& s = fixture::shared_bundle().samples[0];
    const ActivationTrace t = forward_trace(m, preprocess(s.image, m));
    const Explanation e = lrp_explain(m, t, s.label, false);
    CHECK(e.map.shape() == Shape{28, 28});
    for (float v : e.map.values()) CHECK(v >= 0.0f);
    CHECK(lrp_explain(m, t, s.label, true).is_signed);
  }
}
