#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <numeric>

#include "cbcnn/net.hpp"
#include "cbcnn/rng.hpp"

using namespace cbcnn;

namespace {

Tensor random_image(Rng& rng, std::size_t h, std::size_t w, std::size_t c) {
  Tensor t({h, w, c});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_gaussian();
  return t;
}

// Straightforward per-element convolution reference.
Tensor conv_oracle(const Tensor& in, const LayerSpec& l, const Tensor& w, const Tensor& b) {
  const std::size_t H = in.extent(0), W = in.extent(1), C = in.extent(2);
  const std::size_t oh = (H + 2 * l.pad - l.kernel) / l.stride + 1;
  const std::size_t ow = (W + 2 * l.pad - l.kernel) / l.stride + 1;
  Tensor out({oh, ow, l.out_ch});
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t oc = 0; oc < l.out_ch; ++oc) {
        double acc = b[oc];
        for (std::size_t ky = 0; ky < l.kernel; ++ky) {
          for (std::size_t kx = 0; kx < l.kernel; ++kx) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * l.stride + ky) -
                                      static_cast<std::ptrdiff_t>(l.pad);
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * l.stride + kx) -
                                      static_cast<std::ptrdiff_t>(l.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            for (std::size_t ic = 0; ic < C; ++ic) {
              acc += w[((oc * l.kernel + ky) * l.kernel + kx) * C + ic] *
                     in[(static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * C + ic];
            }
          }
        }
        out[(oy * ow + ox) * l.out_ch + oc] = acc;
      }
    }
  }
  return out;
}

NetworkSpec tiny_classifier() {
  NetworkSpec spec;
  spec.input_h = spec.input_w = 8;
  spec.input_ch = 3;
  spec.layers = {
      LayerSpec::Conv(3, 4, 3, 1, 1), LayerSpec::Relu(),    LayerSpec::MaxPool(2, 2),
      LayerSpec::Conv(4, 8, 3, 1, 1), LayerSpec::Relu(),    LayerSpec::Cbp(16, 42),
      LayerSpec::Fc(16, 3),           LayerSpec::SoftmaxXent(),
  };
  spec.validate();
  return spec;
}

double net_loss(const NetworkSpec& spec, const NetworkState& state, const Tensor& img,
                std::size_t label) {
  return softmax_xent_loss(forward_scores(spec, state, img), label);
}

}  // namespace

TEST_CASE("spec validation enforces the cbp placement contract") {
  NetworkSpec spec;
  spec.input_h = spec.input_w = 8;
  spec.layers = {LayerSpec::Conv(3, 4, 3, 1, 1), LayerSpec::Cbp(16, 1)};
  CHECK_THROWS_AS(spec.validate(), DimensionError);  // cbp not after a relu

  spec.layers = {LayerSpec::Conv(3, 4, 3, 1, 1), LayerSpec::Relu()};
  CHECK_THROWS_AS(spec.validate(), DimensionError);  // no cbp at all

  spec.layers = {LayerSpec::Conv(3, 4, 3, 1, 1), LayerSpec::Relu(), LayerSpec::Cbp(16, 1)};
  CHECK_NOTHROW(spec.validate());
}

TEST_CASE("conv forward matches per-element oracle") {
  Rng rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    NetworkSpec spec;
    spec.input_h = 6;
    spec.input_w = 7;
    spec.input_ch = 3;
    const std::size_t pad = rng.next_below(2);
    const std::size_t stride = 1 + rng.next_below(2);
    spec.layers = {LayerSpec::Conv(3, 4, 3, stride, pad), LayerSpec::Relu(),
                   LayerSpec::Cbp(8, 1)};
    spec.validate();
    NetworkState state = init_state(spec, 100 + rep);
    const Tensor img = random_image(rng, 6, 7, 3);
    const ForwardCache cache = forward(spec, state, img);
    const Tensor expect = conv_oracle(img, spec.layers[0], state.weights[0], state.biases[0]);
    REQUIRE(cache.acts[1].shape() == expect.shape());
    for (std::size_t i = 0; i < expect.size(); ++i) {
      CHECK(std::abs(cache.acts[1][i] - expect[i]) <= 1e-10 * (1.0 + std::abs(expect[i])));
    }
  }
}

TEST_CASE("1x1 identity conv reproduces a channel mix") {
  NetworkSpec spec;
  spec.input_h = spec.input_w = 4;
  spec.input_ch = 2;
  spec.layers = {LayerSpec::Conv(2, 2, 1, 1, 0), LayerSpec::Relu(), LayerSpec::Cbp(8, 3)};
  spec.validate();
  NetworkState state = init_state(spec, 1);
  // Identity kernel: out channel c copies in channel c.
  state.weights[0] = Tensor({2, 1, 1, 2}, {1, 0, 0, 1});
  state.biases[0] = Tensor({2});
  Rng rng(9);
  Tensor img = random_image(rng, 4, 4, 2);
  const ForwardCache cache = forward(spec, state, img);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(cache.acts[1][i] == img[i]);
}

TEST_CASE("zero-weight FC head yields uniform softmax") {
  NetworkSpec spec = tiny_classifier();
  NetworkState state = init_state(spec, 7);
  state.weights[6] = Tensor({3, 16});
  state.biases[6] = Tensor({3});
  Rng rng(11);
  const auto scores = forward_scores(spec, state, random_image(rng, 8, 8, 3));
  CHECK(scores == std::vector<double>{0.0, 0.0, 0.0});
  const auto g = softmax_xent_grad(scores, 1);
  CHECK(g[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx(1.0 / 3 - 1.0).epsilon(1e-12));
}

TEST_CASE("softmax cross-entropy basics") {
  const std::vector<double> scores{0.5, -1.2, 3.0};
  for (std::size_t label = 0; label < 3; ++label) {
    CHECK(softmax_xent_loss(scores, label) >= 0.0);
    const auto g = softmax_xent_grad(scores, label);
    CHECK(std::abs(std::accumulate(g.begin(), g.end(), 0.0)) <= 1e-12);
  }
}

TEST_CASE("embedding output has unit norm") {
  NetworkSpec spec = NetworkSpec::default_embedder(16, 32, 5);
  NetworkState state = init_state(spec, 3);
  Rng rng(13);
  const auto e = forward_embedding(spec, state, random_image(rng, 16, 16, 3));
  const double n = std::sqrt(std::inner_product(e.begin(), e.end(), e.begin(), 0.0));
  CHECK(std::abs(n - 1.0) <= 1e-9);
}

TEST_CASE("full-network parameter gradients match central differences") {
  NetworkSpec spec = tiny_classifier();
  NetworkState state = init_state(spec, 21);
  Rng rng(23);
  const Tensor img = random_image(rng, 8, 8, 3);
  const std::size_t label = 2;

  ForwardCache cache = forward(spec, state, img);
  const auto& scores = cache.acts[cache.acts.size() - 2].vec();
  Gradients grads = zero_gradients(spec, state);
  backward(spec, state, cache, softmax_xent_grad(scores, label), grads);

  // Finite differences are only meaningful away from the signed-sqrt kink;
  // the fixture is sized so every pooled coordinate is well populated.
  for (double r : cache.cbp_raw) REQUIRE(std::abs(r) > 1e-4);

  const double step = 1e-6;
  double max_rel = 0.0;
  int checked = 0;
  for (std::size_t layer = 0; layer < spec.layers.size(); ++layer) {
    if (state.weights[layer].size() == 0) continue;
    for (int which = 0; which < 2; ++which) {
      Tensor& params = which == 0 ? state.weights[layer] : state.biases[layer];
      const Tensor& analytic = which == 0 ? grads.weights[layer] : grads.biases[layer];
      for (std::size_t j = 0; j < params.size(); ++j) {
        const double orig = params[j];
        params[j] = orig + step;
        const double lp = net_loss(spec, state, img, label);
        params[j] = orig - step;
        const double lm = net_loss(spec, state, img, label);
        params[j] = orig;
        const double fd = (lp - lm) / (2.0 * step);
        max_rel = std::max(max_rel, std::abs(analytic[j] - fd) / (1e-4 + std::abs(fd)));
        ++checked;
      }
    }
  }
  CHECK(checked > 100);
  CHECK(max_rel <= 1e-4);
}

TEST_CASE("zero loss gradient gives zero parameter gradients") {
  NetworkSpec spec = tiny_classifier();
  NetworkState state = init_state(spec, 31);
  Rng rng(33);
  const Tensor img = random_image(rng, 8, 8, 3);
  ForwardCache cache = forward(spec, state, img);
  Gradients grads = zero_gradients(spec, state);
  backward(spec, state, cache, std::vector<double>(3, 0.0), grads);
  for (const auto& t : grads.weights) {
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);
  }
}

TEST_CASE("sgd momentum recurrence matches hand calculation") {
  // Scalar problem: one FC weight; run the v/w recurrence by hand.
  NetworkSpec spec;
  spec.input_h = spec.input_w = 2;
  spec.input_ch = 1;
  spec.layers = {LayerSpec::Conv(1, 1, 1, 1, 0), LayerSpec::Relu(), LayerSpec::Cbp(4, 1),
                 LayerSpec::Fc(4, 1)};
  spec.validate();
  NetworkState state = init_state(spec, 1);
  state.weights[3] = Tensor({1, 4}, {2.0, 0.0, 0.0, 0.0});
  state.biases[3] = Tensor({1});
  state.bias_momentum[3] = Tensor({1});
  state.weight_momentum[3] = Tensor({1, 4});

  Gradients grads = zero_gradients(spec, state);
  grads.weights[3] = Tensor({1, 4}, {0.5, 0.0, 0.0, 0.0});
  grads.biases[3] = Tensor({1});

  OptimizerConfig cfg{0.1, 0.01, 0.9, TrainableScope::all_layers};
  // step 1: v = 0.5 + 0.01*2 = 0.52; w = 2 - 0.1*0.52 = 1.948
  // step 2: v = 0.9*0.52 + 0.5 + 0.01*1.948 = 0.98748; w = 1.948 - 0.098748
  sgd_momentum_step(spec, state, grads, cfg);
  CHECK(state.weights[3][0] == doctest::Approx(1.948).epsilon(1e-14));
  sgd_momentum_step(spec, state, grads, cfg);
  CHECK(state.weights[3][0] == doctest::Approx(1.948 - 0.098748).epsilon(1e-12));

  SUBCASE("plain sgd when momentum and decay are zero") {
    NetworkState s2 = init_state(spec, 1);
    s2.weights[3] = Tensor({1, 4}, {1.0, 1.0, 1.0, 1.0});
    OptimizerConfig plain{0.5, 0.0, 0.0, TrainableScope::all_layers};
    Gradients g2 = zero_gradients(spec, s2);
    g2.weights[3] = Tensor({1, 4}, {0.2, 0.2, 0.2, 0.2});
    g2.biases[3] = Tensor({1});
    sgd_momentum_step(spec, s2, g2, plain);
    for (std::size_t i = 0; i < 4; ++i) CHECK(s2.weights[3][i] == 0.9);
  }

  SUBCASE("zero gradient with zero momentum and decay leaves state unchanged") {
    NetworkState s3 = init_state(spec, 5);
    const auto before = s3.weights[0].vec();
    OptimizerConfig plain{0.5, 0.0, 0.0, TrainableScope::all_layers};
    sgd_momentum_step(spec, s3, zero_gradients(spec, s3), plain);
    CHECK(s3.weights[0].vec() == before);
  }
}

TEST_CASE("phase-1 scope leaves non-final parameters bit-identical") {
  NetworkSpec spec = tiny_classifier();
  NetworkState state = init_state(spec, 41);
  const auto conv_w = state.weights[0].vec();
  const auto conv_b = state.biases[0].vec();

  Rng rng(43);
  std::vector<LabeledImage> data;
  for (int i = 0; i < 6; ++i) {
    data.push_back({random_image(rng, 8, 8, 3), static_cast<std::size_t>(i % 3)});
  }
  TwoPhaseSchedule sched{2, 0, 3, 7};
  train_classifier_two_phase(spec, state, data, phase1_default(), phase2_default(), sched);
  CHECK(state.weights[0].vec() == conv_w);
  CHECK(state.biases[0].vec() == conv_b);
}

TEST_CASE("training defaults match the two-phase schedule") {
  const auto p1 = phase1_default();
  CHECK(p1.learning_rate == 1.0);
  CHECK(p1.weight_decay == 5e-6);
  CHECK(p1.momentum == 0.9);
  CHECK(p1.scope == TrainableScope::last_layer_only);
  const auto p2 = phase2_default();
  CHECK(p2.learning_rate == 0.001);
  CHECK(p2.weight_decay == 5e-4);
  CHECK(p2.scope == TrainableScope::all_layers);
}

TEST_CASE("top-k selection and tie-breaking") {
  CHECK(topk_from_scores({0.5, 0.5, 0.5, 0.5}, 3) == std::vector<std::size_t>{0, 1, 2});
  CHECK(topk_from_scores({0, 0, 1, 0}, 1) == std::vector<std::size_t>{2});
  CHECK_THROWS_AS(topk_from_scores({1, 2}, 3), ConfigError);

  Rng rng(47);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> scores(8);
    for (auto& s : scores) s = rng.next_gaussian();
    const auto top = topk_from_scores(scores, 8);
    // Full-sort oracle.
    for (std::size_t i = 1; i < top.size(); ++i) {
      CHECK(scores[top[i - 1]] >= scores[top[i]]);
    }
    // Invariant under adding a constant.
    std::vector<double> shifted(scores);
    for (auto& s : shifted) s += 3.25;
    CHECK(topk_from_scores(shifted, 8) == top);
  }
}

TEST_CASE("deterministic initialization and weights round-trip") {
  NetworkSpec spec = tiny_classifier();
  NetworkState a = init_state(spec, 55);
  NetworkState b = init_state(spec, 55);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    CHECK(a.weights[i].vec() == b.weights[i].vec());
  }

  const std::string path = "/tmp/cbcnn_test_weights.cbpw";
  a.step_count = 17;
  save_network(path, spec, a);
  NetworkSpec spec2;
  NetworkState c;
  load_network(path, spec2, c);
  CHECK(spec2.layers.size() == spec.layers.size());
  CHECK(c.step_count == 17);
  CHECK(c.sketch.cs1.h == a.sketch.cs1.h);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    CHECK(c.weights[i].vec() == a.weights[i].vec());
    CHECK(c.biases[i].vec() == a.biases[i].vec());
  }
  // Loaded state produces identical scores.
  Rng rng(57);
  const Tensor img = random_image(rng, 8, 8, 3);
  CHECK(forward_scores(spec, a, img) == forward_scores(spec2, c, img));
  std::remove(path.c_str());
}

TEST_CASE("empty dataset is a configuration error") {
  NetworkSpec spec = tiny_classifier();
  NetworkState state = init_state(spec, 1);
  TwoPhaseSchedule sched;
  CHECK_THROWS_AS(
      train_classifier_two_phase(spec, state, {}, phase1_default(), phase2_default(), sched),
      ConfigError);
}
