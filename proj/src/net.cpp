#include "cbcnn/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "cbcnn/kernels.hpp"

namespace cbcnn {

// ---- layer spec constructors ----

LayerSpec LayerSpec::Conv(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                          std::size_t stride, std::size_t pad) {
  LayerSpec l;
  l.kind = LayerKind::conv2d;
  l.in_ch = in_ch;
  l.out_ch = out_ch;
  l.kernel = kernel;
  l.stride = stride;
  l.pad = pad;
  return l;
}

LayerSpec LayerSpec::Relu() {
  LayerSpec l;
  l.kind = LayerKind::relu;
  return l;
}

LayerSpec LayerSpec::MaxPool(std::size_t window, std::size_t stride) {
  LayerSpec l;
  l.kind = LayerKind::maxpool;
  l.window = window;
  l.pool_stride = stride;
  return l;
}

LayerSpec LayerSpec::Cbp(std::size_t d, std::uint64_t seed) {
  LayerSpec l;
  l.kind = LayerKind::cbp;
  l.cbp_dim = d;
  l.cbp_seed = seed;
  return l;
}

LayerSpec LayerSpec::Fc(std::size_t in, std::size_t out) {
  LayerSpec l;
  l.kind = LayerKind::fully_connected;
  l.fc_in = in;
  l.fc_out = out;
  return l;
}

LayerSpec LayerSpec::SoftmaxXent() {
  LayerSpec l;
  l.kind = LayerKind::softmax_xent;
  return l;
}

// ---- shape chaining ----

namespace {

std::vector<std::size_t> chain_shape(const LayerSpec& l, const std::vector<std::size_t>& in) {
  switch (l.kind) {
    case LayerKind::conv2d: {
      if (in.size() != 3 || in[2] != l.in_ch) throw DimensionError("conv2d: input shape mismatch");
      if (in[0] + 2 * l.pad < l.kernel || in[1] + 2 * l.pad < l.kernel) {
        throw DimensionError("conv2d: kernel larger than padded input");
      }
      const std::size_t oh = (in[0] + 2 * l.pad - l.kernel) / l.stride + 1;
      const std::size_t ow = (in[1] + 2 * l.pad - l.kernel) / l.stride + 1;
      return {oh, ow, l.out_ch};
    }
    case LayerKind::relu:
      return in;
    case LayerKind::maxpool: {
      if (in.size() != 3) throw DimensionError("maxpool: expected [H,W,C] input");
      if (in[0] < l.window || in[1] < l.window) throw DimensionError("maxpool: window too large");
      const std::size_t oh = (in[0] - l.window) / l.pool_stride + 1;
      const std::size_t ow = (in[1] - l.window) / l.pool_stride + 1;
      return {oh, ow, in[2]};
    }
    case LayerKind::cbp:
      if (in.size() != 3) throw DimensionError("cbp: expected [H,W,C] input");
      return {l.cbp_dim};
    case LayerKind::fully_connected: {
      std::size_t flat = 1;
      for (std::size_t e : in) flat *= e;
      if (flat != l.fc_in) throw DimensionError("fully_connected: input size mismatch");
      return {l.fc_out};
    }
    case LayerKind::softmax_xent:
      return in;
  }
  throw DimensionError("unknown layer kind");
}

}  // namespace

std::vector<std::size_t> NetworkSpec::output_shape(std::size_t layer_index) const {
  std::vector<std::size_t> shape = input_shape();
  for (std::size_t i = 0; i <= layer_index && i < layers.size(); ++i) {
    shape = chain_shape(layers[i], shape);
  }
  return shape;
}

void NetworkSpec::validate() const {
  if (input_h == 0 || input_w == 0 || input_ch == 0) throw DimensionError("bad input geometry");
  if (layers.empty()) throw DimensionError("empty layer list");

  std::size_t cbp_count = 0;
  std::size_t cbp_index = 0;
  std::size_t last_relu = layers.size();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::cbp) {
      ++cbp_count;
      cbp_index = i;
    }
    if (layers[i].kind == LayerKind::relu) last_relu = i;
  }
  if (cbp_count != 1) throw DimensionError("spec must contain exactly one cbp layer");
  if (last_relu == layers.size() || cbp_index != last_relu + 1) {
    throw DimensionError("cbp must immediately follow the last relu");
  }

  // Chain all shapes; throws on any incompatibility.
  std::vector<std::size_t> shape = input_shape();
  for (const auto& l : layers) shape = chain_shape(l, shape);
}

std::size_t NetworkSpec::num_classes() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    if (it->kind == LayerKind::fully_connected) return it->fc_out;
  }
  return 0;
}

bool NetworkSpec::is_embedding_net() const {
  return !layers.empty() && layers.back().kind == LayerKind::cbp;
}

NetworkSpec NetworkSpec::default_embedder(std::size_t input_hw, std::size_t cbp_dim,
                                          std::uint64_t cbp_seed) {
  NetworkSpec spec;
  spec.input_h = spec.input_w = input_hw;
  spec.input_ch = 3;
  spec.layers = {
      LayerSpec::Conv(3, 32, 3, 1, 1),  LayerSpec::Relu(), LayerSpec::MaxPool(2, 2),
      LayerSpec::Conv(32, 64, 3, 1, 1), LayerSpec::Relu(), LayerSpec::MaxPool(2, 2),
      LayerSpec::Conv(64, 128, 3, 1, 1), LayerSpec::Relu(),
      LayerSpec::Cbp(cbp_dim, cbp_seed),
  };
  spec.validate();
  return spec;
}

NetworkSpec NetworkSpec::default_classifier(std::size_t input_hw, std::size_t num_classes,
                                            std::size_t cbp_dim, std::uint64_t cbp_seed) {
  NetworkSpec spec = default_embedder(input_hw, cbp_dim, cbp_seed);
  spec.layers.push_back(LayerSpec::Fc(cbp_dim, num_classes));
  spec.layers.push_back(LayerSpec::SoftmaxXent());
  spec.validate();
  return spec;
}

// ---- state ----

NetworkState init_state(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  NetworkState state;
  Rng rng(seed);
  const std::size_t n = spec.layers.size();
  state.weights.resize(n);
  state.biases.resize(n);
  state.weight_momentum.resize(n);
  state.bias_momentum.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = spec.layers[i];
    if (l.kind == LayerKind::conv2d) {
      const std::size_t fan_in = l.kernel * l.kernel * l.in_ch;
      Tensor w({l.out_ch, l.kernel, l.kernel, l.in_ch});
      const double gain = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (std::size_t j = 0; j < w.size(); ++j) w[j] = gain * rng.next_gaussian();
      state.weights[i] = std::move(w);
      state.biases[i] = Tensor({l.out_ch});
      state.weight_momentum[i] = Tensor::zeros_like(state.weights[i]);
      state.bias_momentum[i] = Tensor::zeros_like(state.biases[i]);
    } else if (l.kind == LayerKind::fully_connected) {
      Tensor w({l.fc_out, l.fc_in});
      const double gain = std::sqrt(2.0 / static_cast<double>(l.fc_in));
      for (std::size_t j = 0; j < w.size(); ++j) w[j] = gain * rng.next_gaussian();
      state.weights[i] = std::move(w);
      state.biases[i] = Tensor({l.fc_out});
      state.weight_momentum[i] = Tensor::zeros_like(state.weights[i]);
      state.bias_momentum[i] = Tensor::zeros_like(state.biases[i]);
    } else if (l.kind == LayerKind::cbp) {
      const std::vector<std::size_t> in_shape = spec.output_shape(i - 1);
      state.sketch = make_sketch_params(in_shape[2], l.cbp_dim, l.cbp_seed);
    }
  }
  return state;
}

Gradients zero_gradients(const NetworkSpec& spec, const NetworkState& state) {
  Gradients g;
  g.weights.resize(spec.layers.size());
  g.biases.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (state.weights[i].size() > 0) {
      g.weights[i] = Tensor::zeros_like(state.weights[i]);
      g.biases[i] = Tensor::zeros_like(state.biases[i]);
    }
  }
  return g;
}

// ---- layer forwards ----

namespace {

void check_finite(const Tensor& t, const char* layer_name) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw NumericError(std::string("non-finite activation in layer ") + layer_name);
    }
  }
}

// Patch matrix for im2col convolution: rows are [kernel*kernel*in_ch]
// receptive fields in output scan order.
std::vector<double> im2col(const Tensor& in, const LayerSpec& l, std::size_t oh, std::size_t ow) {
  const std::size_t H = in.extent(0), W = in.extent(1), C = in.extent(2);
  const std::size_t patch = l.kernel * l.kernel * C;
  std::vector<double> cols(oh * ow * patch, 0.0);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* row = cols.data() + (oy * ow + ox) * patch;
      for (std::size_t ky = 0; ky < l.kernel; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * l.stride + ky) -
                                  static_cast<std::ptrdiff_t>(l.pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kx = 0; kx < l.kernel; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * l.stride + kx) -
                                    static_cast<std::ptrdiff_t>(l.pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
          std::memcpy(row + (ky * l.kernel + kx) * C,
                      in.data() + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * C,
                      C * sizeof(double));
        }
      }
    }
  }
  return cols;
}

Tensor conv_forward(const Tensor& in, const LayerSpec& l, const Tensor& w, const Tensor& b) {
  const auto out_shape = chain_shape(l, in.shape());
  const std::size_t oh = out_shape[0], ow = out_shape[1];
  const std::size_t patch = l.kernel * l.kernel * l.in_ch;
  const std::vector<double> cols = im2col(in, l, oh, ow);

  Tensor out(out_shape);
  const auto& ops = kernels::active();
  for (std::size_t loc = 0; loc < oh * ow; ++loc) {
    const double* row = cols.data() + loc * patch;
    double* dst = out.data() + loc * l.out_ch;
    for (std::size_t oc = 0; oc < l.out_ch; ++oc) {
      dst[oc] = ops.dot(w.data() + oc * patch, row, patch) + b[oc];
    }
  }
  return out;
}

void conv_backward(const Tensor& in, const LayerSpec& l, const Tensor& w, const Tensor& d_out,
                   Tensor& d_w, Tensor& d_b, Tensor& d_in) {
  const std::size_t oh = d_out.extent(0), ow = d_out.extent(1);
  const std::size_t patch = l.kernel * l.kernel * l.in_ch;
  const std::vector<double> cols = im2col(in, l, oh, ow);
  const auto& ops = kernels::active();

  std::vector<double> d_cols(oh * ow * patch, 0.0);
  for (std::size_t loc = 0; loc < oh * ow; ++loc) {
    const double* row = cols.data() + loc * patch;
    const double* g = d_out.data() + loc * l.out_ch;
    double* drow = d_cols.data() + loc * patch;
    for (std::size_t oc = 0; oc < l.out_ch; ++oc) {
      const double go = g[oc];
      if (go == 0.0) continue;
      ops.axpy(go, row, d_w.data() + oc * patch, patch);
      ops.axpy(go, w.data() + oc * patch, drow, patch);
      d_b[oc] += go;
    }
  }

  // col2im scatter back into the input gradient.
  const std::size_t H = in.extent(0), W = in.extent(1), C = in.extent(2);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const double* drow = d_cols.data() + (oy * ow + ox) * patch;
      for (std::size_t ky = 0; ky < l.kernel; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * l.stride + ky) -
                                  static_cast<std::ptrdiff_t>(l.pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kx = 0; kx < l.kernel; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * l.stride + kx) -
                                    static_cast<std::ptrdiff_t>(l.pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
          ops.axpy(1.0, drow + (ky * l.kernel + kx) * C,
                   d_in.data() + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * C,
                   C);
        }
      }
    }
  }
}

Tensor maxpool_forward(const Tensor& in, const LayerSpec& l, std::vector<std::size_t>& argmax) {
  const auto out_shape = chain_shape(l, in.shape());
  const std::size_t oh = out_shape[0], ow = out_shape[1], C = out_shape[2];
  const std::size_t W = in.extent(1);
  Tensor out(out_shape);
  argmax.assign(out.size(), 0);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t c = 0; c < C; ++c) {
        double best = -1e300;
        std::size_t best_idx = 0;
        for (std::size_t ky = 0; ky < l.window; ++ky) {
          for (std::size_t kx = 0; kx < l.window; ++kx) {
            const std::size_t idx =
                ((oy * l.pool_stride + ky) * W + ox * l.pool_stride + kx) * C + c;
            if (in[idx] > best) {
              best = in[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (oy * ow + ox) * C + c;
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  return out;
}

}  // namespace

// ---- network forward / backward ----

ForwardCache forward(const NetworkSpec& spec, const NetworkState& state, const Tensor& image) {
  if (image.shape() != spec.input_shape()) throw DimensionError("forward: input shape mismatch");
  ForwardCache cache;
  cache.acts.reserve(spec.layers.size() + 1);
  cache.acts.push_back(image);
  cache.pool_argmax.resize(spec.layers.size());

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const Tensor& in = cache.acts.back();
    switch (l.kind) {
      case LayerKind::conv2d: {
        Tensor out = conv_forward(in, l, state.weights[i], state.biases[i]);
        check_finite(out, "conv2d");
        cache.acts.push_back(std::move(out));
        break;
      }
      case LayerKind::relu: {
        Tensor out(in.shape());
        for (std::size_t j = 0; j < in.size(); ++j) out[j] = in[j] > 0.0 ? in[j] : 0.0;
        cache.acts.push_back(std::move(out));
        break;
      }
      case LayerKind::maxpool: {
        Tensor out = maxpool_forward(in, l, cache.pool_argmax[i]);
        cache.acts.push_back(std::move(out));
        break;
      }
      case LayerKind::cbp: {
        const PooledEmbedding raw = cbp_forward(in, state.sketch);
        cache.cbp_raw = raw.values;
        std::vector<double> embedded = l2_normalize(signed_sqrt(raw.values));
        Tensor out({l.cbp_dim}, std::move(embedded));
        check_finite(out, "cbp");
        cache.acts.push_back(std::move(out));
        break;
      }
      case LayerKind::fully_connected: {
        Tensor out({l.fc_out});
        const auto& ops = kernels::active();
        for (std::size_t o = 0; o < l.fc_out; ++o) {
          out[o] = ops.dot(state.weights[i].data() + o * l.fc_in, in.data(), l.fc_in) +
                   state.biases[i][o];
        }
        check_finite(out, "fully_connected");
        cache.acts.push_back(std::move(out));
        break;
      }
      case LayerKind::softmax_xent:
        // Loss layer; forward keeps the scores as-is.
        cache.acts.push_back(in);
        break;
    }
  }
  return cache;
}

std::vector<double> forward_scores(const NetworkSpec& spec, const NetworkState& state,
                                   const Tensor& image) {
  const ForwardCache cache = forward(spec, state, image);
  // Last non-loss activation.
  std::size_t idx = cache.acts.size() - 1;
  if (!spec.layers.empty() && spec.layers.back().kind == LayerKind::softmax_xent) --idx;
  return cache.acts[idx].vec();
}

std::vector<double> forward_embedding(const NetworkSpec& spec, const NetworkState& state,
                                      const Tensor& image) {
  if (!spec.is_embedding_net()) throw DimensionError("spec does not end at the cbp layer");
  return forward(spec, state, image).acts.back().vec();
}

double softmax_xent_loss(const std::vector<double>& scores, std::size_t label) {
  if (label >= scores.size()) throw DimensionError("label out of range");
  const double m = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += std::exp(s - m);
  return std::log(sum) + m - scores[label];
}

std::vector<double> softmax_xent_grad(const std::vector<double>& scores, std::size_t label) {
  if (label >= scores.size()) throw DimensionError("label out of range");
  const double m = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  std::vector<double> g(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    g[i] = std::exp(scores[i] - m);
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  g[label] -= 1.0;
  return g;
}

void backward(const NetworkSpec& spec, const NetworkState& state, const ForwardCache& cache,
              const std::vector<double>& output_grad, Gradients& grads) {
  if (cache.acts.size() != spec.layers.size() + 1) {
    throw DataError("backward: cache does not match spec");
  }
  // Gradient flowing backward; starts at the last non-loss layer output.
  std::size_t top = spec.layers.size();
  if (spec.layers.back().kind == LayerKind::softmax_xent) --top;
  if (output_grad.size() != cache.acts[top].size()) {
    throw DimensionError("backward: output gradient length mismatch");
  }

  Tensor grad(cache.acts[top].shape(), output_grad);
  for (std::size_t i = top; i-- > 0;) {
    const auto& l = spec.layers[i];
    const Tensor& in = cache.acts[i];
    switch (l.kind) {
      case LayerKind::conv2d: {
        Tensor d_in(in.shape());
        conv_backward(in, l, state.weights[i], grad, grads.weights[i], grads.biases[i], d_in);
        grad = std::move(d_in);
        break;
      }
      case LayerKind::relu: {
        Tensor d_in(in.shape());
        for (std::size_t j = 0; j < in.size(); ++j) d_in[j] = in[j] > 0.0 ? grad[j] : 0.0;
        grad = std::move(d_in);
        break;
      }
      case LayerKind::maxpool: {
        Tensor d_in(in.shape());
        const auto& argmax = cache.pool_argmax[i];
        for (std::size_t o = 0; o < grad.size(); ++o) d_in[argmax[o]] += grad[o];
        grad = std::move(d_in);
        break;
      }
      case LayerKind::cbp: {
        grad = cbp_backward(in, state.sketch, grad.vec());
        break;
      }
      case LayerKind::fully_connected: {
        const auto& ops = kernels::active();
        Tensor d_in(in.shape());
        for (std::size_t o = 0; o < l.fc_out; ++o) {
          const double go = grad[o];
          if (go != 0.0) {
            ops.axpy(go, in.data(), grads.weights[i].data() + o * l.fc_in, l.fc_in);
            ops.axpy(go, state.weights[i].data() + o * l.fc_in, d_in.data(), l.fc_in);
          }
          grads.biases[i][o] += go;
        }
        grad = std::move(d_in);
        break;
      }
      case LayerKind::softmax_xent:
        break;  // handled by starting below it
    }
  }
}

// ---- optimizer ----

OptimizerConfig phase1_default() {
  return OptimizerConfig{1.0, 5e-6, 0.9, TrainableScope::last_layer_only};
}

OptimizerConfig phase2_default() {
  return OptimizerConfig{0.001, 5e-4, 0.9, TrainableScope::all_layers};
}

namespace {

std::size_t last_param_layer(const NetworkSpec& spec, const NetworkState& state) {
  for (std::size_t i = spec.layers.size(); i-- > 0;) {
    if (state.weights[i].size() > 0) return i;
  }
  throw DataError("network has no trainable parameters");
}

void step_param(Tensor& w, Tensor& v, const Tensor& g, const OptimizerConfig& cfg) {
  const auto& ops = kernels::active();
  const std::size_t n = w.size();
  for (std::size_t j = 0; j < n; ++j) {
    if (!std::isfinite(g[j])) throw NumericError("non-finite gradient in optimizer step");
    v[j] = cfg.momentum * v[j] + (g[j] + cfg.weight_decay * w[j]);
  }
  ops.axpy(-cfg.learning_rate, v.data(), w.data(), n);
}

}  // namespace

void sgd_momentum_step(const NetworkSpec& spec, NetworkState& state, const Gradients& grads,
                       const OptimizerConfig& cfg) {
  const std::size_t last = last_param_layer(spec, state);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (state.weights[i].size() == 0) continue;
    if (cfg.scope == TrainableScope::last_layer_only && i != last) continue;
    step_param(state.weights[i], state.weight_momentum[i], grads.weights[i], cfg);
    step_param(state.biases[i], state.bias_momentum[i], grads.biases[i], cfg);
  }
  ++state.step_count;
}

// ---- training ----

namespace {

double run_epoch(const NetworkSpec& spec, NetworkState& state,
                 const std::vector<LabeledImage>& dataset, const OptimizerConfig& cfg,
                 std::size_t batch_size, Rng& shuffle_rng, double* accuracy_out) {
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
  }

  double total_loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, order.size());
    Gradients grads = zero_gradients(spec, state);
    for (std::size_t b = start; b < end; ++b) {
      const auto& sample = dataset[order[b]];
      ForwardCache cache = forward(spec, state, sample.image);
      const std::vector<double>& scores = cache.acts[cache.acts.size() - 2].vec();
      total_loss += softmax_xent_loss(scores, sample.label);
      const auto top = topk_from_scores(scores, 1);
      if (top[0] == sample.label) ++correct;
      backward(spec, state, cache, softmax_xent_grad(scores, sample.label), grads);
    }
    // Mean gradient over the batch.
    const double inv = 1.0 / static_cast<double>(end - start);
    for (auto& t : grads.weights) {
      if (t.size() > 0) t = t.scaled(inv);
    }
    for (auto& t : grads.biases) {
      if (t.size() > 0) t = t.scaled(inv);
    }
    sgd_momentum_step(spec, state, grads, cfg);
  }
  if (accuracy_out != nullptr) {
    *accuracy_out = static_cast<double>(correct) / static_cast<double>(dataset.size());
  }
  return total_loss / static_cast<double>(dataset.size());
}

}  // namespace

std::vector<EpochMetrics> train_classifier_two_phase(
    const NetworkSpec& spec, NetworkState& state, const std::vector<LabeledImage>& dataset,
    const OptimizerConfig& phase1, const OptimizerConfig& phase2,
    const TwoPhaseSchedule& schedule, const std::function<void(const EpochMetrics&)>& on_epoch) {
  if (dataset.empty()) throw ConfigError("training dataset is empty");
  const std::size_t classes = spec.num_classes();
  if (classes == 0) throw ConfigError("spec has no classification head");
  for (const auto& s : dataset) {
    if (s.label >= classes) throw DataError("label out of range");
  }

  Rng shuffle_rng(schedule.shuffle_seed);
  std::vector<EpochMetrics> log;
  std::size_t epoch = 0;
  for (int phase = 1; phase <= 2; ++phase) {
    const OptimizerConfig& cfg = (phase == 1) ? phase1 : phase2;
    const std::size_t epochs = (phase == 1) ? schedule.phase1_epochs : schedule.phase2_epochs;
    for (std::size_t e = 0; e < epochs; ++e, ++epoch) {
      EpochMetrics m;
      m.epoch = epoch;
      m.phase = phase;
      m.mean_loss = run_epoch(spec, state, dataset, cfg, schedule.batch_size, shuffle_rng,
                              &m.train_accuracy);
      log.push_back(m);
      if (on_epoch) on_epoch(m);
    }
  }
  return log;
}

std::vector<std::size_t> topk_from_scores(const std::vector<double>& scores, std::size_t k) {
  if (k == 0 || k > scores.size()) throw ConfigError("top-k out of range");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  idx.resize(k);
  return idx;
}

std::vector<std::size_t> predict_topk(const NetworkSpec& spec, const NetworkState& state,
                                      const Tensor& image, std::size_t k) {
  return topk_from_scores(forward_scores(spec, state, image), k);
}

// ---- serialization ----

namespace {

constexpr char kMagic[4] = {'C', 'B', 'P', 'W'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("weights file truncated");
  return value;
}

}  // namespace

void save_network(const std::string& path, const NetworkSpec& spec, const NetworkState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for write: " + path);
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kVersion);
  write_le<std::uint32_t>(out, Rng::kAlgorithmId);
  write_le<std::uint64_t>(out, spec.input_h);
  write_le<std::uint64_t>(out, spec.input_w);
  write_le<std::uint64_t>(out, spec.input_ch);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(spec.layers.size()));
  bool has_cbp = false;
  for (const auto& l : spec.layers) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.kind));
    write_le<std::uint64_t>(out, l.in_ch);
    write_le<std::uint64_t>(out, l.out_ch);
    write_le<std::uint64_t>(out, l.kernel);
    write_le<std::uint64_t>(out, l.stride);
    write_le<std::uint64_t>(out, l.pad);
    write_le<std::uint64_t>(out, l.window);
    write_le<std::uint64_t>(out, l.pool_stride);
    write_le<std::uint64_t>(out, l.cbp_dim);
    write_le<std::uint64_t>(out, l.cbp_seed);
    write_le<std::uint64_t>(out, l.fc_in);
    write_le<std::uint64_t>(out, l.fc_out);
    if (l.kind == LayerKind::cbp) has_cbp = true;
  }
  if (has_cbp) write_sketch_params(out, state.sketch);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (state.weights[i].size() == 0) continue;
    write_tensor(out, state.weights[i]);
    write_tensor(out, state.biases[i]);
    write_tensor(out, state.weight_momentum[i]);
    write_tensor(out, state.bias_momentum[i]);
  }
  write_le<std::uint64_t>(out, state.step_count);
  if (!out) throw DataError("weights write failed");
}

void load_network(const std::string& path, NetworkSpec& spec, NetworkState& state) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("bad weights magic, expected CBPW");
  }
  if (read_le<std::uint32_t>(in) != kVersion) throw DataError("unsupported CBPW version");
  if (read_le<std::uint32_t>(in) != Rng::kAlgorithmId) {
    throw DataError("weights file uses an unknown prng algorithm");
  }
  spec = NetworkSpec{};
  spec.input_h = read_le<std::uint64_t>(in);
  spec.input_w = read_le<std::uint64_t>(in);
  spec.input_ch = read_le<std::uint64_t>(in);
  const auto n = read_le<std::uint32_t>(in);
  bool has_cbp = false;
  for (std::uint32_t i = 0; i < n; ++i) {
    LayerSpec l;
    l.kind = static_cast<LayerKind>(read_le<std::uint32_t>(in));
    l.in_ch = read_le<std::uint64_t>(in);
    l.out_ch = read_le<std::uint64_t>(in);
    l.kernel = read_le<std::uint64_t>(in);
    l.stride = read_le<std::uint64_t>(in);
    l.pad = read_le<std::uint64_t>(in);
    l.window = read_le<std::uint64_t>(in);
    l.pool_stride = read_le<std::uint64_t>(in);
    l.cbp_dim = read_le<std::uint64_t>(in);
    l.cbp_seed = read_le<std::uint64_t>(in);
    l.fc_in = read_le<std::uint64_t>(in);
    l.fc_out = read_le<std::uint64_t>(in);
    if (l.kind == LayerKind::cbp) has_cbp = true;
    spec.layers.push_back(l);
  }
  spec.validate();

  state = NetworkState{};
  state.weights.resize(n);
  state.biases.resize(n);
  state.weight_momentum.resize(n);
  state.bias_momentum.resize(n);
  if (has_cbp) state.sketch = read_sketch_params(in);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.kind != LayerKind::conv2d && l.kind != LayerKind::fully_connected) continue;
    state.weights[i] = read_tensor(in);
    state.biases[i] = read_tensor(in);
    state.weight_momentum[i] = read_tensor(in);
    state.bias_momentum[i] = read_tensor(in);
    if (l.kind == LayerKind::conv2d) {
      const std::vector<std::size_t> expect{l.out_ch, l.kernel, l.kernel, l.in_ch};
      if (state.weights[i].shape() != expect) throw DataError("conv weight shape mismatch");
      if (state.biases[i].shape() != std::vector<std::size_t>{l.out_ch}) {
        throw DataError("conv bias shape mismatch");
      }
    } else {
      const std::vector<std::size_t> expect{l.fc_out, l.fc_in};
      if (state.weights[i].shape() != expect) throw DataError("fc weight shape mismatch");
      if (state.biases[i].shape() != std::vector<std::size_t>{l.fc_out}) {
        throw DataError("fc bias shape mismatch");
      }
    }
    if (!state.weight_momentum[i].same_shape(state.weights[i]) ||
        !state.bias_momentum[i].same_shape(state.biases[i])) {
      throw DataError("momentum buffer shape mismatch");
    }
  }
  state.step_count = read_le<std::uint64_t>(in);
}

}  // namespace cbcnn
