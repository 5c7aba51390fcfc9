#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cbcnn/cbp.hpp"
#include "cbcnn/rng.hpp"
#include "cbcnn/sketch.hpp"
#include "cbcnn/tensor.hpp"

namespace cbcnn {

enum class LayerKind : std::uint32_t {
  conv2d = 1,
  relu = 2,
  maxpool = 3,
  cbp = 4,
  fully_connected = 5,
  softmax_xent = 6,
};

struct LayerSpec {
  LayerKind kind{};
  // conv2d
  std::size_t in_ch = 0, out_ch = 0, kernel = 0, stride = 1, pad = 0;
  // maxpool
  std::size_t window = 0, pool_stride = 0;
  // cbp
  std::size_t cbp_dim = 0;
  std::uint64_t cbp_seed = 0;
  // fully_connected
  std::size_t fc_in = 0, fc_out = 0;

  static LayerSpec Conv(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                        std::size_t stride = 1, std::size_t pad = 0);
  static LayerSpec Relu();
  static LayerSpec MaxPool(std::size_t window, std::size_t stride);
  static LayerSpec Cbp(std::size_t d, std::uint64_t seed);
  static LayerSpec Fc(std::size_t in, std::size_t out);
  static LayerSpec SoftmaxXent();
};

// Ordered layer stack plus the input geometry it expects.
struct NetworkSpec {
  std::size_t input_h = 0, input_w = 0, input_ch = 3;
  std::vector<LayerSpec> layers;

  // Shape of the activation produced by layer index (input is index -1).
  std::vector<std::size_t> output_shape(std::size_t layer_index) const;
  std::vector<std::size_t> input_shape() const { return {input_h, input_w, input_ch}; }

  // Validates dimension chaining and the cbp placement contract
  // (exactly one cbp for embedding/classification stacks, directly after
  // the last relu).
  void validate() const;

  std::size_t num_classes() const;  // fc_out of the final FC, 0 if none
  bool is_embedding_net() const;    // ends at the cbp layer

  // Desk-scale default extractor: conv(3->32)-relu-pool2-conv(32->64)-relu-
  // pool2-conv(64->128)-relu-cbp(d), then optionally fc+softmax.
  static NetworkSpec default_classifier(std::size_t input_hw, std::size_t num_classes,
                                        std::size_t cbp_dim, std::uint64_t cbp_seed);
  static NetworkSpec default_embedder(std::size_t input_hw, std::size_t cbp_dim,
                                      std::uint64_t cbp_seed);
};

// Learnable parameters, momentum slots and the frozen sketch tables.
struct NetworkState {
  std::vector<Tensor> weights;   // per layer; empty tensor for param-free layers
  std::vector<Tensor> biases;
  std::vector<Tensor> weight_momentum;
  std::vector<Tensor> bias_momentum;
  TensorSketchParams sketch;     // materialized from the cbp layer spec
  std::uint64_t step_count = 0;
};

// He-style random initialization; deterministic given seed.
NetworkState init_state(const NetworkSpec& spec, std::uint64_t seed);

struct Gradients {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
};

Gradients zero_gradients(const NetworkSpec& spec, const NetworkState& state);

// Forward cache for one image: acts[0] is the input, acts[i+1] the output of
// layer i. Pool argmax indices and the raw pooled cbp vector are kept for
// the backward pass.
struct ForwardCache {
  std::vector<Tensor> acts;
  std::vector<std::vector<std::size_t>> pool_argmax;  // per layer, empty unless maxpool
  std::vector<double> cbp_raw;                        // raw pooled, pre signed-sqrt
};

ForwardCache forward(const NetworkSpec& spec, const NetworkState& state, const Tensor& image);

// Output of the last non-loss layer (class scores or unit embedding).
std::vector<double> forward_scores(const NetworkSpec& spec, const NetworkState& state,
                                   const Tensor& image);
std::vector<double> forward_embedding(const NetworkSpec& spec, const NetworkState& state,
                                      const Tensor& image);

// loss and d(loss)/d(scores) for softmax cross-entropy.
double softmax_xent_loss(const std::vector<double>& scores, std::size_t label);
std::vector<double> softmax_xent_grad(const std::vector<double>& scores, std::size_t label);

// Accumulates parameter gradients for one image into `grads` given the
// gradient w.r.t. the last non-loss layer output. Returns nothing; input
// gradients are discarded at the first layer.
void backward(const NetworkSpec& spec, const NetworkState& state, const ForwardCache& cache,
              const std::vector<double>& output_grad, Gradients& grads);

enum class TrainableScope { last_layer_only, all_layers };

struct OptimizerConfig {
  double learning_rate = 0.001;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  TrainableScope scope = TrainableScope::all_layers;
};

// v <- mu*v + (g + lambda*w); w <- w - eta*v. Parameters outside scope are
// untouched, momentum slots included.
void sgd_momentum_step(const NetworkSpec& spec, NetworkState& state, const Gradients& grads,
                       const OptimizerConfig& cfg);

struct LabeledImage {
  Tensor image;
  std::size_t label = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  int phase = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

struct TwoPhaseSchedule {
  std::size_t phase1_epochs = 5;
  std::size_t phase2_epochs = 20;
  std::size_t batch_size = 16;
  std::uint64_t shuffle_seed = 0;
};

// Paper schedule defaults: phase 1 trains only the last FC layer.
OptimizerConfig phase1_default();  // lr 1.0, wd 5e-6, momentum 0.9, last layer only
OptimizerConfig phase2_default();  // lr 0.001, wd 5e-4, momentum 0.9, all layers

std::vector<EpochMetrics> train_classifier_two_phase(
    const NetworkSpec& spec, NetworkState& state, const std::vector<LabeledImage>& dataset,
    const OptimizerConfig& phase1, const OptimizerConfig& phase2,
    const TwoPhaseSchedule& schedule,
    const std::function<void(const EpochMetrics&)>& on_epoch = nullptr);

// Classes sorted by descending score, ties broken by ascending class index.
std::vector<std::size_t> predict_topk(const NetworkSpec& spec, const NetworkState& state,
                                      const Tensor& image, std::size_t k);
std::vector<std::size_t> topk_from_scores(const std::vector<double>& scores, std::size_t k);

// CBPW weights file: magic "CBPW", u32 version, layer list, input geometry,
// sketch parameter block when a cbp layer exists, then per-layer weight and
// bias tensors in declaration order (CBPT format).
void save_network(const std::string& path, const NetworkSpec& spec, const NetworkState& state);
void load_network(const std::string& path, NetworkSpec& spec, NetworkState& state);

}  // namespace cbcnn
