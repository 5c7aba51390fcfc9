#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cbcnn/data.hpp"
#include "cbcnn/net.hpp"

namespace cbcnn {

// <query, positive, negative> by image id; q and p share an item id, n does
// not.
struct Triplet {
  std::string q, p, n;
};

struct TripletLossConfig {
  double margin = 1.0;  // paper's g
};

// Sum of squared coordinate differences; equals 2*(1 - a.b) on unit vectors.
double squared_euclidean(const std::vector<double>& a, const std::vector<double>& b);

// max(0, g + D(p,q) - D(q,n)).
double triplet_loss(const std::vector<double>& q_vec, const std::vector<double>& p_vec,
                    const std::vector<double>& n_vec, const TripletLossConfig& cfg);

struct TripletGrads {
  std::vector<double> d_q, d_p, d_n;
};

// Zero everywhere when the hinge is inactive (boundary included).
TripletGrads triplet_loss_grad(const std::vector<double>& q_vec,
                               const std::vector<double>& p_vec,
                               const std::vector<double>& n_vec,
                               const TripletLossConfig& cfg);

enum class SamplingStrategy {
  uniform_random_negative,
  same_category_negative,
  cross_domain,  // q from consumer domain, p and n from shop
};

// Deterministic given seed. Throws a data error naming the offending items
// when no valid positive pair exists.
std::vector<Triplet> sample_triplets(const std::vector<ManifestEntry>& manifest,
                                     std::size_t count, SamplingStrategy strategy,
                                     std::uint64_t seed);

// Triplet list file: one triplet per line, q<TAB>p<TAB>n, '#' comments.
void save_triplets(const std::string& path, const std::vector<Triplet>& triplets);
std::vector<Triplet> load_triplets(const std::string& path,
                                   const std::vector<ManifestEntry>& manifest);

struct RetrievalTrainConfig {
  TripletLossConfig loss;
  OptimizerConfig optimizer = phase2_default();  // lr 0.001, wd 5e-4, momentum 0.9
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  std::uint64_t shuffle_seed = 0;
};

struct TripletEpochMetrics {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double active_fraction = 0.0;  // triplets with a live hinge
};

// Shared-weight training: one parameter set, three forward passes per
// triplet; branch gradients accumulate into the single state before each
// optimizer step. Images are looked up by image id.
std::vector<TripletEpochMetrics> train_retrieval(
    const NetworkSpec& spec, NetworkState& state,
    const std::unordered_map<std::string, Tensor>& images,
    const std::vector<Triplet>& triplets, const RetrievalTrainConfig& cfg,
    const std::function<void(const TripletEpochMetrics&)>& on_epoch = nullptr);

}  // namespace cbcnn
