#include "cbcnn/triplet.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "cbcnn/kernels.hpp"
#include "cbcnn/rng.hpp"

namespace cbcnn {

double squared_euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("squared_euclidean: length mismatch");
  return kernels::active().squared_distance(a.data(), b.data(), a.size());
}

double triplet_loss(const std::vector<double>& q_vec, const std::vector<double>& p_vec,
                    const std::vector<double>& n_vec, const TripletLossConfig& cfg) {
  return std::max(0.0, cfg.margin + squared_euclidean(p_vec, q_vec) -
                           squared_euclidean(q_vec, n_vec));
}

TripletGrads triplet_loss_grad(const std::vector<double>& q_vec,
                               const std::vector<double>& p_vec,
                               const std::vector<double>& n_vec,
                               const TripletLossConfig& cfg) {
  const std::size_t n = q_vec.size();
  TripletGrads g{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0),
                 std::vector<double>(n, 0.0)};
  // Subgradient 0 at the hinge boundary.
  if (triplet_loss(q_vec, p_vec, n_vec, cfg) <= 0.0) return g;
  for (std::size_t i = 0; i < n; ++i) {
    g.d_q[i] = 2.0 * (n_vec[i] - p_vec[i]);
    g.d_p[i] = 2.0 * (p_vec[i] - q_vec[i]);
    g.d_n[i] = 2.0 * (q_vec[i] - n_vec[i]);
  }
  return g;
}

// ---- sampling ----

std::vector<Triplet> sample_triplets(const std::vector<ManifestEntry>& manifest,
                                     std::size_t count, SamplingStrategy strategy,
                                     std::uint64_t seed) {
  // Group image indices by item id, filtered per strategy.
  const bool cross = strategy == SamplingStrategy::cross_domain;

  std::unordered_map<std::string, std::vector<std::size_t>> query_pool;  // q candidates
  std::unordered_map<std::string, std::vector<std::size_t>> anchor_pool; // p/n candidates
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& e = manifest[i];
    if (cross) {
      if (e.domain == Domain::consumer) query_pool[e.item_id].push_back(i);
      else anchor_pool[e.item_id].push_back(i);
    } else {
      query_pool[e.item_id].push_back(i);
      anchor_pool[e.item_id].push_back(i);
    }
  }

  // Items usable as (q, p) sources.
  std::vector<std::string> valid_items;
  for (const auto& [item, qs] : query_pool) {
    const auto it = anchor_pool.find(item);
    if (it == anchor_pool.end()) continue;
    if (cross ? !it->second.empty() : it->second.size() >= 2) valid_items.push_back(item);
  }
  std::sort(valid_items.begin(), valid_items.end());
  if (valid_items.empty()) {
    std::string items;
    for (const auto& [item, qs] : query_pool) {
      if (!items.empty()) items += ", ";
      items += item;
    }
    throw DataError("no item has a valid positive pair; items seen: " + items);
  }
  if (anchor_pool.size() < 2) throw DataError("need at least 2 distinct item ids");

  std::vector<std::string> negative_items;
  for (const auto& [item, xs] : anchor_pool) {
    if (!xs.empty()) negative_items.push_back(item);
  }
  std::sort(negative_items.begin(), negative_items.end());

  std::unordered_map<std::string, std::size_t> category_of;
  for (const auto& e : manifest) category_of[e.item_id] = e.category;

  Rng rng(seed);
  std::vector<Triplet> out;
  out.reserve(count);
  while (out.size() < count) {
    const std::string& item = valid_items[rng.next_below(valid_items.size())];
    const auto& qs = query_pool[item];
    const auto& ps = anchor_pool[item];

    const std::size_t qi = qs[rng.next_below(qs.size())];
    std::size_t pi;
    do {
      pi = ps[rng.next_below(ps.size())];
    } while (pi == qi);

    // Negative: any different item (same category when requested).
    std::string neg_item;
    for (int attempts = 0;; ++attempts) {
      neg_item = negative_items[rng.next_below(negative_items.size())];
      if (neg_item == item) continue;
      if (strategy == SamplingStrategy::same_category_negative &&
          category_of[neg_item] != category_of[item] && attempts < 1000) {
        continue;
      }
      break;
    }
    const auto& ns = anchor_pool[neg_item];
    const std::size_t ni = ns[rng.next_below(ns.size())];
    out.push_back({manifest[qi].image_id, manifest[pi].image_id, manifest[ni].image_id});
  }
  return out;
}

// ---- triplet list file ----

void save_triplets(const std::string& path, const std::vector<Triplet>& triplets) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open triplet file for write: " + path);
  out << "# q\tp\tn\n";
  for (const auto& t : triplets) out << t.q << '\t' << t.p << '\t' << t.n << '\n';
  if (!out) throw DataError("triplet file write failed");
}

std::vector<Triplet> load_triplets(const std::string& path,
                                   const std::vector<ManifestEntry>& manifest) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open triplet file: " + path);

  std::unordered_map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : manifest) by_id[e.image_id] = &e;

  std::vector<Triplet> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    Triplet t;
    if (!(std::getline(row, t.q, '\t') && std::getline(row, t.p, '\t') &&
          std::getline(row, t.n))) {
      throw DataError("triplet file line " + std::to_string(line_no) + ": expected q\\tp\\tn");
    }
    for (const auto* id : {&t.q, &t.p, &t.n}) {
      if (by_id.find(*id) == by_id.end()) {
        throw DataError("triplet file line " + std::to_string(line_no) +
                        ": unknown image_id " + *id);
      }
    }
    if (by_id[t.q]->item_id != by_id[t.p]->item_id) {
      throw DataError("triplet file line " + std::to_string(line_no) +
                      ": q and p have different item ids");
    }
    if (by_id[t.q]->item_id == by_id[t.n]->item_id) {
      throw DataError("triplet file line " + std::to_string(line_no) +
                      ": n shares q's item id");
    }
    out.push_back(std::move(t));
  }
  return out;
}

// ---- training ----

std::vector<TripletEpochMetrics> train_retrieval(
    const NetworkSpec& spec, NetworkState& state,
    const std::unordered_map<std::string, Tensor>& images,
    const std::vector<Triplet>& triplets, const RetrievalTrainConfig& cfg,
    const std::function<void(const TripletEpochMetrics&)>& on_epoch) {
  if (!spec.is_embedding_net()) throw ConfigError("retrieval training needs an embedding spec");
  if (triplets.empty()) throw ConfigError("no triplets given");
  for (const auto& t : triplets) {
    for (const auto* id : {&t.q, &t.p, &t.n}) {
      if (images.find(*id) == images.end()) throw DataError("no image for id " + *id);
    }
  }

  Rng shuffle_rng(cfg.shuffle_seed);
  std::vector<TripletEpochMetrics> log;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(triplets.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
    }

    double total_loss = 0.0;
    std::size_t active = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      Gradients grads = zero_gradients(spec, state);
      for (std::size_t b = start; b < end; ++b) {
        const Triplet& t = triplets[order[b]];
        // One shared parameter set, three forward passes.
        ForwardCache cq = forward(spec, state, images.at(t.q));
        ForwardCache cp = forward(spec, state, images.at(t.p));
        ForwardCache cn = forward(spec, state, images.at(t.n));
        const auto& q_vec = cq.acts.back().vec();
        const auto& p_vec = cp.acts.back().vec();
        const auto& n_vec = cn.acts.back().vec();

        const double loss = triplet_loss(q_vec, p_vec, n_vec, cfg.loss);
        total_loss += loss;
        if (loss <= 0.0) continue;  // inactive hinge: no data gradient
        ++active;
        const TripletGrads tg = triplet_loss_grad(q_vec, p_vec, n_vec, cfg.loss);
        backward(spec, state, cq, tg.d_q, grads);
        backward(spec, state, cp, tg.d_p, grads);
        backward(spec, state, cn, tg.d_n, grads);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& t : grads.weights) {
        if (t.size() > 0) t = t.scaled(inv);
      }
      for (auto& t : grads.biases) {
        if (t.size() > 0) t = t.scaled(inv);
      }
      sgd_momentum_step(spec, state, grads, cfg.optimizer);
    }

    TripletEpochMetrics m;
    m.epoch = epoch;
    m.mean_loss = total_loss / static_cast<double>(triplets.size());
    m.active_fraction = static_cast<double>(active) / static_cast<double>(triplets.size());
    log.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return log;
}

}  // namespace cbcnn
