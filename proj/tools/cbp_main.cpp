// cbp: single-binary command-line interface for compact-bilinear-pooling
// embeddings, classifier / retrieval training, and k-NN evaluation.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "cbcnn/data.hpp"
#include "cbcnn/net.hpp"
#include "cbcnn/retrieval.hpp"
#include "cbcnn/sketch.hpp"
#include "cbcnn/triplet.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cbcnn;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0 = all available cores
  std::string data_root;    // falls back to env CBP_DATA_ROOT, then manifest dir
};

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? hc : 1;
}

std::string resolve_data_root(const GlobalOpts& g, const std::string& manifest_path) {
  if (!g.data_root.empty()) return g.data_root;
  const auto parent = fs::path(manifest_path).parent_path();
  return parent.empty() ? std::string(".") : parent.string();
}

void write_run_config(const std::string& near_path, const json& cfg) {
  fs::path dir = fs::path(near_path).parent_path();
  if (dir.empty()) dir = ".";
  std::ofstream out((dir / "run_config.json").string());
  if (!out) throw DataError("cannot write run_config.json next to " + near_path);
  out << cfg.dump(2) << "\n";
}

struct PreprocessOpts {
  std::size_t resize_to = 64;  // desk-scale default, 8:7 ratio like 512/448
  std::size_t crop_to = 56;
  std::vector<double> means{123.68, 116.779, 103.939};
};

void add_preprocess_opts(CLI::App* cmd, PreprocessOpts& p) {
  cmd->add_option("--resize-to", p.resize_to, "Bilinear resize target (pixels)")
      ->capture_default_str();
  cmd->add_option("--crop-to", p.crop_to, "Center-crop size; network input edge")
      ->capture_default_str();
  cmd->add_option("--mean", p.means, "Per-channel means to subtract (3 values)")
      ->expected(3);
}

PreprocessConfig to_config(const PreprocessOpts& p) {
  if (p.means.size() != 3) throw UsageError("--mean takes exactly 3 values");
  return {p.resize_to, p.crop_to, {p.means[0], p.means[1], p.means[2]}};
}

json preprocess_json(const PreprocessOpts& p) {
  return {{"resize_to", p.resize_to}, {"crop_to", p.crop_to}, {"mean", p.means}};
}

Tensor load_preprocessed(const std::string& root, const ManifestEntry& e,
                         const PreprocessConfig& cfg) {
  return preprocess(load_image(root + "/" + e.path), cfg);
}

json global_json(const GlobalOpts& g, const std::string& data_root) {
  return {{"seed", g.seed}, {"threads", g.threads}, {"data_root", data_root}};
}

// ---- command option blocks ----

struct GenDataOpts {
  std::string kind = "classification";
  std::string out_dir;
  SyntheticParams params;
};

struct TrainClsOpts {
  std::string manifest, out = "classifier.cbpw", metrics;
  std::size_t num_classes = 50;
  std::size_t cbp_dim = 256;
  std::size_t phase1_epochs = 5, phase2_epochs = 20, batch = 16;
  double phase1_lr = 1.0, phase2_lr = 0.001;
  double phase1_wd = 5e-6, phase2_wd = 5e-4;
  double momentum = 0.9;
  PreprocessOpts pre;
};

struct MakeTripletsOpts {
  std::string manifest, out = "triplets.tsv";
  std::size_t count = 1000;
  std::string strategy = "uniform";
};

struct TrainRetOpts {
  std::string manifest, triplets, init, out = "embedder.cbpw", metrics;
  std::size_t cbp_dim = 256;
  std::size_t epochs = 10, batch = 8;
  double lr = 0.001, wd = 5e-4, momentum = 0.9, margin = 1.0;
  std::size_t sample_count = 0;  // used when no --triplets file is given
  std::string strategy = "uniform";
  PreprocessOpts pre;
};

struct EmbedOpts {
  std::string manifest, weights, out = "embeddings.cbpe", split;
  PreprocessOpts pre;
};

struct QueryOpts {
  std::string store, query_id, image, weights, out, gallery_out, manifest;
  std::size_t k = 10;
  PreprocessOpts pre;
};

struct EvalClsOpts {
  std::string manifest, weights, metrics, split = "val";
  std::size_t num_classes = 50;
  PreprocessOpts pre;
};

struct EvalRetOpts {
  std::string store, audit;
  std::size_t k = 20;
  std::string protocol = "inshop";
};

struct SketchBenchOpts {
  std::vector<std::size_t> dims{64, 256, 1024};
  std::size_t input_dim = 128;
  std::size_t pairs = 50;
  std::size_t draws = 5;
  std::string out;
};

SamplingStrategy parse_strategy(const std::string& s) {
  if (s == "uniform") return SamplingStrategy::uniform_random_negative;
  if (s == "same-category") return SamplingStrategy::same_category_negative;
  if (s == "cross-domain") return SamplingStrategy::cross_domain;
  throw UsageError("unknown sampling strategy: " + s);
}

// ---- commands ----

int cmd_gen_data(const GlobalOpts& g, const GenDataOpts& o) {
  SyntheticKind kind;
  if (o.kind == "classification") kind = SyntheticKind::classification;
  else if (o.kind == "inshop") kind = SyntheticKind::inshop;
  else if (o.kind == "cross-domain") kind = SyntheticKind::cross_domain;
  else throw UsageError("unknown dataset kind: " + o.kind);

  const auto entries = generate_synthetic_dataset(kind, o.params, g.seed, o.out_dir);
  write_run_config(o.out_dir + "/manifest.csv",
                   {{"command", "gen-data"},
                    {"kind", o.kind},
                    {"out", o.out_dir},
                    {"num_classes", o.params.num_classes},
                    {"num_items", o.params.num_items},
                    {"views_per_item", o.params.views_per_item},
                    {"images_per_class", o.params.images_per_class},
                    {"image_size", o.params.image_size},
                    {"noise_level", o.params.noise_level},
                    {"global", global_json(g, o.out_dir)}});
  std::cout << "wrote " << entries.size() << " images under " << o.out_dir << "\n";
  return 0;
}

int cmd_train_cls(const GlobalOpts& g, const TrainClsOpts& o) {
  const std::string root = resolve_data_root(g, o.manifest);
  const auto manifest = load_manifest(o.manifest, o.num_classes);
  const PreprocessConfig pre = to_config(o.pre);

  std::size_t max_cat = 0;
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> val;
  for (const auto& e : manifest) {
    max_cat = std::max(max_cat, e.category);
    if (e.split == Split::train) {
      train.push_back({load_preprocessed(root, e, pre), e.category});
    } else if (e.split == Split::val) {
      val.push_back({load_preprocessed(root, e, pre), e.category});
    }
  }
  if (train.empty()) throw DataError("manifest has no train-split entries");
  const std::size_t classes = max_cat + 1;

  NetworkSpec spec = NetworkSpec::default_classifier(pre.crop_to, classes, o.cbp_dim, g.seed);
  NetworkState state = init_state(spec, g.seed);

  OptimizerConfig p1 = phase1_default();
  p1.learning_rate = o.phase1_lr;
  p1.weight_decay = o.phase1_wd;
  p1.momentum = o.momentum;
  OptimizerConfig p2 = phase2_default();
  p2.learning_rate = o.phase2_lr;
  p2.weight_decay = o.phase2_wd;
  p2.momentum = o.momentum;
  TwoPhaseSchedule sched{o.phase1_epochs, o.phase2_epochs, o.batch, g.seed};

  const std::string metrics_path = o.metrics.empty() ? o.out + ".metrics.jsonl" : o.metrics;
  std::ofstream metrics(metrics_path);
  if (!metrics) throw DataError("cannot open metrics file: " + metrics_path);

  auto val_accuracy = [&]() {
    if (val.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& s : val) {
      if (predict_topk(spec, state, s.image, 1)[0] == s.label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(val.size());
  };

  train_classifier_two_phase(spec, state, train, p1, p2, sched,
                             [&](const EpochMetrics& m) {
                               const double va = val_accuracy();
                               json line{{"epoch", m.epoch},
                                         {"phase", m.phase},
                                         {"loss", m.mean_loss},
                                         {"train_accuracy", m.train_accuracy},
                                         {"val_accuracy", va}};
                               metrics << line.dump() << "\n";
                               metrics.flush();
                               std::cout << "phase " << m.phase << " epoch " << m.epoch
                                         << "  loss " << m.mean_loss << "  train "
                                         << m.train_accuracy << "  val " << va << "\n";
                             });
  save_network(o.out, spec, state);

  write_run_config(o.out, {{"command", "train-cls"},
                           {"manifest", o.manifest},
                           {"out", o.out},
                           {"metrics", metrics_path},
                           {"num_classes", classes},
                           {"cbp_dim", o.cbp_dim},
                           {"phase1_epochs", o.phase1_epochs},
                           {"phase2_epochs", o.phase2_epochs},
                           {"batch", o.batch},
                           {"phase1_lr", o.phase1_lr},
                           {"phase2_lr", o.phase2_lr},
                           {"phase1_wd", o.phase1_wd},
                           {"phase2_wd", o.phase2_wd},
                           {"momentum", o.momentum},
                           {"preprocess", preprocess_json(o.pre)},
                           {"global", global_json(g, root)}});
  std::cout << "wrote " << o.out << "\n";
  return 0;
}

int cmd_make_triplets(const GlobalOpts& g, const MakeTripletsOpts& o) {
  const auto manifest = load_manifest(o.manifest);
  const auto triplets = sample_triplets(manifest, o.count, parse_strategy(o.strategy), g.seed);
  save_triplets(o.out, triplets);
  write_run_config(o.out, {{"command", "make-triplets"},
                           {"manifest", o.manifest},
                           {"out", o.out},
                           {"count", o.count},
                           {"strategy", o.strategy},
                           {"global", global_json(g, resolve_data_root(g, o.manifest))}});
  std::cout << "wrote " << triplets.size() << " triplets to " << o.out << "\n";
  return 0;
}

// Drops everything after the cbp layer so classifier weights seed an
// embedding net.
void truncate_to_embedder(NetworkSpec& spec, NetworkState& state) {
  std::size_t cbp_index = spec.layers.size();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind == LayerKind::cbp) cbp_index = i;
  }
  if (cbp_index == spec.layers.size()) throw DataError("weights file has no cbp layer");
  spec.layers.resize(cbp_index + 1);
  state.weights.resize(cbp_index + 1);
  state.biases.resize(cbp_index + 1);
  state.weight_momentum.resize(cbp_index + 1);
  state.bias_momentum.resize(cbp_index + 1);
  spec.validate();
}

int cmd_train_ret(const GlobalOpts& g, const TrainRetOpts& o) {
  const std::string root = resolve_data_root(g, o.manifest);
  const auto manifest = load_manifest(o.manifest);
  const PreprocessConfig pre = to_config(o.pre);

  std::vector<Triplet> triplets;
  if (!o.triplets.empty()) {
    triplets = load_triplets(o.triplets, manifest);
  } else {
    const std::size_t count = o.sample_count ? o.sample_count : 50 * manifest.size() / 10;
    triplets = sample_triplets(manifest, count, parse_strategy(o.strategy), g.seed);
  }
  if (triplets.empty()) throw DataError("no triplets to train on");

  NetworkSpec spec;
  NetworkState state;
  if (!o.init.empty()) {
    load_network(o.init, spec, state);
    truncate_to_embedder(spec, state);
    if (spec.input_h != pre.crop_to) {
      throw DataError("initial weights expect input edge " + std::to_string(spec.input_h) +
                      ", preprocessing produces " + std::to_string(pre.crop_to));
    }
  } else {
    spec = NetworkSpec::default_embedder(pre.crop_to, o.cbp_dim, g.seed);
    state = init_state(spec, g.seed);
  }

  std::unordered_map<std::string, Tensor> images;
  std::unordered_map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : manifest) by_id[e.image_id] = &e;
  for (const auto& t : triplets) {
    for (const auto* id : {&t.q, &t.p, &t.n}) {
      if (images.count(*id)) continue;
      const auto it = by_id.find(*id);
      if (it == by_id.end()) throw DataError("triplet references unknown image_id " + *id);
      images.emplace(*id, load_preprocessed(root, *it->second, pre));
    }
  }

  RetrievalTrainConfig cfg;
  cfg.loss.margin = o.margin;
  cfg.optimizer = {o.lr, o.wd, o.momentum, TrainableScope::all_layers};
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.shuffle_seed = g.seed;

  const std::string metrics_path = o.metrics.empty() ? o.out + ".metrics.jsonl" : o.metrics;
  std::ofstream metrics(metrics_path);
  if (!metrics) throw DataError("cannot open metrics file: " + metrics_path);

  train_retrieval(spec, state, images, triplets, cfg, [&](const TripletEpochMetrics& m) {
    json line{{"epoch", m.epoch},
              {"loss", m.mean_loss},
              {"active_fraction", m.active_fraction}};
    metrics << line.dump() << "\n";
    metrics.flush();
    std::cout << "epoch " << m.epoch << "  loss " << m.mean_loss << "  active "
              << m.active_fraction << "\n";
  });
  save_network(o.out, spec, state);

  write_run_config(o.out, {{"command", "train-ret"},
                           {"manifest", o.manifest},
                           {"triplets", o.triplets},
                           {"init", o.init},
                           {"out", o.out},
                           {"metrics", metrics_path},
                           {"cbp_dim", o.cbp_dim},
                           {"epochs", o.epochs},
                           {"batch", o.batch},
                           {"lr", o.lr},
                           {"wd", o.wd},
                           {"momentum", o.momentum},
                           {"margin", o.margin},
                           {"sample_count", o.sample_count},
                           {"strategy", o.strategy},
                           {"preprocess", preprocess_json(o.pre)},
                           {"global", global_json(g, root)}});
  std::cout << "wrote " << o.out << "\n";
  return 0;
}

int cmd_embed(const GlobalOpts& g, const EmbedOpts& o) {
  const std::string root = resolve_data_root(g, o.manifest);
  const auto manifest = load_manifest(o.manifest);
  const PreprocessConfig pre = to_config(o.pre);

  NetworkSpec spec;
  NetworkState state;
  load_network(o.weights, spec, state);
  if (!spec.is_embedding_net()) truncate_to_embedder(spec, state);
  if (spec.input_h != pre.crop_to) {
    throw DataError("weights expect input edge " + std::to_string(spec.input_h) +
                    ", preprocessing produces " + std::to_string(pre.crop_to));
  }

  Gallery gallery;
  for (const auto& e : manifest) {
    if (!o.split.empty() && e.split != parse_split(o.split)) continue;
    gallery.add(embed_image(spec, state, load_preprocessed(root, e, pre), e));
  }
  if (gallery.records.empty()) throw DataError("no manifest entries matched the split filter");
  save_gallery(o.out, gallery);

  write_run_config(o.out, {{"command", "embed"},
                           {"manifest", o.manifest},
                           {"weights", o.weights},
                           {"out", o.out},
                           {"split", o.split},
                           {"preprocess", preprocess_json(o.pre)},
                           {"global", global_json(g, root)}});
  std::cout << "embedded " << gallery.records.size() << " images (d=" << gallery.dim
            << ") to " << o.out << "\n";
  return 0;
}

void write_gallery_html(const std::string& path, const std::string& query_label,
                        const std::vector<Neighbor>& topk, const Gallery& gallery,
                        const std::unordered_map<std::string, std::string>& paths) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open gallery page for write: " + path);
  out << "<!doctype html><html><head><meta charset=\"utf-8\"><title>query " << query_label
      << "</title></head><body>\n<h1>Query: " << query_label << "</h1>\n<ol>\n";
  for (const auto& nb : topk) {
    const auto& rec = gallery.records[nb.gallery_index];
    out << "<li><b>" << nb.image_id << "</b> (item " << rec.item_id << ", distance "
        << nb.distance << ")";
    const auto it = paths.find(nb.image_id);
    if (it != paths.end()) out << "<br><img src=\"" << it->second << "\" height=\"112\">";
    out << "</li>\n";
  }
  out << "</ol></body></html>\n";
}

int cmd_query(const GlobalOpts& g, const QueryOpts& o) {
  Gallery store = load_gallery(o.store);
  if (o.query_id.empty() == o.image.empty()) {
    throw UsageError("give exactly one of --query-id or --image");
  }

  std::vector<double> query_vec;
  std::string query_label;
  if (!o.query_id.empty()) {
    for (const auto& r : store.records) {
      if (r.image_id == o.query_id) {
        query_vec = r.vector;
        break;
      }
    }
    if (query_vec.empty()) throw DataError("query id not in store: " + o.query_id);
    query_label = o.query_id;
  } else {
    if (o.weights.empty()) throw UsageError("--image requires --weights");
    NetworkSpec spec;
    NetworkState state;
    load_network(o.weights, spec, state);
    if (!spec.is_embedding_net()) truncate_to_embedder(spec, state);
    const PreprocessConfig pre = to_config(o.pre);
    ManifestEntry meta;
    meta.image_id = o.image;
    meta.item_id = o.image;
    query_vec = embed_image(spec, state, preprocess(load_image(o.image), pre), meta).vector;
    query_label = o.image;
  }

  // Search gallery-split records when present, otherwise everything except
  // the query record itself.
  Gallery target;
  bool has_gallery_split = false;
  for (const auto& r : store.records) {
    if (r.split == Split::gallery) has_gallery_split = true;
  }
  for (const auto& r : store.records) {
    if (has_gallery_split ? r.split == Split::gallery : r.image_id != query_label) {
      target.add(r);
    }
  }
  if (target.records.empty()) throw DataError("no gallery records to search");

  const std::size_t k = std::min(o.k, target.records.size());
  const auto topk = knn_query(target, query_vec, k);

  std::cout << "rank  image_id            item_id             distance\n";
  std::ofstream jsonl;
  if (!o.out.empty()) {
    jsonl.open(o.out);
    if (!jsonl) throw DataError("cannot open output file: " + o.out);
  }
  for (std::size_t i = 0; i < topk.size(); ++i) {
    const auto& rec = target.records[topk[i].gallery_index];
    std::printf("%4zu  %-18s  %-18s  %.6g\n", i + 1, topk[i].image_id.c_str(),
                rec.item_id.c_str(), topk[i].distance);
    if (jsonl) {
      json line{{"rank", i + 1},
                {"image_id", topk[i].image_id},
                {"item_id", rec.item_id},
                {"distance", topk[i].distance}};
      jsonl << line.dump() << "\n";
    }
  }

  if (!o.gallery_out.empty()) {
    std::unordered_map<std::string, std::string> paths;
    if (!o.manifest.empty()) {
      const std::string root = resolve_data_root(g, o.manifest);
      for (const auto& e : load_manifest(o.manifest)) paths[e.image_id] = root + "/" + e.path;
    }
    write_gallery_html(o.gallery_out, query_label, topk, target, paths);
  }

  const std::string anchor = !o.out.empty() ? o.out
                             : !o.gallery_out.empty() ? o.gallery_out
                                                      : std::string("run_config.json");
  write_run_config(anchor, {{"command", "query"},
                            {"store", o.store},
                            {"query_id", o.query_id},
                            {"image", o.image},
                            {"weights", o.weights},
                            {"k", o.k},
                            {"out", o.out},
                            {"gallery_out", o.gallery_out},
                            {"manifest", o.manifest},
                            {"preprocess", preprocess_json(o.pre)},
                            {"global", global_json(g, g.data_root)}});
  return 0;
}

int cmd_eval_cls(const GlobalOpts& g, const EvalClsOpts& o) {
  const std::string root = resolve_data_root(g, o.manifest);
  const auto manifest = load_manifest(o.manifest, o.num_classes);
  const PreprocessConfig pre = to_config(o.pre);
  const Split split = parse_split(o.split);

  NetworkSpec spec;
  NetworkState state;
  load_network(o.weights, spec, state);
  if (spec.num_classes() == 0) throw DataError("weights file is not a classifier");
  if (spec.input_h != pre.crop_to) {
    throw DataError("weights expect input edge " + std::to_string(spec.input_h) +
                    ", preprocessing produces " + std::to_string(pre.crop_to));
  }

  std::size_t total = 0, top1 = 0, top3 = 0, top5 = 0;
  for (const auto& e : manifest) {
    if (e.split != split) continue;
    ++total;
    const std::size_t k = std::min<std::size_t>(5, spec.num_classes());
    const auto ranked = predict_topk(spec, state, load_preprocessed(root, e, pre), k);
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      if (ranked[i] != e.category) continue;
      if (i < 1) ++top1;
      if (i < 3) ++top3;
      if (i < 5) ++top5;
      break;
    }
  }
  if (total == 0) throw DataError("no manifest entries in split " + o.split);

  const double a1 = double(top1) / double(total);
  const double a3 = double(top3) / double(total);
  const double a5 = double(top5) / double(total);
  std::printf("split %-8s images %zu\n", o.split.c_str(), total);
  std::printf("top-1 accuracy  %.4f\n", a1);
  std::printf("top-3 accuracy  %.4f\n", a3);
  std::printf("top-5 accuracy  %.4f\n", a5);

  const std::string metrics_path = o.metrics.empty() ? "eval_cls.jsonl" : o.metrics;
  {
    std::ofstream out(metrics_path);
    if (!out) throw DataError("cannot open metrics file: " + metrics_path);
    json line{{"split", o.split},       {"images", total}, {"top1_accuracy", a1},
              {"top3_accuracy", a3},    {"top5_accuracy", a5}};
    out << line.dump() << "\n";
  }
  write_run_config(metrics_path, {{"command", "eval-cls"},
                                  {"manifest", o.manifest},
                                  {"weights", o.weights},
                                  {"metrics", metrics_path},
                                  {"split", o.split},
                                  {"num_classes", o.num_classes},
                                  {"preprocess", preprocess_json(o.pre)},
                                  {"global", global_json(g, root)}});
  return 0;
}

int cmd_eval_ret(const GlobalOpts& g, const EvalRetOpts& o) {
  const Gallery store = load_gallery(o.store);
  const std::size_t threads = resolve_threads(g.threads);

  RetrievalReport report;
  if (o.protocol == "inshop") {
    std::vector<EmbeddingRecord> queries;
    Gallery gallery;
    for (const auto& r : store.records) {
      if (r.split == Split::query) queries.push_back(r);
      else if (r.split == Split::gallery) gallery.add(r);
    }
    if (queries.empty()) throw DataError("store has no query-split records");
    if (gallery.records.empty()) throw DataError("store has no gallery-split records");
    report = topk_retrieval_accuracy(queries, gallery,
                                     std::min(o.k, gallery.records.size()), threads);
  } else if (o.protocol == "cross-domain") {
    std::size_t shop = 0;
    for (const auto& r : store.records) shop += r.domain == Domain::shop;
    report = cross_domain_eval(store.records, std::min(o.k, shop), threads);
  } else {
    throw UsageError("unknown protocol: " + o.protocol);
  }

  std::printf("protocol %-12s k %zu  queries %zu  hits %zu\n", o.protocol.c_str(), o.k,
              report.total, report.hits);
  std::printf("top-%zu accuracy  %.4f\n", o.k, report.accuracy);

  const std::string audit_path = o.audit.empty() ? "eval_ret.jsonl" : o.audit;
  {
    std::ofstream out(audit_path);
    if (!out) throw DataError("cannot open audit file: " + audit_path);
    for (const auto& q : report.per_query) {
      json ids = json::array(), dists = json::array();
      for (const auto& nb : q.topk) {
        ids.push_back(nb.image_id);
        dists.push_back(nb.distance);
      }
      json line{{"image_id", q.image_id},
                {"hit", q.hit},
                {"item_in_gallery", q.item_in_gallery},
                {"topk_ids", ids},
                {"topk_distances", dists}};
      out << line.dump() << "\n";
    }
  }
  write_run_config(audit_path, {{"command", "eval-ret"},
                                {"store", o.store},
                                {"k", o.k},
                                {"protocol", o.protocol},
                                {"audit", audit_path},
                                {"global", global_json(g, g.data_root)}});
  return 0;
}

int cmd_sketch_bench(const GlobalOpts& g, const SketchBenchOpts& o) {
  if (o.dims.empty()) throw UsageError("--dims needs at least one value");

  Rng rng(Rng(g.seed).substream(99));
  auto normalize = [](std::vector<double>& v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    for (auto& x : v) x /= std::sqrt(n2);
  };
  // Correlated unit pairs: for independent random pairs (x . y)^2 is near
  // zero and relative error is uninformative.
  std::vector<std::vector<double>> xs, ys;
  for (std::size_t p = 0; p < o.pairs; ++p) {
    std::vector<double> x(o.input_dim), y(o.input_dim);
    for (auto& v : x) v = rng.next_gaussian();
    normalize(x);
    for (std::size_t i = 0; i < o.input_dim; ++i) {
      y[i] = x[i] + 0.7 * rng.next_gaussian() / std::sqrt(double(o.input_dim));
    }
    normalize(y);
    xs.push_back(std::move(x));
    ys.push_back(std::move(y));
  }

  std::ofstream jsonl;
  if (!o.out.empty()) {
    jsonl.open(o.out);
    if (!jsonl) throw DataError("cannot open output file: " + o.out);
  }

  std::printf("%8s  %18s  %14s\n", "d", "mean rel. error", "us per sketch");
  for (const std::size_t d : o.dims) {
    double err_sum = 0.0;
    std::size_t err_count = 0;
    double elapsed_us = 0.0;
    std::size_t sketches = 0;
    for (std::size_t draw = 0; draw < o.draws; ++draw) {
      const auto params = make_sketch_params(o.input_dim, d, g.seed * 1000 + draw * 100 + d);
      for (std::size_t p = 0; p < o.pairs; ++p) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto sx = tensor_sketch(xs[p], params);
        const auto sy = tensor_sketch(ys[p], params);
        const auto t1 = std::chrono::steady_clock::now();
        elapsed_us += std::chrono::duration<double, std::micro>(t1 - t0).count();
        sketches += 2;
        double est = 0.0;
        for (std::size_t i = 0; i < d; ++i) est += sx[i] * sy[i];
        const double exact = polykernel_exact(xs[p], ys[p]);
        if (exact > 1e-12) {
          err_sum += std::abs(est - exact) / exact;
          ++err_count;
        }
      }
    }
    const double mean_err = err_sum / static_cast<double>(err_count);
    const double per_sketch = elapsed_us / static_cast<double>(sketches);
    std::printf("%8zu  %18.6f  %14.2f\n", d, mean_err, per_sketch);
    if (jsonl) {
      json line{{"d", d},
                {"mean_relative_error", mean_err},
                {"us_per_sketch", per_sketch},
                {"pairs", o.pairs},
                {"draws", o.draws}};
      jsonl << line.dump() << "\n";
    }
  }

  const std::string anchor = o.out.empty() ? std::string("run_config.json") : o.out;
  write_run_config(anchor, {{"command", "sketch-bench"},
                            {"dims", o.dims},
                            {"input_dim", o.input_dim},
                            {"pairs", o.pairs},
                            {"draws", o.draws},
                            {"out", o.out},
                            {"global", global_json(g, g.data_root)}});
  return 0;
}

void print_error(const char* kind, const std::string& message) {
  json line{{"error", kind}, {"message", message}};
  std::cerr << line.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compact bilinear pooling embeddings: training, retrieval, evaluation"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "PRNG seed for every stochastic step")
      ->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")
      ->capture_default_str();
  app.add_option("--data-root", g.data_root, "Root for manifest-relative paths")
      ->envname("CBP_DATA_ROOT");
  for (auto* opt : {app.get_option("--seed"), app.get_option("--threads"),
                    app.get_option("--data-root")}) {
    opt->ignore_case();
  }
  app.fallthrough();

  GenDataOpts gen;
  auto* c_gen = app.add_subcommand("gen-data", "Generate a synthetic PPM dataset + manifest");
  c_gen->add_option("--kind", gen.kind, "classification | inshop | cross-domain")
      ->capture_default_str();
  c_gen->add_option("--out", gen.out_dir, "Output directory")->required();
  c_gen->add_option("--classes", gen.params.num_classes)->capture_default_str();
  c_gen->add_option("--items", gen.params.num_items)->capture_default_str();
  c_gen->add_option("--views", gen.params.views_per_item)->capture_default_str();
  c_gen->add_option("--images-per-class", gen.params.images_per_class)->capture_default_str();
  c_gen->add_option("--image-size", gen.params.image_size)->capture_default_str();
  c_gen->add_option("--noise", gen.params.noise_level)->capture_default_str();

  TrainClsOpts tc;
  auto* c_tc = app.add_subcommand("train-cls", "Two-phase classifier training");
  c_tc->add_option("--manifest", tc.manifest)->required();
  c_tc->add_option("--out", tc.out, "Weights file (CBPW)")->capture_default_str();
  c_tc->add_option("--metrics", tc.metrics, "JSON-lines metrics path");
  c_tc->add_option("--num-classes", tc.num_classes)->capture_default_str();
  c_tc->add_option("--cbp-dim", tc.cbp_dim)->capture_default_str();
  c_tc->add_option("--phase1-epochs", tc.phase1_epochs)->capture_default_str();
  c_tc->add_option("--phase2-epochs", tc.phase2_epochs)->capture_default_str();
  c_tc->add_option("--batch", tc.batch)->capture_default_str();
  c_tc->add_option("--phase1-lr", tc.phase1_lr)->capture_default_str();
  c_tc->add_option("--phase2-lr", tc.phase2_lr)->capture_default_str();
  c_tc->add_option("--phase1-wd", tc.phase1_wd)->capture_default_str();
  c_tc->add_option("--phase2-wd", tc.phase2_wd)->capture_default_str();
  c_tc->add_option("--momentum", tc.momentum)->capture_default_str();
  add_preprocess_opts(c_tc, tc.pre);

  MakeTripletsOpts mt;
  auto* c_mt = app.add_subcommand("make-triplets", "Sample a triplet list from a manifest");
  c_mt->add_option("--manifest", mt.manifest)->required();
  c_mt->add_option("--out", mt.out)->capture_default_str();
  c_mt->add_option("--count", mt.count)->capture_default_str();
  c_mt->add_option("--strategy", mt.strategy, "uniform | same-category | cross-domain")
      ->capture_default_str();

  TrainRetOpts tr;
  auto* c_tr = app.add_subcommand("train-ret", "Shared-weight triplet training");
  c_tr->add_option("--manifest", tr.manifest)->required();
  c_tr->add_option("--triplets", tr.triplets, "Triplet TSV (sampled on the fly if absent)");
  c_tr->add_option("--init", tr.init, "Classifier CBPW to initialize from");
  c_tr->add_option("--out", tr.out)->capture_default_str();
  c_tr->add_option("--metrics", tr.metrics);
  c_tr->add_option("--cbp-dim", tr.cbp_dim)->capture_default_str();
  c_tr->add_option("--epochs", tr.epochs)->capture_default_str();
  c_tr->add_option("--batch", tr.batch)->capture_default_str();
  c_tr->add_option("--lr", tr.lr)->capture_default_str();
  c_tr->add_option("--wd", tr.wd)->capture_default_str();
  c_tr->add_option("--momentum", tr.momentum)->capture_default_str();
  c_tr->add_option("--margin", tr.margin)->capture_default_str();
  c_tr->add_option("--count", tr.sample_count, "Triplets to sample when no --triplets");
  c_tr->add_option("--strategy", tr.strategy)->capture_default_str();
  add_preprocess_opts(c_tr, tr.pre);

  EmbedOpts em;
  auto* c_em = app.add_subcommand("embed", "Embed manifest images into a CBPE store");
  c_em->add_option("--manifest", em.manifest)->required();
  c_em->add_option("--weights", em.weights)->required();
  c_em->add_option("--out", em.out)->capture_default_str();
  c_em->add_option("--split", em.split, "Only embed this split (default: all)");
  add_preprocess_opts(c_em, em.pre);

  QueryOpts qu;
  auto* c_qu = app.add_subcommand("query", "Rank gallery records for one query");
  c_qu->add_option("--store", qu.store)->required();
  c_qu->add_option("--query-id", qu.query_id, "Use a stored record as the query");
  c_qu->add_option("--image", qu.image, "Embed this image file as the query");
  c_qu->add_option("--weights", qu.weights, "Needed with --image");
  c_qu->add_option("-k,--k", qu.k)->capture_default_str();
  c_qu->add_option("--out", qu.out, "JSON-lines result path");
  c_qu->add_option("--gallery-out", qu.gallery_out, "Static HTML result page");
  c_qu->add_option("--manifest", qu.manifest, "Provides image paths for the HTML page");
  add_preprocess_opts(c_qu, qu.pre);

  EvalClsOpts ec;
  auto* c_ec = app.add_subcommand("eval-cls", "Top-1/3/5 classification accuracy");
  c_ec->add_option("--manifest", ec.manifest)->required();
  c_ec->add_option("--weights", ec.weights)->required();
  c_ec->add_option("--metrics", ec.metrics);
  c_ec->add_option("--split", ec.split)->capture_default_str();
  c_ec->add_option("--num-classes", ec.num_classes)->capture_default_str();
  add_preprocess_opts(c_ec, ec.pre);

  EvalRetOpts er;
  auto* c_er = app.add_subcommand("eval-ret", "Top-k retrieval accuracy + audit log");
  c_er->add_option("--store", er.store)->required();
  c_er->add_option("-k,--k", er.k)->capture_default_str();
  c_er->add_option("--protocol", er.protocol, "inshop | cross-domain")->capture_default_str();
  c_er->add_option("--audit", er.audit, "JSON-lines per-query audit path");

  SketchBenchOpts sb;
  auto* c_sb = app.add_subcommand("sketch-bench", "Kernel approximation error vs d");
  c_sb->add_option("--dims", sb.dims, "Sketch dimensions to benchmark")->capture_default_str();
  c_sb->add_option("--input-dim", sb.input_dim)->capture_default_str();
  c_sb->add_option("--pairs", sb.pairs)->capture_default_str();
  c_sb->add_option("--draws", sb.draws)->capture_default_str();
  c_sb->add_option("--out", sb.out, "JSON-lines result path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (*c_gen) return cmd_gen_data(g, gen);
    if (*c_tc) return cmd_train_cls(g, tc);
    if (*c_mt) return cmd_make_triplets(g, mt);
    if (*c_tr) return cmd_train_ret(g, tr);
    if (*c_em) return cmd_embed(g, em);
    if (*c_qu) return cmd_query(g, qu);
    if (*c_ec) return cmd_eval_cls(g, ec);
    if (*c_er) return cmd_eval_ret(g, er);
    if (*c_sb) return cmd_sketch_bench(g, sb);
  } catch (const UsageError& e) {
    print_error("usage", e.what());
    return 2;
  } catch (const NumericError& e) {
    print_error("numeric", e.what());
    return 4;
  } catch (const DataError& e) {
    print_error("data", e.what());
    return 3;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
