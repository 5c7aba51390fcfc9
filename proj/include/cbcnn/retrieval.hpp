#pragma once

#include <string>
#include <vector>

#include "cbcnn/data.hpp"
#include "cbcnn/net.hpp"

namespace cbcnn {

struct EmbeddingRecord {
  std::string image_id;
  std::string item_id;
  Domain domain = Domain::shop;
  Split split = Split::gallery;
  std::vector<double> vector;  // unit norm
};

struct Gallery {
  std::vector<EmbeddingRecord> records;
  std::size_t dim = 0;

  void add(EmbeddingRecord record);  // validates dim and unique image_id
};

// Forward through an embedding net and wrap the result; the output norm is
// checked to be 1 within 1e-9.
EmbeddingRecord embed_image(const NetworkSpec& spec, const NetworkState& state,
                            const Tensor& image, const ManifestEntry& meta);

struct Neighbor {
  std::size_t gallery_index = 0;
  std::string image_id;
  double distance = 0.0;  // squared Euclidean
};

// Exact brute-force k-NN, ascending distance, ties by gallery insertion
// order.
std::vector<Neighbor> knn_query(const Gallery& gallery, const std::vector<double>& query,
                                std::size_t k);

struct QueryResult {
  std::string image_id;
  bool hit = false;
  bool item_in_gallery = true;
  std::vector<Neighbor> topk;
};

struct RetrievalReport {
  double accuracy = 0.0;  // hits / queries
  std::size_t hits = 0;
  std::size_t total = 0;
  std::vector<QueryResult> per_query;
};

// A query is a hit iff any of its top-k results shares its item_id. Queries
// whose item has no gallery presence count as misses and are flagged in the
// report. Queries fan out across `threads` workers; results are merged by
// query index, so the report is thread-count independent.
RetrievalReport topk_retrieval_accuracy(const std::vector<EmbeddingRecord>& queries,
                                        const Gallery& gallery, std::size_t k,
                                        std::size_t threads = 1);

// Cross-domain protocol: consumer records query a shop-only gallery.
RetrievalReport cross_domain_eval(const std::vector<EmbeddingRecord>& records, std::size_t k,
                                  std::size_t threads = 1);

// CBPE embedding store: magic "CBPE", u32 version, u32 d, u64 count, then
// per record length-prefixed image_id and item_id, u8 domain, u8 split,
// float64[d] vector.
void save_gallery(const std::string& path, const Gallery& gallery);
Gallery load_gallery(const std::string& path);

}  // namespace cbcnn
