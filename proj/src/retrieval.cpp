#include "cbcnn/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>
#include <unordered_set>

#include "cbcnn/kernels.hpp"

namespace cbcnn {

void Gallery::add(EmbeddingRecord record) {
  if (records.empty()) {
    dim = record.vector.size();
  } else if (record.vector.size() != dim) {
    throw DimensionError("gallery records must share one embedding dimension");
  }
  for (const auto& r : records) {
    if (r.image_id == record.image_id) {
      throw DataError("duplicate image_id in gallery: " + record.image_id);
    }
  }
  records.push_back(std::move(record));
}

EmbeddingRecord embed_image(const NetworkSpec& spec, const NetworkState& state,
                            const Tensor& image, const ManifestEntry& meta) {
  EmbeddingRecord r;
  r.image_id = meta.image_id;
  r.item_id = meta.item_id;
  r.domain = meta.domain;
  r.split = meta.split;
  r.vector = forward_embedding(spec, state, image);
  const double norm =
      std::sqrt(kernels::active().dot(r.vector.data(), r.vector.data(), r.vector.size()));
  if (norm > 0.0 && std::abs(norm - 1.0) > 1e-9) {
    throw NumericError("embedding is not unit-normalized");
  }
  return r;
}

std::vector<Neighbor> knn_query(const Gallery& gallery, const std::vector<double>& query,
                                std::size_t k) {
  if (gallery.records.empty()) throw ConfigError("knn_query: empty gallery");
  if (k < 1 || k > gallery.records.size()) throw ConfigError("knn_query: k out of range");
  if (query.size() != gallery.dim) throw DimensionError("knn_query: dimension mismatch");

  const auto& ops = kernels::active();
  std::vector<std::pair<double, std::size_t>> dist(gallery.records.size());
  for (std::size_t i = 0; i < gallery.records.size(); ++i) {
    dist[i] = {ops.squared_distance(query.data(), gallery.records[i].vector.data(), gallery.dim),
               i};
  }
  // Ties resolve to lower insertion index; the pair's second member does it.
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());

  std::vector<Neighbor> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    out.push_back({dist[i].second, gallery.records[dist[i].second].image_id, dist[i].first});
  }
  return out;
}

RetrievalReport topk_retrieval_accuracy(const std::vector<EmbeddingRecord>& queries,
                                        const Gallery& gallery, std::size_t k,
                                        std::size_t threads) {
  if (gallery.records.empty()) throw ConfigError("empty gallery");
  if (k < 1 || k > gallery.records.size()) throw ConfigError("k out of range");

  std::unordered_set<std::string> gallery_items;
  for (const auto& r : gallery.records) gallery_items.insert(r.item_id);

  RetrievalReport report;
  report.total = queries.size();
  report.per_query.resize(queries.size());

  auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& q = queries[i];
      QueryResult res;
      res.image_id = q.image_id;
      res.item_in_gallery = gallery_items.count(q.item_id) > 0;
      res.topk = knn_query(gallery, q.vector, k);
      for (const auto& nb : res.topk) {
        if (gallery.records[nb.gallery_index].item_id == q.item_id) {
          res.hit = true;
          break;
        }
      }
      report.per_query[i] = std::move(res);
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, queries.size()));
  if (workers == 1) {
    run_range(0, queries.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (queries.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(begin + chunk, queries.size());
      if (begin < end) pool.emplace_back(run_range, begin, end);
    }
    for (auto& t : pool) t.join();
  }

  for (const auto& res : report.per_query) {
    if (res.hit) ++report.hits;
  }
  report.accuracy =
      queries.empty() ? 0.0 : static_cast<double>(report.hits) / static_cast<double>(queries.size());
  return report;
}

RetrievalReport cross_domain_eval(const std::vector<EmbeddingRecord>& records, std::size_t k,
                                  std::size_t threads) {
  std::vector<EmbeddingRecord> queries;
  Gallery gallery;
  for (const auto& r : records) {
    if (r.domain == Domain::consumer) queries.push_back(r);
    else gallery.add(r);
  }
  if (queries.empty()) throw DataError("cross_domain_eval: no consumer-domain records");
  if (gallery.records.empty()) throw DataError("cross_domain_eval: no shop-domain records");
  return topk_retrieval_accuracy(queries, gallery, k, threads);
}

// ---- CBPE store ----

namespace {

constexpr char kMagic[4] = {'C', 'B', 'P', 'E'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("embedding store truncated");
  return value;
}

void write_string(std::ostream& out, const std::string& s) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = read_le<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw DataError("embedding store truncated");
  return s;
}

}  // namespace

void save_gallery(const std::string& path, const Gallery& gallery) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open embedding store for write: " + path);
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(gallery.dim));
  write_le<std::uint64_t>(out, gallery.records.size());
  for (const auto& r : gallery.records) {
    write_string(out, r.image_id);
    write_string(out, r.item_id);
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(r.domain));
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(r.split));
    out.write(reinterpret_cast<const char*>(r.vector.data()),
              static_cast<std::streamsize>(r.vector.size() * sizeof(double)));
  }
  if (!out) throw DataError("embedding store write failed");
}

Gallery load_gallery(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding store: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("bad embedding store magic, expected CBPE");
  }
  if (read_le<std::uint32_t>(in) != kVersion) throw DataError("unsupported CBPE version");
  Gallery g;
  g.dim = read_le<std::uint32_t>(in);
  const auto count = read_le<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    EmbeddingRecord r;
    r.image_id = read_string(in);
    r.item_id = read_string(in);
    r.domain = static_cast<Domain>(read_le<std::uint8_t>(in));
    r.split = static_cast<Split>(read_le<std::uint8_t>(in));
    r.vector.resize(g.dim);
    in.read(reinterpret_cast<char*>(r.vector.data()),
            static_cast<std::streamsize>(g.dim * sizeof(double)));
    if (!in) throw DataError("embedding store truncated");
    g.records.push_back(std::move(r));
  }
  return g;
}

}  // namespace cbcnn
