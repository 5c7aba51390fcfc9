#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cbcnn/retrieval.hpp"
#include "cbcnn/rng.hpp"

using namespace cbcnn;

namespace {

std::vector<double> random_unit(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double norm2 = 0.0;
  for (auto& x : v) {
    x = rng.next_gaussian();
    norm2 += x * x;
  }
  for (auto& x : v) x /= std::sqrt(norm2);
  return v;
}

Gallery random_gallery(Rng& rng, std::size_t count, std::size_t dim,
                       std::size_t items_hint = 0) {
  Gallery g;
  const std::size_t items = items_hint ? items_hint : std::max<std::size_t>(1, count / 3);
  for (std::size_t i = 0; i < count; ++i) {
    EmbeddingRecord r;
    r.image_id = "g" + std::to_string(i);
    r.item_id = "item" + std::to_string(i % items);
    r.vector = random_unit(rng, dim);
    g.add(std::move(r));
  }
  return g;
}

// Independent oracle: full stable sort on (distance, index) computed with a
// plain loop, no shared kernels.
std::vector<std::size_t> knn_oracle(const Gallery& g, const std::vector<double>& q,
                                    std::size_t k) {
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t i = 0; i < g.records.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) {
      const double diff = q[j] - g.records[i].vector[j];
      acc += diff * diff;
    }
    d.push_back({acc, i});
  }
  std::stable_sort(d.begin(), d.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(d[i].second);
  return out;
}

}  // namespace

TEST_CASE("gallery add validates dimensions and duplicate ids") {
  Gallery g;
  g.add({"a", "item0", Domain::shop, Split::gallery, {1, 0}});
  CHECK(g.dim == 2);
  CHECK_THROWS_AS(g.add({"b", "item0", Domain::shop, Split::gallery, {1, 0, 0}}),
                  DimensionError);
  CHECK_THROWS_AS(g.add({"a", "item1", Domain::shop, Split::gallery, {0, 1}}), DataError);
}

TEST_CASE("knn matches the exhaustive-sort oracle across many galleries") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t count = 10 + rng.next_below(191);  // 10..200
    const std::size_t dim = 4 + rng.next_below(29);
    Gallery g = random_gallery(rng, count, dim);
    const auto q = random_unit(rng, dim);
    const std::size_t k = 1 + rng.next_below(count);
    const auto got = knn_query(g, q, k);
    const auto expect = knn_oracle(g, q, k);
    REQUIRE(got.size() == k);
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(got[i].gallery_index == expect[i]);
    }
    // Distances are non-decreasing.
    for (std::size_t i = 1; i < k; ++i) CHECK(got[i].distance >= got[i - 1].distance);
  }
}

TEST_CASE("exact ties resolve to the lower gallery index") {
  Gallery g;
  g.add({"first", "i0", Domain::shop, Split::gallery, {1, 0}});
  g.add({"dup", "i1", Domain::shop, Split::gallery, {1, 0}});
  g.add({"far", "i2", Domain::shop, Split::gallery, {-1, 0}});
  const auto nn = knn_query(g, {1, 0}, 2);
  CHECK(nn[0].image_id == "first");
  CHECK(nn[1].image_id == "dup");
  CHECK(nn[0].distance == 0.0);
  CHECK(nn[1].distance == 0.0);
}

TEST_CASE("knn argument validation") {
  Rng rng(43);
  Gallery g = random_gallery(rng, 5, 4);
  CHECK_THROWS_AS(knn_query(Gallery{}, {1, 0}, 1), ConfigError);
  CHECK_THROWS_AS(knn_query(g, random_unit(rng, 4), 0), ConfigError);
  CHECK_THROWS_AS(knn_query(g, random_unit(rng, 4), 6), ConfigError);
  CHECK_THROWS_AS(knn_query(g, random_unit(rng, 3), 2), DimensionError);
}

TEST_CASE("unit-vector distance ranking equals dot-product ranking") {
  Rng rng(47);
  Gallery g = random_gallery(rng, 64, 16);
  const auto q = random_unit(rng, 16);
  const auto nn = knn_query(g, q, 64);
  std::vector<std::pair<double, std::size_t>> by_dot;
  for (std::size_t i = 0; i < g.records.size(); ++i) {
    by_dot.push_back(
        {-std::inner_product(q.begin(), q.end(), g.records[i].vector.begin(), 0.0), i});
  }
  std::stable_sort(by_dot.begin(), by_dot.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 0; i < nn.size(); ++i) CHECK(nn[i].gallery_index == by_dot[i].second);
}

TEST_CASE("top-k accuracy on a hand-built fixture") {
  Gallery g;
  g.add({"g0", "A", Domain::shop, Split::gallery, {1, 0, 0}});
  g.add({"g1", "B", Domain::shop, Split::gallery, {0, 1, 0}});
  g.add({"g2", "C", Domain::shop, Split::gallery, {0, 0, 1}});

  std::vector<EmbeddingRecord> queries;
  // q0 nearest to g0 and shares item A: top-1 hit.
  queries.push_back({"q0", "A", Domain::consumer, Split::query, {0.9, 0.436, 0.0}});
  // q1 nearest to g1 but labeled A: miss at k=1, hit at k=2.
  queries.push_back({"q1", "A", Domain::consumer, Split::query, {0.436, 0.9, 0.0}});
  // q2's item is absent from the gallery entirely: always a miss.
  queries.push_back({"q2", "Z", Domain::consumer, Split::query, {0, 0, 1}});

  const auto r1 = topk_retrieval_accuracy(queries, g, 1);
  CHECK(r1.hits == 1);
  CHECK(r1.total == 3);
  CHECK(r1.accuracy == doctest::Approx(1.0 / 3.0));
  CHECK(r1.per_query[2].item_in_gallery == false);
  CHECK(r1.per_query[2].hit == false);

  const auto r2 = topk_retrieval_accuracy(queries, g, 2);
  CHECK(r2.hits == 2);
  CHECK(r2.accuracy == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("accuracy is monotone non-decreasing in k") {
  Rng rng(53);
  Gallery g = random_gallery(rng, 40, 8, 10);
  std::vector<EmbeddingRecord> queries;
  for (std::size_t i = 0; i < 25; ++i) {
    queries.push_back({"q" + std::to_string(i), "item" + std::to_string(i % 10),
                       Domain::consumer, Split::query, random_unit(rng, 8)});
  }
  double prev = -1.0;
  for (std::size_t k = 1; k <= 40; k += 3) {
    const double acc = topk_retrieval_accuracy(queries, g, k).accuracy;
    CHECK(acc >= prev);
    prev = acc;
  }
  // At k == gallery size every query whose item exists is a hit.
  CHECK(topk_retrieval_accuracy(queries, g, 40).accuracy == 1.0);
}

TEST_CASE("report is identical for any thread count") {
  Rng rng(59);
  Gallery g = random_gallery(rng, 100, 8, 20);
  std::vector<EmbeddingRecord> queries;
  for (std::size_t i = 0; i < 37; ++i) {
    queries.push_back({"q" + std::to_string(i), "item" + std::to_string(i % 25),
                       Domain::consumer, Split::query, random_unit(rng, 8)});
  }
  const auto base = topk_retrieval_accuracy(queries, g, 5, 1);
  for (std::size_t threads : {2, 3, 8}) {
    const auto r = topk_retrieval_accuracy(queries, g, 5, threads);
    REQUIRE(r.per_query.size() == base.per_query.size());
    CHECK(r.hits == base.hits);
    for (std::size_t i = 0; i < r.per_query.size(); ++i) {
      CHECK(r.per_query[i].image_id == base.per_query[i].image_id);
      CHECK(r.per_query[i].hit == base.per_query[i].hit);
      REQUIRE(r.per_query[i].topk.size() == base.per_query[i].topk.size());
      for (std::size_t j = 0; j < r.per_query[i].topk.size(); ++j) {
        CHECK(r.per_query[i].topk[j].gallery_index == base.per_query[i].topk[j].gallery_index);
        CHECK(r.per_query[i].topk[j].distance == base.per_query[i].topk[j].distance);
      }
    }
  }
}

TEST_CASE("cross_domain_eval splits by domain and validates") {
  Rng rng(61);
  std::vector<EmbeddingRecord> records;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto v = random_unit(rng, 4);
    records.push_back({"s" + std::to_string(i), "item" + std::to_string(i), Domain::shop,
                       Split::gallery, v});
    // Consumer twin of the same item at the same point: guaranteed top-1 hit.
    records.push_back({"c" + std::to_string(i), "item" + std::to_string(i), Domain::consumer,
                       Split::query, v});
  }
  const auto r = cross_domain_eval(records, 1);
  CHECK(r.total == 6);
  CHECK(r.accuracy == 1.0);

  std::vector<EmbeddingRecord> shop_only(records.begin(), records.begin() + 1);
  CHECK_THROWS_AS(cross_domain_eval(shop_only, 1), DataError);
}

TEST_CASE("embedding store round-trips bit-exactly") {
  Rng rng(67);
  Gallery g;
  for (std::size_t i = 0; i < 9; ++i) {
    g.add({"img" + std::to_string(i), "item" + std::to_string(i / 3),
           i % 2 ? Domain::consumer : Domain::shop, i % 2 ? Split::query : Split::gallery,
           random_unit(rng, 12)});
  }
  const std::string path = "/tmp/cbcnn_test_gallery.cbpe";
  save_gallery(path, g);
  const Gallery back = load_gallery(path);
  REQUIRE(back.records.size() == g.records.size());
  CHECK(back.dim == g.dim);
  for (std::size_t i = 0; i < g.records.size(); ++i) {
    CHECK(back.records[i].image_id == g.records[i].image_id);
    CHECK(back.records[i].item_id == g.records[i].item_id);
    CHECK(back.records[i].domain == g.records[i].domain);
    CHECK(back.records[i].split == g.records[i].split);
    CHECK(back.records[i].vector == g.records[i].vector);  // bit-exact
  }
  std::remove(path.c_str());
}

TEST_CASE("embedding store rejects corrupt files") {
  const std::string path = "/tmp/cbcnn_test_bad.cbpe";
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("NOPE", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_gallery(path), DataError);
  CHECK_THROWS_AS(load_gallery("/tmp/does_not_exist.cbpe"), DataError);
  std::remove(path.c_str());
}

TEST_CASE("embed_image produces a unit vector tagged with metadata") {
  NetworkSpec spec;
  spec.input_h = spec.input_w = 8;
  spec.input_ch = 3;
  spec.layers = {LayerSpec::Conv(3, 8, 3, 1, 1), LayerSpec::Relu(), LayerSpec::Cbp(16, 5)};
  spec.validate();
  const NetworkState state = init_state(spec, 71);
  Rng rng(73);
  Tensor img({8, 8, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.next_gaussian();
  ManifestEntry meta;
  meta.image_id = "x";
  meta.item_id = "itemx";
  meta.domain = Domain::consumer;
  meta.split = Split::query;
  const auto rec = embed_image(spec, state, img, meta);
  CHECK(rec.image_id == "x");
  CHECK(rec.item_id == "itemx");
  double norm2 = 0.0;
  for (double v : rec.vector) norm2 += v * v;
  CHECK(std::abs(std::sqrt(norm2) - 1.0) <= 1e-9);
}
