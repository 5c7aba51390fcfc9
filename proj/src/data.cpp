#include "cbcnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "cbcnn/rng.hpp"

namespace cbcnn {

const char* to_string(Domain d) { return d == Domain::shop ? "shop" : "consumer"; }

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::gallery: return "gallery";
    case Split::query: return "query";
  }
  return "?";
}

Domain parse_domain(const std::string& s) {
  if (s == "shop") return Domain::shop;
  if (s == "consumer") return Domain::consumer;
  throw DataError("unknown domain: " + s);
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "gallery") return Split::gallery;
  if (s == "query") return Split::query;
  throw DataError("unknown split: " + s);
}

// ---- manifest ----

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

constexpr const char* kManifestHeader = "image_id,path,category,item_id,domain,split";

}  // namespace

std::vector<ManifestEntry> load_manifest(const std::string& path, std::size_t num_categories) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);

  std::string line;
  std::size_t line_no = 0;
  std::vector<ManifestEntry> entries;
  std::unordered_set<std::string> seen_ids;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (split_csv_line(line) != split_csv_line(kManifestHeader)) {
        throw DataError("manifest line 1: bad header, expected " + std::string(kManifestHeader));
      }
      header_seen = true;
      continue;
    }
    const auto fields = split_csv_line(line);
    if (fields.size() != 6) {
      throw DataError("manifest line " + std::to_string(line_no) + ": expected 6 fields, got " +
                      std::to_string(fields.size()));
    }
    ManifestEntry e;
    e.image_id = fields[0];
    e.path = fields[1];
    try {
      e.category = std::stoul(fields[2]);
    } catch (const std::exception&) {
      throw DataError("manifest line " + std::to_string(line_no) + ": bad category");
    }
    e.item_id = fields[3];
    try {
      e.domain = parse_domain(fields[4]);
      e.split = parse_split(fields[5]);
    } catch (const DataError& err) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + err.what());
    }
    if (e.image_id.empty()) {
      throw DataError("manifest line " + std::to_string(line_no) + ": empty image_id");
    }
    if (e.category >= num_categories) {
      throw DataError("manifest line " + std::to_string(line_no) + ": category " +
                      std::to_string(e.category) + " out of range [0, " +
                      std::to_string(num_categories) + ")");
    }
    if (!seen_ids.insert(e.image_id).second) {
      throw DataError("manifest line " + std::to_string(line_no) + ": duplicate image_id " +
                      e.image_id);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open manifest for write: " + path);
  out << kManifestHeader << "\n";
  for (const auto& e : entries) {
    out << e.image_id << ',' << e.path << ',' << e.category << ',' << e.item_id << ','
        << to_string(e.domain) << ',' << to_string(e.split) << "\n";
  }
  if (!out) throw DataError("manifest write failed");
}

// ---- PPM ----

Tensor load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw DataError("not a binary PPM (P6): " + path);

  auto next_token = [&in, &path]() {
    // Skips whitespace and '#' comments.
    std::string tok;
    for (;;) {
      if (!(in >> tok)) throw DataError("truncated PPM header: " + path);
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
  };
  const std::size_t w = std::stoul(next_token());
  const std::size_t h = std::stoul(next_token());
  const std::size_t maxval = std::stoul(next_token());
  if (maxval != 255) throw DataError("PPM maxval must be 255: " + path);
  in.get();  // single whitespace after maxval

  std::vector<unsigned char> raw(w * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw DataError("truncated PPM payload: " + path);

  Tensor img({h, w, 3});
  for (std::size_t i = 0; i < raw.size(); ++i) img[i] = static_cast<double>(raw[i]);
  return img;
}

void save_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.extent(2) != 3) throw DataError("save_ppm: expected [H,W,3]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open image for write: " + path);
  const std::size_t h = image.extent(0), w = image.extent(1);
  out << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> raw(image.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double v = std::round(image[i]);
    raw[i] = static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DataError("PPM write failed: " + path);
}

Tensor load_image(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".ppm") == 0) return load_ppm(path);
  if (path.size() >= 5 && path.compare(path.size() - 5, 5, ".cbpt") == 0) {
    return load_tensor(path);
  }
  throw DataError("unsupported image extension (want .ppm or .cbpt): " + path);
}

// ---- preprocessing ----

namespace {

Tensor bilinear_resize(const Tensor& in, std::size_t out_h, std::size_t out_w) {
  const std::size_t H = in.extent(0), W = in.extent(1), C = in.extent(2);
  Tensor out({out_h, out_w, C});
  const double sy = static_cast<double>(H) / static_cast<double>(out_h);
  const double sx = static_cast<double>(W) / static_cast<double>(out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    const double cy = std::clamp(fy, 0.0, static_cast<double>(H - 1));
    const std::size_t y0 = static_cast<std::size_t>(cy);
    const std::size_t y1 = std::min(y0 + 1, H - 1);
    const double wy = cy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      const double cx = std::clamp(fx, 0.0, static_cast<double>(W - 1));
      const std::size_t x0 = static_cast<std::size_t>(cx);
      const std::size_t x1 = std::min(x0 + 1, W - 1);
      const double wx = cx - static_cast<double>(x0);
      for (std::size_t c = 0; c < C; ++c) {
        const double top = (1.0 - wx) * in[(y0 * W + x0) * C + c] + wx * in[(y0 * W + x1) * C + c];
        const double bot = (1.0 - wx) * in[(y1 * W + x0) * C + c] + wx * in[(y1 * W + x1) * C + c];
        out[(oy * out_w + ox) * C + c] = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

}  // namespace

Tensor preprocess(const Tensor& image, const PreprocessConfig& cfg) {
  if (image.rank() != 3 || image.extent(2) != 3) {
    throw DataError("preprocess: expected a 3-channel [H,W,3] image");
  }
  if (cfg.crop_to > cfg.resize_to) throw ConfigError("crop_to must be <= resize_to");

  Tensor resized = (image.extent(0) == cfg.resize_to && image.extent(1) == cfg.resize_to)
                       ? image
                       : bilinear_resize(image, cfg.resize_to, cfg.resize_to);

  const std::size_t off = (cfg.resize_to - cfg.crop_to) / 2;
  Tensor out({cfg.crop_to, cfg.crop_to, 3});
  for (std::size_t y = 0; y < cfg.crop_to; ++y) {
    for (std::size_t x = 0; x < cfg.crop_to; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        out[(y * cfg.crop_to + x) * 3 + c] =
            resized[((y + off) * cfg.resize_to + (x + off)) * 3 + c] - cfg.channel_means[c];
      }
    }
  }
  return out;
}

// ---- synthetic generators ----

namespace {

struct ItemSignature {
  double freq_x, freq_y, phase;      // dominant stripe pattern
  double freq2_x, freq2_y, phase2;   // secondary pattern
  std::array<double, 3> color_a;     // color carried by pattern 1
  std::array<double, 3> color_b;     // color carried by pattern 2
  std::array<double, 3> base;        // mean color
};

ItemSignature draw_signature(Rng& rng) {
  ItemSignature s;
  s.freq_x = 0.3 + rng.next_double() * 1.6;
  s.freq_y = 0.3 + rng.next_double() * 1.6;
  s.phase = rng.next_double() * 6.28318;
  s.freq2_x = 0.3 + rng.next_double() * 1.6;
  s.freq2_y = 0.3 + rng.next_double() * 1.6;
  s.phase2 = rng.next_double() * 6.28318;
  for (std::size_t c = 0; c < 3; ++c) {
    s.color_a[c] = (rng.next_double() - 0.5) * 90.0;
    s.color_b[c] = (rng.next_double() - 0.5) * 90.0;
    s.base[c] = 100.0 + rng.next_double() * 60.0;
  }
  return s;
}

// Renders a signature at a spatial shift; the pattern is periodic, so a
// shift is a pure translation of the texture.
Tensor render(const ItemSignature& s, std::size_t size, double shift_x, double shift_y) {
  Tensor img({size, size, 3});
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = static_cast<double>(x) + shift_x;
      const double fy = static_cast<double>(y) + shift_y;
      const double p1 = std::sin(s.freq_x * fx + s.freq_y * fy + s.phase);
      const double p2 = std::sin(s.freq2_x * fx - s.freq2_y * fy + s.phase2);
      for (std::size_t c = 0; c < 3; ++c) {
        img[(y * size + x) * 3 + c] = s.base[c] + p1 * s.color_a[c] + p2 * s.color_b[c];
      }
    }
  }
  return img;
}

void add_noise(Tensor& img, Rng& rng, double sigma) {
  for (std::size_t i = 0; i < img.size(); ++i) img[i] += sigma * rng.next_gaussian();
}

void clamp_pixels(Tensor& img) {
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i], 0.0, 255.0);
}

// Per-view lighting nuisance: independent gain and offset per channel. This
// destroys absolute color as an identity cue, so retrieval has to rely on
// the spatial pattern itself.
void lighting_jitter(Tensor& img, Rng& rng) {
  const double gain = 0.8 + rng.next_double() * 0.45;
  std::array<double, 3> offset;
  for (std::size_t c = 0; c < 3; ++c) offset[c] = (rng.next_double() - 0.5) * 200.0;
  for (std::size_t i = 0; i < img.size(); i += 3) {
    for (std::size_t c = 0; c < 3; ++c) img[i + c] = img[i + c] * gain + offset[c];
  }
}

// Consumer-domain nuisance on top of lighting: clutter rectangles.
void consumerize(Tensor& img, Rng& rng) {
  const std::size_t size = img.extent(0);
  const std::size_t rects = 2 + rng.next_below(3);
  for (std::size_t r = 0; r < rects; ++r) {
    const std::size_t rw = 2 + rng.next_below(std::max<std::size_t>(size / 4, 2));
    const std::size_t rh = 2 + rng.next_below(std::max<std::size_t>(size / 4, 2));
    const std::size_t rx = rng.next_below(size - rw);
    const std::size_t ry = rng.next_below(size - rh);
    std::array<double, 3> color;
    for (auto& c : color) c = rng.next_double() * 255.0;
    for (std::size_t y = ry; y < ry + rh; ++y) {
      for (std::size_t x = rx; x < rx + rw; ++x) {
        for (std::size_t c = 0; c < 3; ++c) img[(y * size + x) * 3 + c] = color[c];
      }
    }
  }
}

std::string pad4(std::size_t v) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%04zu", v);
  return buf;
}

}  // namespace

std::vector<ManifestEntry> generate_synthetic_dataset(SyntheticKind kind,
                                                      const SyntheticParams& params,
                                                      std::uint64_t seed,
                                                      const std::string& out_dir) {
  if (params.image_size < 8) throw ConfigError("image_size too small");
  std::filesystem::create_directories(out_dir);
  Rng rng(seed);
  std::vector<ManifestEntry> entries;

  auto emit = [&](const Tensor& img, ManifestEntry e) {
    e.path = e.image_id + ".ppm";
    save_ppm(out_dir + "/" + e.path, img);
    entries.push_back(std::move(e));
  };

  if (kind == SyntheticKind::classification) {
    if (params.num_classes == 0) throw ConfigError("num_classes must be positive");
    // One signature per class; samples vary by shift and noise, plus a small
    // per-sample jitter of the secondary phase so the class is a texture
    // family rather than a single image.
    std::vector<ItemSignature> classes;
    for (std::size_t k = 0; k < params.num_classes; ++k) classes.push_back(draw_signature(rng));
    for (std::size_t k = 0; k < params.num_classes; ++k) {
      for (std::size_t i = 0; i < params.images_per_class; ++i) {
        ItemSignature s = classes[k];
        s.phase2 += (rng.next_double() - 0.5) * 0.6;
        Tensor img = render(s, params.image_size, rng.next_double() * 40.0,
                            rng.next_double() * 40.0);
        add_noise(img, rng, params.noise_level);
        clamp_pixels(img);
        ManifestEntry e;
        e.image_id = "cls" + pad4(k) + "_" + pad4(i);
        e.category = k;
        e.item_id = "class" + pad4(k);
        e.domain = Domain::shop;
        // Last view of each class goes to the held-out split.
        e.split = (i + 1 == params.images_per_class) ? Split::val : Split::train;
        emit(img, e);
      }
    }
    save_manifest(out_dir + "/manifest.csv", entries);
    return entries;
  }

  if (params.num_items < 2) throw ConfigError("need at least 2 items");
  std::vector<ItemSignature> items;
  for (std::size_t k = 0; k < params.num_items; ++k) items.push_back(draw_signature(rng));

  for (std::size_t k = 0; k < params.num_items; ++k) {
    for (std::size_t v = 0; v < params.views_per_item; ++v) {
      Tensor img = render(items[k], params.image_size, rng.next_double() * 40.0,
                          rng.next_double() * 40.0);
      lighting_jitter(img, rng);
      const bool consumer_view =
          (kind == SyntheticKind::cross_domain) && (v >= params.views_per_item / 2);
      if (consumer_view) consumerize(img, rng);
      add_noise(img, rng, consumer_view ? params.noise_level * 2.0 : params.noise_level);
      clamp_pixels(img);

      ManifestEntry e;
      e.item_id = "item" + pad4(k);
      e.image_id = e.item_id + "_v" + pad4(v);
      e.category = 0;
      if (kind == SyntheticKind::cross_domain) {
        e.domain = consumer_view ? Domain::consumer : Domain::shop;
        e.split = consumer_view ? (v + 1 == params.views_per_item ? Split::query : Split::train)
                                : (v == 0 ? Split::gallery : Split::train);
      } else {
        e.domain = Domain::shop;
        // Last view per item is the held-out query; the rest are gallery
        // plus training material.
        e.split = (v + 1 == params.views_per_item) ? Split::query : Split::gallery;
      }
      emit(img, e);
    }
  }
  save_manifest(out_dir + "/manifest.csv", entries);
  return entries;
}

}  // namespace cbcnn
