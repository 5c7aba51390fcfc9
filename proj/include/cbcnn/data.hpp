#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cbcnn/tensor.hpp"

namespace cbcnn {

enum class Domain : std::uint8_t { shop = 0, consumer = 1 };
enum class Split : std::uint8_t { train = 0, val = 1, test = 2, gallery = 3, query = 4 };

const char* to_string(Domain d);
const char* to_string(Split s);
Domain parse_domain(const std::string& s);
Split parse_split(const std::string& s);

struct ManifestEntry {
  std::string image_id;
  std::string path;  // relative to the data root
  std::size_t category = 0;
  std::string item_id;
  Domain domain = Domain::shop;
  Split split = Split::train;
};

// CSV with header image_id,path,category,item_id,domain,split. Duplicate
// image ids and out-of-range categories are rejected with line numbers.
std::vector<ManifestEntry> load_manifest(const std::string& path,
                                         std::size_t num_categories = 50);
void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// Binary PPM (P6), 8 bits per channel; decoded to [H, W, 3] with values in
// [0, 255]. The only image codec in-repo; anything else converts externally.
Tensor load_ppm(const std::string& path);
void save_ppm(const std::string& path, const Tensor& image);

// Dispatch by extension: .ppm or .cbpt.
Tensor load_image(const std::string& path);

struct PreprocessConfig {
  std::size_t resize_to = 512;
  std::size_t crop_to = 448;
  std::array<double, 3> channel_means{123.68, 116.779, 103.939};
};

// Bilinear resize to resize_to^2, center crop to crop_to^2, subtract the
// per-channel means. Output shape is always [crop_to, crop_to, 3].
Tensor preprocess(const Tensor& image, const PreprocessConfig& cfg);

enum class SyntheticKind { classification, inshop, cross_domain };

struct SyntheticParams {
  std::size_t num_classes = 10;   // classification kind
  std::size_t num_items = 50;     // inshop / cross_domain kinds
  std::size_t views_per_item = 4;
  std::size_t images_per_class = 24;
  std::size_t image_size = 28;
  double noise_level = 6.0;       // additive pixel noise sigma, 0..255 scale
};

// Writes PPM files plus manifest.csv under out_dir; byte-identical for a
// fixed seed. Classification emits parametric texture classes; inshop emits
// items with geometric-augmented views; cross_domain additionally emits
// consumer views with clutter, brightness shift and occlusion.
std::vector<ManifestEntry> generate_synthetic_dataset(SyntheticKind kind,
                                                      const SyntheticParams& params,
                                                      std::uint64_t seed,
                                                      const std::string& out_dir);

}  // namespace cbcnn
