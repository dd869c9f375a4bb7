#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ccrl/image.hpp"
#include "ccrl/tensor.hpp"

namespace ccrl {

/// Tight instance bounding box; x1/y1 are exclusive.
struct BoxI {
  long x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  friend bool operator==(const BoxI&, const BoxI&) = default;
};

struct TileRecord {
  std::string id;
  Image image;
  LabelImage mask;                          // 0 = background
  std::map<std::uint32_t, int> labels;      // instance id -> class id, may be empty
};

struct CellCrop {
  Image pixels;
  std::string tile_id;
  std::uint32_t instance_id = 0;
  BoxI box;
  Window window;
  std::optional<int> label;
};

/// Bounding boxes of every nonzero id, keyed by id.
std::map<std::uint32_t, BoxI> instance_boxes(const LabelImage& mask);

/// Box scaled by `factor` about its center, before clamping.
Window scale_window(const BoxI& box, double factor);
/// scale_window clamped to [0, width] × [0, height].
Window crop_window(const BoxI& box, double factor, std::size_t width, std::size_t height);

/// One crop per mask instance whose clamped window is at least 2 px on both
/// sides; problems are appended to `warnings`.
std::vector<CellCrop> extract_crops(const TileRecord& tile, double window_factor, std::size_t out_size = 32,
                                    std::vector<std::string>* warnings = nullptr);

/// Sidecar `instance_id,class_id` CSV.
std::map<std::uint32_t, int> read_label_sidecar(const std::filesystem::path& path);

struct ManifestRow {
  std::string crop_path;  // relative to the manifest directory
  std::string tile_id;
  std::uint32_t instance_id = 0;
  long x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::optional<int> label;
  friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

struct CropDataset {
  std::vector<std::pair<std::string, std::string>> metadata;  // ordered `# key=value` lines
  std::vector<ManifestRow> rows;

  std::optional<std::string> meta(const std::string& key) const;
  void set_meta(const std::string& key, const std::string& value);
  bool has_labels() const;
  /// Labels of every row; throws FormatError if any is missing.
  std::vector<int> labels() const;
  friend bool operator==(const CropDataset&, const CropDataset&) = default;
};

inline constexpr const char* kManifestHeader = "crop_path,tile_id,instance_id,x0,y0,x1,y1,label";

void write_manifest(const std::filesystem::path& path, const CropDataset& dataset);
CropDataset read_manifest(const std::filesystem::path& path);

/// Writes crops/<index>.png and manifest.csv under `dir`.
CropDataset save_crops(const std::filesystem::path& dir, const std::vector<CellCrop>& crops,
                       std::vector<std::pair<std::string, std::string>> metadata = {});
/// N×3×S×S tensor of the dataset's crops, manifest order.
Tensor<float> load_images(const CropDataset& dataset, const std::filesystem::path& root);

struct SynthConfig {
  std::size_t n_per_class = 500;
  std::size_t n_classes = 3;
  std::size_t size = 32;
  std::uint64_t seed = 7;
};

/// Labeled toy cells: each class has a hue band, an eccentricity range and a
/// texture frequency; brightness, scale, position, orientation and background
/// vary per sample. Classes are interleaved in id order.
std::vector<CellCrop> synth_dataset(const SynthConfig& cfg);

/// A tile with `n_cells` non-overlapping synthetic cells, its instance mask
/// and labels.
TileRecord synth_tile(const std::string& id, std::size_t width, std::size_t height, std::size_t n_cells,
                      std::size_t n_classes, std::uint64_t seed);

struct PrepareSummary {
  std::size_t type_count = 0, cell_count = 0, tile_count = 0;
  std::vector<std::string> warnings;
};

/// Matches <tiles>/<stem>.png with <masks>/<stem>.png (and optional
/// <masks>/<stem>.csv labels), writes crops and manifest to `out`.
PrepareSummary prepare_dataset(const std::filesystem::path& tiles, const std::filesystem::path& masks,
                               double window_factor, const std::filesystem::path& out);

}  // namespace ccrl
