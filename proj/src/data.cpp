#include "ccrl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "ccrl/errors.hpp"
#include "ccrl/rng.hpp"

namespace fs = std::filesystem;

namespace ccrl {

std::map<std::uint32_t, BoxI> instance_boxes(const LabelImage& mask) {
  std::map<std::uint32_t, BoxI> boxes;
  for (std::size_t y = 0; y < mask.height; ++y)
    for (std::size_t x = 0; x < mask.width; ++x) {
      const std::uint32_t id = mask.at(y, x);
      if (id == 0) continue;
      const long xl = static_cast<long>(x), yl = static_cast<long>(y);
      auto [it, fresh] = boxes.try_emplace(id, BoxI{xl, yl, xl + 1, yl + 1});
      if (!fresh) {
        auto& b = it->second;
        b.x0 = std::min(b.x0, xl);
        b.y0 = std::min(b.y0, yl);
        b.x1 = std::max(b.x1, xl + 1);
        b.y1 = std::max(b.y1, yl + 1);
      }
    }
  return boxes;
}

Window scale_window(const BoxI& box, double factor) {
  if (!(factor > 0)) throw ConfigError("window factor must be positive");
  const double cx = 0.5 * static_cast<double>(box.x0 + box.x1), cy = 0.5 * static_cast<double>(box.y0 + box.y1);
  const double hw = 0.5 * factor * static_cast<double>(box.x1 - box.x0);
  const double hh = 0.5 * factor * static_cast<double>(box.y1 - box.y0);
  return {cx - hw, cy - hh, cx + hw, cy + hh};
}

Window crop_window(const BoxI& box, double factor, std::size_t width, std::size_t height) {
  Window w = scale_window(box, factor);
  w.x0 = std::max(0.0, w.x0);
  w.y0 = std::max(0.0, w.y0);
  w.x1 = std::min(static_cast<double>(width), w.x1);
  w.y1 = std::min(static_cast<double>(height), w.y1);
  return w;
}

std::vector<CellCrop> extract_crops(const TileRecord& tile, double window_factor, std::size_t out_size,
                                    std::vector<std::string>* warnings) {
  if (tile.image.width != tile.mask.width || tile.image.height != tile.mask.height)
    throw ShapeError("tile " + tile.id + ": image and mask sizes differ");
  std::vector<CellCrop> crops;
  const auto boxes = instance_boxes(tile.mask);
  for (const auto& [id, box] : boxes) {
    const Window w = crop_window(box, window_factor, tile.image.width, tile.image.height);
    if (w.width() < 2.0 || w.height() < 2.0) {
      if (warnings) warnings->push_back("tile " + tile.id + " instance " + std::to_string(id) + ": window under 2 px, skipped");
      continue;
    }
    CellCrop c;
    c.pixels = resize_window(tile.image, w, out_size, out_size);
    for (auto& v : c.pixels.data) v = std::clamp(v, 0.0f, 1.0f);
    c.tile_id = tile.id;
    c.instance_id = id;
    c.box = box;
    c.window = w;
    if (auto it = tile.labels.find(id); it != tile.labels.end()) c.label = it->second;
    crops.push_back(std::move(c));
  }
  // Ids listed in the sidecar but absent from the mask have an empty mask.
  if (warnings)
    for (const auto& [id, label] : tile.labels)
      if (!boxes.contains(id))
        warnings->push_back("tile " + tile.id + " instance " + std::to_string(id) + ": empty mask, skipped");
  return crops;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class Int>
Int parse_int(const std::string& s, const std::string& where) {
  Int v{};
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size() || s.empty())
    throw FormatError(where + ": expected an integer, got '" + s + "'");
  return v;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

void check_field(const std::string& s, const char* what) {
  if (s.find_first_of(",\n\r") != std::string::npos) throw FormatError(std::string(what) + " may not contain commas or newlines: " + s);
}

}  // namespace

std::map<std::uint32_t, int> read_label_sidecar(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::map<std::uint32_t, int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(lineno);
    const auto f = split_csv(line);
    if (f.size() != 2) throw FormatError(where + ": expected instance_id,class_id");
    if (lineno == 1 && f[0] == "instance_id") continue;
    const auto id = parse_int<std::uint32_t>(f[0], where);
    if (!labels.emplace(id, parse_int<int>(f[1], where)).second) throw FormatError(where + ": duplicate instance id");
  }
  return labels;
}

std::optional<std::string> CropDataset::meta(const std::string& key) const {
  for (const auto& [k, v] : metadata)
    if (k == key) return v;
  return std::nullopt;
}

void CropDataset::set_meta(const std::string& key, const std::string& value) {
  for (auto& [k, v] : metadata)
    if (k == key) {
      v = value;
      return;
    }
  metadata.emplace_back(key, value);
}

bool CropDataset::has_labels() const {
  return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const ManifestRow& r) { return r.label.has_value(); });
}

std::vector<int> CropDataset::labels() const {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].label) throw FormatError("manifest row " + std::to_string(i + 1) + " (" + rows[i].crop_path + ") has no label");
    out.push_back(*rows[i].label);
  }
  return out;
}

void write_manifest(const fs::path& path, const CropDataset& dataset) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& [k, v] : dataset.metadata) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos || v.find('\n') != std::string::npos)
      throw FormatError("invalid manifest metadata " + k);
    out << "# " << k << "=" << v << "\n";
  }
  out << kManifestHeader << "\n";
  for (const auto& r : dataset.rows) {
    check_field(r.crop_path, "crop_path");
    check_field(r.tile_id, "tile_id");
    out << r.crop_path << "," << r.tile_id << "," << r.instance_id << "," << r.x0 << "," << r.y0 << "," << r.x1 << ","
        << r.y1 << ",";
    if (r.label) out << *r.label;
    out << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

CropDataset read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  CropDataset d;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  static const auto expected = split_csv(kManifestHeader);
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    const auto where = path.string() + ":" + std::to_string(lineno);
    if (!header) {
      if (line.rfind("# ", 0) == 0) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError(where + ": metadata line needs key=value");
        d.metadata.emplace_back(line.substr(2, eq - 2), line.substr(eq + 1));
        continue;
      }
      const auto cols = split_csv(line);
      for (std::size_t c = 0; c < std::max(cols.size(), expected.size()); ++c) {
        if (c >= cols.size()) throw FormatError(where + ": missing column '" + expected[c] + "'");
        if (c >= expected.size() || cols[c] != expected[c])
          throw FormatError(where + ": unexpected column '" + cols[c] + "' at position " + std::to_string(c + 1));
      }
      header = true;
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != expected.size())
      throw FormatError(where + ": expected " + std::to_string(expected.size()) + " fields, got " + std::to_string(f.size()));
    ManifestRow r;
    r.crop_path = f[0];
    r.tile_id = f[1];
    if (r.crop_path.empty()) throw FormatError(where + ": column crop_path is empty");
    r.instance_id = parse_int<std::uint32_t>(f[2], where + " column instance_id");
    r.x0 = parse_int<long>(f[3], where + " column x0");
    r.y0 = parse_int<long>(f[4], where + " column y0");
    r.x1 = parse_int<long>(f[5], where + " column x1");
    r.y1 = parse_int<long>(f[6], where + " column y1");
    if (!f[7].empty()) r.label = parse_int<int>(f[7], where + " column label");
    d.rows.push_back(std::move(r));
  }
  if (!header) throw FormatError(path.string() + ": missing header line");
  return d;
}

CropDataset save_crops(const fs::path& dir, const std::vector<CellCrop>& crops,
                       std::vector<std::pair<std::string, std::string>> metadata) {
  fs::create_directories(dir / "crops");
  CropDataset d;
  d.metadata = std::move(metadata);
  char name[32];
  for (std::size_t i = 0; i < crops.size(); ++i) {
    const auto& c = crops[i];
    std::snprintf(name, sizeof name, "crops/%06zu.png", i);
    write_png((dir / name).string(), c.pixels);
    d.rows.push_back({name, c.tile_id, c.instance_id, c.box.x0, c.box.y0, c.box.x1, c.box.y1, c.label});
  }
  write_manifest(dir / "manifest.csv", d);
  return d;
}

Tensor<float> load_images(const CropDataset& dataset, const fs::path& root) {
  if (dataset.rows.empty()) throw FormatError("dataset is empty");
  std::vector<Image> images(dataset.rows.size());
  std::vector<std::string> errors(dataset.rows.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t i = 0; i < images.size(); ++i) {
    try {
      images[i] = read_png((root / dataset.rows[i].crop_path).string());
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw IoError(e);
  const std::size_t w = images[0].width, h = images[0].height;
  Tensor<float> out({images.size(), 3, h, w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].width != w || images[i].height != h)
      throw ShapeError("crop " + dataset.rows[i].crop_path + " is not " + std::to_string(w) + "x" + std::to_string(h));
    std::copy(images[i].data.begin(), images[i].data.end(), out.data() + i * 3 * h * w);
  }
  return out;
}

namespace {

struct CellStyle {
  double hue, saturation, value;
  double semi_major, aspect, angle;
  double texture_freq, texture_angle, texture_phase;
};

double class_position(std::size_t c, std::size_t n) {
  return n > 1 ? static_cast<double>(c) / static_cast<double>(n - 1) : 0.0;
}

CellStyle sample_style(std::size_t cls, std::size_t n_classes, double scale, Rng& rng) {
  const double t = class_position(cls, n_classes);
  CellStyle s;
  s.hue = std::fmod(0.8 + static_cast<double>(cls) / static_cast<double>(n_classes) + rng.uniform(-0.04, 0.04) + 1.0, 1.0);
  s.saturation = rng.uniform(0.35, 0.65);
  s.value = rng.uniform(0.45, 0.95);
  s.semi_major = scale * rng.uniform(0.22, 0.36);
  s.aspect = std::clamp(1.0 - 0.55 * t + rng.uniform(-0.08, 0.08), 0.3, 1.0);
  s.angle = rng.uniform(0.0, std::numbers::pi);
  s.texture_freq = (0.06 + 0.22 * t) * 32.0 / scale;
  s.texture_angle = rng.uniform(0.0, std::numbers::pi);
  s.texture_phase = rng.uniform(0.0, 2 * std::numbers::pi);
  return s;
}

void hsv_rgb(double h, double s, double v, double rgb[3]) {
  const double hh = (h - std::floor(h)) * 6.0;
  const int i = std::min(5, static_cast<int>(hh));
  const double f = hh - i, p = v * (1 - s), q = v * (1 - s * f), u = v * (1 - s * (1 - f));
  const double table[6][3] = {{v, u, p}, {q, v, p}, {p, v, u}, {p, q, v}, {u, p, v}, {v, p, q}};
  for (int c = 0; c < 3; ++c) rgb[c] = table[i][c];
}

// Coverage in [0,1] of an ellipse at (px,py) relative to its center.
double ellipse_cover(const CellStyle& s, double px, double py) {
  const double ca = std::cos(s.angle), sa = std::sin(s.angle);
  const double u = ca * px + sa * py, v = -sa * px + ca * py;
  const double a = s.semi_major, b = s.semi_major * s.aspect;
  const double d = std::sqrt((u * u) / (a * a) + (v * v) / (b * b));
  return 1.0 / (1.0 + std::exp(12.0 * (d - 1.0)));
}

double texture(const CellStyle& s, double px, double py) {
  const double ct = std::cos(s.texture_angle), st = std::sin(s.texture_angle);
  const double w = 2 * std::numbers::pi * s.texture_freq;
  return std::sin(w * (ct * px + st * py) + s.texture_phase) * std::sin(w * (-st * px + ct * py));
}

void paint_background(Image& img, Rng& rng) {
  const double level = rng.uniform(0.55, 0.95);
  double tint[3];
  for (auto& t : tint) t = rng.uniform(-0.06, 0.06);
  const double gx = rng.uniform(-0.15, 0.15) / static_cast<double>(img.width);
  const double gy = rng.uniform(-0.15, 0.15) / static_cast<double>(img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(level + tint[c] + gx * static_cast<double>(x) + gy * static_cast<double>(y));
}

void paint_cell(Image& img, const CellStyle& s, double cx, double cy, LabelImage* mask, std::uint32_t id) {
  double rgb[3];
  hsv_rgb(s.hue, s.saturation, s.value, rgb);
  const double reach = s.semi_major + 2.0;
  const auto x_lo = static_cast<std::size_t>(std::max(0.0, std::floor(cx - reach)));
  const auto y_lo = static_cast<std::size_t>(std::max(0.0, std::floor(cy - reach)));
  const auto x_hi = static_cast<std::size_t>(std::min(static_cast<double>(img.width), std::ceil(cx + reach)));
  const auto y_hi = static_cast<std::size_t>(std::min(static_cast<double>(img.height), std::ceil(cy + reach)));
  for (std::size_t y = y_lo; y < y_hi; ++y)
    for (std::size_t x = x_lo; x < x_hi; ++x) {
      const double px = static_cast<double>(x) + 0.5 - cx, py = static_cast<double>(y) + 0.5 - cy;
      const double cover = ellipse_cover(s, px, py);
      if (cover < 1e-3) continue;
      const double shade = 1.0 + 0.35 * texture(s, px, py);
      for (std::size_t c = 0; c < 3; ++c) {
        float& p = img.at(c, y, x);
        p = static_cast<float>((1 - cover) * p + cover * rgb[c] * shade);
      }
      if (mask && cover > 0.5) mask->data[y * mask->width + x] = id;
    }
}

void finish(Image& img, Rng& rng, double noise) {
  for (auto& v : img.data) v = std::clamp(static_cast<float>(v + noise * rng.normal()), 0.0f, 1.0f);
}

}  // namespace

std::vector<CellCrop> synth_dataset(const SynthConfig& cfg) {
  if (cfg.n_classes < 2) throw ConfigError("synth needs at least 2 classes");
  if (cfg.n_per_class < 1 || cfg.size < 8) throw ConfigError("synth needs n_per_class >= 1 and size >= 8");
  const std::size_t n = cfg.n_per_class * cfg.n_classes;
  std::vector<CellCrop> crops(n);
  const double size = static_cast<double>(cfg.size);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(cfg.seed, "synth", i));
    const std::size_t cls = i % cfg.n_classes;
    CellCrop& c = crops[i];
    c.pixels = Image(cfg.size, cfg.size);
    paint_background(c.pixels, rng);
    const CellStyle style = sample_style(cls, cfg.n_classes, size, rng);
    const double cx = size / 2 + rng.uniform(-0.1, 0.1) * size, cy = size / 2 + rng.uniform(-0.1, 0.1) * size;
    paint_cell(c.pixels, style, cx, cy, nullptr, 0);
    finish(c.pixels, rng, 0.03);
    c.tile_id = "synth";
    c.instance_id = static_cast<std::uint32_t>(i + 1);
    c.box = {0, 0, static_cast<long>(cfg.size), static_cast<long>(cfg.size)};
    c.window = {0, 0, size, size};
    c.label = static_cast<int>(cls);
  }
  return crops;
}

TileRecord synth_tile(const std::string& id, std::size_t width, std::size_t height, std::size_t n_cells,
                      std::size_t n_classes, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "tile"));
  TileRecord t;
  t.id = id;
  t.image = Image(width, height);
  t.mask = LabelImage{width, height, std::vector<std::uint32_t>(width * height, 0)};
  paint_background(t.image, rng);
  std::vector<std::pair<double, double>> placed;
  const double cell = 24.0;
  for (std::size_t k = 0, tries = 0; k < n_cells && tries < 1000 * n_cells; ++tries) {
    const double cx = rng.uniform(0.0, static_cast<double>(width)), cy = rng.uniform(0.0, static_cast<double>(height));
    if (std::any_of(placed.begin(), placed.end(),
                    [&](auto p) { return std::hypot(p.first - cx, p.second - cy) < cell * 0.8; }))
      continue;
    const std::size_t cls = rng.below(n_classes);
    paint_cell(t.image, sample_style(cls, n_classes, cell, rng), cx, cy, &t.mask, static_cast<std::uint32_t>(k + 1));
    t.labels[static_cast<std::uint32_t>(k + 1)] = static_cast<int>(cls);
    placed.emplace_back(cx, cy);
    ++k;
  }
  finish(t.image, rng, 0.02);
  // Drop labels of cells whose mask ended up empty.
  const auto boxes = instance_boxes(t.mask);
  std::erase_if(t.labels, [&](const auto& kv) { return !boxes.contains(kv.first); });
  return t;
}

PrepareSummary prepare_dataset(const fs::path& tiles, const fs::path& masks, double window_factor, const fs::path& out) {
  if (!fs::is_directory(tiles)) throw IoError("tile directory not found: " + tiles.string());
  if (!fs::is_directory(masks)) throw IoError("mask directory not found: " + masks.string());
  std::vector<fs::path> tile_paths;
  for (const auto& e : fs::directory_iterator(tiles))
    if (e.is_regular_file() && e.path().extension() == ".png") tile_paths.push_back(e.path());
  std::sort(tile_paths.begin(), tile_paths.end());
  if (tile_paths.empty()) throw IoError("no PNG tiles in " + tiles.string());

  PrepareSummary summary;
  std::vector<CellCrop> all;
  std::set<int> types;
  for (const auto& tp : tile_paths) {
    const auto stem = tp.stem().string();
    const auto mp = masks / (stem + ".png");
    if (!fs::exists(mp)) throw IoError("missing mask for tile " + stem + ": " + mp.string());
    TileRecord t;
    t.id = stem;
    t.image = read_png(tp.string());
    t.mask = read_label_png(mp.string());
    if (const auto lp = masks / (stem + ".csv"); fs::exists(lp)) t.labels = read_label_sidecar(lp);
    auto crops = extract_crops(t, window_factor, 32, &summary.warnings);
    for (auto& c : crops) {
      if (c.label) types.insert(*c.label);
      all.push_back(std::move(c));
    }
    ++summary.tile_count;
  }
  summary.cell_count = all.size();
  summary.type_count = types.size();
  std::ostringstream factor;
  factor << window_factor;
  save_crops(out, all, {{"window_factor", factor.str()}, {"source_tiles", tiles.string()}, {"source_masks", masks.string()}});
  std::ofstream s(out / "summary.txt");
  s << "Type Count: " << summary.type_count << "\nCell Count: " << summary.cell_count << "\nTile Count: " << summary.tile_count
    << "\n";
  return summary;
}

}  // namespace ccrl
