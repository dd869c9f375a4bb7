#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "ccrl/data.hpp"
#include "ccrl/errors.hpp"
#include "fixtures.hpp"

using namespace ccrl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ccrl_test_" + name + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

LabelImage blank_mask(std::size_t w, std::size_t h) { return {w, h, std::vector<std::uint32_t>(w * h, 0)}; }

void fill_box(LabelImage& m, std::uint32_t id, std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1) {
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) m.data[y * m.width + x] = id;
}

std::uint64_t checksum(const std::vector<CellCrop>& crops) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& c : crops)
    for (float v : c.pixels.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      h = (h ^ bits) * 1099511628211ull;
    }
  return h;
}

}  // namespace

TEST(Window, FactorTwoCentering) {
  EXPECT_EQ(scale_window({10, 10, 20, 20}, 2.0), (Window{5, 5, 25, 25}));
  EXPECT_EQ(crop_window({10, 10, 20, 20}, 2.0, 64, 64), (Window{5, 5, 25, 25}));
}

TEST(Window, FactorOneIsIdentity) {
  EXPECT_EQ(scale_window({3, 7, 18, 12}, 1.0), (Window{3, 7, 18, 12}));
}

TEST(Window, CornerClamping) {
  EXPECT_EQ(scale_window({0, 0, 6, 8}, 2.0), (Window{-3, -4, 9, 12}));
  EXPECT_EQ(crop_window({0, 0, 6, 8}, 2.0, 40, 30), (Window{0, 0, 9, 12}));
  EXPECT_EQ(crop_window({34, 24, 40, 30}, 2.0, 40, 30), (Window{31, 21, 40, 30}));
}

TEST(Window, CentersCoincideBeforeClamping) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const long x0 = static_cast<long>(rng.below(100)), y0 = static_cast<long>(rng.below(100));
    const BoxI b{x0, y0, x0 + 1 + static_cast<long>(rng.below(40)), y0 + 1 + static_cast<long>(rng.below(40))};
    const double f = rng.uniform(0.5, 3.0);
    const Window w = scale_window(b, f);
    ASSERT_DOUBLE_EQ(w.x0 + w.x1, static_cast<double>(b.x0 + b.x1));
    ASSERT_DOUBLE_EQ(w.y0 + w.y1, static_cast<double>(b.y0 + b.y1));
    ASSERT_NEAR(w.width(), f * static_cast<double>(b.x1 - b.x0), 1e-12);
  }
  EXPECT_THROW(scale_window({0, 0, 1, 1}, 0.0), ConfigError);
}

TEST(Extract, OneCropPerInstance) {
  const TileRecord t = synth_tile("t0", 160, 120, 12, 3, 5);
  const auto boxes = instance_boxes(t.mask);
  ASSERT_GE(boxes.size(), 8u);
  std::vector<std::string> warnings;
  const auto crops = extract_crops(t, 2.0, 32, &warnings);
  EXPECT_EQ(crops.size(), boxes.size());
  EXPECT_TRUE(warnings.empty());
  for (const auto& c : crops) {
    EXPECT_EQ(c.pixels.width, 32u);
    EXPECT_EQ(c.pixels.height, 32u);
    EXPECT_EQ(c.box, boxes.at(c.instance_id));
    EXPECT_EQ(c.window, crop_window(c.box, 2.0, 160, 120));
    ASSERT_TRUE(c.label.has_value());
    EXPECT_EQ(*c.label, t.labels.at(c.instance_id));
    for (float v : c.pixels.data) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(Extract, BoxesAreTightAndExclusive) {
  LabelImage m = blank_mask(30, 20);
  fill_box(m, 4, 10, 10, 20, 20);
  fill_box(m, 9, 0, 0, 1, 1);
  const auto boxes = instance_boxes(m);
  ASSERT_EQ(boxes.size(), 2u);
  EXPECT_EQ(boxes.at(4), (BoxI{10, 10, 20, 20}));
  EXPECT_EQ(boxes.at(9), (BoxI{0, 0, 1, 1}));
}

TEST(Extract, SkipsDegenerateAndEmptyInstances) {
  TileRecord t;
  t.id = "edge";
  t.image = Image(30, 20, 3, 0.5f);
  t.mask = blank_mask(30, 20);
  fill_box(t.mask, 1, 10, 10, 20, 20);
  fill_box(t.mask, 2, 0, 0, 1, 1);  // window of 1 px at factor 1
  t.labels = {{1, 0}, {2, 1}, {3, 2}};
  std::vector<std::string> warnings;
  const auto crops = extract_crops(t, 1.0, 32, &warnings);
  ASSERT_EQ(crops.size(), 1u);
  EXPECT_EQ(crops[0].instance_id, 1u);
  EXPECT_EQ(warnings.size(), 2u);
  t.mask.width = 29;
  EXPECT_THROW(extract_crops(t, 1.0), ShapeError);
}

TEST(Extract, CornerCropGolden) {
  const TileRecord t = synth_tile("corner", 64, 64, 0, 3, 9);
  TileRecord tile = t;
  tile.mask = blank_mask(64, 64);
  fill_box(tile.mask, 1, 0, 0, 10, 12);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) tile.image.at(0, y, x) = static_cast<float>((x + y) % 16) / 15.0f;
  const auto crops = extract_crops(tile, 2.0);
  ASSERT_EQ(crops.size(), 1u);
  EXPECT_EQ(crops[0].window, (Window{0, 0, 15, 18}));
  const auto path = ccrl::testing::fixture_dir() / "golden" / "corner_crop.png";
  if (ccrl::testing::update_golden()) write_png(path.string(), crops[0].pixels);
  EXPECT_EQ(read_png(path.string()), ccrl::testing::quantize(crops[0].pixels));
}

TEST(Manifest, RoundTrip) {
  const auto dir = scratch("manifest");
  CropDataset d;
  d.set_meta("window_factor", "2");
  d.set_meta("note", "a b=c");
  d.rows = {{"crops/a.png", "t1", 1, 0, 0, 5, 6, 2}, {"crops/b.png", "t1", 2, 3, 4, 9, 9, std::nullopt},
            {"crops/c.png", "t2", 7, 10, 11, 12, 13, 0}};
  write_manifest(dir / "m.csv", d);
  EXPECT_EQ(read_manifest(dir / "m.csv"), d);
  EXPECT_EQ(read_manifest(dir / "m.csv").meta("note"), "a b=c");
  CropDataset empty;
  write_manifest(dir / "e.csv", empty);
  EXPECT_EQ(read_manifest(dir / "e.csv"), empty);
  EXPECT_FALSE(d.has_labels());
  EXPECT_THROW(d.labels(), FormatError);
  d.rows.pop_back();
  d.rows.back().label = 1;
  EXPECT_EQ(d.labels(), (std::vector<int>{2, 1}));
}

TEST(Manifest, StrictParsing) {
  const auto dir = scratch("strict");
  auto write = [&](const std::string& text) {
    std::ofstream(dir / "m.csv") << text;
    return dir / "m.csv";
  };
  try {
    read_manifest(write("crop_path,tile_id,instance_id,x0,y0,x1,y1,label,extra\n"));
    FAIL() << "unknown column accepted";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("'extra' at position 9"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("m.csv:1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_manifest(write("crop_path,tile,instance_id,x0,y0,x1,y1,label\n")), FormatError);
  EXPECT_THROW(read_manifest(write("crop_path,tile_id,instance_id,x0,y0,x1,y1\n")), FormatError);
  try {
    read_manifest(write(std::string(kManifestHeader) + "\na.png,t,1,0,0,x,1,\n"));
    FAIL() << "bad integer accepted";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("m.csv:2 column x1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_manifest(write(std::string(kManifestHeader) + "\na.png,t,1,0,0\n")), FormatError);
  EXPECT_THROW(read_manifest(write("")), FormatError);
  EXPECT_THROW(read_manifest(dir / "missing.csv"), IoError);
}

TEST(Manifest, CropsRoundTripThroughPng) {
  const auto dir = scratch("crops");
  SynthConfig cfg;
  cfg.n_per_class = 2;
  const auto crops = synth_dataset(cfg);
  const auto d = save_crops(dir, crops, {{"origin", "synth"}});
  EXPECT_EQ(read_manifest(dir / "manifest.csv"), d);
  const auto images = load_images(d, dir);
  ASSERT_EQ(images.shape(), (Shape{6, 3, 32, 32}));
  for (std::size_t i = 0; i < crops.size(); ++i) {
    const auto q = ccrl::testing::quantize(crops[i].pixels);
    EXPECT_TRUE(std::equal(q.data.begin(), q.data.end(), images.data() + i * 3 * 32 * 32));
  }
  fs::remove(dir / d.rows[1].crop_path);
  EXPECT_THROW(load_images(d, dir), IoError);
}

TEST(Labels, SixteenBitMaskAndSidecar) {
  const auto dir = scratch("labels");
  LabelImage m = blank_mask(7, 5);
  fill_box(m, 300, 1, 1, 3, 4);
  fill_box(m, 65535, 5, 0, 7, 2);
  write_label_png((dir / "m.png").string(), m);
  const auto back = read_label_png((dir / "m.png").string());
  EXPECT_EQ(back.data, m.data);
  std::ofstream(dir / "m.csv") << "instance_id,class_id\n300,2\n65535,0\n";
  EXPECT_EQ(read_label_sidecar(dir / "m.csv"), (std::map<std::uint32_t, int>{{300, 2}, {65535, 0}}));
  std::ofstream(dir / "bad.csv") << "1,2\n1,3\n";
  EXPECT_THROW(read_label_sidecar(dir / "bad.csv"), FormatError);
}

TEST(Synth, CountsBalanceAndDeterminism) {
  SynthConfig cfg;
  const auto a = synth_dataset(cfg);
  ASSERT_EQ(a.size(), 1500u);
  std::vector<int> counts(3, 0);
  for (const auto& c : a) {
    ++counts[static_cast<std::size_t>(*c.label)];
    ASSERT_EQ(c.pixels.width, 32u);
    for (float v : c.pixels.data) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
  EXPECT_EQ(counts, (std::vector<int>{500, 500, 500}));
  EXPECT_EQ(checksum(synth_dataset(cfg)), checksum(a));
  cfg.seed = 8;
  EXPECT_NE(checksum(synth_dataset(cfg)), checksum(a));
  cfg.n_classes = 1;
  EXPECT_THROW(synth_dataset(cfg), ConfigError);
}

TEST(Synth, NearestCentroidBeatsChance) {
  SynthConfig cfg;
  cfg.n_per_class = 200;
  const auto crops = synth_dataset(cfg);
  const std::size_t dim = 3 * 32 * 32, half = crops.size() / 2;
  std::vector<std::vector<double>> centroid(3, std::vector<double>(dim, 0.0));
  std::vector<double> count(3, 0);
  for (std::size_t i = 0; i < half; ++i) {
    const auto c = static_cast<std::size_t>(*crops[i].label);
    for (std::size_t j = 0; j < dim; ++j) centroid[c][j] += crops[i].pixels.data[j];
    ++count[c];
  }
  for (std::size_t c = 0; c < 3; ++c)
    for (auto& v : centroid[c]) v /= count[c];
  std::size_t correct = 0;
  for (std::size_t i = half; i < crops.size(); ++i) {
    double best = 1e300;
    std::size_t arg = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      double d = 0;
      for (std::size_t j = 0; j < dim; ++j) d += std::pow(crops[i].pixels.data[j] - centroid[c][j], 2);
      if (d < best) best = d, arg = c;
    }
    correct += arg == static_cast<std::size_t>(*crops[i].label);
  }
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(crops.size() - half), 0.5);
}

TEST(Prepare, TwoTileFixture) {
  const auto dir = scratch("prepare");
  fs::create_directories(dir / "tiles");
  fs::create_directories(dir / "masks");
  std::size_t instances = 0;
  for (int i = 0; i < 2; ++i) {
    const auto t = synth_tile("tile" + std::to_string(i), 128, 96, 8, 3, 100 + i);
    write_png((dir / "tiles" / (t.id + ".png")).string(), t.image);
    write_label_png((dir / "masks" / (t.id + ".png")).string(), t.mask);
    std::ofstream side(dir / "masks" / (t.id + ".csv"));
    for (const auto& [id, cls] : t.labels) side << id << "," << cls << "\n";
    instances += instance_boxes(t.mask).size();
  }
  const auto s = prepare_dataset(dir / "tiles", dir / "masks", 2.0, dir / "out");
  EXPECT_EQ(s.cell_count, instances);
  EXPECT_EQ(s.tile_count, 2u);
  EXPECT_GE(s.type_count, 2u);
  const auto d = read_manifest(dir / "out" / "manifest.csv");
  EXPECT_EQ(d.rows.size(), instances);
  EXPECT_EQ(d.meta("window_factor"), "2");
  EXPECT_TRUE(d.has_labels());
  EXPECT_TRUE(fs::exists(dir / "out" / "summary.txt"));
  fs::remove(dir / "masks" / "tile1.png");
  EXPECT_THROW(prepare_dataset(dir / "tiles", dir / "masks", 2.0, dir / "out2"), IoError);
}
