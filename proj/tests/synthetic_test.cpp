#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "cseg/synthetic.hpp"

using namespace cseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cseg_synthetic_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Voronoi, OppositeCornersSplitAlongBisector) {
  const std::vector<Site> sites{{0, 0}, {31, 31}};
  const auto y = voronoi_partition(sites, 32, 32);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) EXPECT_EQ(y.at(c, r), c + r <= 31 ? 1 : 2) << c << "," << r;
}

TEST(Voronoi, SingleSiteCoversEverything) {
  const std::vector<Site> sites{{3.5, 9.0}};
  EXPECT_EQ(voronoi_partition(sites, 8, 8), RegionLabelMap(8, 8, 1));
}

TEST(Synthetic, ReplayIsBitwiseIdentical) {
  const auto a = generate_synthetic_dataset(5, 64, 42);
  const auto b = generate_synthetic_dataset(5, 64, 42);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].labels, b[i].labels);
  }
  // Scenes depend on (seed, index) only, not on how many precede them.
  const auto c = generate_synthetic_dataset(2, 64, 42, 3);
  EXPECT_EQ(c[0].image, a[3].image);
  EXPECT_EQ(c[1].labels, a[4].labels);
  EXPECT_NE(generate_scene(64, 43, 0).image, a[0].image);
}

TEST(Synthetic, AuditOfThousandScenes) {
  std::set<int> seen;
  for (const auto& s : generate_synthetic_dataset(1000, 32, 7)) {
    const int n = s.regions();
    seen.insert(n);
    ASSERT_GE(n, 2);
    ASSERT_LE(n, 8);
    ASSERT_TRUE(s.labels.is_partition(n));
    for (int i = 1; i <= n; ++i) ASSERT_GE(s.labels.count(i), 25u);
    for (float v : s.image.values()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
      ASSERT_EQ(float(to_byte(v)) / 255.0f, v);
    }
  }
  EXPECT_EQ(seen, (std::set<int>{2, 3, 4, 5, 6, 7, 8}));
}

TEST(Synthetic, RejectsBadArguments) {
  EXPECT_THROW(generate_synthetic_dataset(0, 64, 1), std::invalid_argument);
  EXPECT_THROW(generate_synthetic_dataset(1, 48, 1), std::invalid_argument);
}

TEST(Synthetic, SaveLoadRoundTrip) {
  const auto dir = scratch_dir("roundtrip");
  const auto s = generate_scene(64, 9, 12);
  save_scene(s, dir / scene_dir_name(s.index));
  EXPECT_TRUE(fs::exists(dir / "scene_00012" / "image.png"));
  const auto t = load_scene(dir / "scene_00012");
  EXPECT_EQ(t.image, s.image);
  EXPECT_EQ(t.labels, s.labels);
  EXPECT_EQ(t.seed, 9u);
  EXPECT_EQ(t.index, 12u);
  const auto meta = read_file(dir / "scene_00012" / "meta.json");
  const auto j = nlohmann::json::parse(meta.begin(), meta.end());
  EXPECT_EQ(j.at("regions").get<int>(), s.regions());
  fs::remove_all(dir);
}

TEST(Png, RgbRoundTripOnByteGrid) {
  Tensor<float> img({3, 5, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = float(i * 7 % 256) / 255.0f;
  EXPECT_EQ(decode_png_rgb8(encode_png_rgb8(img)), img);
}

TEST(Png, Gray16KeepsRawIndices) {
  LabelMap y(4, 2, std::vector<int>{0, 1, 2, 255, 256, 1000, 40000, 65535});
  const auto bytes = encode_png_gray16(y);
  EXPECT_EQ(decode_png_gray16(bytes), y);
  // Header: 16-bit depth, colour type 0 (grayscale).
  ASSERT_GT(bytes.size(), 26u);
  EXPECT_EQ(bytes[24], 16);
  EXPECT_EQ(bytes[25], 0);
}

TEST(Png, EncodingIsDeterministic) {
  const auto s = generate_scene(32, 1, 0);
  EXPECT_EQ(encode_png_rgb8(s.image), encode_png_rgb8(s.image));
  EXPECT_EQ(encode_png_gray16(s.labels), encode_png_gray16(s.labels));
}

TEST(Png, DecodeErrors) {
  EXPECT_THROW(decode_png_rgb8(Bytes{}), PngError);
  EXPECT_THROW(decode_png_rgb8(Bytes{1, 2, 3, 4, 5}), PngError);
  auto bytes = encode_png_rgb8(generate_scene(64, 1, 0).image);
  EXPECT_THROW(decode_png_rgb8(bytes, 32 * 32), PngError);
  EXPECT_NO_THROW(decode_png_rgb8(bytes, 64 * 64));
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(decode_png_rgb8(bytes), PngError);
}

TEST(Png, LabelsOutOfRangeRejected) {
  EXPECT_THROW(encode_png_gray16(LabelMap(1, 1, std::vector<int>{70000})), std::invalid_argument);
}
