#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "xvfg/checkpoint.hpp"
#include "xvfg/dataset.hpp"
#include "xvfg/image_io.hpp"
#include "xvfg/rng.hpp"

using namespace xvfg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xvfg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

int argmax_class(const Tensor& one_hot, int y, int x) {
  int best = 0;
  for (int c = 1; c < one_hot.c(); ++c)
    if (one_hot.at(0, c, y, x) > one_hot.at(0, best, y, x)) best = c;
  return best;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExactAndStable) {
  Rng rng(1);
  NamedTensors t{{"a/w", random_normal(Shape{4, 3, 3, 3}, rng)}, {"b", random_uniform(Shape{1, 5, 1, 1}, rng)}};
  t[1].second[0] = -0.0;
  const auto dir = scratch("ckpt");
  save_checkpoint(dir / "x.xvfg", t);
  const NamedTensors back = load_checkpoint(dir / "x.xvfg");
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].first, t[i].first);
    EXPECT_EQ(back[i].second.shape(), t[i].second.shape());
    EXPECT_EQ(std::memcmp(back[i].second.ptr(), t[i].second.ptr(), t[i].second.size() * sizeof(double)), 0);
  }
  save_checkpoint(dir / "y.xvfg", back);
  EXPECT_EQ(read_bytes(dir / "x.xvfg"), read_bytes(dir / "y.xvfg"));
}

TEST(Checkpoint, EmptyMapIsMinimalFile) {
  const auto bytes = serialize_checkpoint({});
  EXPECT_EQ(bytes.size(), 4u + 4u + 4u + 4u);
  EXPECT_TRUE(parse_checkpoint(bytes).empty());
}

TEST(Checkpoint, LayoutHeader) {
  const auto bytes = serialize_checkpoint({{"w", Tensor(Shape{1, 1, 1, 2}, {1.0, 2.0})}});
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "XVFG");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[8], 1);  // count
  const std::span<const std::uint8_t> body(bytes.data(), bytes.size() - 4);
  const std::uint32_t crc = crc32_of(body);
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[bytes.size() - 4 + static_cast<std::size_t>(i)]) << (8 * i);
  EXPECT_EQ(crc, stored);
}

TEST(Checkpoint, Crc32KnownValue) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32_of(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())),
            0xCBF43926u);
}

TEST(Checkpoint, FlippedPayloadByteFailsCrc) {
  Rng rng(2);
  auto bytes = serialize_checkpoint({{"w", random_normal(Shape{2, 2, 2, 2}, rng)}});
  bytes[bytes.size() - 20] ^= 0x10;
  EXPECT_THROW(parse_checkpoint(bytes), CrcError);
}

TEST(Checkpoint, TruncatedAndBadMagicRejected) {
  auto bytes = serialize_checkpoint({{"w", Tensor(Shape{1, 1, 2, 2}, 1.0)}});
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 10);
  EXPECT_THROW(parse_checkpoint(cut), CheckpointError);
  bytes[0] = 'Y';
  EXPECT_THROW(parse_checkpoint(bytes), CheckpointError);
  EXPECT_THROW(serialize_checkpoint({{"w", Tensor::scalar(1)}, {"w", Tensor::scalar(2)}}), CheckpointError);
}

TEST(ImageCodec, EndpointsExact) {
  const auto dir = scratch("codec");
  for (double v : {-1.0, 1.0}) {
    encode_image(Tensor(Shape{1, 3, 5, 7}, v), dir / "e.ppm");
    const Tensor back = decode_image(dir / "e.ppm");
    for (double d : back.data()) EXPECT_EQ(d, v);
  }
}

TEST(ImageCodec, QuantisationBound) {
  Rng rng(3);
  const auto dir = scratch("codec2");
  const Tensor t = random_uniform(Shape{1, 3, 9, 11}, rng);
  encode_image(t, dir / "r.ppm");
  const Tensor back = decode_image(dir / "r.ppm");
  // One 8-bit step spans 2/255; rounding keeps the error within half of it.
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_LE(std::abs(back[i] - t[i]), 1.0 / 255.0 + 1e-12);
}

TEST(ImageCodec, TruncatedFileIsError) {
  const auto dir = scratch("codec3");
  encode_image(Tensor(Shape{1, 3, 8, 8}, 0.1), dir / "t.ppm");
  auto bytes = read_bytes(dir / "t.ppm");
  bytes.resize(bytes.size() - 7);
  std::ofstream(dir / "t.ppm", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                       static_cast<std::streamsize>(bytes.size()));
  EXPECT_THROW(decode_image(dir / "t.ppm"), DataError);
  EXPECT_THROW(decode_image(dir / "missing.ppm"), DataError);
}

TEST(Resize, ConstantStaysConstant) {
  const Tensor r = resize_bilinear(Tensor(Shape{1, 3, 10, 14}, 0.37), 32, 32);
  for (double v : r.data()) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(Grid, FourPanelsWide) {
  std::vector<std::vector<Tensor>> rows(2, std::vector<Tensor>(4, Tensor(Shape{1, 3, 8, 8})));
  const Tensor g = make_grid(rows);
  EXPECT_EQ(g.w(), 32);
  EXPECT_EQ(g.h(), 16);
}

TEST(ToyData, SameSeedIsBitIdentical) {
  const auto a = gen_toy_pair(77, 32);
  const auto b = gen_toy_pair(77, 32);
  EXPECT_EQ(max_abs_diff(a.aerial, b.aerial), 0.0);
  EXPECT_EQ(max_abs_diff(a.ground, b.ground), 0.0);
  EXPECT_EQ(max_abs_diff(a.ground_semantic, b.ground_semantic), 0.0);
  EXPECT_THROW(gen_toy_pair(1, 48), DataError);
}

TEST(ToyData, OneHotAtEveryPixel) {
  for (const auto& s : toy_dataset(5, 8, 32)) {
    for (const Tensor* m : {&s.ground_semantic, &s.aerial_semantic})
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          double total = 0;
          for (int c = 0; c < kSemanticClasses; ++c) {
            const double v = m->at(0, c, y, x);
            EXPECT_TRUE(v == 0.0 || v == 1.0);
            total += v;
          }
          EXPECT_EQ(total, 1.0);
        }
  }
}

TEST(ToyData, GroundViewFollowsFromAerialLayout) {
  // Re-derive the ground view from the aerial view alone: per grid column,
  // the northmost-facing building nearest the viewer rises from the horizon
  // with height proportional to its row, sky above, front cell below.
  for (int size : {32, 64}) {
    for (const auto& s : toy_dataset(11, 16, size)) {
      const int cell = size / kToyGrid, horizon = size / 2;
      for (int gc = 0; gc < kToyGrid; ++gc) {
        int nearest = -1;
        for (int r = 0; r < kToyGrid; ++r)
          if (argmax_class(s.aerial_semantic, r * cell + cell / 2, gc * cell + cell / 2) ==
              static_cast<int>(SemanticClass::kBuilding))
            nearest = r;
        const int height = nearest < 0 ? 0 : horizon * (nearest + 1) / kToyGrid;
        for (int y = 0; y < size; ++y)
          for (int x = gc * cell; x < (gc + 1) * cell; ++x) {
            int ay, ax;
            int cls;
            if (y >= horizon) {
              ay = (kToyGrid - 1) * cell + cell / 2;
              ax = gc * cell + cell / 2;
              cls = argmax_class(s.aerial_semantic, ay, ax);
            } else if (nearest >= 0 && y >= horizon - height) {
              ay = nearest * cell + cell / 2;
              ax = gc * cell + cell / 2;
              cls = static_cast<int>(SemanticClass::kBuilding);
            } else {
              ay = ax = -1;
              cls = static_cast<int>(SemanticClass::kSky);
            }
            ASSERT_EQ(argmax_class(s.ground_semantic, y, x), cls) << s.id << " y=" << y << " x=" << x;
            if (ay >= 0) {
              for (int ch = 0; ch < 3; ++ch) ASSERT_EQ(s.ground.at(0, ch, y, x), s.aerial.at(0, ch, ay, ax));
            }
          }
      }
      EXPECT_EQ(s.ground_label, dominant_class(s.ground_semantic));
    }
  }
}

TEST(Semantic, PaletteRoundTripAndUnknownColour) {
  const auto s = gen_toy_pair(3, 32);
  const Image8 coded = colors_from_semantic(s.ground_semantic);
  EXPECT_EQ(max_abs_diff(one_hot_from_colors(coded), s.ground_semantic), 0.0);
  Image8 bad = coded;
  bad.pixel(5, 7)[0] = 1;
  bad.pixel(5, 7)[1] = 2;
  try {
    one_hot_from_colors(bad);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("5"), std::string::npos);
  }
  const Tensor planes = semantic_planes(s.ground_semantic);
  for (std::size_t i = 0; i < planes.size(); ++i) EXPECT_EQ(planes[i], 2.0 * s.ground_semantic[i] - 1.0);
}

TEST(LoadPairs, EmptyDirectoryYieldsNothing) {
  const auto dir = scratch("empty");
  EXPECT_TRUE(load_pairs(dir, PairLayout::kSideBySide, 32).empty());
  EXPECT_TRUE(load_pairs(dir, PairLayout::kSplitFolders, 32).empty());
}

TEST(LoadPairs, SideBySideRoundTrip) {
  const auto dir = scratch("sbs");
  const auto samples = toy_dataset(9, 3, 64);
  save_pairs(dir, samples);
  const Image8 raw = read_ppm(dir / "images" / fs::directory_iterator(dir / "images")->path().filename());
  EXPECT_EQ(raw.width, 128);
  EXPECT_EQ(raw.height, 64);
  const auto back = load_pairs(dir, PairLayout::kSideBySide, 64);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    // Toy colours are exact 8-bit values, so the codec is lossless here.
    const auto& want = samples[i];
    const auto it = std::find_if(back.begin(), back.end(), [&](const PairedSample& p) { return p.id == want.id; });
    ASSERT_NE(it, back.end());
    EXPECT_LE(max_abs_diff(it->aerial, want.aerial), 1e-12);
    EXPECT_LE(max_abs_diff(it->ground, want.ground), 1e-12);
    EXPECT_EQ(max_abs_diff(it->ground_semantic, want.ground_semantic), 0.0);
    EXPECT_EQ(max_abs_diff(it->aerial_semantic, want.aerial_semantic), 0.0);
  }
  const auto small = load_pairs(dir, PairLayout::kSideBySide, 32);
  EXPECT_EQ(small[0].aerial.shape(), (Shape{1, 3, 32, 32}));
  EXPECT_EQ(small[0].ground_semantic.shape(), (Shape{1, kSemanticClasses, 32, 32}));
}

TEST(LoadPairs, MissingSemanticTwinIsDataError) {
  const auto dir = scratch("nosem");
  save_pairs(dir, toy_dataset(4, 1, 32));
  fs::remove_all(dir / "semantic");
  EXPECT_THROW(load_pairs(dir, PairLayout::kSideBySide, 32), DataError);
}

TEST(LoadPairs, OddWidthIsDataError) {
  const auto dir = scratch("odd");
  fs::create_directories(dir / "images");
  Image8 img{5, 4, std::vector<std::uint8_t>(5 * 4 * 3, 0)};
  write_ppm(dir / "images" / "a.ppm", img);
  EXPECT_THROW(load_pairs(dir, PairLayout::kSideBySide, 32), DataError);
}

TEST(LoadPairs, SplitFolders) {
  const auto dir = scratch("split");
  const auto s = gen_toy_pair(12, 32);
  fs::create_directories(dir / "aerial");
  fs::create_directories(dir / "ground");
  fs::create_directories(dir / "semantic");
  encode_image(s.aerial, dir / "aerial" / "p.ppm");
  encode_image(s.ground, dir / "ground" / "p.ppm");
  write_ppm(dir / "semantic" / "p.ppm", colors_from_semantic(s.ground_semantic));
  const auto back = load_pairs(dir, PairLayout::kSplitFolders, 32);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_LE(max_abs_diff(back[0].ground, s.ground), 1e-12);
  EXPECT_TRUE(back[0].aerial_semantic.empty());
  fs::remove(dir / "ground" / "p.ppm");
  EXPECT_THROW(load_pairs(dir, PairLayout::kSplitFolders, 32), DataError);
}
