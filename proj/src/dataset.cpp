#include "xvfg/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "xvfg/rng.hpp"

namespace xvfg {
namespace {

constexpr Rgb kSkyColor{135, 190, 235};
constexpr Rgb kRoadColor{90, 90, 90};
constexpr Rgb kVegetationColor{40, 130, 50};
constexpr std::array<Rgb, 6> kFacadeColors{Rgb{200, 60, 60},   Rgb{220, 180, 120}, Rgb{150, 100, 60},
                                           Rgb{230, 230, 220}, Rgb{100, 60, 140},  Rgb{220, 140, 40}};

void put_pixel(Tensor& img, int y, int x, Rgb c) {
  img.at(0, 0, y, x) = c.r / 127.5 - 1.0;
  img.at(0, 1, y, x) = c.g / 127.5 - 1.0;
  img.at(0, 2, y, x) = c.b / 127.5 - 1.0;
}

Tensor nearest_resize_one_hot(const Tensor& t, int size) {
  const Shape s = t.shape();
  if (s.h == size && s.w == size) return t;
  Tensor out(Shape{s.n, s.c, size, size});
  for (int y = 0; y < size; ++y) {
    const int sy = std::min(s.h - 1, static_cast<int>(std::floor((y + 0.5) * s.h / size)));
    for (int x = 0; x < size; ++x) {
      const int sx = std::min(s.w - 1, static_cast<int>(std::floor((x + 0.5) * s.w / size)));
      for (int c = 0; c < s.c; ++c) out.at(0, c, y, x) = t.at(0, c, sy, sx);
    }
  }
  return out;
}

Image8 crop(const Image8& img, int x0, int width) {
  Image8 out;
  out.width = width;
  out.height = img.height;
  out.rgb.resize(static_cast<std::size_t>(width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < width; ++x) std::copy_n(img.pixel(x0 + x, y), 3, out.pixel(x, y));
  return out;
}

std::vector<std::filesystem::path> sorted_images(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  if (!std::filesystem::is_directory(dir)) return files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  return files;
}

Tensor load_semantic(const std::filesystem::path& path, int size) {
  return nearest_resize_one_hot(one_hot_from_colors(read_ppm(path)), size);
}

}  // namespace

const std::array<Rgb, kSemanticClasses>& semantic_palette() {
  static const std::array<Rgb, kSemanticClasses> palette{
      Rgb{70, 130, 180}, Rgb{128, 64, 128}, Rgb{128, 128, 128}, Rgb{107, 142, 35}};
  return palette;
}

const char* semantic_class_name(int cls) {
  static const char* names[] = {"sky", "building", "road", "vegetation"};
  return cls >= 0 && cls < kSemanticClasses ? names[cls] : "unknown";
}

Tensor semantic_planes(const Tensor& one_hot) {
  Tensor out = one_hot;
  for (auto& v : out.data()) v = 2.0 * v - 1.0;
  return out;
}

Tensor one_hot_from_colors(const Image8& image) {
  const auto& palette = semantic_palette();
  Tensor out(Shape{1, kSemanticClasses, image.height, image.width});
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const std::uint8_t* p = image.pixel(x, y);
      const Rgb c{p[0], p[1], p[2]};
      const auto it = std::find(palette.begin(), palette.end(), c);
      if (it == palette.end()) {
        throw DataError("semantic colour (" + std::to_string(c.r) + "," + std::to_string(c.g) + "," +
                        std::to_string(c.b) + ") at pixel (x=" + std::to_string(x) +
                        ", y=" + std::to_string(y) + ") is not in the palette");
      }
      out.at(0, static_cast<int>(it - palette.begin()), y, x) = 1.0;
    }
  return out;
}

Image8 colors_from_semantic(const Tensor& semantic) {
  const Shape s = semantic.shape();
  if (s.n != 1 || s.c != kSemanticClasses) {
    throw ShapeError("colors_from_semantic: expected [1," + std::to_string(kSemanticClasses) +
                     ",H,W], got " + s.str());
  }
  const auto& palette = semantic_palette();
  Image8 img;
  img.width = s.w;
  img.height = s.h;
  img.rgb.resize(static_cast<std::size_t>(s.w) * s.h * 3);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      int best = 0;
      for (int c = 1; c < s.c; ++c) {
        if (semantic.at(0, c, y, x) > semantic.at(0, best, y, x)) best = c;
      }
      const Rgb col = palette[static_cast<std::size_t>(best)];
      std::uint8_t* p = img.pixel(x, y);
      p[0] = col.r;
      p[1] = col.g;
      p[2] = col.b;
    }
  return img;
}

int dominant_class(const Tensor& one_hot) {
  const Shape s = one_hot.shape();
  std::vector<double> totals(static_cast<std::size_t>(s.c), 0.0);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) totals[static_cast<std::size_t>(c)] += one_hot.at(n, c, y, x);
  return static_cast<int>(std::max_element(totals.begin(), totals.end()) - totals.begin());
}

PairedSample gen_toy_pair(std::uint64_t seed, int size) {
  if (size != 32 && size != 64) {
    throw DataError("gen_toy_pair: unsupported size " + std::to_string(size) + " (32 or 64)");
  }
  Rng rng(seed);
  const int cell = size / kToyGrid;
  std::array<std::array<SemanticClass, kToyGrid>, kToyGrid> layout{};
  std::array<std::array<Rgb, kToyGrid>, kToyGrid> colors{};
  for (int r = 0; r < kToyGrid; ++r)
    for (int c = 0; c < kToyGrid; ++c) {
      const double u = rng.uniform();
      if (u < 0.4) {
        layout[r][c] = SemanticClass::kBuilding;
        const Rgb facade = kFacadeColors[rng.below(kFacadeColors.size())];
        colors[r][c] = facade;
      } else if (u < 0.7) {
        layout[r][c] = SemanticClass::kRoad;
        colors[r][c] = kRoadColor;
      } else {
        layout[r][c] = SemanticClass::kVegetation;
        colors[r][c] = kVegetationColor;
      }
    }

  PairedSample s;
  s.id = "toy-" + std::to_string(seed);
  s.aerial = Tensor(Shape{1, 3, size, size});
  s.aerial_semantic = Tensor(Shape{1, kSemanticClasses, size, size});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const int r = y / cell;
      const int c = x / cell;
      put_pixel(s.aerial, y, x, colors[r][c]);
      s.aerial_semantic.at(0, static_cast<int>(layout[r][c]), y, x) = 1.0;
    }

  s.ground = Tensor(Shape{1, 3, size, size});
  s.ground_semantic = Tensor(Shape{1, kSemanticClasses, size, size});
  const int horizon = size / 2;
  for (int c = 0; c < kToyGrid; ++c) {
    int nearest_building = -1;
    for (int r = kToyGrid - 1; r >= 0; --r) {
      if (layout[r][c] == SemanticClass::kBuilding) {
        nearest_building = r;
        break;
      }
    }
    const int height = nearest_building < 0 ? 0 : horizon * (nearest_building + 1) / kToyGrid;
    const SemanticClass front = layout[kToyGrid - 1][c];
    for (int y = 0; y < size; ++y) {
      SemanticClass cls;
      Rgb col;
      if (y < horizon) {
        if (nearest_building >= 0 && y >= horizon - height) {
          cls = SemanticClass::kBuilding;
          col = colors[nearest_building][c];
        } else {
          cls = SemanticClass::kSky;
          col = kSkyColor;
        }
      } else {
        cls = front;
        col = colors[kToyGrid - 1][c];
      }
      for (int x = c * cell; x < (c + 1) * cell; ++x) {
        put_pixel(s.ground, y, x, col);
        s.ground_semantic.at(0, static_cast<int>(cls), y, x) = 1.0;
      }
    }
  }
  s.ground_label = dominant_class(s.ground_semantic);
  s.aerial_label = dominant_class(s.aerial_semantic);
  return s;
}

std::vector<PairedSample> toy_dataset(std::uint64_t seed, int count, int size) {
  std::vector<PairedSample> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(gen_toy_pair(derive_seed(seed, static_cast<std::uint64_t>(i)), size));
  return out;
}

std::vector<PairedSample> load_pairs(const std::filesystem::path& dir, PairLayout layout, int size) {
  if (size <= 0) throw DataError("load_pairs: size must be positive");
  std::vector<PairedSample> out;
  const auto images = sorted_images(dir / (layout == PairLayout::kSideBySide ? "images" : "aerial"));
  for (const auto& path : images) {
    const std::string name = path.filename().string();
    PairedSample s;
    s.id = path.stem().string();
    if (layout == PairLayout::kSideBySide) {
      const Image8 pair = read_ppm(path);
      if (pair.width % 2 != 0) {
        throw DataError(path.string() + ": side-by-side width " + std::to_string(pair.width) + " is odd");
      }
      const int half = pair.width / 2;
      s.aerial = resize_bilinear(image_to_tensor(crop(pair, 0, half)), size, size);
      s.ground = resize_bilinear(image_to_tensor(crop(pair, half, half)), size, size);
    } else {
      const auto ground_path = dir / "ground" / name;
      if (!std::filesystem::exists(ground_path)) {
        throw DataError("missing ground twin " + ground_path.string() + " for " + path.string());
      }
      s.aerial = resize_bilinear(decode_image(path), size, size);
      s.ground = resize_bilinear(decode_image(ground_path), size, size);
    }
    const auto sem_path = dir / "semantic" / name;
    if (!std::filesystem::exists(sem_path)) {
      throw DataError("missing semantic twin " + sem_path.string() + " for " + path.string());
    }
    s.ground_semantic = load_semantic(sem_path, size);
    s.ground_label = dominant_class(s.ground_semantic);
    const auto aerial_sem_path = dir / "semantic_aerial" / name;
    if (std::filesystem::exists(aerial_sem_path)) {
      s.aerial_semantic = load_semantic(aerial_sem_path, size);
      s.aerial_label = dominant_class(s.aerial_semantic);
    } else {
      s.aerial_label = s.ground_label;
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_pairs(const std::filesystem::path& dir, const std::vector<PairedSample>& samples) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "semantic");
  for (const auto& s : samples) {
    const Image8 a = tensor_to_image(s.aerial);
    const Image8 g = tensor_to_image(s.ground);
    Image8 pair;
    pair.width = a.width + g.width;
    pair.height = a.height;
    pair.rgb.resize(static_cast<std::size_t>(pair.width) * pair.height * 3);
    for (int y = 0; y < pair.height; ++y) {
      for (int x = 0; x < a.width; ++x) std::copy_n(a.pixel(x, y), 3, pair.pixel(x, y));
      for (int x = 0; x < g.width; ++x) std::copy_n(g.pixel(x, y), 3, pair.pixel(a.width + x, y));
    }
    const std::string name = s.id + ".ppm";
    write_ppm(dir / "images" / name, pair);
    write_ppm(dir / "semantic" / name, colors_from_semantic(s.ground_semantic));
    if (!s.aerial_semantic.empty()) {
      std::filesystem::create_directories(dir / "semantic_aerial");
      write_ppm(dir / "semantic_aerial" / name, colors_from_semantic(s.aerial_semantic));
    }
  }
}

}  // namespace xvfg
