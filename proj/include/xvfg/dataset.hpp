#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xvfg/errors.hpp"
#include "xvfg/image_io.hpp"
#include "xvfg/tensor.hpp"

namespace xvfg {

enum class SemanticClass : int { kSky = 0, kBuilding = 1, kRoad = 2, kVegetation = 3 };
inline constexpr int kSemanticClasses = 4;

struct Rgb {
  std::uint8_t r, g, b;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Colour coding of semantic maps, indexed by SemanticClass.
///   sky (70,130,180), building (128,64,128), road (128,128,128), vegetation (107,142,35)
const std::array<Rgb, kSemanticClasses>& semantic_palette();
const char* semantic_class_name(int cls);

struct PairedSample {
  Tensor aerial;           // [1,3,H,W] in [-1,1]
  Tensor ground;           // [1,3,H,W] in [-1,1]
  Tensor ground_semantic;  // one-hot [1,S,H,W]
  Tensor aerial_semantic;  // one-hot [1,S,H,W]; empty when not available
  int ground_label = 0;    // dominant ground class
  int aerial_label = 0;    // dominant aerial class
  std::string id;
};

/// One-hot [1,S,H,W] -> network planes 2*onehot - 1 in [-1,1].
Tensor semantic_planes(const Tensor& one_hot);
/// Colour-coded map -> one-hot. Throws DataError naming the first pixel
/// whose colour is not in the palette.
Tensor one_hot_from_colors(const Image8& image);
/// One-hot (or planes: argmax per pixel) -> colour-coded map.
Image8 colors_from_semantic(const Tensor& semantic);
/// Most frequent class of a one-hot map; ties go to the lower class id.
int dominant_class(const Tensor& one_hot);

/// Cells per side of the procedural aerial layout.
inline constexpr int kToyGrid = 4;

/// Procedural cross-view pair. The aerial view is a kToyGrid x kToyGrid
/// layout of road / building / vegetation cells (roof colour = facade
/// colour). The ground view looks north from the bottom edge: each grid
/// column shows its nearest building as a facade (taller when nearer)
/// under a sky band, and the ground band below the horizon takes the class
/// of the column's nearest cell. size must be 32 or 64.
PairedSample gen_toy_pair(std::uint64_t seed, int size);

/// `count` pairs; pair i is gen_toy_pair(mix(seed, i), size).
std::vector<PairedSample> toy_dataset(std::uint64_t seed, int count, int size);

enum class PairLayout { kSideBySide, kSplitFolders };

/// Loads pairs in lexicographic file order, bilinearly resized to size x size.
///   side-by-side:  dir/images/NAME.ppm (2W x H, left aerial, right ground)
///   split-folders: dir/aerial/NAME.ppm and dir/ground/NAME.ppm
/// Ground semantic maps are required at dir/semantic/NAME.ppm; aerial ones
/// are optional at dir/semantic_aerial/NAME.ppm. Semantic maps are resized
/// by nearest neighbour. A directory without images yields no samples.
std::vector<PairedSample> load_pairs(const std::filesystem::path& dir, PairLayout layout, int size);

/// Writes samples in the side-by-side layout understood by load_pairs.
void save_pairs(const std::filesystem::path& dir, const std::vector<PairedSample>& samples);

}  // namespace xvfg
