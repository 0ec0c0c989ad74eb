#pragma once

// Captioned outfit datasets: the procedural sprite set used for desk-scale
// runs, its on-disk format, and the loader for the Fashion Synthesis layout.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "filmedgan/image_io.hpp"

namespace filmedgan {

enum class AttributeSlot : size_t { gender = 0, sleeve = 1, color = 2, category = 3 };
inline constexpr size_t kAttributeCount = 4;
inline constexpr std::array<std::string_view, kAttributeCount> kAttributeNames = {
    "gender", "sleeve", "color", "category"};

/// Value vocabulary for each attribute slot. The synthetic schema is fixed;
/// the real loader builds one from whatever labels the release carries.
struct AttributeSchema {
  std::array<std::vector<std::string>, kAttributeCount> values;

  static const AttributeSchema& synthetic();

  int64_t cardinality(AttributeSlot slot) const {
    return static_cast<int64_t>(values[static_cast<size_t>(slot)].size());
  }
  /// Throws ValidationError for names outside the slot's vocabulary.
  int64_t index_of(AttributeSlot slot, std::string_view name) const;
  const std::string& name_of(AttributeSlot slot, int64_t index) const;

  bool operator==(const AttributeSchema&) const = default;
};

/// Attribute values as indices into an AttributeSchema.
struct Attributes {
  std::array<int64_t, kAttributeCount> values{};

  int64_t operator[](AttributeSlot slot) const { return values[static_cast<size_t>(slot)]; }
  int64_t& operator[](AttributeSlot slot) { return values[static_cast<size_t>(slot)]; }
  bool operator==(const Attributes&) const = default;
};

struct CaptionedSample {
  int64_t id = 0;
  torch::Tensor pixels;  ///< uint8 [3,H,W], RGB
  std::string caption;
  Attributes attributes;
  torch::Tensor mask;  ///< uint8 [H,W] editable garment region; undefined for real data

  /// Float image [3,H,W] in [-1,1].
  torch::Tensor image() const;
};

struct DatasetSplit {
  std::vector<CaptionedSample> train;
  std::vector<CaptionedSample> test;
  AttributeSchema schema;
  Resolution resolution;
};

/// "the {gender} is wearing a {color} {sleeve} {category}".
/// Throws ValidationError when an index is outside the schema.
std::string caption_of(const Attributes& attributes,
                       const AttributeSchema& schema = AttributeSchema::synthetic());

/// Inverse of caption_of on the synthetic grammar.
Attributes parse_caption(std::string_view caption,
                         const AttributeSchema& schema = AttributeSchema::synthetic());

/// Per-sprite appearance that does not depend on the garment.
struct SpriteBody {
  int skin = 0;
  int hair = 0;
  int pants = 0;
  int legwear = 0;
  int offset_px = 0;  ///< horizontal shift of the whole figure
  double background_hue = 0.0;
  double background_top = 0.9;
  double background_bottom = 0.8;
  uint64_t noise_seed = 0;

  static SpriteBody random(uint64_t seed, Resolution resolution);
};

struct Sprite {
  torch::Tensor pixels;  ///< uint8 [3,H,W]
  torch::Tensor mask;    ///< uint8 [H,W], 1 inside the garment envelope
};

/// Draws one figure. The mask depends on the body only, and pixels outside
/// it do not depend on the sleeve, color or category attributes.
Sprite render_sprite(const SpriteBody& body, const Attributes& attributes, Resolution resolution);

/// RGB (0..255) of the named synthetic garment color.
std::array<uint8_t, 3> garment_rgb(int64_t color_index);

/// n sprites with balanced attributes and a 90/10 train/test split, fully
/// determined by seed. Throws ValidationError for n < 10.
DatasetSplit generate_synthetic(int64_t n, uint64_t seed, Resolution resolution = {});

/// Writes images/NNNNN.png, masks/NNNNN.png, labels.csv and manifest.json.
void save_synthetic(const DatasetSplit& split, const std::filesystem::path& dir, uint64_t seed);
DatasetSplit load_synthetic(const std::filesystem::path& dir);

/// Expected layout of a Fashion Synthesis export:
///   images/<id>.png (or .jpg)
///   captions.csv      id,caption
///   attributes.csv    id,gender,sleeve,color,category
///   train.txt, test.txt   one id per line
/// Images are resized to `resolution`. Segmentation maps are never read.
DatasetSplit load_fashion_synthesis(const std::filesystem::path& dir, Resolution resolution = {});

/// Loads whichever format `dir` holds (manifest.json marks a synthetic set).
DatasetSplit load_dataset(const std::filesystem::path& dir, Resolution resolution = {});

/// Stacks float images of the selected samples into [N,3,H,W].
torch::Tensor stack_images(std::span<const CaptionedSample> samples);
torch::Tensor stack_images(std::span<const CaptionedSample> samples, std::span<const int64_t> indices);

}  // namespace filmedgan
