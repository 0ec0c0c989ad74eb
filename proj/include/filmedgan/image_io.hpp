#pragma once

// PNG and base64 plumbing. Images travel as float tensors [3,H,W] in [-1,1];
// heatmaps as [H,W] in [0,1].

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace filmedgan {

struct Resolution {
  int64_t height = 128;
  int64_t width = 64;
  bool operator==(const Resolution&) const = default;
};

/// 8-bit PNG of a [3,H,W] image in [-1,1]. Values are clamped first.
std::vector<uint8_t> encode_png(const torch::Tensor& image);

/// 8-bit grayscale PNG of a [H,W] map in [0,1].
std::vector<uint8_t> encode_heatmap_png(const torch::Tensor& heatmap);

/// Decodes PNG (or any format OpenCV reads) into [3,H,W] in [-1,1]. When
/// `size` is given and differs, the image is resized with area averaging.
torch::Tensor decode_image(const std::vector<uint8_t>& bytes,
                           std::optional<Resolution> size = std::nullopt);

/// Single-channel variant returning [H,W] in [0,1].
torch::Tensor decode_gray(const std::vector<uint8_t>& bytes);

torch::Tensor read_image(const std::filesystem::path& path,
                         std::optional<Resolution> size = std::nullopt);
torch::Tensor read_gray(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const torch::Tensor& image);
void write_heatmap(const std::filesystem::path& path, const torch::Tensor& heatmap);

/// Tiles equally sized [3,H,W] images row-major into one image with a
/// `gap`-pixel white separator.
torch::Tensor tile_images(const std::vector<std::vector<torch::Tensor>>& rows, int64_t gap = 2);

std::vector<uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<uint8_t>& bytes);

std::string base64_encode(const std::vector<uint8_t>& bytes);
/// Throws ValidationError on characters outside the base64 alphabet.
std::vector<uint8_t> base64_decode(std::string_view text);

}  // namespace filmedgan
