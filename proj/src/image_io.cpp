#include "filmedgan/image_io.hpp"

#include <boost/beast/core/detail/base64.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cstring>
#include <fstream>
#include <iterator>

#include "filmedgan/errors.hpp"

namespace filmedgan {
namespace {

namespace b64 = boost::beast::detail::base64;

// [3,H,W] in [-1,1] -> 8-bit BGR.
cv::Mat to_mat(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw ShapeError("expected a [3,H,W] image, got " + shape_string(image.sizes().vec()));
  }
  const auto bytes = ((image.detach().to(torch::kFloat).clamp(-1.0, 1.0) + 1.0) * 127.5)
                         .round()
                         .to(torch::kUInt8)
                         .flip(0)  // RGB -> BGR
                         .permute({1, 2, 0})
                         .contiguous();
  cv::Mat mat(static_cast<int>(image.size(1)), static_cast<int>(image.size(2)), CV_8UC3);
  std::memcpy(mat.data, bytes.data_ptr<uint8_t>(), bytes.numel());
  return mat;
}

torch::Tensor from_mat(const cv::Mat& bgr) {
  auto tensor = torch::from_blob(bgr.data, {bgr.rows, bgr.cols, 3}, torch::kUInt8).clone();
  return tensor.permute({2, 0, 1}).flip(0).to(torch::kFloat).div(127.5).sub(1.0).contiguous();
}

std::vector<uint8_t> encode(const cv::Mat& mat) {
  std::vector<uint8_t> out;
  if (!cv::imencode(".png", mat, out)) throw IoError("PNG encoding failed");
  return out;
}

}  // namespace

std::vector<uint8_t> encode_png(const torch::Tensor& image) { return encode(to_mat(image)); }

std::vector<uint8_t> encode_heatmap_png(const torch::Tensor& heatmap) {
  if (heatmap.dim() != 2) {
    throw ShapeError("expected a [H,W] heatmap, got " + shape_string(heatmap.sizes().vec()));
  }
  const auto bytes =
      (heatmap.detach().to(torch::kFloat).clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).contiguous();
  cv::Mat mat(static_cast<int>(heatmap.size(0)), static_cast<int>(heatmap.size(1)), CV_8UC1);
  std::memcpy(mat.data, bytes.data_ptr<uint8_t>(), bytes.numel());
  return encode(mat);
}

torch::Tensor decode_image(const std::vector<uint8_t>& bytes, std::optional<Resolution> size) {
  if (bytes.empty()) throw ValidationError("empty image payload");
  cv::Mat mat = cv::imdecode(bytes, cv::IMREAD_COLOR);
  if (mat.empty()) throw ValidationError("image payload could not be decoded");
  if (size && (mat.rows != size->height || mat.cols != size->width)) {
    cv::Mat resized;
    cv::resize(mat, resized, cv::Size(static_cast<int>(size->width), static_cast<int>(size->height)), 0,
               0, cv::INTER_AREA);
    mat = resized;
  }
  return from_mat(mat);
}

torch::Tensor decode_gray(const std::vector<uint8_t>& bytes) {
  cv::Mat mat = cv::imdecode(bytes, cv::IMREAD_GRAYSCALE);
  if (mat.empty()) throw ValidationError("grayscale payload could not be decoded");
  return torch::from_blob(mat.data, {mat.rows, mat.cols}, torch::kUInt8).to(torch::kFloat).div(255.0);
}

torch::Tensor read_image(const std::filesystem::path& path, std::optional<Resolution> size) {
  return decode_image(read_bytes(path), size);
}

torch::Tensor read_gray(const std::filesystem::path& path) { return decode_gray(read_bytes(path)); }

void write_image(const std::filesystem::path& path, const torch::Tensor& image) {
  write_bytes(path, encode_png(image));
}

void write_heatmap(const std::filesystem::path& path, const torch::Tensor& heatmap) {
  write_bytes(path, encode_heatmap_png(heatmap));
}

torch::Tensor tile_images(const std::vector<std::vector<torch::Tensor>>& rows, int64_t gap) {
  if (rows.empty() || rows.front().empty()) throw ValidationError("tile_images: nothing to tile");
  const auto& first = rows.front().front();
  const int64_t h = first.size(1);
  const int64_t w = first.size(2);
  size_t columns = 0;
  for (const auto& row : rows) columns = std::max(columns, row.size());
  const int64_t total_h = static_cast<int64_t>(rows.size()) * (h + gap) - gap;
  const int64_t total_w = static_cast<int64_t>(columns) * (w + gap) - gap;
  auto canvas = torch::ones({3, total_h, total_w});
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < rows[r].size(); ++c) {
      const auto& tile = rows[r][c];
      if (tile.sizes() != first.sizes()) {
        throw ShapeError("tile_images: tile " + shape_string(tile.sizes().vec()) + " differs from " +
                         shape_string(first.sizes().vec()));
      }
      const int64_t y = static_cast<int64_t>(r) * (h + gap);
      const int64_t x = static_cast<int64_t>(c) * (w + gap);
      canvas.slice(1, y, y + h).slice(2, x, x + w).copy_(tile.detach().to(torch::kFloat));
    }
  }
  return canvas;
}

std::vector<uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

std::string base64_encode(const std::vector<uint8_t>& bytes) {
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::vector<uint8_t> base64_decode(std::string_view text) {
  for (int pad = 0; pad < 2 && !text.empty() && text.back() == '='; ++pad) text.remove_suffix(1);
  // decoded_size assumes padded input; unpadded tails need the extra room.
  std::vector<uint8_t> out((text.size() * 3 + 3) / 4);
  const auto [written, consumed] = b64::decode(out.data(), text.data(), text.size());
  if (consumed != text.size()) {
    throw ValidationError("invalid base64 at offset " + std::to_string(consumed));
  }
  out.resize(written);
  return out;
}

}  // namespace filmedgan
