#include "filmedgan/networks.hpp"

#include "filmedgan/errors.hpp"

namespace filmedgan {
namespace {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

nn::Conv2d conv(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding, bool bias = false) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(bias));
}

nn::Sequential conv_bn_relu(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding) {
  return nn::Sequential(conv(in, out, kernel, stride, padding), nn::BatchNorm2d(out), nn::ReLU());
}

nn::LeakyReLU leaky() { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); }

void check_finite(const torch::Tensor& t, const char* stage) {
  if (!torch::isfinite(t).all().item<bool>()) {
    throw NumericError(std::string("non-finite activations after generator stage ") + stage);
  }
}

// Brings (x, h) to batched form and validates shapes.
std::pair<torch::Tensor, torch::Tensor> batched_inputs(const torch::Tensor& x, const torch::Tensor& h,
                                                       const ModelConfig& config, const char* who) {
  const auto batched_x = x.dim() == 3 ? x.unsqueeze(0) : x;
  const auto batched_h = h.dim() == 1 ? h.unsqueeze(0) : h;
  if (batched_x.dim() != 4 || batched_x.size(1) != 3 || batched_x.size(2) != config.resolution.height ||
      batched_x.size(3) != config.resolution.width) {
    throw ShapeError(std::string(who) + ": expected image [N,3," + std::to_string(config.resolution.height) + "," +
                     std::to_string(config.resolution.width) + "], got " + shape_string(x.sizes().vec()));
  }
  if (batched_h.dim() != 2 || batched_h.size(1) != config.embedding_dim ||
      (batched_h.size(0) != batched_x.size(0) && batched_h.size(0) != 1)) {
    throw ShapeError(std::string(who) + ": embedding " + shape_string(h.sizes().vec()) + " does not fit " +
                     std::to_string(batched_x.size(0)) + " images of embedding dimension " +
                     std::to_string(config.embedding_dim));
  }
  return {batched_x, batched_h.expand({batched_x.size(0), config.embedding_dim})};
}

torch::Tensor replicate(const torch::Tensor& h, const torch::Tensor& like) {
  return h.view({h.size(0), h.size(1), 1, 1}).expand({h.size(0), h.size(1), like.size(2), like.size(3)});
}

const char* conditioning_name(Conditioning c) { return c == Conditioning::film ? "film" : "concat"; }

}  // namespace

void ModelConfig::validate() const {
  if (resolution.height % 16 != 0 || resolution.width % 8 != 0 || resolution.height != 2 * resolution.width) {
    throw ConfigError("resolution must be H x W with H = 2W, H divisible by 16; got " +
                      std::to_string(resolution.height) + "x" + std::to_string(resolution.width));
  }
  if (base_width < 1 || embedding_dim < 1 || residual_blocks < 1) {
    throw ConfigError("base_width, embedding_dim and residual_blocks must be positive");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"height", c.resolution.height},
       {"width", c.resolution.width},
       {"base_width", c.base_width},
       {"embedding_dim", c.embedding_dim},
       {"residual_blocks", c.residual_blocks},
       {"conditioning", conditioning_name(c.conditioning)},
       {"skip_connections", c.skip_connections}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.resolution.height = j.value("height", c.resolution.height);
  c.resolution.width = j.value("width", c.resolution.width);
  c.base_width = j.value("base_width", c.base_width);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.residual_blocks = j.value("residual_blocks", c.residual_blocks);
  const auto cond = j.value("conditioning", std::string(conditioning_name(c.conditioning)));
  if (cond == "film") {
    c.conditioning = Conditioning::film;
  } else if (cond == "concat") {
    c.conditioning = Conditioning::concat;
  } else {
    throw ConfigError("unknown conditioning '" + cond + "'");
  }
  c.skip_connections = j.value("skip_connections", c.skip_connections);
}

FilmedResidualBlockImpl::FilmedResidualBlockImpl(int64_t channels, int64_t embedding_dim, bool use_film)
    : channels_(channels) {
  conv1 = register_module("conv1", conv(channels, channels, 3, 1, 1));
  norm1 = register_module("norm1", nn::BatchNorm2d(channels));
  if (use_film) film = register_module("film", FilmGenerator(embedding_dim, channels));
  conv2 = register_module("conv2", conv(channels, channels, 3, 1, 1));
  norm2 = register_module("norm2", nn::BatchNorm2d(channels));
}

torch::Tensor FilmedResidualBlockImpl::forward(const torch::Tensor& z, const torch::Tensor& h) {
  if (z.dim() != 4 || z.size(1) != channels_) {
    throw ShapeError("filmed_residual_block: expected " + std::to_string(channels_) + " channels, got " +
                     shape_string(z.sizes().vec()));
  }
  auto y = norm1->forward(conv1->forward(z));
  if (has_film() && !film_bypass) y = film_modulate(y, film->forward(h));
  y = norm2->forward(conv2->forward(torch::relu(y)));
  return z + y;
}

GeneratorImpl::GeneratorImpl(ModelConfig config) : config_(config) {
  config_.validate();
  const int64_t b = config_.base_width;
  const bool film = config_.conditioning == Conditioning::film;
  e1_ = register_module("e1", nn::Sequential(conv(3, b, 3, 1, 1, true), nn::ReLU()));
  e2_ = register_module("e2", conv_bn_relu(b, 2 * b, 4, 2, 1));
  e3_ = register_module("e3", conv_bn_relu(2 * b, 4 * b, 4, 2, 1));
  e4_ = register_module("e4", conv_bn_relu(4 * b, 8 * b, 3, 1, 1));
  if (!film) fuse_ = register_module("fuse", conv_bn_relu(8 * b + config_.embedding_dim, 8 * b, 3, 1, 1));
  for (int64_t i = 0; i < config_.residual_blocks; ++i) {
    blocks.push_back(register_module("res" + std::to_string(i + 1),
                                     FilmedResidualBlock(8 * b, config_.embedding_dim, film)));
  }
  const int64_t skip = config_.skip_connections ? 1 : 0;
  d1_ = register_module("d1", conv_bn_relu(8 * b + skip * 4 * b, 4 * b, 3, 1, 1));
  d2_ = register_module("d2", conv_bn_relu(4 * b + skip * 2 * b, 2 * b, 3, 1, 1));
  d3_ = register_module("d3", conv_bn_relu(2 * b + skip * b, b, 3, 1, 1));
  out_ = register_module("out", conv(b, 3, 3, 1, 1, true));
}

GeneratorOutput GeneratorImpl::forward_with_activations(const torch::Tensor& x, const torch::Tensor& h) {
  const bool unbatched = x.dim() == 3;
  auto [input, embedding] = batched_inputs(x, h, config_, "generator_forward");

  const auto s1 = e1_->forward(input);
  check_finite(s1, "E1");
  const auto s2 = e2_->forward(s1);
  check_finite(s2, "E2");
  const auto s3 = e3_->forward(s2);
  check_finite(s3, "E3");
  auto z = e4_->forward(s3);
  check_finite(z, "E4");
  if (!fuse_.is_empty()) {
    z = fuse_->forward(torch::cat({z, replicate(embedding, z)}, 1));
    check_finite(z, "fusion");
  }

  GeneratorOutput result;
  for (size_t i = 0; i < blocks.size(); ++i) {
    z = blocks[i]->forward(z, embedding);
    check_finite(z, ("residual block " + std::to_string(i + 1)).c_str());
    result.block_outputs.push_back(unbatched ? z.squeeze(0) : z);
  }

  const bool skip = config_.skip_connections;
  const auto up = F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest);
  auto y = d1_->forward(skip ? torch::cat({z, s3}, 1) : z);
  check_finite(y, "D1");
  y = d2_->forward(skip ? torch::cat({F::interpolate(y, up), s2}, 1) : F::interpolate(y, up));
  check_finite(y, "D2");
  y = d3_->forward(skip ? torch::cat({F::interpolate(y, up), s1}, 1) : F::interpolate(y, up));
  check_finite(y, "D3");
  y = torch::tanh(out_->forward(y));
  check_finite(y, "output");
  result.image = unbatched ? y.squeeze(0) : y;
  return result;
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x, const torch::Tensor& h) {
  return forward_with_activations(x, h).image;
}

void GeneratorImpl::set_film_bypass(bool bypass) {
  for (auto& block : blocks) block->film_bypass = bypass;
}

void GeneratorImpl::reset_film_identity() {
  for (auto& block : blocks) {
    if (block->has_film()) block->film->reset_identity();
  }
}

DiscriminatorImpl::DiscriminatorImpl(ModelConfig config) : config_(config) {
  config_.validate();
  const int64_t b = config_.base_width;
  const int64_t top = 8 * b;
  encoder_ = register_module(
      "encoder", nn::Sequential(conv(3, b, 4, 2, 1, true), leaky(),                          //
                                conv(b, 2 * b, 4, 2, 1), nn::BatchNorm2d(2 * b), leaky(),    //
                                conv(2 * b, 4 * b, 4, 2, 1), nn::BatchNorm2d(4 * b), leaky()));
  // (2,1) stride evens out the 2:1 aspect ratio.
  fusion_conv_ = register_module(
      "fusion_conv", nn::Conv2d(nn::Conv2dOptions(4 * b, top, {4, 3}).stride({2, 1}).padding({1, 1}).bias(false)));
  fusion_norm_ = register_module("fusion_norm", nn::BatchNorm2d(top));
  if (config_.conditioning == Conditioning::film) {
    film_ = register_module("film", FilmGenerator(config_.embedding_dim, top));
  } else {
    concat_conv_ = register_module("concat_conv", conv(top + config_.embedding_dim, top, 1, 1, 0, true));
  }
  residual_ = register_module("residual", nn::Sequential(conv(top, top, 3, 1, 1), nn::BatchNorm2d(top), leaky(),
                                                         conv(top, top, 3, 1, 1), nn::BatchNorm2d(top)));
  classifier_ = register_module("classifier", conv(top, 1, 1, 1, 0, true));
}

torch::Tensor DiscriminatorImpl::logits(const torch::Tensor& x, const torch::Tensor& h) {
  const bool unbatched = x.dim() == 3;
  auto [input, embedding] = batched_inputs(x, h, config_, "discriminator_score");
  auto z = fusion_norm_->forward(fusion_conv_->forward(encoder_->forward(input)));
  if (!film_.is_empty()) {
    z = torch::leaky_relu(film_modulate(z, film_->forward(embedding)), 0.2);
  } else {
    z = torch::leaky_relu(z, 0.2);
    z = torch::leaky_relu(concat_conv_->forward(torch::cat({z, replicate(embedding, z)}, 1)), 0.2);
  }
  z = torch::leaky_relu(z + residual_->forward(z), 0.2);
  auto score = classifier_->forward(z).mean({1, 2, 3});
  return unbatched ? score.squeeze(0) : score;
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x, const torch::Tensor& h) {
  // Saturated float sigmoids would reach 0 or 1 exactly.
  constexpr double kEdge = 1e-7;
  return torch::sigmoid(logits(x, h)).clamp(kEdge, 1.0 - kEdge);
}

torch::Tensor normalize_map(const torch::Tensor& map) {
  const auto flat = map.flatten(-2);
  const auto lo = std::get<0>(flat.min(-1, true)).unsqueeze(-1);
  const auto hi = std::get<0>(flat.max(-1, true)).unsqueeze(-1);
  const auto range = hi - lo;
  return torch::where(range > 0, (map - lo) / range.clamp_min(1e-30), torch::zeros_like(map));
}

std::vector<torch::Tensor> attention_maps(const torch::Tensor& x, const torch::Tensor& h, Generator& net) {
  const auto out = net->forward_with_activations(x, h);
  std::vector<torch::Tensor> maps;
  maps.reserve(out.block_outputs.size());
  const int64_t channel_axis = x.dim() == 3 ? 0 : 1;
  for (const auto& activations : out.block_outputs) {
    maps.push_back(normalize_map(activations.mean(channel_axis)));
  }
  return maps;
}

}  // namespace filmedgan
