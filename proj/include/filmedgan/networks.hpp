#pragma once

// Generator (encoder -> FiLMed residual unit -> decoder with skip
// connections) and the text-conditioned discriminator.

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "filmedgan/film.hpp"
#include "filmedgan/image_io.hpp"

namespace filmedgan {

/// How the sentence embedding enters the networks. `concat` replicates the
/// embedding over space and concatenates it (the unmodulated baseline).
enum class Conditioning { film, concat };

struct ModelConfig {
  Resolution resolution{128, 64};
  int64_t base_width = 64;
  int64_t embedding_dim = 300;
  int64_t residual_blocks = 4;
  Conditioning conditioning = Conditioning::film;
  bool skip_connections = true;

  int64_t bottleneck_channels() const { return base_width * 8; }
  /// Spatial size of the residual stage (H/4 x W/4).
  Resolution bottleneck_resolution() const { return {resolution.height / 4, resolution.width / 4}; }
  /// Throws ConfigError for unsupported resolutions or widths.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// conv1 -> norm1 -> FiLM(h) -> ReLU -> conv2 -> norm2, added to the input.
class FilmedResidualBlockImpl : public torch::nn::Module {
 public:
  FilmedResidualBlockImpl(int64_t channels, int64_t embedding_dim, bool use_film);

  /// z [N,C,H,W], h [N,d]. Throws ShapeError on channel mismatch.
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& h);

  bool has_film() const { return !film.is_empty(); }

  torch::nn::Conv2d conv1{nullptr};
  torch::nn::BatchNorm2d norm1{nullptr};
  FilmGenerator film{nullptr};
  torch::nn::Conv2d conv2{nullptr};
  torch::nn::BatchNorm2d norm2{nullptr};
  /// Skips the modulation entirely (ablation twin).
  bool film_bypass = false;

 private:
  int64_t channels_;
};
TORCH_MODULE(FilmedResidualBlock);

struct GeneratorOutput {
  torch::Tensor image;                       ///< [N,3,H,W] in [-1,1]
  std::vector<torch::Tensor> block_outputs;  ///< one [N,C,H/4,W/4] per residual block
};

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(ModelConfig config = {});

  /// x [N,3,H,W] or [3,H,W]; h [N,d] or [d]. Output has x's shape.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& h);
  GeneratorOutput forward_with_activations(const torch::Tensor& x, const torch::Tensor& h);

  const ModelConfig& config() const { return config_; }
  void set_film_bypass(bool bypass);
  /// Resets every FiLM generator to gamma = 1, beta = 0.
  void reset_film_identity();

  std::vector<FilmedResidualBlock> blocks;

 private:
  ModelConfig config_;
  torch::nn::Sequential e1_{nullptr}, e2_{nullptr}, e3_{nullptr}, e4_{nullptr};
  torch::nn::Sequential fuse_{nullptr};  // concat conditioning only
  torch::nn::Sequential d1_{nullptr}, d2_{nullptr}, d3_{nullptr};
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(Generator);

class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(ModelConfig config = {});

  /// Pre-sigmoid scores [N] (or a scalar for unbatched input).
  torch::Tensor logits(const torch::Tensor& x, const torch::Tensor& h);
  /// Probability that (x, h) is a real, matching pair; clamped into [1e-7, 1-1e-7].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& h);

  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  torch::nn::Sequential encoder_{nullptr};
  torch::nn::Conv2d fusion_conv_{nullptr};
  torch::nn::BatchNorm2d fusion_norm_{nullptr};
  FilmGenerator film_{nullptr};
  torch::nn::Conv2d concat_conv_{nullptr};
  torch::nn::Sequential residual_{nullptr};
  torch::nn::Conv2d classifier_{nullptr};
};
TORCH_MODULE(Discriminator);

/// Channel mean of each residual block's output, min-max normalised to
/// [0,1] per map (constant maps become all zeros). For unbatched input the
/// result is one [H/4,W/4] tensor per block; batched gives [N,H/4,W/4].
std::vector<torch::Tensor> attention_maps(const torch::Tensor& x, const torch::Tensor& h, Generator& net);

/// Min-max normalisation over the last two axes.
torch::Tensor normalize_map(const torch::Tensor& map);

}  // namespace filmedgan
