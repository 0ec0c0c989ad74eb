#pragma once

// Feature-wise linear modulation and the total-variation penalty.
//
// Tensors may be unbatched (embedding [d], feature map [C,H,W]) or batched
// (embedding [N,d], feature map [N,C,H,W]). Everything here is plain torch
// arithmetic, so gradients flow through autograd.

#include <torch/torch.h>

#include <cstdint>

namespace filmedgan {

/// Per-channel scale and shift. Shapes [C] or [N,C].
struct FilmParams {
  torch::Tensor gamma;
  torch::Tensor beta;

  /// gamma = 1, beta = 0 for `channels` channels.
  static FilmParams identity(int64_t channels, torch::TensorOptions options = {});
};

/// Affine maps embedding -> (gamma, beta). w_* are [C,d], b_* are [C].
struct FilmGeneratorWeights {
  torch::Tensor w_gamma;
  torch::Tensor b_gamma;
  torch::Tensor w_beta;
  torch::Tensor b_beta;

  int64_t embedding_dim() const { return w_gamma.size(1); }
  int64_t channels() const { return w_gamma.size(0); }

  /// b_gamma = 1 and everything else 0, so the modulation starts as identity.
  static FilmGeneratorWeights identity(int64_t embedding_dim, int64_t channels,
                                       torch::TensorOptions options = {});
};

/// gamma = W_gamma h + b_gamma, beta = W_beta h + b_beta.
/// Throws ShapeError when h's trailing dimension differs from d or the
/// weight shapes are inconsistent.
FilmParams film_params(const torch::Tensor& h, const FilmGeneratorWeights& w);

/// out[k,i,j] = z[k,i,j] * gamma[k] + beta[k]. Throws ShapeError on channel
/// or batch mismatch.
torch::Tensor film_modulate(const torch::Tensor& z, const FilmParams& p);

/// Squared anisotropic total variation normalised by C*H*W:
///   sum (x[c,i+1,j]-x[c,i,j])^2 + (x[c,i,j+1]-x[c,i,j])^2  /  (C*H*W)
/// Batched input returns the mean over the batch. Spatial axes of extent 1
/// contribute no pairs.
torch::Tensor tv_penalty(const torch::Tensor& x);

/// Learnable FiLM generator for one modulated layer.
class FilmGeneratorImpl : public torch::nn::Module {
 public:
  FilmGeneratorImpl(int64_t embedding_dim, int64_t channels);

  FilmParams forward(const torch::Tensor& h) const;

  /// Restores the identity initialisation in place.
  void reset_identity();

  /// Parameters as a weights view (shares storage with the module).
  FilmGeneratorWeights weights() const { return weights_; }

 private:
  FilmGeneratorWeights weights_;
};
TORCH_MODULE(FilmGenerator);

}  // namespace filmedgan
