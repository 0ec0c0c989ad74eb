#include "filmedgan/film.hpp"

#include "filmedgan/errors.hpp"

namespace filmedgan {

FilmParams FilmParams::identity(int64_t channels, torch::TensorOptions options) {
  return {torch::ones({channels}, options), torch::zeros({channels}, options)};
}

FilmGeneratorWeights FilmGeneratorWeights::identity(int64_t embedding_dim, int64_t channels,
                                                    torch::TensorOptions options) {
  return {torch::zeros({channels, embedding_dim}, options), torch::ones({channels}, options),
          torch::zeros({channels, embedding_dim}, options), torch::zeros({channels}, options)};
}

FilmParams film_params(const torch::Tensor& h, const FilmGeneratorWeights& w) {
  if (w.w_gamma.dim() != 2 || w.w_beta.sizes() != w.w_gamma.sizes() || w.b_gamma.dim() != 1 ||
      w.b_beta.sizes() != w.b_gamma.sizes() || w.b_gamma.size(0) != w.w_gamma.size(0)) {
    throw ShapeError("film_params: inconsistent generator weights W_gamma " +
                     shape_string(w.w_gamma.sizes().vec()) + ", b_gamma " +
                     shape_string(w.b_gamma.sizes().vec()) + ", W_beta " +
                     shape_string(w.w_beta.sizes().vec()) + ", b_beta " +
                     shape_string(w.b_beta.sizes().vec()));
  }
  if ((h.dim() != 1 && h.dim() != 2) || h.size(-1) != w.embedding_dim()) {
    throw ShapeError("film_params: embedding " + shape_string(h.sizes().vec()) +
                     " does not match embedding dimension " + std::to_string(w.embedding_dim()));
  }
  // h W^T works for both [d] and [N,d].
  return {torch::matmul(h, w.w_gamma.t()) + w.b_gamma, torch::matmul(h, w.w_beta.t()) + w.b_beta};
}

torch::Tensor film_modulate(const torch::Tensor& z, const FilmParams& p) {
  if (p.gamma.sizes() != p.beta.sizes()) {
    throw ShapeError("film_modulate: gamma " + shape_string(p.gamma.sizes().vec()) +
                     " and beta " + shape_string(p.beta.sizes().vec()) + " differ");
  }
  if (z.dim() == 3) {
    if (p.gamma.dim() != 1 || p.gamma.size(0) != z.size(0)) {
      throw ShapeError("film_modulate: " + std::to_string(z.size(0)) +
                       "-channel feature map vs params " + shape_string(p.gamma.sizes().vec()));
    }
    return z * p.gamma.view({-1, 1, 1}) + p.beta.view({-1, 1, 1});
  }
  if (z.dim() == 4) {
    const int64_t channels = z.size(1);
    if (p.gamma.dim() == 1 && p.gamma.size(0) == channels) {
      return z * p.gamma.view({1, -1, 1, 1}) + p.beta.view({1, -1, 1, 1});
    }
    if (p.gamma.dim() == 2 && p.gamma.size(1) == channels &&
        (p.gamma.size(0) == z.size(0) || p.gamma.size(0) == 1)) {
      return z * p.gamma.view({p.gamma.size(0), channels, 1, 1}) +
             p.beta.view({p.beta.size(0), channels, 1, 1});
    }
    throw ShapeError("film_modulate: feature map " + shape_string(z.sizes().vec()) +
                     " vs params " + shape_string(p.gamma.sizes().vec()));
  }
  throw ShapeError("film_modulate: expected a [C,H,W] or [N,C,H,W] feature map, got " +
                   shape_string(z.sizes().vec()));
}

torch::Tensor tv_penalty(const torch::Tensor& x) {
  if (x.dim() != 3 && x.dim() != 4) {
    throw ShapeError("tv_penalty: expected [C,H,W] or [N,C,H,W], got " +
                     shape_string(x.sizes().vec()));
  }
  const torch::Tensor batch = x.dim() == 3 ? x.unsqueeze(0) : x;
  const int64_t n = batch.size(0);
  const int64_t height = batch.size(2);
  const int64_t width = batch.size(3);
  const double elements = static_cast<double>(batch.size(1) * height * width);

  torch::Tensor total = torch::zeros({n}, batch.options());
  if (height > 1) {
    const auto dv = batch.slice(2, 1) - batch.slice(2, 0, height - 1);
    total = total + dv.square().sum({1, 2, 3});
  }
  if (width > 1) {
    const auto dh = batch.slice(3, 1) - batch.slice(3, 0, width - 1);
    total = total + dh.square().sum({1, 2, 3});
  }
  return (total / elements).mean();
}

FilmGeneratorImpl::FilmGeneratorImpl(int64_t embedding_dim, int64_t channels) {
  const auto init = FilmGeneratorWeights::identity(embedding_dim, channels);
  weights_.w_gamma = register_parameter("w_gamma", init.w_gamma);
  weights_.b_gamma = register_parameter("b_gamma", init.b_gamma);
  weights_.w_beta = register_parameter("w_beta", init.w_beta);
  weights_.b_beta = register_parameter("b_beta", init.b_beta);
}

FilmParams FilmGeneratorImpl::forward(const torch::Tensor& h) const {
  return film_params(h, weights_);
}

void FilmGeneratorImpl::reset_identity() {
  torch::NoGradGuard no_grad;
  weights_.w_gamma.zero_();
  weights_.b_gamma.fill_(1.0);
  weights_.w_beta.zero_();
  weights_.b_beta.zero_();
}

}  // namespace filmedgan
