#pragma once

// Reference computations written independently of the library, in plain
// loops over doubles, plus a central finite-difference gradient checker.

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

inline std::vector<double> to_vec(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kDouble).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

// x is [C,H,W] row-major.
inline double tv(const std::vector<double>& x, int64_t c, int64_t h, int64_t w) {
  double sum = 0.0;
  auto at = [&](int64_t k, int64_t i, int64_t j) { return x[static_cast<size_t>((k * h + i) * w + j)]; };
  for (int64_t k = 0; k < c; ++k) {
    for (int64_t i = 0; i < h; ++i) {
      for (int64_t j = 0; j < w; ++j) {
        if (i + 1 < h) sum += std::pow(at(k, i + 1, j) - at(k, i, j), 2);
        if (j + 1 < w) sum += std::pow(at(k, i, j + 1) - at(k, i, j), 2);
      }
    }
  }
  return sum / static_cast<double>(c * h * w);
}

inline double discriminator_objective(double real, double mismatch, double fake) {
  return std::log(real) + std::log(1.0 - mismatch) + std::log(1.0 - fake);
}

inline double generator_objective(double fake, double tv_value, double lambda) {
  return -std::log(fake) + lambda * tv_value;
}

// sim[i][j] = s(v_i, t_j).
inline double ranking_loss(const std::vector<std::vector<double>>& sim, double margin) {
  const size_t n = sim.size();
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      sum += std::max(0.0, margin - sim[i][i] + sim[i][j]);
      sum += std::max(0.0, margin - sim[i][i] + sim[j][i]);
    }
  }
  return sum / static_cast<double>(n * (n - 1));
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// exp(mean_i KL(p_i || mean p)) over a single split.
inline double inception_score(const std::vector<std::vector<double>>& p) {
  const size_t n = p.size(), k = p[0].size();
  std::vector<double> marginal(k, 0.0);
  for (const auto& row : p) {
    for (size_t j = 0; j < k; ++j) marginal[j] += row[j] / static_cast<double>(n);
  }
  double kl = 0.0;
  for (const auto& row : p) {
    for (size_t j = 0; j < k; ++j) {
      if (row[j] > 0) kl += row[j] * std::log(row[j] / marginal[j]);
    }
  }
  return std::exp(kl / static_cast<double>(n));
}

struct Moments {
  std::vector<double> mu;
  std::vector<std::vector<double>> sigma;
};

inline Moments moments(const std::vector<std::vector<double>>& rows) {
  const size_t n = rows.size(), d = rows[0].size();
  Moments m{std::vector<double>(d, 0.0), std::vector<std::vector<double>>(d, std::vector<double>(d, 0.0))};
  for (const auto& r : rows) {
    for (size_t j = 0; j < d; ++j) m.mu[j] += r[j] / static_cast<double>(n);
  }
  for (const auto& r : rows) {
    for (size_t a = 0; a < d; ++a) {
      for (size_t b = 0; b < d; ++b) m.sigma[a][b] += (r[a] - m.mu[a]) * (r[b] - m.mu[b]) / static_cast<double>(n - 1);
    }
  }
  return m;
}

// Frechet distance between Gaussians with diagonal covariances.
inline double fid_diagonal(const std::vector<double>& mu_a, const std::vector<double>& var_a,
                           const std::vector<double>& mu_b, const std::vector<double>& var_b) {
  double out = 0.0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    out += std::pow(mu_a[i] - mu_b[i], 2) + var_a[i] + var_b[i] - 2.0 * std::sqrt(var_a[i] * var_b[i]);
  }
  return out;
}

// One GRU step from h = 0, gate order (r, z, n) as in the standard cell.
inline std::vector<double> gru_step_from_zero(const std::vector<double>& x, const std::vector<std::vector<double>>& w_ih,
                                              const std::vector<double>& b_ih, const std::vector<double>& b_hh) {
  const size_t u = b_ih.size() / 3;
  auto affine = [&](size_t row) {
    double s = b_ih[row];
    for (size_t j = 0; j < x.size(); ++j) s += w_ih[row][j] * x[j];
    return s;
  };
  std::vector<double> h(u);
  for (size_t k = 0; k < u; ++k) {
    const double r = sigmoid(affine(k) + b_hh[k]);
    const double z = sigmoid(affine(u + k) + b_hh[u + k]);
    const double n = std::tanh(affine(2 * u + k) + r * b_hh[2 * u + k]);
    h[k] = (1.0 - z) * n;
  }
  return h;
}

/// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||) of
/// d f / d input over the listed tensors, central differences with step eps.
/// Inputs must be double tensors; f must return a scalar.
struct GradCheck {
  double rel_err = 0.0;
  double analytic_norm = 0.0;
};

inline GradCheck gradient_check(const std::function<torch::Tensor()>& f, std::vector<torch::Tensor> inputs,
                                double eps = 1e-6, int64_t max_coords_per_input = -1) {
  for (auto& t : inputs) {
    if (t.grad().defined()) t.mutable_grad().zero_();
  }
  auto out = f();
  std::vector<torch::Tensor> analytic = torch::autograd::grad({out}, inputs, {}, false, false, true);
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  torch::NoGradGuard no_grad;
  for (size_t k = 0; k < inputs.size(); ++k) {
    auto flat = inputs[k].view({-1});
    const auto g = analytic[k].defined() ? analytic[k].reshape({-1}) : torch::zeros_like(flat);
    const int64_t n = flat.numel();
    const int64_t stride =
        (max_coords_per_input > 0 && n > max_coords_per_input) ? n / max_coords_per_input : 1;
    for (int64_t i = 0; i < n; i += stride) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + eps;
      const double plus = f().item<double>();
      flat[i] = orig - eps;
      const double minus = f().item<double>();
      flat[i] = orig;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = g[i].item<double>();
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
  }
  const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-30});
  return {std::sqrt(diff2) / denom, std::sqrt(a2)};
}

}  // namespace oracle
