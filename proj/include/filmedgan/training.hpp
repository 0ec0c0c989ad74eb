#pragma once

// Adversarial training of the text-conditioned generator/discriminator pair.

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "filmedgan/data.hpp"
#include "filmedgan/networks.hpp"
#include "filmedgan/text.hpp"

namespace filmedgan {

/// Probability clamp keeping the log terms finite.
inline constexpr double kScoreEpsilon = 1e-7;

struct TrainConfig {
  double lr = 0.002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t batch = 64;
  int64_t epochs = 125;
  double lr_decay_gamma = 0.5;
  int64_t lr_decay_period = 100;
  double tv_lambda = 0.01;
  uint64_t seed = 0;
  /// Write a checkpoint every this many epochs (the final epoch is always written).
  int64_t checkpoint_every = 25;

  /// Throws ConfigError on non-positive rates/sizes or a negative tv_lambda.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// The three caption roles for one image: its own caption, one from a sample
/// with at least one different attribute, and a random other sample's
/// caption used as the edit target.
struct TextTriplet {
  int64_t match = 0;
  int64_t mismatch = 0;
  int64_t relevant = 0;
  /// True when no attribute-differing sample turned up in 100 draws.
  bool mismatch_fallback = false;
};

/// Indices refer to `samples`. Throws ValidationError for fewer than two samples.
TextTriplet sample_triplet(std::span<const CaptionedSample> samples, int64_t index, std::mt19937_64& rng);

/// log D(x,t) + log(1 - D(x,t^)) + log(1 - D(G(x,t-),t-)), batch-averaged.
/// Scores are clamped to [eps, 1-eps]. Training maximises this value.
torch::Tensor discriminator_objective(const torch::Tensor& real_match, const torch::Tensor& real_mismatch,
                                      const torch::Tensor& fake);
double discriminator_objective(double real_match, double real_mismatch, double fake);

/// Minimised generator quantity: -log D(G(x,t-),t-) + lambda * TV(G(x,t-)),
/// batch-averaged.
torch::Tensor generator_objective(const torch::Tensor& d_fake, const torch::Tensor& fake_image, double tv_lambda);
double generator_objective(double d_fake, double tv, double tv_lambda);

/// The same two objectives evaluated from discriminator logits with
/// log-sigmoid, which keeps gradients alive where the clamp would cut them.
torch::Tensor discriminator_loss_from_logits(const torch::Tensor& real_match, const torch::Tensor& real_mismatch,
                                             const torch::Tensor& fake);
torch::Tensor generator_adversarial_loss_from_logits(const torch::Tensor& fake);

/// lr * gamma ^ floor(epoch / period).
double lr_at(int64_t epoch, const TrainConfig& config);

struct EpochMetrics {
  int64_t epoch = 0;
  double lr = 0.0;
  double loss_d = 0.0;
  double loss_g = 0.0;
  double tv_term = 0.0;
  double d_real = 0.0;      ///< mean D(x, matching text)
  double d_mismatch = 0.0;  ///< mean D(x, mismatching text)
  double d_fake = 0.0;      ///< mean D(G(x, relevant text), relevant text)
  int64_t mismatch_fallbacks = 0;
};

void to_json(nlohmann::json& j, const EpochMetrics& m);
void from_json(const nlohmann::json& j, EpochMetrics& m);

/// Header and one line per epoch: epoch,lr,loss_D,loss_G,tv_term.
std::string metrics_csv(std::span<const EpochMetrics> history);

struct FitOptions {
  /// Checkpoints and metrics.csv go here when set.
  std::filesystem::path out_dir;
  /// Embedding bundle copied into each checkpoint so it is self-contained.
  std::filesystem::path embedding_dir;
  std::function<void(const EpochMetrics&)> on_epoch;
  /// Stop after this many batches of the current epoch (testing aid); 0 = all.
  int64_t max_batches_per_epoch = 0;
};

struct FitResult {
  std::vector<EpochMetrics> history;
  bool aborted = false;
  std::string abort_reason;
  std::vector<std::filesystem::path> checkpoints;
};

/// Alternating updates: per batch one discriminator step on the negated
/// discriminator objective, then one generator step on the generator
/// objective. Text embeddings come from the frozen embedding model. On a
/// non-finite loss the networks are restored to the last completed epoch and
/// training stops.
FitResult fit(std::span<const CaptionedSample> samples, EmbeddingModel& embedding, const Vocabulary& vocab,
              Generator& generator, Discriminator& discriminator, const TrainConfig& config,
              const FitOptions& options = {});

/// Seeds torch and builds both networks.
std::pair<Generator, Discriminator> make_gan(const ModelConfig& config, uint64_t seed);

}  // namespace filmedgan
