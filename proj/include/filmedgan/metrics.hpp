#pragma once

// Inception Score, Frechet distance and the attribute-prediction score.

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "filmedgan/data.hpp"

namespace filmedgan {

struct InceptionScore {
  double mean = 0.0;
  double std = 0.0;
};

/// probs is [N,K] with rows summing to 1 (within 1e-6). Each split scores
/// exp(mean KL(p(y|x) || p(y))) against its own marginal.
/// Throws ValidationError on unnormalised rows or N < splits.
InceptionScore inception_score(const torch::Tensor& probs, int64_t splits = 10);

/// Splits used for N samples: `requested`, reduced to max(1, N/100) for small sets.
int64_t inception_splits(int64_t n, int64_t requested = 10);

struct FeatureStats {
  torch::Tensor mu;     ///< [D], double
  torch::Tensor sigma;  ///< [D,D], double, symmetric
};

/// Sample mean and (N-1)-normalised covariance. Throws ValidationError for N < 2.
FeatureStats gaussian_stats(const torch::Tensor& features);

/// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)).
/// Throws ShapeError on dimension mismatch and NumericError when an
/// eigenvalue is below -1e-8.
double fid(const FeatureStats& a, const FeatureStats& b);

struct PredictorConfig {
  int64_t base_width = 32;
  int64_t feature_dim = 128;
  int64_t epochs = 15;
  int64_t batch = 64;
  double lr = 1e-3;
  uint64_t seed = 0;
};

/// Shared convolutional trunk with one softmax head per attribute slot.
class AttributePredictorImpl : public torch::nn::Module {
 public:
  AttributePredictorImpl(const AttributeSchema& schema, PredictorConfig config = {});

  /// Penultimate features [N,feature_dim]; the FID extractor.
  torch::Tensor features(const torch::Tensor& images);
  std::array<torch::Tensor, kAttributeCount> logits(const torch::Tensor& images);
  /// Softmax rows per head.
  std::array<torch::Tensor, kAttributeCount> forward(const torch::Tensor& images);
  /// Argmax per head for each image.
  std::vector<Attributes> predict(const torch::Tensor& images);

  const AttributeSchema& schema() const { return schema_; }
  const PredictorConfig& config() const { return config_; }

 private:
  AttributeSchema schema_;
  PredictorConfig config_;
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Linear embed_{nullptr};
  std::vector<torch::nn::Linear> heads_;
};
TORCH_MODULE(AttributePredictor);

/// Summed cross-entropy over the four heads. Throws ValidationError for an
/// empty set or labels outside the schema.
AttributePredictor train_attribute_predictor(std::span<const CaptionedSample> samples, const AttributeSchema& schema,
                                             const PredictorConfig& config = {});

void save_predictor(const std::filesystem::path& path, AttributePredictor& predictor);
AttributePredictor load_predictor(const std::filesystem::path& path);

/// Joint distribution over all attribute combinations (product of the
/// independent heads), [N, prod K]. Used for the Inception Score.
torch::Tensor joint_probabilities(const std::array<torch::Tensor, kAttributeCount>& heads);

struct AttributeScore {
  double mean = 0.0;  ///< over samples and the four attributes
  std::array<double, kAttributeCount> per_attribute{};
};

/// Fraction of (sample, attribute) pairs where the predictor's argmax equals
/// the target. Throws ValidationError for misaligned or empty inputs.
AttributeScore attribute_score(const torch::Tensor& edited, std::span<const Attributes> targets,
                               AttributePredictor& predictor, int64_t batch = 64);

/// Edits a batch of images [N,3,H,W] toward the given captions.
using EditFn = std::function<torch::Tensor(const torch::Tensor& images, std::span<const std::string> captions)>;

struct ProtocolResult {
  AttributeScore score;
  torch::Tensor edited;  ///< [N,3,H,W]
  std::vector<int64_t> target_index;
};

/// Edits test image i with the caption of sample (i+1) mod N and scores it
/// against that sample's attributes. Throws ValidationError for N < 2.
ProtocolResult next_image_protocol(std::span<const CaptionedSample> test, const EditFn& edit,
                                   AttributePredictor& predictor, int64_t batch = 64);

struct EvaluationReport {
  double is_mean = 0.0;
  double is_std = 0.0;
  double fid = 0.0;
  double attribute_score = 0.0;
  std::array<double, kAttributeCount> per_attribute{};
  std::string extractor_id;
  int64_t n_samples = 0;
  double background_l1 = -1.0;  ///< mean |edit - input| outside the garment mask; -1 without masks
};

void to_json(nlohmann::json& j, const EvaluationReport& r);

/// Mean absolute difference outside each sample's garment mask, or -1 when
/// masks are unavailable.
double background_l1(std::span<const CaptionedSample> samples, const torch::Tensor& edited);

/// Runs the next-image protocol and reports IS, FID (edited vs original test
/// images, predictor features) and the attribute score.
EvaluationReport evaluate(std::span<const CaptionedSample> test, const EditFn& edit, AttributePredictor& predictor,
                          int64_t is_splits = 10);

/// Identifies the desk-scale extractor, e.g. "attribute-predictor-penultimate:<hash>".
std::string extractor_id(AttributePredictor& predictor);

}  // namespace filmedgan
