#include "filmedgan/metrics.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "filmedgan/checkpoint.hpp"
#include "filmedgan/errors.hpp"

namespace filmedgan {
namespace {

namespace nn = torch::nn;

constexpr double kEigenTolerance = 1e-8;

torch::Tensor symmetrize(const torch::Tensor& m) { return (m + m.t()) * 0.5; }

// Eigenvalues of a symmetric matrix with tiny negatives clipped to zero.
std::pair<torch::Tensor, torch::Tensor> clipped_eigh(const torch::Tensor& m, const char* what) {
  auto [values, vectors] = torch::linalg_eigh(symmetrize(m));
  const double smallest = values.min().item<double>();
  if (smallest < -kEigenTolerance) {
    throw NumericError(std::string("fid: ") + what + " has eigenvalue " + std::to_string(smallest));
  }
  return {values.clamp_min(0.0), vectors};
}

}  // namespace

int64_t inception_splits(int64_t n, int64_t requested) {
  if (n >= requested * 100) return requested;
  return std::clamp<int64_t>(n / 100, 1, requested);
}

InceptionScore inception_score(const torch::Tensor& probs, int64_t splits) {
  if (probs.dim() != 2 || probs.size(0) == 0) {
    throw ShapeError("inception_score: expected [N,K], got " + shape_string(probs.sizes().vec()));
  }
  const auto p = probs.detach().to(torch::kDouble);
  const auto n = p.size(0);
  if (splits < 1 || n < splits) {
    throw ValidationError("inception_score: " + std::to_string(n) + " rows cannot form " +
                          std::to_string(splits) + " splits");
  }
  if ((p.sum(1) - 1.0).abs().max().item<double>() > 1e-6 || p.min().item<double>() < 0.0) {
    throw ValidationError("inception_score: rows must be probability vectors summing to 1");
  }
  std::vector<double> scores;
  for (int64_t k = 0; k < splits; ++k) {
    const auto part = p.slice(0, k * n / splits, (k + 1) * n / splits);
    const auto marginal = part.mean(0, true);
    // 0 * log 0 counts as 0.
    const auto kl = torch::where(part > 0, part * (torch::log(part) - torch::log(marginal)), torch::zeros_like(part))
                        .sum(1);
    scores.push_back(std::exp(kl.mean().item<double>()));
  }
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  return {mean, std::sqrt(var / static_cast<double>(scores.size()))};
}

FeatureStats gaussian_stats(const torch::Tensor& features) {
  if (features.dim() != 2) {
    throw ShapeError("gaussian_stats: expected [N,D], got " + shape_string(features.sizes().vec()));
  }
  if (features.size(0) < 2) throw ValidationError("gaussian_stats: need at least two rows");
  const auto f = features.detach().to(torch::kDouble);
  const auto mu = f.mean(0);
  const auto centered = f - mu;
  const auto sigma = torch::matmul(centered.t(), centered) / static_cast<double>(f.size(0) - 1);
  return {mu, symmetrize(sigma)};
}

double fid(const FeatureStats& a, const FeatureStats& b) {
  if (a.mu.dim() != 1 || a.mu.sizes() != b.mu.sizes() || a.sigma.dim() != 2 ||
      a.sigma.size(0) != a.mu.size(0) || a.sigma.sizes() != b.sigma.sizes()) {
    throw ShapeError("fid: statistics dimensions differ (" + shape_string(a.sigma.sizes().vec()) + " vs " +
                     shape_string(b.sigma.sizes().vec()) + ")");
  }
  const auto sa = symmetrize(a.sigma.to(torch::kDouble));
  const auto sb = symmetrize(b.sigma.to(torch::kDouble));
  const double mean_term = (a.mu.to(torch::kDouble) - b.mu.to(torch::kDouble)).square().sum().item<double>();

  // tr((Sa Sb)^(1/2)) = tr((Sa^(1/2) Sb Sa^(1/2))^(1/2)); the inner product is symmetric PSD.
  const auto [va, ua] = clipped_eigh(sa, "sigma_a");
  const auto sqrt_a = torch::matmul(ua * va.sqrt().unsqueeze(0), ua.t());
  const auto [vm, um] = clipped_eigh(torch::matmul(torch::matmul(sqrt_a, sb), sqrt_a), "sqrt(sigma_a) sigma_b sqrt(sigma_a)");
  const double trace_sqrt = vm.sqrt().sum().item<double>();

  const double value = mean_term + sa.trace().item<double>() + sb.trace().item<double>() - 2.0 * trace_sqrt;
  if (value < -1e-6) throw NumericError("fid: negative distance " + std::to_string(value));
  return std::max(value, 0.0);
}

AttributePredictorImpl::AttributePredictorImpl(const AttributeSchema& schema, PredictorConfig config)
    : schema_(schema), config_(config) {
  const int64_t b = config_.base_width;
  trunk_ = register_module("trunk", nn::Sequential());
  auto block = [this](int64_t in, int64_t out, bool pool) {
    trunk_->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1).bias(false)));
    trunk_->push_back(nn::BatchNorm2d(out));
    trunk_->push_back(nn::ReLU());
    if (pool) trunk_->push_back(nn::MaxPool2d(2));
  };
  block(3, b, true);
  block(b, 2 * b, true);
  block(2 * b, 4 * b, true);
  block(4 * b, 4 * b, false);
  trunk_->push_back(nn::AdaptiveAvgPool2d(nn::AdaptiveAvgPool2dOptions({8, 4})));
  embed_ = register_module("embed", nn::Linear(4 * b * 8 * 4, config_.feature_dim));
  for (size_t k = 0; k < kAttributeCount; ++k) {
    const auto classes = schema_.cardinality(static_cast<AttributeSlot>(k));
    if (classes < 1) throw ConfigError("attribute predictor: empty label set for " + std::string(kAttributeNames[k]));
    heads_.push_back(register_module("head_" + std::string(kAttributeNames[k]), nn::Linear(config_.feature_dim, classes)));
  }
}

torch::Tensor AttributePredictorImpl::features(const torch::Tensor& images) {
  const auto x = images.dim() == 3 ? images.unsqueeze(0) : images;
  return torch::relu(embed_->forward(trunk_->forward(x).flatten(1)));
}

std::array<torch::Tensor, kAttributeCount> AttributePredictorImpl::logits(const torch::Tensor& images) {
  const auto f = features(images);
  std::array<torch::Tensor, kAttributeCount> out;
  for (size_t k = 0; k < kAttributeCount; ++k) out[k] = heads_[k]->forward(f);
  return out;
}

std::array<torch::Tensor, kAttributeCount> AttributePredictorImpl::forward(const torch::Tensor& images) {
  auto out = logits(images);
  for (auto& t : out) t = torch::softmax(t, 1);
  return out;
}

std::vector<Attributes> AttributePredictorImpl::predict(const torch::Tensor& images) {
  const auto out = logits(images);
  std::vector<Attributes> result(static_cast<size_t>(out[0].size(0)));
  for (size_t k = 0; k < kAttributeCount; ++k) {
    const auto arg = out[k].argmax(1);
    for (size_t i = 0; i < result.size(); ++i) result[i].values[k] = arg[static_cast<int64_t>(i)].item<int64_t>();
  }
  return result;
}

AttributePredictor train_attribute_predictor(std::span<const CaptionedSample> samples, const AttributeSchema& schema,
                                             const PredictorConfig& config) {
  if (samples.empty()) throw ValidationError("train_attribute_predictor: empty dataset");
  std::array<std::vector<int64_t>, kAttributeCount> labels;
  for (const auto& s : samples) {
    for (size_t k = 0; k < kAttributeCount; ++k) {
      const auto v = s.attributes.values[k];
      if (v < 0 || v >= schema.cardinality(static_cast<AttributeSlot>(k))) {
        throw ValidationError("train_attribute_predictor: sample " + std::to_string(s.id) + " lacks a valid " +
                              std::string(kAttributeNames[k]) + " label");
      }
      labels[k].push_back(v);
    }
  }
  std::array<torch::Tensor, kAttributeCount> targets;
  for (size_t k = 0; k < kAttributeCount; ++k) targets[k] = torch::tensor(labels[k]);

  torch::manual_seed(config.seed);
  AttributePredictor predictor(schema, config);
  predictor->train();
  torch::optim::Adam optimizer(predictor->parameters(), torch::optim::AdamOptions(config.lr));
  std::mt19937_64 rng(config.seed);
  std::vector<int64_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  const auto n = static_cast<int64_t>(samples.size());
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int64_t start = 0; start < n; start += config.batch) {
      const int64_t len = std::min(config.batch, n - start);
      if (len < 2) break;
      const std::span<const int64_t> index(order.data() + start, static_cast<size_t>(len));
      const auto idx = torch::tensor(std::vector<int64_t>(index.begin(), index.end()));
      const auto out = predictor->logits(stack_images(samples, index));
      auto loss = torch::zeros({});
      for (size_t k = 0; k < kAttributeCount; ++k) {
        loss = loss + torch::nn::functional::cross_entropy(out[k], targets[k].index_select(0, idx));
      }
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
    }
  }
  predictor->eval();
  return predictor;
}

void save_predictor(const std::filesystem::path& path, AttributePredictor& predictor) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  torch::save(predictor, path.string());
  nlohmann::json meta = {{"base_width", predictor->config().base_width},
                         {"feature_dim", predictor->config().feature_dim},
                         {"schema", predictor->schema().values}};
  std::ofstream(path.string() + ".json") << meta.dump(2) << '\n';
}

AttributePredictor load_predictor(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".json");
  if (!in) throw IoError("missing predictor metadata " + path.string() + ".json");
  const auto meta = nlohmann::json::parse(in);
  AttributeSchema schema;
  schema.values = meta.at("schema").get<std::array<std::vector<std::string>, kAttributeCount>>();
  PredictorConfig config;
  config.base_width = meta.at("base_width").get<int64_t>();
  config.feature_dim = meta.at("feature_dim").get<int64_t>();
  AttributePredictor predictor(schema, config);
  torch::load(predictor, path.string());
  predictor->eval();
  return predictor;
}

torch::Tensor joint_probabilities(const std::array<torch::Tensor, kAttributeCount>& heads) {
  auto joint = heads[0].to(torch::kDouble);
  for (size_t k = 1; k < kAttributeCount; ++k) {
    const auto next = heads[k].to(torch::kDouble);
    joint = (joint.unsqueeze(2) * next.unsqueeze(1)).flatten(1);
  }
  return joint;
}

AttributeScore attribute_score(const torch::Tensor& edited, std::span<const Attributes> targets,
                               AttributePredictor& predictor, int64_t batch) {
  if (edited.dim() != 4 || edited.size(0) != static_cast<int64_t>(targets.size())) {
    throw ValidationError("attribute_score: " + shape_string(edited.sizes().vec()) + " images vs " +
                          std::to_string(targets.size()) + " targets");
  }
  if (targets.empty()) throw ValidationError("attribute_score: no samples");
  torch::NoGradGuard no_grad;
  predictor->eval();
  AttributeScore score;
  const auto n = static_cast<int64_t>(targets.size());
  for (int64_t start = 0; start < n; start += batch) {
    const auto predicted = predictor->predict(edited.slice(0, start, std::min(n, start + batch)));
    for (size_t i = 0; i < predicted.size(); ++i) {
      const auto& target = targets[static_cast<size_t>(start) + i];
      for (size_t k = 0; k < kAttributeCount; ++k) {
        score.per_attribute[k] += predicted[i].values[k] == target.values[k] ? 1.0 : 0.0;
      }
    }
  }
  double total = 0.0;
  for (auto& v : score.per_attribute) {
    v /= static_cast<double>(n);
    total += v;
  }
  score.mean = total / static_cast<double>(kAttributeCount);
  return score;
}

ProtocolResult next_image_protocol(std::span<const CaptionedSample> test, const EditFn& edit,
                                   AttributePredictor& predictor, int64_t batch) {
  const auto n = static_cast<int64_t>(test.size());
  if (n < 2) throw ValidationError("next_image_protocol: need at least two test samples");
  ProtocolResult result;
  std::vector<Attributes> targets;
  std::vector<torch::Tensor> pieces;
  for (int64_t start = 0; start < n; start += batch) {
    const int64_t end = std::min(n, start + batch);
    std::vector<int64_t> index;
    std::vector<std::string> captions;
    for (int64_t i = start; i < end; ++i) {
      const int64_t target = (i + 1) % n;
      index.push_back(i);
      captions.push_back(test[static_cast<size_t>(target)].caption);
      targets.push_back(test[static_cast<size_t>(target)].attributes);
      result.target_index.push_back(target);
    }
    pieces.push_back(edit(stack_images(test, index), captions).detach());
  }
  result.edited = torch::cat(pieces, 0);
  result.score = attribute_score(result.edited, targets, predictor, batch);
  return result;
}

double background_l1(std::span<const CaptionedSample> samples, const torch::Tensor& edited) {
  double total = 0.0;
  int64_t count = 0;
  for (size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].mask.defined()) return -1.0;
    const auto outside = samples[i].mask.eq(0).unsqueeze(0).expand({3, -1, -1});
    const auto diff = (edited[static_cast<int64_t>(i)].to(torch::kFloat) - samples[i].image()).abs();
    total += diff.masked_select(outside).sum().item<double>();
    count += outside.sum().item<int64_t>();
  }
  return count ? total / static_cast<double>(count) : -1.0;
}

std::string extractor_id(AttributePredictor& predictor) {
  return "attribute-predictor-penultimate:" + weights_hash(*predictor).substr(0, 12);
}

EvaluationReport evaluate(std::span<const CaptionedSample> test, const EditFn& edit, AttributePredictor& predictor,
                          int64_t is_splits) {
  const auto protocol = next_image_protocol(test, edit, predictor);
  torch::NoGradGuard no_grad;
  predictor->eval();
  const auto originals = stack_images(test);
  std::vector<torch::Tensor> real_features, fake_features, probs;
  const int64_t n = originals.size(0);
  for (int64_t start = 0; start < n; start += 64) {
    const int64_t end = std::min(n, start + 64);
    real_features.push_back(predictor->features(originals.slice(0, start, end)));
    const auto fake = protocol.edited.slice(0, start, end);
    fake_features.push_back(predictor->features(fake));
    probs.push_back(joint_probabilities(predictor->forward(fake)));
  }
  EvaluationReport report;
  const auto is = inception_score(torch::cat(probs, 0), inception_splits(n, is_splits));
  report.is_mean = is.mean;
  report.is_std = is.std;
  report.fid = fid(gaussian_stats(torch::cat(real_features, 0)), gaussian_stats(torch::cat(fake_features, 0)));
  report.attribute_score = protocol.score.mean;
  report.per_attribute = protocol.score.per_attribute;
  report.extractor_id = extractor_id(predictor);
  report.n_samples = n;
  report.background_l1 = background_l1(test, protocol.edited);
  return report;
}

void to_json(nlohmann::json& j, const EvaluationReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (size_t k = 0; k < kAttributeCount; ++k) per[std::string(kAttributeNames[k])] = r.per_attribute[k];
  j = {{"is_mean", r.is_mean},
       {"is_std", r.is_std},
       {"fid", r.fid},
       {"attribute_score", r.attribute_score},
       {"per_attribute", per},
       {"extractor_id", r.extractor_id},
       {"n_samples", r.n_samples}};
  if (r.background_l1 >= 0) j["background_l1"] = r.background_l1;
}

}  // namespace filmedgan
