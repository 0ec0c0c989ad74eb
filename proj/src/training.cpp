#include "filmedgan/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "filmedgan/checkpoint.hpp"
#include "filmedgan/errors.hpp"

namespace filmedgan {
namespace {

namespace fs = std::filesystem;

int64_t draw_other(int64_t n, int64_t index, std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> pick(0, n - 2);
  const int64_t j = pick(rng);
  return j >= index ? j + 1 : j;
}

// Parameter and buffer copies used to roll back after a divergent epoch.
class Snapshot {
 public:
  void capture(torch::nn::Module& a, torch::nn::Module& b) {
    tensors_.clear();
    for (auto* m : {&a, &b}) {
      for (auto& t : m->parameters()) tensors_.push_back(t.detach().clone());
      for (auto& t : m->buffers()) tensors_.push_back(t.detach().clone());
    }
  }
  void restore(torch::nn::Module& a, torch::nn::Module& b) const {
    torch::NoGradGuard no_grad;
    size_t i = 0;
    for (auto* m : {&a, &b}) {
      for (auto& t : m->parameters()) t.copy_(tensors_[i++]);
      for (auto& t : m->buffers()) t.copy_(tensors_[i++]);
    }
  }

 private:
  std::vector<torch::Tensor> tensors_;
};

void set_lr(torch::optim::Adam& optimizer, double lr) {
  for (auto& group : optimizer.param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0) || !(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(eps > 0)) {
    throw ConfigError("optimizer parameters out of range");
  }
  if (batch < 2 || epochs < 0 || lr_decay_period < 1 || !(lr_decay_gamma > 0) || checkpoint_every < 1) {
    throw ConfigError("batch >= 2, epochs >= 0, lr_decay_period >= 1, lr_decay_gamma > 0 and "
                      "checkpoint_every >= 1 are required");
  }
  if (!(tv_lambda >= 0)) throw ConfigError("tv_lambda must be non-negative");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps},
       {"batch", c.batch},
       {"epochs", c.epochs},
       {"lr_decay_gamma", c.lr_decay_gamma},
       {"lr_decay_period", c.lr_decay_period},
       {"tv_lambda", c.tv_lambda},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.lr_decay_gamma = j.value("lr_decay_gamma", c.lr_decay_gamma);
  c.lr_decay_period = j.value("lr_decay_period", c.lr_decay_period);
  c.tv_lambda = j.value("tv_lambda", c.tv_lambda);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
}

void to_json(nlohmann::json& j, const EpochMetrics& m) {
  j = {{"epoch", m.epoch},   {"lr", m.lr},         {"loss_D", m.loss_d},
       {"loss_G", m.loss_g}, {"tv_term", m.tv_term}, {"d_real", m.d_real},
       {"d_mismatch", m.d_mismatch}, {"d_fake", m.d_fake}, {"mismatch_fallbacks", m.mismatch_fallbacks}};
}

void from_json(const nlohmann::json& j, EpochMetrics& m) {
  m.epoch = j.at("epoch").get<int64_t>();
  m.lr = j.at("lr").get<double>();
  m.loss_d = j.at("loss_D").get<double>();
  m.loss_g = j.at("loss_G").get<double>();
  m.tv_term = j.at("tv_term").get<double>();
  m.d_real = j.value("d_real", 0.0);
  m.d_mismatch = j.value("d_mismatch", 0.0);
  m.d_fake = j.value("d_fake", 0.0);
  m.mismatch_fallbacks = j.value("mismatch_fallbacks", int64_t{0});
}

std::string metrics_csv(std::span<const EpochMetrics> history) {
  std::ostringstream out;
  out << "epoch,lr,loss_D,loss_G,tv_term\n" << std::setprecision(17);
  for (const auto& m : history) {
    out << m.epoch << ',' << m.lr << ',' << m.loss_d << ',' << m.loss_g << ',' << m.tv_term << '\n';
  }
  return out.str();
}

TextTriplet sample_triplet(std::span<const CaptionedSample> samples, int64_t index, std::mt19937_64& rng) {
  const auto n = static_cast<int64_t>(samples.size());
  if (n < 2) throw ValidationError("sample_triplet: need at least two samples, got " + std::to_string(n));
  if (index < 0 || index >= n) throw ValidationError("sample_triplet: index out of range");

  TextTriplet triplet;
  triplet.match = index;
  const auto& own = samples[static_cast<size_t>(index)].attributes;
  triplet.mismatch = -1;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const int64_t j = draw_other(n, index, rng);
    if (samples[static_cast<size_t>(j)].attributes != own) {
      triplet.mismatch = j;
      break;
    }
  }
  if (triplet.mismatch < 0) {
    triplet.mismatch = draw_other(n, index, rng);
    triplet.mismatch_fallback = true;
  }
  triplet.relevant = draw_other(n, index, rng);
  return triplet;
}

torch::Tensor discriminator_objective(const torch::Tensor& real_match, const torch::Tensor& real_mismatch,
                                      const torch::Tensor& fake) {
  const double lo = kScoreEpsilon, hi = 1.0 - kScoreEpsilon;
  return (torch::log(real_match.clamp(lo, hi)) + torch::log(1.0 - real_mismatch.clamp(lo, hi)) +
          torch::log(1.0 - fake.clamp(lo, hi)))
      .mean();
}

double discriminator_objective(double real_match, double real_mismatch, double fake) {
  auto clamp = [](double p) { return std::clamp(p, kScoreEpsilon, 1.0 - kScoreEpsilon); };
  return std::log(clamp(real_match)) + std::log(1.0 - clamp(real_mismatch)) + std::log(1.0 - clamp(fake));
}

torch::Tensor generator_objective(const torch::Tensor& d_fake, const torch::Tensor& fake_image, double tv_lambda) {
  const auto adversarial = -torch::log(d_fake.clamp(kScoreEpsilon, 1.0 - kScoreEpsilon)).mean();
  return adversarial + tv_lambda * tv_penalty(fake_image);
}

double generator_objective(double d_fake, double tv, double tv_lambda) {
  return -std::log(std::clamp(d_fake, kScoreEpsilon, 1.0 - kScoreEpsilon)) + tv_lambda * tv;
}

torch::Tensor discriminator_loss_from_logits(const torch::Tensor& real_match, const torch::Tensor& real_mismatch,
                                             const torch::Tensor& fake) {
  return -(torch::log_sigmoid(real_match) + torch::log_sigmoid(-real_mismatch) + torch::log_sigmoid(-fake)).mean();
}

torch::Tensor generator_adversarial_loss_from_logits(const torch::Tensor& fake) {
  return -torch::log_sigmoid(fake).mean();
}

double lr_at(int64_t epoch, const TrainConfig& config) {
  const auto steps = static_cast<double>(std::max<int64_t>(epoch, 0) / config.lr_decay_period);
  return config.lr * std::pow(config.lr_decay_gamma, steps);
}

std::pair<Generator, Discriminator> make_gan(const ModelConfig& config, uint64_t seed) {
  torch::manual_seed(seed);
  Generator generator(config);
  Discriminator discriminator(config);
  return {generator, discriminator};
}

FitResult fit(std::span<const CaptionedSample> samples, EmbeddingModel& embedding, const Vocabulary& vocab,
              Generator& generator, Discriminator& discriminator, const TrainConfig& config,
              const FitOptions& options) {
  config.validate();
  if (samples.empty()) throw ValidationError("fit: empty dataset");
  const auto n = static_cast<int64_t>(samples.size());

  // Frozen text embeddings, one row per sample.
  torch::Tensor captions;
  {
    torch::NoGradGuard no_grad;
    embedding->eval();
    std::vector<std::string> texts;
    for (const auto& s : samples) texts.push_back(s.caption);
    captions = embedding->encode_texts(texts, vocab).detach();
  }

  FitResult result;
  auto write_checkpoint = [&](int64_t epoch) {
    if (options.out_dir.empty()) return;
    CheckpointManifest manifest;
    manifest.model = generator->config();
    manifest.train = config;
    manifest.epoch = epoch;
    manifest.seed = config.seed;
    manifest.history = result.history;
    generator->eval();
    discriminator->eval();
    save_checkpoint(options.out_dir, generator, discriminator, manifest, options.embedding_dir);
    std::ostringstream name;
    name << "epoch_" << std::setw(4) << std::setfill('0') << epoch;
    const auto snapshot = options.out_dir / "snapshots" / name.str();
    save_checkpoint(snapshot, generator, discriminator, manifest, options.embedding_dir);
    std::ofstream(options.out_dir / "metrics.csv") << metrics_csv(result.history);
    result.checkpoints.push_back(snapshot);
  };

  write_checkpoint(0);

  torch::optim::Adam opt_g(generator->parameters(),
                           torch::optim::AdamOptions(config.lr).betas({config.beta1, config.beta2}).eps(config.eps));
  torch::optim::Adam opt_d(discriminator->parameters(),
                           torch::optim::AdamOptions(config.lr).betas({config.beta1, config.beta2}).eps(config.eps));

  std::mt19937_64 rng(config.seed);
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Snapshot last_good;
  last_good.capture(*generator, *discriminator);

  for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    generator->train();
    discriminator->train();
    const double lr = lr_at(epoch - 1, config);
    set_lr(opt_g, lr);
    set_lr(opt_d, lr);
    std::shuffle(order.begin(), order.end(), rng);

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.lr = lr;
    int64_t batches = 0;
    bool diverged = false;
    for (int64_t start = 0; start < n; start += config.batch) {
      const int64_t len = std::min(config.batch, n - start);
      if (len < 2) break;
      if (options.max_batches_per_epoch > 0 && batches >= options.max_batches_per_epoch) break;

      std::vector<int64_t> index(order.begin() + start, order.begin() + start + len);
      std::vector<int64_t> match, mismatch, relevant;
      for (auto i : index) {
        const auto t = sample_triplet(samples, i, rng);
        match.push_back(t.match);
        mismatch.push_back(t.mismatch);
        relevant.push_back(t.relevant);
        metrics.mismatch_fallbacks += t.mismatch_fallback ? 1 : 0;
      }
      const auto x = stack_images(samples, index);
      const auto h_match = captions.index_select(0, torch::tensor(match));
      const auto h_mismatch = captions.index_select(0, torch::tensor(mismatch));
      const auto h_relevant = captions.index_select(0, torch::tensor(relevant));

      // Discriminator step.
      torch::Tensor fake_detached;
      {
        torch::NoGradGuard no_grad;
        fake_detached = generator->forward(x, h_relevant);
      }
      const auto l_real = discriminator->logits(x, h_match);
      const auto l_mismatch = discriminator->logits(x, h_mismatch);
      const auto l_fake = discriminator->logits(fake_detached, h_relevant);
      const auto loss_d = discriminator_loss_from_logits(l_real, l_mismatch, l_fake);
      opt_d.zero_grad();
      loss_d.backward();
      opt_d.step();

      // Generator step.
      const auto fake = generator->forward(x, h_relevant);
      const auto adversarial = generator_adversarial_loss_from_logits(discriminator->logits(fake, h_relevant));
      const auto tv = tv_penalty(fake);
      const auto loss_g = adversarial + config.tv_lambda * tv;
      opt_g.zero_grad();
      loss_g.backward();
      opt_g.step();

      const double ld = loss_d.item<double>();
      const double lg = loss_g.item<double>();
      if (!std::isfinite(ld) || !std::isfinite(lg)) {
        diverged = true;
        break;
      }
      metrics.loss_d += ld;
      metrics.loss_g += lg;
      metrics.tv_term += config.tv_lambda * tv.item<double>();
      metrics.d_real += torch::sigmoid(l_real).mean().item<double>();
      metrics.d_mismatch += torch::sigmoid(l_mismatch).mean().item<double>();
      metrics.d_fake += torch::sigmoid(l_fake).mean().item<double>();
      ++batches;
    }
    if (diverged) {
      last_good.restore(*generator, *discriminator);
      result.aborted = true;
      result.abort_reason = "non-finite loss in epoch " + std::to_string(epoch);
      break;
    }
    if (batches > 0) {
      const double b = static_cast<double>(batches);
      metrics.loss_d /= b;
      metrics.loss_g /= b;
      metrics.tv_term /= b;
      metrics.d_real /= b;
      metrics.d_mismatch /= b;
      metrics.d_fake /= b;
    }
    result.history.push_back(metrics);
    last_good.capture(*generator, *discriminator);
    if (options.on_epoch) options.on_epoch(metrics);
    if (epoch % config.checkpoint_every == 0 || epoch == config.epochs) write_checkpoint(epoch);
  }
  generator->eval();
  discriminator->eval();
  return result;
}

}  // namespace filmedgan
