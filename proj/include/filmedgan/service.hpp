#pragma once

// Read-only inference engine over a checkpoint, and the HTTP API the editing
// studio talks to.

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "filmedgan/data.hpp"
#include "filmedgan/metrics.hpp"
#include "filmedgan/networks.hpp"
#include "filmedgan/text.hpp"

namespace filmedgan {

struct EditResult {
  torch::Tensor image;                   ///< [3,H,W] in [-1,1]
  std::vector<torch::Tensor> attention;  ///< one [H/4,W/4] map per residual block
  std::optional<Attributes> attributes;  ///< predicted for the edit when a predictor is loaded
  std::vector<std::pair<std::string, double>> timings_ms;
};

/// Holds frozen networks; every method is safe to call concurrently.
class EditEngine {
 public:
  EditEngine(Generator generator, EmbeddingModel embedding, Vocabulary vocab,
             std::optional<AttributePredictor> predictor, std::string checkpoint_id);

  /// Loads generator, embedding bundle and (if present) predictor.pt from a
  /// checkpoint directory.
  static std::shared_ptr<const EditEngine> load(const std::filesystem::path& checkpoint_dir);

  /// Sentence embedding [d]. Throws ValidationError for blank text.
  torch::Tensor embed(std::string_view text) const;
  /// image is [3,H,W] at the model resolution.
  EditResult edit(const torch::Tensor& image, std::string_view text) const;
  /// Batched edit for evaluation: [N,3,H,W] with one caption per image.
  torch::Tensor edit_batch(const torch::Tensor& images, std::span<const std::string> captions) const;

  Resolution resolution() const { return generator_->config().resolution; }
  const std::string& checkpoint_id() const { return checkpoint_id_; }
  bool has_predictor() const { return predictor_.has_value(); }
  const AttributeSchema& schema() const;
  /// Hash over all loaded weights; unchanged by inference.
  std::string weights_hash() const;

 private:
  // Modules are only run forward in eval mode under InferenceMode.
  mutable Generator generator_;
  mutable EmbeddingModel embedding_;
  Vocabulary vocab_;
  mutable std::optional<AttributePredictor> predictor_;
  std::string checkpoint_id_;
};

struct ServiceOptions {
  size_t max_image_bytes = 4 * 1024 * 1024;
  int64_t max_samples = 64;
  uint64_t sample_seed = 0;
  int worker_threads = 4;
};

/// HTTP API:
///   GET  /api/health            {status, checkpoint_id}
///   POST /api/edit              {image: base64 PNG, text} -> {image, attention[4], attributes, timings_ms}
///   GET  /api/samples?n=        {samples: [{id, image, caption}]}
///   POST /api/embed             {text} -> {embedding: [d]}
/// Errors carry {error, reason}; 500s add an incident_id.
class Service {
 public:
  Service(std::shared_ptr<const EditEngine> engine, std::optional<DatasetSplit> gallery, ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds to an ephemeral port and returns it.
  int bind_any_port(const std::string& host = "127.0.0.1");
  bool bind(const std::string& host, int port);
  /// Blocks serving requests until stop().
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace filmedgan
