#pragma once

// Visual-semantic text embedding: a word-vector + GRU sentence encoder and a
// convolutional image encoder trained into a shared space with a symmetric
// pairwise ranking loss.

#include <torch/script.h>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "filmedgan/data.hpp"

namespace filmedgan {

inline constexpr int64_t kEmbeddingDim = 300;
inline constexpr size_t kMaxTokens = 25;

/// Lowercases, turns punctuation (including hyphens) into spaces and splits
/// on whitespace.
std::vector<std::string> normalize_words(std::string_view text);

class Vocabulary {
 public:
  static constexpr int64_t kPadId = 0;
  static constexpr int64_t kUnkId = 1;

  Vocabulary();
  static Vocabulary build(std::span<const std::string> texts);

  /// kUnkId for unknown words.
  int64_t id(const std::string& word) const;
  bool contains(const std::string& word) const { return ids_.count(word) != 0; }
  int64_t size() const { return static_cast<int64_t>(words_.size()); }
  const std::string& word(int64_t id) const { return words_.at(static_cast<size_t>(id)); }

  /// JSON object token -> id.
  std::string to_json() const;
  static Vocabulary from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  void add(const std::string& word);
  std::unordered_map<std::string, int64_t> ids_;
  std::vector<std::string> words_;
};

struct TokenSequence {
  std::vector<int64_t> ids;
};

/// At most kMaxTokens ids. Throws ValidationError for blank text.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab);

enum class Backbone { conv4, torchscript };

struct EmbeddingConfig {
  int64_t vocab_size = 2;
  int64_t embedding_dim = kEmbeddingDim;
  Backbone backbone = Backbone::conv4;
  /// TorchScript feature extractor used when backbone == torchscript.
  std::string backbone_path;
  /// Fall back to conv4 when the TorchScript file cannot be loaded.
  bool fallback_to_conv4 = false;
  Resolution resolution;
};

/// Four stride-2 conv/BN/ReLU blocks followed by global average pooling.
class Conv4EncoderImpl : public torch::nn::Module {
 public:
  explicit Conv4EncoderImpl(int64_t base_width = 32);
  torch::Tensor forward(const torch::Tensor& x);
  int64_t output_dim() const { return output_dim_; }

 private:
  torch::nn::Sequential blocks_{nullptr};
  int64_t output_dim_;
};
TORCH_MODULE(Conv4Encoder);

class EmbeddingModelImpl : public torch::nn::Module {
 public:
  /// Throws ConfigError when the configured backbone is unavailable and no
  /// fallback is allowed.
  explicit EmbeddingModelImpl(EmbeddingConfig config);

  const EmbeddingConfig& config() const { return config_; }

  /// ids [N,T] padded with kPadId, lengths [N]. Runs the GRU only over the
  /// real tokens of each row and returns the final hidden states [N,d].
  torch::Tensor encode_tokens(const torch::Tensor& ids, const torch::Tensor& lengths);

  /// Final GRU hidden state for one sentence, [d].
  torch::Tensor encode_sentence(const TokenSequence& tokens);

  /// Batch of captions -> [N,d].
  torch::Tensor encode_texts(std::span<const std::string> texts, const Vocabulary& vocab);

  /// [N,3,H,W] or [3,H,W] -> L2-normalised [N,d] or [d].
  torch::Tensor encode_images(const torch::Tensor& images);

  torch::nn::Embedding words{nullptr};
  torch::nn::GRUCell gru{nullptr};
  torch::nn::Linear projector{nullptr};

 private:
  torch::Tensor backbone_features(const torch::Tensor& images);

  EmbeddingConfig config_;
  Conv4Encoder conv4_{nullptr};
  std::optional<torch::jit::Module> scripted_;
};
TORCH_MODULE(EmbeddingModel);

/// Replaces rows of the word table with vectors from a text file of
/// "word v1 ... vd" lines. Returns how many vocabulary words were found.
int64_t load_word_vectors(const std::filesystem::path& path, const Vocabulary& vocab,
                          EmbeddingModel& model);

/// Symmetric hinge ranking loss on cosine similarity, averaged over all
/// ordered pairs i != j:
///   max(0, m - s(v_i,t_i) + s(v_i,t_j)) + max(0, m - s(v_i,t_i) + s(v_j,t_i))
/// Throws ValidationError when fewer than two rows are given.
torch::Tensor ranking_loss(const torch::Tensor& image_emb, const torch::Tensor& text_emb,
                           double margin = 0.2);

/// Same loss from a precomputed similarity matrix sim[i][j] = s(v_i, t_j).
torch::Tensor ranking_loss_from_similarity(const torch::Tensor& similarity, double margin = 0.2);

/// Indices of the k most cosine-similar corpus rows, descending, ties to the
/// lower index. corpus is [M,d].
std::vector<int64_t> retrieve_topk(const torch::Tensor& query, const torch::Tensor& corpus, int64_t k);

struct EmbeddingTrainConfig {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t batch = 64;
  int64_t epochs = 200;
  double margin = 0.2;
  uint64_t seed = 0;
};

struct EmbeddingTrainResult {
  EmbeddingModel model{nullptr};
  Vocabulary vocab;
  double initial_loss = 0.0;          ///< mean ranking loss before any update
  std::vector<double> epoch_losses;   ///< mean ranking loss per epoch
};

using EpochLogger = std::function<void(int64_t epoch, double loss)>;

/// Builds the vocabulary from the training captions and fits the model.
/// Throws ValidationError for an empty dataset.
EmbeddingTrainResult train_embedding(std::span<const CaptionedSample> samples,
                                     const EmbeddingTrainConfig& config,
                                     EmbeddingConfig model_config = {},
                                     const EpochLogger& log = {});

/// Directory with model.pt, vocab.json and embedding.json.
void save_embedding(const std::filesystem::path& dir, EmbeddingModel& model, const Vocabulary& vocab);
std::pair<EmbeddingModel, Vocabulary> load_embedding(const std::filesystem::path& dir);

}  // namespace filmedgan
