#include "filmedgan/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <utility>

#include "filmedgan/errors.hpp"

namespace filmedgan {
namespace {

using json = nlohmann::json;
namespace F = torch::nn::functional;

const char* backbone_name(Backbone b) { return b == Backbone::conv4 ? "conv4" : "torchscript"; }

Backbone parse_backbone(const std::string& name) {
  if (name == "conv4") return Backbone::conv4;
  if (name == "torchscript") return Backbone::torchscript;
  throw ConfigError("unknown backbone '" + name + "'");
}

// Pads token sequences into ids [N,T] and lengths [N].
std::pair<torch::Tensor, torch::Tensor> pad_batch(const std::vector<TokenSequence>& seqs) {
  size_t longest = 1;
  for (const auto& s : seqs) longest = std::max(longest, s.ids.size());
  auto ids = torch::full({static_cast<int64_t>(seqs.size()), static_cast<int64_t>(longest)},
                         Vocabulary::kPadId, torch::kLong);
  auto lengths = torch::empty({static_cast<int64_t>(seqs.size())}, torch::kLong);
  auto id_acc = ids.accessor<int64_t, 2>();
  for (size_t i = 0; i < seqs.size(); ++i) {
    for (size_t t = 0; t < seqs[i].ids.size(); ++t) id_acc[static_cast<int64_t>(i)][static_cast<int64_t>(t)] = seqs[i].ids[t];
    lengths[static_cast<int64_t>(i)] = static_cast<int64_t>(seqs[i].ids.size());
  }
  return {ids, lengths};
}

}  // namespace

std::vector<std::string> normalize_words(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cleaned.push_back(static_cast<char>(std::tolower(c)));
    } else if (std::isspace(c) || std::ispunct(c)) {
      cleaned.push_back(' ');
    } else {
      cleaned.push_back(static_cast<char>(c));  // keep UTF-8 bytes intact
    }
  }
  std::vector<std::string> words;
  std::istringstream in(cleaned);
  for (std::string w; in >> w;) words.push_back(std::move(w));
  return words;
}

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<unk>");
}

void Vocabulary::add(const std::string& word) {
  if (ids_.emplace(word, static_cast<int64_t>(words_.size())).second) words_.push_back(word);
}

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
  std::vector<std::string> all;
  for (const auto& t : texts) {
    for (auto& w : normalize_words(t)) all.push_back(std::move(w));
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  Vocabulary vocab;
  for (const auto& w : all) vocab.add(w);
  return vocab;
}

int64_t Vocabulary::id(const std::string& word) const {
  const auto it = ids_.find(word);
  return it == ids_.end() ? kUnkId : it->second;
}

std::string Vocabulary::to_json() const {
  json j = json::object();
  for (size_t i = 0; i < words_.size(); ++i) j[words_[i]] = i;
  return j.dump(2);
}

Vocabulary Vocabulary::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError("malformed vocabulary JSON: " + std::string(e.what()));
  }
  std::vector<std::string> words(j.size());
  for (const auto& [word, id] : j.items()) {
    const auto index = id.get<int64_t>();
    if (index < 0 || index >= static_cast<int64_t>(words.size()) || !words[static_cast<size_t>(index)].empty()) {
      throw IoError("vocabulary ids must be a permutation of 0..n-1");
    }
    words[static_cast<size_t>(index)] = word;
  }
  if (words.size() < 2 || words[kPadId] != "<pad>" || words[kUnkId] != "<unk>") {
    throw IoError("vocabulary must reserve ids 0 and 1 for <pad> and <unk>");
  }
  Vocabulary vocab;
  for (const auto& w : words) vocab.add(w);
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab) {
  auto words = normalize_words(text);
  if (words.empty()) throw ValidationError("tokenize: text is empty");
  if (words.size() > kMaxTokens) words.resize(kMaxTokens);
  TokenSequence seq;
  seq.ids.reserve(words.size());
  for (const auto& w : words) seq.ids.push_back(vocab.id(w));
  return seq;
}

Conv4EncoderImpl::Conv4EncoderImpl(int64_t base_width) : output_dim_(base_width * 8) {
  blocks_ = register_module("blocks", torch::nn::Sequential());
  int64_t in = 3;
  for (int64_t out : {base_width, base_width * 2, base_width * 4, base_width * 8}) {
    blocks_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1).bias(false)));
    blocks_->push_back(torch::nn::BatchNorm2d(out));
    blocks_->push_back(torch::nn::ReLU());
    in = out;
  }
}

torch::Tensor Conv4EncoderImpl::forward(const torch::Tensor& x) {
  return blocks_->forward(x).mean({2, 3});
}

EmbeddingModelImpl::EmbeddingModelImpl(EmbeddingConfig config) : config_(std::move(config)) {
  if (config_.vocab_size < 2) throw ConfigError("embedding model needs a vocabulary of at least 2 ids");
  const int64_t d = config_.embedding_dim;
  words = register_module("words", torch::nn::Embedding(config_.vocab_size, d));
  {
    torch::NoGradGuard no_grad;
    words->weight.uniform_(-0.08, 0.08);
  }
  gru = register_module("gru", torch::nn::GRUCell(d, d));

  int64_t feature_dim = 0;
  if (config_.backbone == Backbone::torchscript) {
    try {
      scripted_ = torch::jit::load(config_.backbone_path);
      scripted_->eval();
      torch::NoGradGuard no_grad;
      auto probe = scripted_->forward({torch::zeros({1, 3, config_.resolution.height, config_.resolution.width})})
                       .toTensor();
      feature_dim = probe.dim() == 4 ? probe.size(1) : probe.reshape({1, -1}).size(1);
    } catch (const std::exception& e) {
      if (!config_.fallback_to_conv4) {
        throw ConfigError("visual backbone '" + config_.backbone_path + "' unavailable: " + e.what());
      }
      scripted_.reset();
      config_.backbone = Backbone::conv4;
    }
  }
  if (config_.backbone == Backbone::conv4) {
    conv4_ = register_module("conv4", Conv4Encoder());
    feature_dim = conv4_->output_dim();
  }
  projector = register_module("projector", torch::nn::Linear(feature_dim, d));
}

torch::Tensor EmbeddingModelImpl::encode_tokens(const torch::Tensor& ids, const torch::Tensor& lengths) {
  if (ids.dim() != 2 || lengths.dim() != 1 || lengths.size(0) != ids.size(0)) {
    throw ShapeError("encode_tokens: ids " + shape_string(ids.sizes().vec()) + " vs lengths " +
                     shape_string(lengths.sizes().vec()));
  }
  if (ids.numel() > 0 && (ids.min().item<int64_t>() < 0 || ids.max().item<int64_t>() >= config_.vocab_size)) {
    throw ValidationError("encode_tokens: token id outside the vocabulary");
  }
  const auto vectors = words->forward(ids);  // [N,T,d]
  auto hidden = torch::zeros({ids.size(0), config_.embedding_dim}, vectors.options());
  for (int64_t t = 0; t < ids.size(1); ++t) {
    const auto next = gru->forward(vectors.select(1, t), hidden);
    const auto active = (lengths > t).unsqueeze(1);
    hidden = torch::where(active, next, hidden);
  }
  return hidden;
}

torch::Tensor EmbeddingModelImpl::encode_sentence(const TokenSequence& tokens) {
  if (tokens.ids.empty()) throw ValidationError("encode_sentence: empty token sequence");
  auto [ids, lengths] = pad_batch({tokens});
  return encode_tokens(ids, lengths).squeeze(0);
}

torch::Tensor EmbeddingModelImpl::encode_texts(std::span<const std::string> texts, const Vocabulary& vocab) {
  std::vector<TokenSequence> seqs;
  seqs.reserve(texts.size());
  for (const auto& t : texts) seqs.push_back(tokenize(t, vocab));
  auto [ids, lengths] = pad_batch(seqs);
  return encode_tokens(ids, lengths);
}

torch::Tensor EmbeddingModelImpl::backbone_features(const torch::Tensor& images) {
  if (scripted_) {
    auto features = scripted_->forward({images}).toTensor();
    if (features.dim() == 4) features = features.mean({2, 3});
    return features.reshape({images.size(0), -1}).detach();
  }
  return conv4_->forward(images);
}

torch::Tensor EmbeddingModelImpl::encode_images(const torch::Tensor& images) {
  if (images.dim() == 3) return encode_images(images.unsqueeze(0)).squeeze(0);
  if (images.dim() != 4 || images.size(1) != 3) {
    throw ShapeError("encode_images: expected [N,3,H,W], got " + shape_string(images.sizes().vec()));
  }
  return F::normalize(projector->forward(backbone_features(images)), F::NormalizeFuncOptions().dim(1));
}

int64_t load_word_vectors(const std::filesystem::path& path, const Vocabulary& vocab, EmbeddingModel& model) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open word vectors " + path.string());
  const int64_t d = model->config().embedding_dim;
  torch::NoGradGuard no_grad;
  auto table = model->words->weight;
  int64_t found = 0;
  std::vector<float> values(static_cast<size_t>(d));
  bool first_line = true;
  for (std::string line; std::getline(in, line);) {
    const bool header_candidate = std::exchange(first_line, false);
    std::istringstream row(line);
    std::string word;
    if (!(row >> word)) continue;
    size_t count = 0;
    for (float v; row >> v;) {
      if (count < values.size()) values[count] = v;
      ++count;
    }
    if (header_candidate && count == 1) continue;  // "<count> <dim>" header
    if (static_cast<int64_t>(count) != d) {
      throw ValidationError("word vector for '" + word + "' has " + std::to_string(count) +
                            " components, expected " + std::to_string(d));
    }
    if (!vocab.contains(word)) continue;
    table[vocab.id(word)].copy_(torch::from_blob(values.data(), {d}, torch::kFloat).to(table.dtype()));
    ++found;
  }
  return found;
}

torch::Tensor ranking_loss_from_similarity(const torch::Tensor& sim, double margin) {
  if (sim.dim() != 2 || sim.size(0) != sim.size(1)) {
    throw ShapeError("ranking_loss: similarity must be square, got " + shape_string(sim.sizes().vec()));
  }
  const int64_t n = sim.size(0);
  if (n < 2) throw ValidationError("ranking_loss: need at least two pairs, got " + std::to_string(n));
  const auto diag = sim.diagonal();
  // cost_text[i][j] = m - s(v_i,t_i) + s(v_i,t_j); cost_image[j][i] = m - s(v_i,t_i) + s(v_j,t_i).
  const auto cost_text = (margin - diag.unsqueeze(1) + sim).clamp_min(0.0);
  const auto cost_image = (margin - diag.unsqueeze(0) + sim).clamp_min(0.0);
  const auto off_diagonal = 1.0 - torch::eye(n, sim.options());
  return ((cost_text + cost_image) * off_diagonal).sum() / static_cast<double>(n * (n - 1));
}

torch::Tensor ranking_loss(const torch::Tensor& image_emb, const torch::Tensor& text_emb, double margin) {
  if (image_emb.dim() != 2 || image_emb.sizes() != text_emb.sizes()) {
    throw ShapeError("ranking_loss: image " + shape_string(image_emb.sizes().vec()) + " vs text " +
                     shape_string(text_emb.sizes().vec()));
  }
  const auto opts = F::NormalizeFuncOptions().dim(1);
  const auto sim = torch::matmul(F::normalize(image_emb, opts), F::normalize(text_emb, opts).t());
  return ranking_loss_from_similarity(sim, margin);
}

std::vector<int64_t> retrieve_topk(const torch::Tensor& query, const torch::Tensor& corpus, int64_t k) {
  if (corpus.dim() != 2 || corpus.size(0) == 0) throw ValidationError("retrieve_topk: empty corpus");
  if (query.dim() != 1 || query.size(0) != corpus.size(1)) {
    throw ShapeError("retrieve_topk: query " + shape_string(query.sizes().vec()) + " vs corpus " +
                     shape_string(corpus.sizes().vec()));
  }
  if (k < 1 || k > corpus.size(0)) {
    throw ValidationError("retrieve_topk: k = " + std::to_string(k) + " outside [1, " +
                          std::to_string(corpus.size(0)) + "]");
  }
  const auto c = corpus.detach().to(torch::kDouble);
  const auto q = query.detach().to(torch::kDouble);
  const auto sims = (torch::matmul(c, q) / (c.norm(2, 1) * q.norm()).clamp_min(1e-300)).contiguous();
  const auto* s = sims.data_ptr<double>();
  std::vector<int64_t> order(static_cast<size_t>(corpus.size(0)));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) { return s[a] > s[b]; });
  order.resize(static_cast<size_t>(k));
  return order;
}

EmbeddingTrainResult train_embedding(std::span<const CaptionedSample> samples, const EmbeddingTrainConfig& config,
                                     EmbeddingConfig model_config, const EpochLogger& log) {
  if (samples.empty()) throw ValidationError("train_embedding: empty dataset");
  if (config.batch < 2) throw ValidationError("train_embedding: batch size must be at least 2");

  std::vector<std::string> captions;
  captions.reserve(samples.size());
  for (const auto& s : samples) captions.push_back(s.caption);

  EmbeddingTrainResult result;
  result.vocab = Vocabulary::build(captions);
  model_config.vocab_size = result.vocab.size();
  model_config.resolution = {samples.front().pixels.size(1), samples.front().pixels.size(2)};

  torch::manual_seed(config.seed);
  result.model = EmbeddingModel(model_config);
  auto& model = result.model;
  model->train();

  std::vector<TokenSequence> tokens;
  tokens.reserve(samples.size());
  for (const auto& c : captions) tokens.push_back(tokenize(c, result.vocab));

  std::mt19937_64 rng(config.seed);
  std::vector<int64_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  auto batch_loss = [&](std::span<const int64_t> indices) {
    std::vector<TokenSequence> batch_tokens;
    for (auto i : indices) batch_tokens.push_back(tokens[static_cast<size_t>(i)]);
    auto [ids, lengths] = pad_batch(batch_tokens);
    const auto text = model->encode_tokens(ids, lengths);
    const auto image = model->encode_images(stack_images(samples, indices));
    return ranking_loss(image, text, config.margin);
  };
  auto batches = [&]() {
    std::vector<std::span<const int64_t>> out;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch)) {
      const size_t len = std::min(order.size() - start, static_cast<size_t>(config.batch));
      if (len >= 2) out.emplace_back(order.data() + start, len);
    }
    return out;
  };

  {
    torch::NoGradGuard no_grad;
    double total = 0.0;
    int64_t count = 0;
    for (auto b : batches()) {
      total += batch_loss(b).item<double>();
      ++count;
    }
    result.initial_loss = count ? total / static_cast<double>(count) : 0.0;
  }

  torch::optim::Adam optimizer(
      model->parameters(),
      torch::optim::AdamOptions(config.lr).betas({config.beta1, config.beta2}).eps(config.eps));
  for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int64_t count = 0;
    for (auto b : batches()) {
      optimizer.zero_grad();
      auto loss = batch_loss(b);
      loss.backward();
      optimizer.step();
      total += loss.item<double>();
      ++count;
    }
    const double mean = count ? total / static_cast<double>(count) : 0.0;
    result.epoch_losses.push_back(mean);
    if (log) log(epoch, mean);
  }
  model->eval();
  return result;
}

void save_embedding(const std::filesystem::path& dir, EmbeddingModel& model, const Vocabulary& vocab) {
  std::filesystem::create_directories(dir);
  torch::save(model, (dir / "model.pt").string());
  vocab.save(dir / "vocab.json");
  const auto& c = model->config();
  json j = {{"vocab_size", c.vocab_size},
            {"embedding_dim", c.embedding_dim},
            {"backbone", backbone_name(c.backbone)},
            {"backbone_path", c.backbone_path},
            {"fallback_to_conv4", c.fallback_to_conv4},
            {"resolution", {{"height", c.resolution.height}, {"width", c.resolution.width}}}};
  std::ofstream(dir / "embedding.json") << j.dump(2) << '\n';
}

std::pair<EmbeddingModel, Vocabulary> load_embedding(const std::filesystem::path& dir) {
  std::ifstream in(dir / "embedding.json");
  if (!in) throw IoError("missing " + (dir / "embedding.json").string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed embedding.json: " + std::string(e.what()));
  }
  EmbeddingConfig c;
  c.vocab_size = j.at("vocab_size").get<int64_t>();
  c.embedding_dim = j.at("embedding_dim").get<int64_t>();
  c.backbone = parse_backbone(j.at("backbone").get<std::string>());
  c.backbone_path = j.value("backbone_path", "");
  c.fallback_to_conv4 = j.value("fallback_to_conv4", false);
  c.resolution = {j.at("resolution").at("height").get<int64_t>(), j.at("resolution").at("width").get<int64_t>()};
  EmbeddingModel model(c);
  torch::load(model, (dir / "model.pt").string());
  model->eval();
  auto vocab = Vocabulary::load(dir / "vocab.json");
  if (vocab.size() != c.vocab_size) throw IoError("vocab.json size disagrees with embedding.json");
  return {model, vocab};
}

}  // namespace filmedgan
