#include "filmedgan/service.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <random>
#include <sstream>

#include "filmedgan/checkpoint.hpp"
#include "filmedgan/errors.hpp"
#include "filmedgan/image_io.hpp"

namespace filmedgan {
namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& error, const std::string& reason) {
  reply(res, status, {{"error", error}, {"reason", reason}});
}

std::string new_incident_id() {
  static std::mutex mutex;
  static std::mt19937_64 rng(std::random_device{}());
  std::lock_guard lock(mutex);
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << rng();
  return out.str();
}

json attributes_json(const Attributes& a, const AttributeSchema& schema) {
  json out = json::object();
  for (size_t k = 0; k < kAttributeCount; ++k) {
    out[std::string(kAttributeNames[k])] = schema.name_of(static_cast<AttributeSlot>(k), a.values[k]);
  }
  return out;
}

}  // namespace

EditEngine::EditEngine(Generator generator, EmbeddingModel embedding, Vocabulary vocab,
                       std::optional<AttributePredictor> predictor, std::string checkpoint_id)
    : generator_(std::move(generator)),
      embedding_(std::move(embedding)),
      vocab_(std::move(vocab)),
      predictor_(std::move(predictor)),
      checkpoint_id_(std::move(checkpoint_id)) {
  generator_->eval();
  embedding_->eval();
  if (predictor_) (*predictor_)->eval();
  if (embedding_->config().embedding_dim != generator_->config().embedding_dim) {
    throw ConfigError("embedding dimension of the text encoder and the generator differ");
  }
}

std::shared_ptr<const EditEngine> EditEngine::load(const std::filesystem::path& checkpoint_dir) {
  auto checkpoint = load_checkpoint(checkpoint_dir);
  if (!std::filesystem::exists(checkpoint_dir / "embedding" / "embedding.json")) {
    throw IoError("checkpoint " + checkpoint_dir.string() + " has no embedding/ bundle");
  }
  auto [embedding, vocab] = load_embedding(checkpoint_dir / "embedding");
  std::optional<AttributePredictor> predictor;
  if (std::filesystem::exists(checkpoint_dir / "predictor.pt")) predictor = load_predictor(checkpoint_dir / "predictor.pt");
  return std::make_shared<const EditEngine>(checkpoint.generator, embedding, std::move(vocab), std::move(predictor),
                                            checkpoint.manifest.id);
}

torch::Tensor EditEngine::embed(std::string_view text) const {
  c10::InferenceMode guard;
  return embedding_->encode_sentence(tokenize(text, vocab_)).clone();
}

EditResult EditEngine::edit(const torch::Tensor& image, std::string_view text) const {
  c10::InferenceMode guard;
  EditResult result;
  auto start = Clock::now();
  const auto h = embedding_->encode_sentence(tokenize(text, vocab_));
  result.timings_ms.emplace_back("encode_text", elapsed_ms(start));

  start = Clock::now();
  const auto out = generator_->forward_with_activations(image, h);
  result.image = out.image.clone();
  result.timings_ms.emplace_back("generate", elapsed_ms(start));

  start = Clock::now();
  for (const auto& block : out.block_outputs) result.attention.push_back(normalize_map(block.mean(0)));
  result.timings_ms.emplace_back("attention", elapsed_ms(start));

  if (predictor_) {
    start = Clock::now();
    result.attributes = (*predictor_)->predict(result.image.unsqueeze(0)).front();
    result.timings_ms.emplace_back("predict_attributes", elapsed_ms(start));
  }
  return result;
}

torch::Tensor EditEngine::edit_batch(const torch::Tensor& images, std::span<const std::string> captions) const {
  c10::InferenceMode guard;
  const auto h = embedding_->encode_texts(captions, vocab_);
  return generator_->forward(images, h).clone();
}

const AttributeSchema& EditEngine::schema() const {
  return predictor_ ? (*predictor_)->schema() : AttributeSchema::synthetic();
}

std::string EditEngine::weights_hash() const {
  std::string combined = filmedgan::weights_hash(*generator_) + filmedgan::weights_hash(*embedding_);
  if (predictor_) combined += filmedgan::weights_hash(**predictor_);
  return combined;
}

struct Service::Impl {
  std::shared_ptr<const EditEngine> engine;
  std::optional<DatasetSplit> gallery;
  ServiceOptions options;
  httplib::Server server;
  std::mutex rng_mutex;
  std::mt19937_64 rng;

  Impl(std::shared_ptr<const EditEngine> e, std::optional<DatasetSplit> g, ServiceOptions o)
      : engine(std::move(e)), gallery(std::move(g)), options(o), rng(o.sample_seed) {
    const int workers = std::max(1, options.worker_threads);
    server.new_task_queue = [workers] { return new httplib::ThreadPool(static_cast<size_t>(workers)); };
    // Large enough that oversized images reach the handler and get a 413 with a reason.
    server.set_payload_max_length(options.max_image_bytes * 4);
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      const auto incident = new_incident_id();
      std::string what = "unknown";
      try {
        if (ep) std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      std::cerr << "incident " << incident << ": " << what << '\n';
      reply(res, 500, {{"error", "internal"}, {"reason", "internal failure"}, {"incident_id", incident}});
    });
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, {{"status", "ok"}, {"checkpoint_id", engine->checkpoint_id()}});
    });
    server.Post("/api/edit", [this](const httplib::Request& req, httplib::Response& res) { handle_edit(req, res); });
    server.Post("/api/embed", [this](const httplib::Request& req, httplib::Response& res) { handle_embed(req, res); });
    server.Get("/api/samples", [this](const httplib::Request& req, httplib::Response& res) { handle_samples(req, res); });
  }

  std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
    try {
      auto body = json::parse(req.body);
      if (!body.is_object()) {
        reply_error(res, 400, "malformed_body", "request body must be a JSON object");
        return std::nullopt;
      }
      return body;
    } catch (const json::exception& e) {
      reply_error(res, 400, "malformed_body", std::string("invalid JSON: ") + e.what());
      return std::nullopt;
    }
  }

  std::optional<std::string> text_field(const json& body, httplib::Response& res) {
    if (!body.contains("text") || !body["text"].is_string()) {
      reply_error(res, 400, "missing_field", "field 'text' (string) is required");
      return std::nullopt;
    }
    auto text = body["text"].get<std::string>();
    if (normalize_words(text).empty()) {
      reply_error(res, 400, "empty_text", "text contains no words");
      return std::nullopt;
    }
    return text;
  }

  void handle_edit(const httplib::Request& req, httplib::Response& res) {
    const auto start = Clock::now();
    auto body = parse_body(req, res);
    if (!body) return;
    if (!body->contains("image") || !(*body)["image"].is_string()) {
      return reply_error(res, 400, "missing_field", "field 'image' (base64 PNG) is required");
    }
    const auto& encoded = (*body)["image"].get_ref<const std::string&>();
    if (encoded.size() / 4 * 3 > options.max_image_bytes) {
      return reply_error(res, 413, "image_too_large",
                         "image exceeds " + std::to_string(options.max_image_bytes) + " bytes");
    }
    const auto text = text_field(*body, res);
    if (!text) return;

    torch::Tensor image;
    try {
      const auto bytes = base64_decode(encoded);
      if (bytes.size() > options.max_image_bytes) {
        return reply_error(res, 413, "image_too_large",
                           "image exceeds " + std::to_string(options.max_image_bytes) + " bytes");
      }
      image = decode_image(bytes, engine->resolution());
    } catch (const ValidationError& e) {
      return reply_error(res, 400, "invalid_image", e.what());
    }
    const double decode_ms = elapsed_ms(start);

    const auto result = engine->edit(image, *text);
    const auto encode_start = Clock::now();
    json attention = json::array();
    for (const auto& map : result.attention) attention.push_back(base64_encode(encode_heatmap_png(map)));
    json out = {{"image", base64_encode(encode_png(result.image))}, {"attention", attention}};
    out["attributes"] = result.attributes ? attributes_json(*result.attributes, engine->schema()) : json(nullptr);
    json timings = {{"decode", decode_ms}};
    for (const auto& [stage, ms] : result.timings_ms) timings[stage] = ms;
    timings["encode_png"] = elapsed_ms(encode_start);
    out["timings_ms"] = timings;
    reply(res, 200, out);
  }

  void handle_embed(const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req, res);
    if (!body) return;
    const auto text = text_field(*body, res);
    if (!text) return;
    const auto h = engine->embed(*text).to(torch::kDouble).contiguous();
    std::vector<double> values(h.data_ptr<double>(), h.data_ptr<double>() + h.numel());
    reply(res, 200, {{"embedding", values}});
  }

  void handle_samples(const httplib::Request& req, httplib::Response& res) {
    if (!gallery || (gallery->train.empty() && gallery->test.empty())) {
      return reply_error(res, 404, "no_dataset", "the service was started without a sample dataset");
    }
    int64_t n = 8;
    if (req.has_param("n")) {
      try {
        size_t used = 0;
        const auto raw = req.get_param_value("n");
        n = std::stoll(raw, &used);
        if (used != raw.size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        return reply_error(res, 400, "invalid_parameter", "n must be an integer");
      }
    }
    if (n < 1 || n > options.max_samples) {
      return reply_error(res, 400, "invalid_parameter",
                         "n must be in [1, " + std::to_string(options.max_samples) + "]");
    }
    const auto& pool = gallery->test.empty() ? gallery->train : gallery->test;
    std::vector<size_t> picks;
    {
      std::lock_guard lock(rng_mutex);
      std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
      for (int64_t i = 0; i < n; ++i) picks.push_back(pick(rng));
    }
    json samples = json::array();
    for (auto i : picks) {
      samples.push_back({{"id", pool[i].id},
                         {"caption", pool[i].caption},
                         {"image", base64_encode(encode_png(pool[i].image()))}});
    }
    reply(res, 200, {{"samples", samples}});
  }
};

Service::Service(std::shared_ptr<const EditEngine> engine, std::optional<DatasetSplit> gallery, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(engine), std::move(gallery), options)) {}

Service::~Service() { stop(); }

int Service::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool Service::bind(const std::string& host, int port) { return impl_->server.bind_to_port(host, port); }

bool Service::listen_after_bind() { return impl_->server.listen_after_bind(); }

void Service::stop() {
  if (impl_) impl_->server.stop();
}

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace filmedgan
