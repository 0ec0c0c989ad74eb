#include "testing.hpp"
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <thread>

#include "filmedgan/checkpoint.hpp"
#include "filmedgan/errors.hpp"
#include "filmedgan/image_io.hpp"
#include "filmedgan/service.hpp"

using namespace filmedgan;
using json = nlohmann::json;

namespace {

struct Fixture {
  DatasetSplit data = generate_synthetic(40, 21, {64, 32});
  std::shared_ptr<const EditEngine> engine;
  std::unique_ptr<Service> service;
  std::thread server;
  int port = 0;

  Fixture() {
    std::vector<std::string> captions;
    for (const auto& s : data.train) captions.push_back(s.caption);
    auto vocab = Vocabulary::build(captions);
    EmbeddingConfig ecfg;
    ecfg.vocab_size = vocab.size();
    ecfg.embedding_dim = 8;
    ecfg.resolution = data.resolution;
    torch::manual_seed(0);
    EmbeddingModel embedding(ecfg);
    ModelConfig mcfg;
    mcfg.resolution = data.resolution;
    mcfg.base_width = 4;
    mcfg.embedding_dim = 8;
    Generator generator(mcfg);
    {
      torch::NoGradGuard guard;
      for (auto& p : generator->parameters()) p.normal_(0.0, 0.2);
    }
    PredictorConfig pcfg;
    pcfg.base_width = 4;
    pcfg.feature_dim = 8;
    AttributePredictor predictor(data.schema, pcfg);
    engine = std::make_shared<const EditEngine>(generator, embedding, std::move(vocab), predictor, "test-ckpt");
    service = std::make_unique<Service>(engine, data);
    port = service->bind_any_port();
    server = std::thread([this] { service->listen_after_bind(); });
    service->wait_until_ready();
  }
  ~Fixture() {
    service->stop();
    server.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(30, 0);
    return c;
  }

  std::string edit_body(size_t i, const std::string& text) const {
    return json{{"image", base64_encode(encode_png(data.test[i].image()))}, {"text", text}}.dump();
  }
};

}  // namespace

TEST_SUITE("service") {

TEST_CASE("health, edit, embed and samples") {
  Fixture f;
  auto c = f.client();

  auto health = c.Get("/api/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body)["status"] == "ok");
  CHECK(json::parse(health->body)["checkpoint_id"] == "test-ckpt");
  CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");

  const auto body = f.edit_body(0, "the lady is wearing a red long-sleeved blouse");
  auto first = c.Post("/api/edit", body, "application/json");
  REQUIRE(first);
  REQUIRE(first->status == 200);
  const auto r1 = json::parse(first->body);
  CHECK(r1["attention"].size() == 4);
  CHECK(r1["attributes"].contains("color"));
  CHECK(r1["timings_ms"].contains("generate"));
  const auto edited = decode_image(base64_decode(r1["image"].get<std::string>()));
  CHECK((edited.sizes() == torch::IntArrayRef{3, 64, 32}));
  const auto heat = decode_gray(base64_decode(r1["attention"][0].get<std::string>()));
  CHECK((heat.sizes() == torch::IntArrayRef{16, 8}));

  auto second = c.Post("/api/edit", body, "application/json");
  REQUIRE(second);
  CHECK(json::parse(second->body)["image"] == r1["image"]);

  auto embed = c.Post("/api/embed", json{{"text", "the man is wearing a blue t-shirt"}}.dump(), "application/json");
  REQUIRE(embed);
  CHECK(embed->status == 200);
  CHECK(json::parse(embed->body)["embedding"].size() == 8);

  auto samples = c.Get("/api/samples?n=3");
  REQUIRE(samples);
  CHECK(samples->status == 200);
  const auto s = json::parse(samples->body)["samples"];
  REQUIRE(s.size() == 3);
  CHECK(s[0].contains("caption"));
  CHECK(decode_image(base64_decode(s[0]["image"].get<std::string>())).size(1) == 64);
}

TEST_CASE("malformed requests get 400 with a reason") {
  Fixture f;
  auto c = f.client();
  auto expect_400 = [](const httplib::Result& r) {
    REQUIRE(r);
    CHECK(r->status == 400);
    const auto j = json::parse(r->body);
    CHECK(j.contains("error"));
    CHECK(j.contains("reason"));
  };
  expect_400(c.Post("/api/edit", "{not json", "application/json"));
  expect_400(c.Post("/api/edit", "[1,2]", "application/json"));
  expect_400(c.Post("/api/edit", json{{"text", "a red blouse"}}.dump(), "application/json"));
  expect_400(c.Post("/api/edit", json{{"image", base64_encode(encode_png(f.data.test[0].image()))}}.dump(),
                    "application/json"));
  expect_400(c.Post("/api/edit", json{{"image", "@@@"}, {"text", "a red blouse"}}.dump(), "application/json"));
  expect_400(c.Post("/api/edit", json{{"image", base64_encode({1, 2, 3})}, {"text", "a red blouse"}}.dump(),
                    "application/json"));
  expect_400(c.Post("/api/edit", f.edit_body(0, "  ...  "), "application/json"));
  expect_400(c.Post("/api/embed", json{{"text", 3}}.dump(), "application/json"));
  expect_400(c.Get("/api/samples?n=0"));
  expect_400(c.Get("/api/samples?n=abc"));
  expect_400(c.Get("/api/samples?n=100000"));
}

TEST_CASE("images over 4 MB get 413") {
  Fixture f;
  auto c = f.client();
  const std::vector<uint8_t> big(4 * 1024 * 1024 + 16, 7);
  auto r = c.Post("/api/edit", json{{"image", base64_encode(big)}, {"text", "a red blouse"}}.dump(), "application/json");
  REQUIRE(r);
  CHECK(r->status == 413);
  CHECK(json::parse(r->body)["error"] == "image_too_large");
}

TEST_CASE("1000 concurrent requests leave the weights untouched") {
  Fixture f;
  const auto before = f.engine->weights_hash();
  const auto reference = json::parse(f.client().Post("/api/edit", f.edit_body(1, f.data.test[2].caption),
                                                     "application/json")->body)["image"];
  std::atomic<int> ok{0}, identical{0};
  std::vector<std::thread> workers;
  for (int w = 0; w < 4; ++w) {
    workers.emplace_back([&, w] {
      auto c = f.client();
      for (int i = 0; i < 250; ++i) {
        httplib::Result r = (i % 5 == 4)
                                ? c.Post("/api/embed", json{{"text", f.data.test[static_cast<size_t>(i % 4)].caption}}.dump(),
                                         "application/json")
                                : c.Post("/api/edit", f.edit_body(1, f.data.test[2].caption), "application/json");
        if (r && r->status == 200) {
          ++ok;
          if (i % 5 != 4 && json::parse(r->body)["image"] == reference) ++identical;
        }
      }
      (void)w;
    });
  }
  for (auto& t : workers) t.join();
  CHECK(ok == 1000);
  CHECK(identical == 800);
  CHECK(f.engine->weights_hash() == before);
}

TEST_CASE("engine loads from a checkpoint directory") {
  const auto dir = std::filesystem::temp_directory_path() / "filmedgan_engine_ckpt";
  std::filesystem::remove_all(dir);
  const auto data = generate_synthetic(20, 3, {64, 32});
  std::vector<std::string> captions;
  for (const auto& s : data.train) captions.push_back(s.caption);
  auto vocab = Vocabulary::build(captions);
  EmbeddingConfig ecfg;
  ecfg.vocab_size = vocab.size();
  ecfg.embedding_dim = 8;
  ecfg.resolution = data.resolution;
  EmbeddingModel embedding(ecfg);
  save_embedding(dir / "bundle", embedding, vocab);
  ModelConfig mcfg;
  mcfg.resolution = data.resolution;
  mcfg.base_width = 4;
  mcfg.embedding_dim = 8;
  Generator g(mcfg);
  Discriminator d(mcfg);
  g->eval();
  d->eval();
  CheckpointManifest manifest;
  manifest.model = mcfg;
  save_checkpoint(dir / "ckpt", g, d, manifest, dir / "bundle");
  const auto engine = EditEngine::load(dir / "ckpt");
  CHECK(engine->checkpoint_id() == read_manifest(dir / "ckpt").id);
  CHECK_FALSE(engine->has_predictor());
  const auto result = engine->edit(data.test[0].image(), data.test[1].caption);
  CHECK(result.attention.size() == 4);
  CHECK_FALSE(result.attributes.has_value());
  std::filesystem::remove_all(dir / "ckpt" / "embedding");
  CHECK_THROWS_AS(EditEngine::load(dir / "ckpt"), IoError);
  std::filesystem::remove_all(dir);
}

}
