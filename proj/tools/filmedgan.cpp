// Command-line entry points for every pipeline stage.
//
// Config file (JSON), every section optional:
//   {"model": {...}, "train": {...}, "embedding": {...}, "predictor": {...}}

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>

#include "filmedgan/checkpoint.hpp"
#include "filmedgan/data.hpp"
#include "filmedgan/errors.hpp"
#include "filmedgan/image_io.hpp"
#include "filmedgan/metrics.hpp"
#include "filmedgan/networks.hpp"
#include "filmedgan/service.hpp"
#include "filmedgan/text.hpp"
#include "filmedgan/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace filmedgan;

namespace {

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  try {
    auto config = json::parse(in);
    if (!config.is_object()) throw ConfigError("config " + path + " must be a JSON object");
    return config;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

json section(const json& config, const char* name) {
  return config.contains(name) ? config.at(name) : json::object();
}

EmbeddingTrainConfig embedding_train_config(const json& j, uint64_t seed) {
  EmbeddingTrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.margin = j.value("margin", c.margin);
  c.seed = seed;
  return c;
}

EmbeddingConfig embedding_model_config(const json& j, Resolution resolution) {
  EmbeddingConfig c;
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  const auto backbone = j.value("backbone", std::string("conv4"));
  if (backbone == "conv4") {
    c.backbone = Backbone::conv4;
  } else if (backbone == "torchscript") {
    c.backbone = Backbone::torchscript;
  } else {
    throw ConfigError("unknown embedding backbone '" + backbone + "'");
  }
  c.backbone_path = j.value("backbone_path", std::string());
  c.fallback_to_conv4 = j.value("fallback_to_conv4", false);
  c.resolution = resolution;
  return c;
}

PredictorConfig predictor_config(const json& j, uint64_t seed) {
  PredictorConfig c;
  c.base_width = j.value("base_width", c.base_width);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.seed = seed;
  return c;
}

std::string checkpoint_or_env(const std::string& given) {
  if (!given.empty()) return given;
  if (const char* env = std::getenv("FILMEDGAN_CHECKPOINT"); env && *env) return env;
  throw ConfigError("no checkpoint given (use --checkpoint or FILMEDGAN_CHECKPOINT)");
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string(flag) + " is required");
}

EditFn engine_edit(const EditEngine& engine) {
  return [&engine](const torch::Tensor& images, std::span<const std::string> captions) {
    return engine.edit_batch(images, captions);
  };
}

// Predictor for evaluation: explicit path, then one cached beside the dataset,
// otherwise trained on the training split and cached.
AttributePredictor obtain_predictor(const std::string& explicit_path, const fs::path& dataset_dir,
                                    const DatasetSplit& data, const json& config, uint64_t seed) {
  if (!explicit_path.empty()) return load_predictor(explicit_path);
  const auto cached = dataset_dir / "predictor.pt";
  if (fs::exists(cached)) return load_predictor(cached);
  std::cerr << "training attribute predictor on " << data.train.size() << " samples\n";
  auto predictor = train_attribute_predictor(data.train, data.schema, predictor_config(section(config, "predictor"), seed));
  save_predictor(cached, predictor);
  return predictor;
}

int make_synthetic(int64_t n, uint64_t seed, const std::string& out, const json& config) {
  require(out, "--out");
  const auto model = section(config, "model").get<ModelConfig>();
  const auto split = generate_synthetic(n, seed, model.resolution);
  save_synthetic(split, out, seed);
  std::cout << "wrote " << split.train.size() << " train and " << split.test.size() << " test samples to " << out
            << '\n';
  return 0;
}

int train_embedding_stage(const std::string& dataset, const std::string& out, uint64_t seed, const std::string& vectors,
                          const json& config) {
  require(dataset, "--dataset");
  require(out, "--out");
  const auto data = load_dataset(dataset, section(config, "model").get<ModelConfig>().resolution);
  const auto section_json = section(config, "embedding");
  auto result = train_embedding(data.train, embedding_train_config(section_json, seed),
                                embedding_model_config(section_json, data.resolution),
                                [](int64_t epoch, double loss) {
                                  std::cout << "epoch " << epoch << " ranking_loss " << loss << '\n';
                                });
  if (!vectors.empty()) {
    // Pretrained vectors replace the word table before saving; useful when
    // the embedding is trained elsewhere and only the table is shipped.
    const auto found = load_word_vectors(vectors, result.vocab, result.model);
    std::cout << "loaded " << found << " word vectors\n";
  }
  save_embedding(out, result.model, result.vocab);
  std::cout << "initial loss " << result.initial_loss << ", final loss "
            << (result.epoch_losses.empty() ? result.initial_loss : result.epoch_losses.back()) << '\n';
  return 0;
}

int train_gan_stage(const std::string& dataset, const std::string& embedding_dir, const std::string& out,
                    const std::string& predictor_path, uint64_t seed, bool seed_given, const json& config) {
  require(dataset, "--dataset");
  require(embedding_dir, "--embedding");
  require(out, "--out");
  auto model = section(config, "model").get<ModelConfig>();
  const auto data = load_dataset(dataset, model.resolution);
  model.resolution = data.resolution;
  auto train = section(config, "train").get<TrainConfig>();
  if (seed_given) train.seed = seed;
  auto [embedding, vocab] = load_embedding(embedding_dir);
  model.embedding_dim = embedding->config().embedding_dim;
  auto [generator, discriminator] = make_gan(model, train.seed);

  FitOptions options;
  options.out_dir = out;
  options.embedding_dir = embedding_dir;
  options.on_epoch = [](const EpochMetrics& m) {
    std::cout << json(m).dump() << std::endl;
  };
  const auto result = fit(data.train, embedding, vocab, generator, discriminator, train, options);
  if (!predictor_path.empty()) {
    fs::copy_file(predictor_path, fs::path(out) / "predictor.pt", fs::copy_options::overwrite_existing);
    fs::copy_file(predictor_path + ".json", fs::path(out) / "predictor.pt.json", fs::copy_options::overwrite_existing);
  }
  if (result.aborted) {
    std::cerr << "training aborted: " << result.abort_reason << '\n';
    return 1;
  }
  return 0;
}

int evaluate_stage(const std::string& checkpoint, const std::string& dataset, const std::string& out,
                   const std::string& predictor_path, uint64_t seed, const json& config) {
  require(dataset, "--dataset");
  const auto engine = EditEngine::load(checkpoint_or_env(checkpoint));
  const auto data = load_dataset(dataset, engine->resolution());
  auto predictor = obtain_predictor(predictor_path, dataset, data, config, seed);
  const auto report = evaluate(data.test, engine_edit(*engine), predictor);
  const auto text = json(report).dump(2);
  if (out.empty()) {
    std::cout << text << '\n';
  } else {
    std::ofstream(out) << text << '\n';
    std::cout << "wrote " << out << '\n';
  }
  return 0;
}

int edit_stage(const std::string& checkpoint, const std::string& image_path, const std::string& text,
               const std::string& out) {
  require(image_path, "--image");
  require(text, "--text");
  require(out, "--out");
  const auto engine = EditEngine::load(checkpoint_or_env(checkpoint));
  const auto result = engine->edit(read_image(image_path, engine->resolution()), text);
  const fs::path out_path(out);
  write_image(out_path, result.image);
  for (size_t k = 0; k < result.attention.size(); ++k) {
    auto name = out_path.stem().string() + "_attention_" + std::to_string(k + 1) + ".png";
    write_heatmap(out_path.parent_path() / name, result.attention[k]);
  }
  std::cout << "wrote " << out << " and " << result.attention.size() << " attention maps\n";
  return 0;
}

// Rows: one per (checkpoint, source image); columns: source then one edit per caption.
int grid_stage(const std::vector<std::string>& checkpoints, const std::vector<std::string>& captions,
               const std::vector<std::string>& images, const std::string& dataset, int64_t n,
               const std::string& out) {
  require(out, "--out");
  if (checkpoints.empty()) throw ConfigError("--checkpoint is required at least once");
  if (captions.empty()) throw ConfigError("--text is required at least once");
  std::vector<std::vector<torch::Tensor>> rows;
  for (const auto& ckpt : checkpoints) {
    const auto engine = EditEngine::load(ckpt);
    std::vector<torch::Tensor> sources;
    for (const auto& path : images) sources.push_back(read_image(path, engine->resolution()));
    if (!dataset.empty()) {
      const auto data = load_dataset(dataset, engine->resolution());
      for (int64_t i = 0; i < n && i < static_cast<int64_t>(data.test.size()); ++i) {
        sources.push_back(data.test[i].image());
      }
    }
    if (sources.empty()) throw ConfigError("grid needs --image or --dataset");
    for (const auto& source : sources) {
      std::vector<torch::Tensor> row{source};
      for (const auto& caption : captions) row.push_back(engine->edit(source, caption).image);
      rows.push_back(std::move(row));
    }
  }
  write_image(out, tile_images(rows));
  std::cout << "wrote " << out << " (" << rows.size() << " rows)\n";
  return 0;
}

Service* active_service = nullptr;

void stop_on_signal(int) {
  if (active_service) active_service->stop();
}

int serve_stage(const std::string& checkpoint, const std::string& dataset, const std::string& host, int port,
                uint64_t seed) {
  const auto engine = EditEngine::load(checkpoint_or_env(checkpoint));
  std::optional<DatasetSplit> gallery;
  if (!dataset.empty()) gallery = load_dataset(dataset, engine->resolution());
  ServiceOptions options;
  options.sample_seed = seed;
  Service service(engine, std::move(gallery), options);
  if (!service.bind(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  active_service = &service;
  std::signal(SIGINT, stop_on_signal);
  std::signal(SIGTERM, stop_on_signal);
  std::cout << "serving checkpoint " << engine->checkpoint_id() << " on http://" << host << ':' << port << std::endl;
  service.listen_after_bind();
  active_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-guided fashion image editing"};
  app.require_subcommand(1);

  std::string config_path, dataset, checkpoint, out, image, text, embedding, predictor, host = "127.0.0.1";
  std::vector<std::string> checkpoints, texts, images;
  uint64_t seed = 0;
  int64_t n = 2000;
  int port = 8080;
  std::string vectors;

  auto add_config = [&](CLI::App* cmd) { cmd->add_option("--config", config_path, "JSON config file"); };

  auto* synth = app.add_subcommand("make-synthetic", "Render a synthetic sprite dataset");
  add_config(synth);
  synth->add_option("--n", n, "number of samples")->check(CLI::Range(int64_t{10}, int64_t{10'000'000}));
  synth->add_option("--seed", seed);
  synth->add_option("--out", out, "output directory");

  auto* temb = app.add_subcommand("train-embedding", "Train the joint text/image embedding");
  add_config(temb);
  temb->add_option("--dataset", dataset);
  temb->add_option("--out", out, "output bundle directory");
  temb->add_option("--seed", seed);
  temb->add_option("--word-vectors", vectors, "word2vec text file to initialise the word table");

  auto* tgan = app.add_subcommand("train-gan", "Train generator and discriminator");
  add_config(tgan);
  tgan->add_option("--dataset", dataset);
  tgan->add_option("--embedding", embedding, "embedding bundle directory");
  tgan->add_option("--out", out, "checkpoint directory");
  tgan->add_option("--predictor", predictor, "attribute predictor copied into the checkpoint");
  auto* tgan_seed = tgan->add_option("--seed", seed);

  auto* eval = app.add_subcommand("evaluate", "IS, FID and attribute score on the test split");
  add_config(eval);
  eval->add_option("--checkpoint", checkpoint);
  eval->add_option("--dataset", dataset);
  eval->add_option("--predictor", predictor, "attribute predictor (trained and cached when absent)");
  eval->add_option("--out", out, "report path");
  eval->add_option("--seed", seed);

  auto* edit = app.add_subcommand("edit", "Edit one image with a caption");
  add_config(edit);
  edit->add_option("--checkpoint", checkpoint);
  edit->add_option("--image", image);
  edit->add_option("--text", text);
  edit->add_option("--out", out, "edited PNG; attention maps are written beside it");

  auto* grid = app.add_subcommand("grid", "Comparison grid over checkpoints and captions");
  add_config(grid);
  grid->add_option("--checkpoint", checkpoints)->take_all();
  grid->add_option("--text", texts)->take_all();
  grid->add_option("--image", images)->take_all();
  grid->add_option("--dataset", dataset, "take the first --n test images");
  grid->add_option("--n", n);
  grid->add_option("--out", out);

  auto* serve = app.add_subcommand("serve", "HTTP inference service");
  add_config(serve);
  serve->add_option("--checkpoint", checkpoint);
  serve->add_option("--dataset", dataset, "gallery for /api/samples");
  serve->add_option("--host", host);
  serve->add_option("--port", port)->check(CLI::Range(1, 65535));
  serve->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    const auto config = read_config(config_path);
    if (*synth) return make_synthetic(n, seed, out, config);
    if (*temb) return train_embedding_stage(dataset, out, seed, vectors, config);
    if (*tgan) return train_gan_stage(dataset, embedding, out, predictor, seed, tgan_seed->count() > 0, config);
    if (*eval) return evaluate_stage(checkpoint, dataset, out, predictor, seed, config);
    if (*edit) return edit_stage(checkpoint, image, text, out);
    if (*grid) return grid_stage(checkpoints, texts, images, dataset, n, out);
    if (*serve) return serve_stage(checkpoint, dataset, host, port, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
