#include "filmedgan/checkpoint.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "filmedgan/errors.hpp"

namespace filmedgan {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

std::string weights_hash(const torch::nn::Module& module) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  auto feed = [&](const std::string& name, const torch::Tensor& t) {
    EVP_DigestUpdate(ctx.get(), name.data(), name.size());
    const auto sizes = t.sizes().vec();
    EVP_DigestUpdate(ctx.get(), sizes.data(), sizes.size() * sizeof(int64_t));
    const auto data = t.detach().cpu().contiguous();
    EVP_DigestUpdate(ctx.get(), data.data_ptr(), data.numel() * data.element_size());
  };
  for (const auto& p : module.named_parameters()) feed(p.key(), p.value());
  for (const auto& b : module.named_buffers()) feed(b.key(), b.value());
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &length);
  std::ostringstream hex;
  for (unsigned int i = 0; i < length; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

void save_checkpoint(const fs::path& dir, Generator& generator, Discriminator& discriminator,
                     CheckpointManifest manifest, const fs::path& embedding_dir) {
  fs::create_directories(dir);
  torch::save(generator, (dir / "generator.pt").string());
  torch::save(discriminator, (dir / "discriminator.pt").string());
  manifest.id = "epoch" + std::to_string(manifest.epoch) + "-" + weights_hash(*generator).substr(0, 12);
  json history = json::array();
  for (const auto& m : manifest.history) history.push_back(m);
  write_json(dir / "manifest.json", {{"id", manifest.id},
                                     {"model", manifest.model},
                                     {"train", manifest.train},
                                     {"epoch", manifest.epoch},
                                     {"seed", manifest.seed},
                                     {"history", history}});
  if (!embedding_dir.empty()) {
    const auto target = dir / "embedding";
    std::error_code ec;
    if (!fs::equivalent(embedding_dir, target, ec)) {
      fs::create_directories(target);
      fs::copy(embedding_dir, target, fs::copy_options::overwrite_existing | fs::copy_options::recursive);
    }
  }
}

CheckpointManifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("not a checkpoint directory (no manifest.json): " + dir.string());
  try {
    const auto j = json::parse(in);
    CheckpointManifest m;
    m.id = j.at("id").get<std::string>();
    m.model = j.at("model").get<ModelConfig>();
    m.train = j.at("train").get<TrainConfig>();
    m.epoch = j.at("epoch").get<int64_t>();
    m.seed = j.at("seed").get<uint64_t>();
    m.history = j.at("history").get<std::vector<EpochMetrics>>();
    return m;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
  }
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  LoadedCheckpoint out;
  out.manifest = read_manifest(dir);
  out.generator = Generator(out.manifest.model);
  out.discriminator = Discriminator(out.manifest.model);
  try {
    torch::load(out.generator, (dir / "generator.pt").string());
    torch::load(out.discriminator, (dir / "discriminator.pt").string());
  } catch (const c10::Error& e) {
    throw IoError("cannot read network archives in " + dir.string() + ": " + e.what_without_backtrace());
  }
  out.generator->eval();
  out.discriminator->eval();
  return out;
}

}  // namespace filmedgan
