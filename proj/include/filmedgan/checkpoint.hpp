#pragma once

// Checkpoint directory layout:
//   manifest.json      {id, model, train, epoch, seed, history}
//   generator.pt       parameter archive
//   discriminator.pt   parameter archive
//   embedding/         frozen text embedding bundle (optional)
//   predictor.pt       attribute predictor (optional, written by evaluate)

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "filmedgan/networks.hpp"
#include "filmedgan/training.hpp"

namespace filmedgan {

struct CheckpointManifest {
  std::string id;
  ModelConfig model;
  TrainConfig train;
  int64_t epoch = 0;
  uint64_t seed = 0;
  std::vector<EpochMetrics> history;
};

/// SHA-256 over every parameter and buffer (names, shapes and raw bytes),
/// as lowercase hex.
std::string weights_hash(const torch::nn::Module& module);

/// Writes the checkpoint; manifest.id is filled in from the weight hash.
/// When `embedding_dir` names an embedding bundle it is copied into
/// `dir/embedding` (skipped when already there).
void save_checkpoint(const std::filesystem::path& dir, Generator& generator, Discriminator& discriminator,
                     CheckpointManifest manifest, const std::filesystem::path& embedding_dir = {});

struct LoadedCheckpoint {
  CheckpointManifest manifest;
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};
};

/// Loads both networks in eval mode. Throws IoError for a missing or
/// malformed checkpoint.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

CheckpointManifest read_manifest(const std::filesystem::path& dir);

}  // namespace filmedgan
