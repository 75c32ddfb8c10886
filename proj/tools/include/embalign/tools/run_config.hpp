#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <vector>

#include "embalign/attack.hpp"
#include "embalign/corpus.hpp"
#include "embalign/detect.hpp"
#include "embalign/model.hpp"
#include "embalign/train.hpp"

namespace embalign::tools {

namespace fs = std::filesystem;

struct PairsConfig {
  std::size_t count = 50;          // random pairs drawn when no manifest is given
  std::uint64_t seed = 11;
};

struct EvalConfig {
  std::size_t pca_components = 6;
  double amplify_factor = 25.0;
  bool write_diffs = true;
};

struct SweepConfig {
  std::vector<double> sigmas{0.01, 0.02, 0.03, 0.05, 0.08};
  std::size_t clean_images = 100;  // held-out clean images mixed with the attacked set
};

struct RunConfig {
  std::uint64_t seed = 7;  // model initialisation
  ModelConfig model;
  CorpusConfig corpus;
  TrainConfig train;
  AttackConfig attack;
  PairsConfig pairs;
  EvalConfig eval;
  DetectConfig detect;
  SweepConfig sweep;
  std::size_t jobs = 1;

  void validate() const;
  // Sets every seed in the run (initialisation, corpus, training, pairs, attack, detection).
  void set_seed(std::uint64_t s);
};

void to_json(nlohmann::json& j, const RunConfig& c);
// Missing keys keep their defaults; unknown top-level keys are rejected.
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const fs::path& path);

// Written into every output directory.
inline constexpr const char* kConfigEcho = "config.json";
void write_config_echo(const fs::path& dir, const RunConfig& c);

// $EMBALIGN_OUT when set, otherwise "runs".
fs::path default_output_root();

}  // namespace embalign::tools
