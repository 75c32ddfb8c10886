#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "embalign/corpus.hpp"
#include "embalign/tools/run_config.hpp"

namespace embalign::tools {

// File names inside each stage's output directory.
inline constexpr const char* kManifest = "manifest.tsv";
inline constexpr const char* kCheckpoint = "model.eckp";
inline constexpr const char* kLossHistory = "loss_history.csv";
inline constexpr const char* kPairs = "pairs.tsv";
inline constexpr const char* kResults = "results.tsv";
inline constexpr const char* kReport = "report.csv";
inline constexpr const char* kSummary = "summary.json";
inline constexpr const char* kDetectReport = "detect.csv";
inline constexpr const char* kSweep = "sweep.csv";

struct LoadedCorpus {
  std::vector<CorpusItem> items;
  std::vector<std::string> paths;     // manifest path of each item, relative to the corpus directory
  std::vector<std::string> captions;  // indexed by class id
};

LoadedCorpus load_corpus(const fs::path& dir);

struct Pair {
  std::string id;
  std::size_t item = 0;  // index into the corpus
  std::size_t target = 0;
};

// Held-out images paired with a uniformly drawn mismatched class.
std::vector<Pair> draw_pairs(const LoadedCorpus& corpus, std::size_t count, std::uint64_t seed);
void write_pairs(const fs::path& path, const LoadedCorpus& corpus, std::span<const Pair> pairs);
std::vector<Pair> read_pairs(const fs::path& path, const LoadedCorpus& corpus);

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first failure.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

// Every command stages its output next to `out` and renames it into place on
// success, so a failed command leaves no partial directory. An existing
// non-empty `out` is an error unless `force` is set.
struct Stage {
  fs::path out;
  bool force = false;
  std::ostream* log = nullptr;
};

void cmd_gen(const RunConfig& cfg, const Stage& stage);

struct TrainSummary {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double heldout_accuracy = 0.0;
  double seconds = 0.0;
};
TrainSummary cmd_train(const RunConfig& cfg, const fs::path& corpus, const Stage& stage);

struct AttackSummary {
  std::size_t pairs = 0;
  std::size_t converged = 0;
};
// `pairs` defaults to `cfg.pairs.count` random held-out pairs.
AttackSummary cmd_attack(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& corpus,
                         const std::optional<fs::path>& pairs, const Stage& stage);

struct EvalSummary {
  std::size_t attacks = 0;
  double success_rate = 0.0;
  bool overlap = false;
};
EvalSummary cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& corpus,
                     const fs::path& attacks, const Stage& stage);

struct DetectSummary {
  std::size_t clean = 0;
  std::size_t attacked = 0;
  std::vector<SweepRow> sweep;
};
// `attacks` is an attack output directory; clean images come from the held-out split.
DetectSummary cmd_detect(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& corpus,
                         const std::optional<fs::path>& attacks, const Stage& stage);

// Full command line: `embalign <gen|train|attack|eval|detect> [options]`.
int run_app(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace embalign::tools
