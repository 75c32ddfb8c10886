#include "embalign/tools/run_config.hpp"

#include <algorithm>
#include <cstdlib>

#include "embalign/errors.hpp"
#include "embalign/io.hpp"

namespace embalign::tools {

void RunConfig::validate() const {
  model.validate();
  corpus.validate();
  train.validate();
  attack.validate();
  detect.validate();
  if (corpus.image_size != model.image_size) {
    throw ConfigError("corpus image size " + std::to_string(corpus.image_size) + " differs from model image size " +
                      std::to_string(model.image_size));
  }
  if (eval.pca_components == 0 || eval.pca_components > model.embed_dim) {
    throw ConfigError("eval.pca_components must lie in [1, embed_dim]");
  }
  if (sweep.sigmas.empty()) throw ConfigError("sweep.sigmas must not be empty");
  for (double s : sweep.sigmas) {
    if (!(s > 0.0)) throw ConfigError("sweep.sigmas must be positive");
  }
  if (jobs == 0) throw ConfigError("jobs must be at least 1");
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  corpus.seed = s;
  train.seed = s;
  pairs.seed = s;
  attack.seed = s;
  detect.seed = s;
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"seed", c.seed},
                     {"model", c.model},
                     {"corpus", c.corpus},
                     {"train", c.train},
                     {"attack", c.attack},
                     {"pairs", {{"count", c.pairs.count}, {"seed", c.pairs.seed}}},
                     {"eval",
                      {{"pca_components", c.eval.pca_components},
                       {"amplify_factor", c.eval.amplify_factor},
                       {"write_diffs", c.eval.write_diffs}}},
                     {"detect", c.detect},
                     {"sweep", {{"sigmas", c.sweep.sigmas}, {"clean_images", c.sweep.clean_images}}},
                     {"jobs", c.jobs}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  static const std::vector<std::string> known{"seed",  "model", "corpus", "train",  "attack", "pairs",
                                              "eval",  "detect", "sweep", "jobs"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  RunConfig d;
  c.seed = j.value("seed", d.seed);
  c.model = j.value("model", d.model);
  c.corpus = j.value("corpus", d.corpus);
  c.train = j.value("train", d.train);
  c.attack = j.value("attack", d.attack);
  c.detect = j.value("detect", d.detect);
  const auto pairs = j.value("pairs", nlohmann::json::object());
  c.pairs.count = pairs.value("count", d.pairs.count);
  c.pairs.seed = pairs.value("seed", d.pairs.seed);
  const auto eval = j.value("eval", nlohmann::json::object());
  c.eval.pca_components = eval.value("pca_components", d.eval.pca_components);
  c.eval.amplify_factor = eval.value("amplify_factor", d.eval.amplify_factor);
  c.eval.write_diffs = eval.value("write_diffs", d.eval.write_diffs);
  const auto sweep = j.value("sweep", nlohmann::json::object());
  c.sweep.sigmas = sweep.value("sigmas", d.sweep.sigmas);
  c.sweep.clean_images = sweep.value("clean_images", d.sweep.clean_images);
  c.jobs = j.value("jobs", d.jobs);
}

RunConfig load_run_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  try {
    return j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid config " + path.string() + ": " + e.what());
  }
}

void write_config_echo(const fs::path& dir, const RunConfig& c) {
  io::write_file(dir / kConfigEcho, nlohmann::json(c).dump(2) + "\n");
}

fs::path default_output_root() {
  const char* env = std::getenv("EMBALIGN_OUT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

}  // namespace embalign::tools
