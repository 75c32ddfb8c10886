#include <CLI11.hpp>

#include "embalign/errors.hpp"
#include "embalign/tools/commands.hpp"

namespace embalign::tools {

int run_app(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Embedding-alignment toolkit: corpus generation, training, attacks, evaluation, detection"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<std::size_t> jobs;
  bool force = false;
  std::string corpus, checkpoint, attacks, pairs;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Seed applied to every random stage");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--force", force, "Replace an existing output directory");
  };
  auto* gen = app.add_subcommand("gen", "Render the synthetic shape corpus");
  auto* train = app.add_subcommand("train", "Train the two-tower model contrastively");
  auto* attack = app.add_subcommand("attack", "Align images to mismatched captions");
  auto* eval = app.add_subcommand("eval", "Distortion, quality, cosine and projection reports");
  auto* detect = app.add_subcommand("detect", "Noise-probe detection of modified images");
  for (auto* sub : {gen, train, attack, eval, detect}) common(sub);
  for (auto* sub : {train, attack, eval, detect}) sub->add_option("--corpus", corpus, "Corpus directory");
  for (auto* sub : {attack, eval, detect}) sub->add_option("--checkpoint", checkpoint, "Model checkpoint");
  attack->add_option("--pairs", pairs, "Pairs manifest (id, image, target class, target caption)");
  for (auto* sub : {eval, detect}) sub->add_option("--attacks", attacks, "Attack output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const fs::path root = default_output_root();
  auto default_dir = [&](const std::string& value, const fs::path& fallback) {
    return value.empty() ? fallback : fs::path(value);
  };
  const fs::path corpus_dir = default_dir(corpus, root / "gen");
  const fs::path checkpoint_path = default_dir(checkpoint, root / "train" / kCheckpoint);
  const fs::path attacks_dir = default_dir(attacks, root / "attack");

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) cfg.set_seed(*seed);
    if (jobs) cfg.jobs = *jobs;
    auto* sub = app.get_subcommands().front();
    Stage stage{default_dir(out_dir, root / sub->get_name()), force, &out};
    if (sub == gen) {
      cmd_gen(cfg, stage);
    } else if (sub == train) {
      cmd_train(cfg, corpus_dir, stage);
    } else if (sub == attack) {
      cmd_attack(cfg, checkpoint_path, corpus_dir, pairs.empty() ? std::nullopt : std::optional<fs::path>(pairs),
                 stage);
    } else if (sub == eval) {
      cmd_eval(cfg, checkpoint_path, corpus_dir, attacks_dir, stage);
    } else {
      const bool use_attacks = !attacks.empty() || fs::exists(attacks_dir / kResults);
      cmd_detect(cfg, checkpoint_path, corpus_dir, use_attacks ? std::optional<fs::path>(attacks_dir) : std::nullopt,
                 stage);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace embalign::tools
