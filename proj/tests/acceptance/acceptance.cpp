// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

#include "embalign/attack.hpp"
#include "embalign/corpus.hpp"
#include "embalign/detect.hpp"
#include "embalign/gradcheck.hpp"
#include "embalign/io.hpp"
#include "embalign/metrics.hpp"
#include "embalign/model.hpp"
#include "embalign/ops.hpp"
#include "embalign/pca.hpp"
#include "embalign/tools/commands.hpp"
#include "embalign/tools/run_config.hpp"

namespace fs = std::filesystem;
using namespace embalign;
using namespace embalign::tools;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<Outcome> outcomes;

void record(int id, std::string name, bool pass, std::string detail) {
  std::cerr << "criterion " << id << " done: " << detail << "\n";
  outcomes.push_back({id, std::move(name), pass, std::move(detail)});
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("embalign-acceptance-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

struct Trained {
  LoadedCorpus corpus;
  ModelParams model;
  std::vector<TokenIds> caption_tokens;
  std::vector<Embedding> caption_embeddings;
};

Trained load_trained(const fs::path& corpus_dir, const fs::path& checkpoint) {
  Trained t;
  t.corpus = load_corpus(corpus_dir);
  io::Checkpoint ck = io::load_checkpoint(checkpoint);
  t.model = std::move(ck.model);
  const Vocabulary vocab = io::vocabulary_from_json(ck.metadata.at("vocabulary"));
  for (const auto& c : t.corpus.captions) t.caption_tokens.push_back(tokenize(c, vocab, t.model.config.max_text_len));
  t.caption_embeddings = encode_texts(t.caption_tokens, t.model);
  return t;
}

std::size_t worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

// Criterion 1 ---------------------------------------------------------------

void gradient_fidelity(const Trained& t) {
  const auto start = Clock::now();
  std::mt19937_64 rng(101);
  std::vector<std::size_t> held;
  for (std::size_t i = 0; i < t.corpus.items.size(); ++i) {
    if (t.corpus.items[i].split == Split::HeldOut) held.push_back(i);
  }
  double worst = 0.0;
  for (int pair = 0; pair < 5; ++pair) {
    const Tensor& image = t.corpus.items[held[rng() % held.size()]].image;
    const Embedding& target = t.caption_embeddings[rng() % t.caption_embeddings.size()];
    const LossGradient lg = align_loss_gradient(image, target, t.model);
    std::vector<std::size_t> coords(10);
    for (auto& c : coords) c = rng() % image.numel();
    const auto numeric = finite_diff_gradient_at(
        [&](const Tensor& x) { return align_loss(x, target, t.model); }, image, 1e-3, coords);
    std::vector<double> analytic;
    for (auto c : coords) analytic.push_back(lg.gradient[c]);
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  const double secs = seconds_since(start);
  record(1, "gradient fidelity", worst < 1e-2 && secs < 60.0,
         "max relative error " + fmt("%.3g", worst) + " (< 1e-2), " + fmt("%.1f", secs) + " s (< 60 s)");
}

// Criteria 3-6 --------------------------------------------------------------

struct AttackSet {
  std::vector<Pair> pairs;
  std::vector<AttackResult> results;
};

void attack_criteria(const Trained& t, const AttackSet& a, double attack_secs) {
  const std::size_t n = 50;
  std::vector<Tensor> originals, attacked;
  std::vector<std::size_t> targets, sources;
  std::size_t converged = 0;
  for (std::size_t i = 0; i < n; ++i) {
    originals.push_back(t.corpus.items[a.pairs[i].item].image);
    attacked.push_back(a.results[i].image);
    targets.push_back(a.pairs[i].target);
    sources.push_back(t.corpus.items[a.pairs[i].item].class_id);
    converged += a.results[i].converged ? 1 : 0;
  }

  const auto success = success_rate(attacked, targets, t.model, t.caption_embeddings);
  record(3, "attack success", converged == n && success.rate == 1.0 && attack_secs < 900.0,
         std::to_string(converged) + "/" + std::to_string(n) + " converged, success rate " +
             fmt("%.3f", success.rate) + ", " + fmt("%.0f", attack_secs) + " s (< 900 s)");

  double mean_abs = 0.0;
  std::size_t psnr_ok = 0;
  double psnr_min = kPsnrCap;
  for (std::size_t i = 0; i < n; ++i) {
    mean_abs += distortion(originals[i], attacked[i]).mean_abs;
    const double p = psnr(originals[i], attacked[i]);
    psnr_min = std::min(psnr_min, p);
    psnr_ok += p >= 25.0 ? 1 : 0;
  }
  mean_abs /= static_cast<double>(n);
  const double psnr_frac = static_cast<double>(psnr_ok) / static_cast<double>(n);
  record(4, "imperceptibility", mean_abs < 0.05 && psnr_frac >= 0.9,
         "mean |dx| " + fmt("%.4f", mean_abs) + " (< 0.05), PSNR >= 25 dB for " + fmt("%.0f", psnr_frac * 100) +
             "% (>= 90%), min PSNR " + fmt("%.1f", psnr_min) + " dB");

  const auto aligned_emb = encode_images(attacked, t.model);
  const auto original_emb = encode_images(originals, t.model);
  const auto cos = cosine_report(t.caption_embeddings, aligned_emb, original_emb, targets);
  const double min_aligned = *std::min_element(cos.aligned_pairs.begin(), cos.aligned_pairs.end());
  const double max_text = *std::max_element(cos.text_pairs.begin(), cos.text_pairs.end());
  record(5, "cosine separation", !cos.overlap,
         "min aligned cosine " + fmt("%.4f", min_aligned) + " vs max caption-pair cosine " + fmt("%.4f", max_text));

  std::vector<Tensor> corpus_images;
  for (const auto& it : t.corpus.items) corpus_images.push_back(it.image);
  const auto basis = fit_pca(encode_images(corpus_images, t.model), 6);
  std::size_t closer = 0, checked = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!a.results[i].converged) continue;
    ++checked;
    const auto p = project(aligned_emb[i], basis);
    const double to_target = euclidean(p, project(t.caption_embeddings[targets[i]], basis));
    const double to_source = euclidean(p, project(t.caption_embeddings[sources[i]], basis));
    closer += to_target < to_source ? 1 : 0;
  }
  record(6, "projection behavior", checked > 0 && closer == checked,
         std::to_string(closer) + "/" + std::to_string(checked) + " converged attacks closer to the target caption");
}

// Criterion 8 ---------------------------------------------------------------

void learning_rate_robustness(const Trained& t, const AttackSet& a) {
  const auto start = Clock::now();
  const std::vector<double> rates{0.005, 0.02, 0.08};
  const std::size_t n = 10;
  std::vector<char> ok(rates.size() * n, 0);
  std::vector<std::size_t> steps(ok.size(), 0);
  parallel_for(ok.size(), worker_count(), [&](std::size_t k) {
    const std::size_t r = k / n, i = k % n;
    AttackConfig cfg;
    cfg.learning_rate = rates[r];
    // Same step-size-times-steps budget as lr 0.02 with 5000 steps, never below 5000.
    cfg.max_steps = std::max<std::size_t>(5000, static_cast<std::size_t>(std::ceil(5000 * 0.02 / rates[r])));
    const auto res = run_alignment(t.corpus.items[a.pairs[i].item].image, t.caption_tokens[a.pairs[i].target],
                                   t.model, cfg);
    ok[k] = res.converged ? 1 : 0;
    steps[k] = res.steps;
  });
  std::ostringstream detail;
  bool all = true;
  for (std::size_t r = 0; r < rates.size(); ++r) {
    const auto begin = ok.begin() + static_cast<std::ptrdiff_t>(r * n);
    const auto c = std::count(begin, begin + static_cast<std::ptrdiff_t>(n), 1);
    const auto mx = *std::max_element(steps.begin() + static_cast<std::ptrdiff_t>(r * n),
                                      steps.begin() + static_cast<std::ptrdiff_t>((r + 1) * n));
    all = all && c == static_cast<std::ptrdiff_t>(n);
    detail << (r ? ", " : "") << "lr " << rates[r] << ": " << c << "/" << n << " (max " << mx << " steps)";
  }
  detail << ", " << fmt("%.0f", seconds_since(start)) << " s";
  record(8, "learning-rate robustness", all, detail.str());
}

// Criterion 9 ---------------------------------------------------------------

struct Check {
  std::string name;
  bool pass;
};

// Config echoes are skipped: they record the worker count.
bool files_identical(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file() && e.path().filename() != kConfigEcho) fa.push_back(fs::relative(e.path(), a));
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) {
    if (e.is_regular_file() && e.path().filename() != kConfigEcho) fb.push_back(fs::relative(e.path(), b));
  }
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa.empty() || fa != fb) return false;
  return std::all_of(fa.begin(), fa.end(), [&](const fs::path& p) { return io::read_file(a / p) == io::read_file(b / p); });
}

RunConfig tiny_run() {
  RunConfig c;
  c.model.image_size = 8;
  c.model.patch_size = 4;
  c.model.vision_dim = 8;
  c.model.text_dim = 8;
  c.model.embed_dim = 6;
  c.model.heads = 2;
  c.model.head_dim = 4;
  c.model.vision_depth = 1;
  c.model.text_depth = 1;
  c.model.mlp_dim = 12;
  c.model.vocab_size = 12;
  c.model.max_text_len = 4;
  c.corpus.shapes = {"circle", "square"};
  c.corpus.colors = {"red", "blue"};
  c.corpus.per_class = 10;
  c.corpus.image_size = 8;
  c.train.epochs = 5;
  c.attack.learning_rate = 0.5;
  c.attack.max_steps = 50;
  c.attack.threshold = 0.9;
  c.pairs.count = 3;
  c.eval.pca_components = 2;
  c.detect.trials = 3;
  c.sweep.sigmas = {0.05};
  c.sweep.clean_images = 3;
  return c;
}

bool pipeline_reproducible(const fs::path& root) {
  auto run = [&](const fs::path& dir, std::size_t jobs) {
    RunConfig c = tiny_run();
    c.jobs = jobs;
    cmd_gen(c, Stage{dir / "gen"});
    cmd_train(c, dir / "gen", Stage{dir / "train"});
    cmd_attack(c, dir / "train" / kCheckpoint, dir / "gen", std::nullopt, Stage{dir / "attack"});
    cmd_eval(c, dir / "train" / kCheckpoint, dir / "gen", dir / "attack", Stage{dir / "eval"});
    cmd_detect(c, dir / "train" / kCheckpoint, dir / "gen", dir / "attack", Stage{dir / "detect"});
  };
  run(root / "a", 1);
  run(root / "b", 2);
  return files_identical(root / "a", root / "b");
}

void invariant_suites(const Trained& t, const fs::path& scratch) {
  std::vector<Check> checks;
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<Real> u(-3.0f, 3.0f);
  auto random = [&](Shape s) {
    std::vector<Real> v(shape_numel(s));
    for (auto& x : v) x = u(rng);
    return Tensor::from_data(std::move(s), std::move(v));
  };

  {
    bool ok = true;
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor p = ops::softmax_rows(random({5, 7}));
      for (std::size_t r = 0; r < 5; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 7; ++c) {
          ok = ok && p.at(r * 7 + c) >= 0.0f;
          s += p.at(r * 7 + c);
        }
        ok = ok && std::abs(s - 1.0) < 1e-5;
      }
    }
    checks.push_back({"softmax rows stochastic", ok});
  }
  {
    bool ok = true;
    const Tensor gamma = Tensor::full({9}, 1.0f), beta = Tensor::zeros({9});
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor y = ops::layer_norm(random({4, 9}), gamma, beta);
      for (std::size_t r = 0; r < 4; ++r) {
        double m = 0.0, v = 0.0;
        for (std::size_t c = 0; c < 9; ++c) m += y.at(r * 9 + c);
        m /= 9.0;
        for (std::size_t c = 0; c < 9; ++c) v += (y.at(r * 9 + c) - m) * (y.at(r * 9 + c) - m);
        ok = ok && std::abs(m) < 1e-5 && std::abs(v / 9.0 - 1.0) < 1e-3;
      }
    }
    checks.push_back({"layer norm zero mean, unit variance", ok});
  }
  {
    bool ok = true;
    const auto& block = t.model.vision.blocks.front();
    const std::size_t d = t.model.config.vision_dim, n = 6;
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor x = random({n, d});
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      const Tensor y = attention_block(x, block);
      const Tensor yp = attention_block(ops::gather_rows(x, perm), block);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) ok = ok && std::abs(yp.at(i * d + j) - y.at(perm[i] * d + j)) < 1e-4;
      }
    }
    checks.push_back({"attention permutation equivariant", ok});
  }
  std::vector<Tensor> images;
  for (std::size_t i = 0; i < t.corpus.items.size(); i += 7) images.push_back(t.corpus.items[i].image);
  const auto image_emb = encode_images(images, t.model);
  {
    bool ok = true;
    auto unit = [&](const Embedding& e) {
      double s = 0.0;
      for (Real v : e.values()) s += static_cast<double>(v) * v;
      return std::abs(std::sqrt(s) - 1.0) < 1e-5;
    };
    for (const auto& e : image_emb) ok = ok && unit(e);
    for (const auto& e : t.caption_embeddings) ok = ok && unit(e);
    checks.push_back({"embedding unit norms", ok});
  }
  {
    const std::size_t e = t.model.config.embed_dim;
    const auto full = fit_pca(image_emb, e);
    bool ok = true;
    for (std::size_t a = 0; a < e; ++a) {
      for (std::size_t b = 0; b < e; ++b) {
        double s = 0.0;
        for (std::size_t k = 0; k < e; ++k) s += full.components[a][k] * full.components[b][k];
        ok = ok && std::abs(s - (a == b ? 1.0 : 0.0)) < 1e-9;
      }
    }
    const double eig = std::accumulate(full.eigenvalues.begin(), full.eigenvalues.end(), 0.0);
    ok = ok && std::abs(eig - full.total_variance) <= 1e-9 * std::max(1.0, full.total_variance);
    ok = ok && std::is_sorted(full.eigenvalues.rbegin(), full.eigenvalues.rend());
    checks.push_back({"PCA orthonormal, eigenvalues sum to total variance", ok});
  }
  {
    bool ok = true;
    for (std::size_t i = 0; i < 5; ++i) {
      const Tensor& x = images[i];
      ok = ok && psnr(x, x) == kPsnrCap && std::abs(ssim(x, x) - 1.0) < 1e-12;
      const Tensor y = images[i + 1];
      ok = ok && std::abs(ssim(x, y) - ssim(y, x)) < 1e-12 && psnr(x, y) == psnr(y, x);
    }
    checks.push_back({"PSNR/SSIM identities", ok});
  }
  {
    bool ok = true;
    const fs::path dir = scratch / "formats";
    for (std::size_t i = 0; i < 5; ++i) {
      const Tensor x = round_to_f32(random({3, 4, 2}));
      io::save_tensor(dir / "t.ften", x);
      const Tensor y = io::load_tensor(dir / "t.ften");
      ok = ok && y.shape() == x.shape() && std::equal(x.data().begin(), x.data().end(), y.data().begin());
      ok = ok && io::encode_tensor(y) == io::read_file(dir / "t.ften");
      const Tensor q = io::quantize_image8(images[i]);
      io::export_image8(dir / "q.ppm", q);
      const Tensor back = io::import_image8(dir / "q.ppm");
      ok = ok && std::equal(q.data().begin(), q.data().end(), back.data().begin());
    }
    io::Checkpoint ck{t.model, {{"note", "round trip"}}};
    io::save_checkpoint(dir / "m.eckp", ck);
    ok = ok && io::encode_checkpoint(io::load_checkpoint(dir / "m.eckp")) == io::read_file(dir / "m.eckp");
    checks.push_back({"file formats bit-exact", ok});
  }
  checks.push_back({"end-to-end seed reproducibility", pipeline_reproducible(scratch / "repro")});

  bool all = true;
  std::ostringstream detail;
  for (const auto& c : checks) {
    all = all && c.pass;
    if (!c.pass) detail << "failed: " << c.name << "; ";
  }
  detail << checks.size() << " suites";
  record(9, "invariant suites", all, detail.str());
}

}  // namespace

int main() {
  TempDir tmp;
  const std::size_t jobs = worker_count();

  RunConfig cfg;
  cfg.jobs = jobs;
  cfg.pairs.count = 100;

  const fs::path gen = tmp.path / "gen", train = tmp.path / "train", attack = tmp.path / "attack";
  cmd_gen(cfg, Stage{gen, false, &std::cerr});
  const TrainSummary ts = cmd_train(cfg, gen, Stage{train, false, &std::cerr});
  const Trained t = load_trained(gen, train / kCheckpoint);

  gradient_fidelity(t);
  record(2, "zero-shot model", ts.heldout_accuracy >= 0.95 && ts.seconds < 600.0,
         "held-out accuracy " + fmt("%.4f", ts.heldout_accuracy) + " (>= 0.95), training " +
             fmt("%.0f", ts.seconds) + " s (< 600 s)");

  // One attack pass serves criteria 3-7: the first 50 pairs are the attack
  // set, all 100 are the attacked half of the detection sweep.
  AttackSet a;
  a.pairs = draw_pairs(t.corpus, cfg.pairs.count, cfg.pairs.seed);
  a.results.resize(a.pairs.size());
  auto attack_start = Clock::now();
  parallel_for(50, jobs, [&](std::size_t i) {
    a.results[i] = run_alignment(t.corpus.items[a.pairs[i].item].image, t.caption_tokens[a.pairs[i].target], t.model,
                                 cfg.attack);
  });
  const double attack_secs = seconds_since(attack_start);
  parallel_for(a.pairs.size() - 50, jobs, [&](std::size_t i) {
    const auto& p = a.pairs[i + 50];
    a.results[i + 50] = run_alignment(t.corpus.items[p.item].image, t.caption_tokens[p.target], t.model, cfg.attack);
  });
  attack_criteria(t, a, attack_secs);

  {
    std::vector<Tensor> images;
    std::vector<char> attacked;
    for (std::size_t i = 0, clean = 0; i < t.corpus.items.size() && clean < cfg.sweep.clean_images; ++i) {
      if (t.corpus.items[i].split != Split::HeldOut) continue;
      images.push_back(t.corpus.items[i].image);
      attacked.push_back(0);
      ++clean;
    }
    for (const auto& r : a.results) {
      images.push_back(r.image);
      attacked.push_back(1);
    }
    const auto start = Clock::now();
    std::unique_ptr<bool[]> flags(new bool[attacked.size()]);
    for (std::size_t i = 0; i < attacked.size(); ++i) flags[i] = attacked[i] != 0;
    const auto rows = detection_sweep(images, std::span<const bool>(flags.get(), attacked.size()), t.model,
                                      t.caption_embeddings, cfg.sweep.sigmas, cfg.detect);
    const double secs = seconds_since(start);
    bool found = false;
    std::ostringstream detail;
    const std::size_t n_clean = static_cast<std::size_t>(std::count(attacked.begin(), attacked.end(), 0));
    detail << n_clean << " clean + " << attacked.size() - n_clean << " attacked, " << cfg.detect.trials << " trials;";
    for (const auto& r : rows) {
      found = found || (r.tpr >= 0.9 && r.fpr <= 0.1);
      detail << " sigma " << r.sigma << " TPR " << fmt("%.2f", r.tpr) << " FPR " << fmt("%.2f", r.fpr) << ";";
    }
    bool monotone = true;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = i + 1; j < rows.size(); ++j) monotone = monotone && rows[i].fpr <= rows[j].fpr + 0.05;
    }
    detail << " FPR monotone " << (monotone ? "yes" : "no") << "; " << fmt("%.0f", secs) << " s (< 600 s)";
    record(7, "noise-probe detection", found && secs < 600.0, detail.str());
  }

  learning_rate_robustness(t, a);
  invariant_suites(t, tmp.path / "invariants");

  std::sort(outcomes.begin(), outcomes.end(), [](const Outcome& x, const Outcome& y) { return x.id < y.id; });
  bool all = true;
  for (const auto& o : outcomes) {
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << o.id << " " << o.name << ": " << o.detail << "\n";
  }
  return all ? 0 : 1;
}
