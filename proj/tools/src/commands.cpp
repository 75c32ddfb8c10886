#include "embalign/tools/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "embalign/errors.hpp"
#include "embalign/io.hpp"
#include "embalign/metrics.hpp"
#include "embalign/pca.hpp"

namespace embalign::tools {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::size_t parse_index(const std::string& s, const char* what) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) throw ContractError(std::string("bad ") + what + " '" + s + "'");
  return static_cast<std::size_t>(v);
}

void log_line(const Stage& stage, const std::string& line) {
  if (stage.log) *stage.log << line << '\n' << std::flush;
}

class StagedDir {
 public:
  explicit StagedDir(const Stage& stage) {
    final_ = stage.out.lexically_normal();
    if (final_.filename().empty()) final_ = final_.parent_path();
    if (final_.empty()) throw ConfigError("output directory not set");
    if (fs::exists(final_) && !(fs::is_directory(final_) && fs::is_empty(final_)) && !stage.force) {
      throw ContractError(final_.string() + " already exists; pass --force to overwrite");
    }
    tmp_ = final_.parent_path() / ("." + final_.filename().string() + ".partial");
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(tmp_, ec);
    }
  }

  const fs::path& path() const { return tmp_; }

  void commit() {
    fs::remove_all(final_);
    fs::rename(tmp_, final_);
    committed_ = true;
  }

 private:
  fs::path final_;
  fs::path tmp_;
  bool committed_ = false;
};

struct LoadedModel {
  ModelParams model;
  Vocabulary vocab;
  std::vector<std::string> captions;
  std::vector<TokenIds> caption_tokens;
  std::vector<Embedding> caption_embeddings;
};

LoadedModel load_model(const RunConfig& cfg, const fs::path& checkpoint, const LoadedCorpus& corpus) {
  io::Checkpoint ck = io::load_checkpoint(checkpoint, cfg.model);
  LoadedModel m;
  m.model = std::move(ck.model);
  if (!ck.metadata.contains("vocabulary") || !ck.metadata.contains("captions")) {
    throw ContractError(checkpoint.string() + " lacks vocabulary or caption metadata");
  }
  m.vocab = io::vocabulary_from_json(ck.metadata.at("vocabulary"));
  m.captions = ck.metadata.at("captions").get<std::vector<std::string>>();
  if (m.captions != corpus.captions) throw ContractError("checkpoint captions differ from the corpus captions");
  for (const auto& c : m.captions) m.caption_tokens.push_back(tokenize(c, m.vocab, m.model.config.max_text_len));
  m.caption_embeddings = encode_texts(m.caption_tokens, m.model);
  return m;
}

Vocabulary caption_vocabulary(std::span<const std::string> captions) {
  std::vector<std::string> words;
  for (const auto& c : captions) {
    std::istringstream in(c);
    std::string w;
    while (in >> w) {
      std::transform(w.begin(), w.end(), w.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      words.push_back(w);
    }
  }
  return Vocabulary(words);
}

struct AttackRecord {
  Pair pair;
  bool converged = false;
  std::size_t steps = 0;
  double final_cosine = 0.0;
  double final_loss = 0.0;
  Tensor image;
};

const std::vector<std::string> kResultColumns{"id",     "image",       "source_class", "target_class",
                                              "converged", "steps", "final_cosine", "final_loss"};

std::vector<AttackRecord> load_attacks(const fs::path& dir, const LoadedCorpus& corpus) {
  const auto pairs = read_pairs(dir / kPairs, corpus);
  std::map<std::string, Pair> by_id;
  for (const auto& p : pairs) by_id[p.id] = p;
  std::vector<AttackRecord> out;
  for (const auto& row : io::read_tsv(dir / kResults, kResultColumns.size())) {
    auto it = by_id.find(row[0]);
    if (it == by_id.end()) throw ContractError("result '" + row[0] + "' has no matching pair");
    AttackRecord r;
    r.pair = it->second;
    r.converged = row[4] == "1";
    r.steps = parse_index(row[5], "step count");
    r.final_cosine = std::stod(row[6]);
    r.final_loss = std::stod(row[7]);
    r.image = io::load_tensor(dir / "attacked" / (r.pair.id + ".ften"));
    out.push_back(std::move(r));
  }
  return out;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(std::span<const double> v) {
  MeanStd m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) m.std += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(m.std / static_cast<double>(v.size() - 1));
  }
  return m;
}

nlohmann::json to_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

std::string csv_row(std::initializer_list<std::string> fields) {
  std::string s;
  for (const auto& f : fields) {
    if (!s.empty()) s += ',';
    s += f;
  }
  return s + '\n';
}

}  // namespace

LoadedCorpus load_corpus(const fs::path& dir) {
  LoadedCorpus c;
  std::map<std::size_t, std::string> captions;
  for (const auto& row : io::read_tsv(dir / kManifest, 4)) {
    CorpusItem item;
    item.image = io::load_tensor(dir / row[0]);
    item.caption = row[1];
    item.class_id = parse_index(row[2], "class id");
    item.split = parse_split(row[3]);
    auto [it, inserted] = captions.emplace(item.class_id, item.caption);
    if (!inserted && it->second != item.caption) {
      throw ContractError("class " + row[2] + " has two captions in " + (dir / kManifest).string());
    }
    c.paths.push_back(row[0]);
    c.items.push_back(std::move(item));
  }
  if (c.items.empty()) throw ContractError("corpus at " + dir.string() + " is empty");
  for (std::size_t k = 0; k < captions.size(); ++k) {
    auto it = captions.find(k);
    if (it == captions.end()) throw ContractError("corpus has no item of class " + std::to_string(k));
    c.captions.push_back(it->second);
  }
  return c;
}

std::vector<Pair> draw_pairs(const LoadedCorpus& corpus, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> held;
  for (std::size_t i = 0; i < corpus.items.size(); ++i) {
    if (corpus.items[i].split == Split::HeldOut) held.push_back(i);
  }
  if (held.empty()) throw ContractError("corpus has no held-out images to attack");
  if (corpus.captions.size() < 2) throw ContractError("need at least two classes to draw mismatched pairs");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, held.size() - 1);
  std::uniform_int_distribution<std::size_t> other(1, corpus.captions.size() - 1);
  std::vector<Pair> pairs;
  for (std::size_t k = 0; k < count; ++k) {
    Pair p;
    char id[32];
    std::snprintf(id, sizeof id, "p%04zu", k);
    p.id = id;
    p.item = held[pick(rng)];
    p.target = (corpus.items[p.item].class_id + other(rng)) % corpus.captions.size();
    pairs.push_back(p);
  }
  return pairs;
}

void write_pairs(const fs::path& path, const LoadedCorpus& corpus, std::span<const Pair> pairs) {
  std::vector<io::Row> rows;
  for (const auto& p : pairs) {
    rows.push_back({p.id, corpus.paths[p.item], std::to_string(p.target), corpus.captions[p.target]});
  }
  const std::vector<std::string> header{"id", "image", "target_class", "target_caption"};
  io::write_tsv(path, header, rows);
}

std::vector<Pair> read_pairs(const fs::path& path, const LoadedCorpus& corpus) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.paths.size(); ++i) index[corpus.paths[i]] = i;
  std::vector<Pair> pairs;
  std::set<std::string> ids;
  for (const auto& row : io::read_tsv(path, 4)) {
    auto it = index.find(row[1]);
    if (it == index.end()) throw ContractError("pair '" + row[0] + "' names unknown image " + row[1]);
    Pair p{row[0], it->second, parse_index(row[2], "target class")};
    if (p.target >= corpus.captions.size() || corpus.captions[p.target] != row[3]) {
      throw ContractError("pair '" + row[0] + "' target does not match the corpus captions");
    }
    if (!ids.insert(p.id).second) throw ContractError("duplicate pair id '" + p.id + "'");
    pairs.push_back(p);
  }
  return pairs;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

void cmd_gen(const RunConfig& cfg, const Stage& stage) {
  cfg.validate();
  const auto items = generate_corpus(cfg.corpus);
  StagedDir dir(stage);
  std::vector<io::Row> rows;
  for (std::size_t i = 0; i < items.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "images/%04zu.ften", i);
    io::save_tensor(dir.path() / name, items[i].image);
    rows.push_back({name, items[i].caption, std::to_string(items[i].class_id), std::string(split_name(items[i].split))});
  }
  const std::vector<std::string> header{"path", "caption", "class", "split"};
  io::write_tsv(dir.path() / kManifest, header, rows);
  write_config_echo(dir.path(), cfg);
  dir.commit();
  log_line(stage, "gen: wrote " + std::to_string(items.size()) + " images to " + stage.out.string());
}

TrainSummary cmd_train(const RunConfig& cfg, const fs::path& corpus_dir, const Stage& stage) {
  cfg.validate();
  StagedDir dir(stage);
  const auto corpus = load_corpus(corpus_dir);
  const Vocabulary vocab = caption_vocabulary(corpus.captions);
  const auto start = std::chrono::steady_clock::now();
  const ModelParams initial = ModelParams::init(cfg.model, cfg.seed);
  auto result = contrastive_train(initial, corpus.items, vocab, cfg.train, [&](std::size_t epoch, double loss) {
    if ((epoch + 1) % 10 == 0 || epoch + 1 == cfg.train.epochs) {
      log_line(stage, "train: epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.train.epochs) +
                          " loss " + num(loss));
    }
  });

  std::vector<TokenIds> tokens;
  for (const auto& c : corpus.captions) tokens.push_back(tokenize(c, vocab, cfg.model.max_text_len));
  const auto caption_emb = encode_texts(tokens, result.model);
  std::vector<CorpusItem> held;
  for (const auto& it : corpus.items) {
    if (it.split == Split::HeldOut) held.push_back(it);
  }
  TrainSummary s;
  s.initial_loss = result.initial_loss;
  s.final_loss = result.loss_history.back();
  s.heldout_accuracy = evaluate_zero_shot(result.model, held, caption_emb);
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  io::Checkpoint ck;
  ck.model = result.model;
  ck.metadata = {{"seed", cfg.seed},
                 {"train", cfg.train},
                 {"vocabulary", io::vocabulary_to_json(vocab)},
                 {"captions", corpus.captions},
                 {"initial_loss", s.initial_loss},
                 {"final_loss", s.final_loss},
                 {"heldout_accuracy", s.heldout_accuracy}};
  io::save_checkpoint(dir.path() / kCheckpoint, ck);
  std::string history = "epoch,loss\n";
  for (std::size_t e = 0; e < result.loss_history.size(); ++e) {
    history += csv_row({std::to_string(e + 1), num(result.loss_history[e])});
  }
  io::write_file(dir.path() / kLossHistory, history);
  write_config_echo(dir.path(), cfg);
  dir.commit();
  log_line(stage, "train: held-out accuracy " + num(s.heldout_accuracy) + " after " + num(s.seconds) + " s");
  return s;
}

AttackSummary cmd_attack(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& corpus_dir,
                         const std::optional<fs::path>& pairs_path, const Stage& stage) {
  cfg.validate();
  StagedDir dir(stage);
  const auto corpus = load_corpus(corpus_dir);
  const auto m = load_model(cfg, checkpoint, corpus);
  const auto pairs = pairs_path ? read_pairs(*pairs_path, corpus) : draw_pairs(corpus, cfg.pairs.count, cfg.pairs.seed);

  std::vector<AttackResult> results(pairs.size());
  std::atomic<std::size_t> done{0};
  std::mutex log_mutex;
  parallel_for(pairs.size(), cfg.jobs, [&](std::size_t i) {
    const auto& p = pairs[i];
    results[i] = run_alignment(corpus.items[p.item].image, m.caption_tokens[p.target], m.model, cfg.attack);
    const std::size_t k = ++done;
    std::lock_guard lock(log_mutex);
    log_line(stage, "attack: " + p.id + " " + (results[i].converged ? "converged" : "not converged") + " after " +
                        std::to_string(results[i].steps) + " steps (" + std::to_string(k) + "/" +
                        std::to_string(pairs.size()) + ")");
  });

  AttackSummary s;
  s.pairs = pairs.size();
  std::vector<io::Row> rows;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    const auto& r = results[i];
    s.converged += r.converged ? 1 : 0;
    io::save_tensor(dir.path() / "attacked" / (p.id + ".ften"), r.image);
    std::string trace = "step,loss,cosine,mean_abs_diff\n";
    for (const auto& t : r.trace) {
      trace += csv_row({std::to_string(t.step), num(t.loss), num(t.cosine), num(t.mean_abs_diff)});
    }
    io::write_file(dir.path() / "traces" / (p.id + ".csv"), trace);
    rows.push_back({p.id, corpus.paths[p.item], std::to_string(corpus.items[p.item].class_id),
                    std::to_string(p.target), r.converged ? "1" : "0", std::to_string(r.steps), num(r.final_cosine),
                    num(r.final_loss)});
  }
  write_pairs(dir.path() / kPairs, corpus, pairs);
  io::write_tsv(dir.path() / kResults, kResultColumns, rows);
  write_config_echo(dir.path(), cfg);
  dir.commit();
  log_line(stage, "attack: " + std::to_string(s.converged) + "/" + std::to_string(s.pairs) + " pairs converged");
  return s;
}

EvalSummary cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& corpus_dir,
                     const fs::path& attacks_dir, const Stage& stage) {
  cfg.validate();
  StagedDir dir(stage);
  const auto corpus = load_corpus(corpus_dir);
  const auto m = load_model(cfg, checkpoint, corpus);
  const auto attacks = load_attacks(attacks_dir, corpus);
  if (attacks.empty()) throw ContractError("no attack results in " + attacks_dir.string());

  std::vector<Tensor> originals, attacked;
  std::vector<std::size_t> targets;
  for (const auto& a : attacks) {
    originals.push_back(corpus.items[a.pair.item].image);
    attacked.push_back(a.image);
    targets.push_back(a.pair.target);
  }
  const auto success = success_rate(attacked, targets, m.model, m.caption_embeddings);
  const auto original_emb = encode_images(originals, m.model);
  const auto attacked_emb = encode_images(attacked, m.model);
  const auto cos = cosine_report(m.caption_embeddings, attacked_emb, original_emb, targets);

  std::vector<Tensor> corpus_images;
  for (const auto& it : corpus.items) corpus_images.push_back(it.image);
  const auto basis = fit_pca(encode_images(corpus_images, m.model), cfg.eval.pca_components);

  std::vector<double> l2, linf, mean_abs, psnrs, ssims;
  std::array<std::vector<double>, kPixelThresholds.size()> above;
  std::size_t survived = 0, closer = 0, converged = 0;
  nlohmann::json coords_original = nlohmann::json::array(), coords_aligned = nlohmann::json::array();
  std::string report = "id,target,success,l2,linf,psnr,ssim,final_cosine,steps,mean_abs,survives_8bit\n";
  for (std::size_t i = 0; i < attacks.size(); ++i) {
    const auto& a = attacks[i];
    const auto d = distortion(originals[i], attacked[i]);
    const auto q = quality(originals[i], attacked[i]);
    const bool survives = io::quantization_survival(attacked[i], targets[i], m.model, m.caption_embeddings);
    l2.push_back(d.l2);
    linf.push_back(d.linf);
    mean_abs.push_back(d.mean_abs);
    psnrs.push_back(q.psnr);
    ssims.push_back(q.ssim);
    for (std::size_t t = 0; t < kPixelThresholds.size(); ++t) above[t].push_back(static_cast<double>(d.pixels_above[t]));
    survived += survives ? 1 : 0;
    converged += a.converged ? 1 : 0;

    const auto po = project(original_emb[i], basis);
    const auto pa = project(attacked_emb[i], basis);
    const auto pt = project(m.caption_embeddings[targets[i]], basis);
    const auto ps = project(m.caption_embeddings[corpus.items[a.pair.item].class_id], basis);
    closer += euclidean(pa, pt) < euclidean(pa, ps) ? 1 : 0;
    coords_original.push_back(po);
    coords_aligned.push_back(pa);

    report += csv_row({a.pair.id, std::to_string(targets[i]), success.success[i] ? "1" : "0", num(d.l2), num(d.linf),
                       num(q.psnr), num(q.ssim), num(a.final_cosine), std::to_string(a.steps), num(d.mean_abs),
                       survives ? "1" : "0"});
    if (cfg.eval.write_diffs) {
      io::export_image8(dir.path() / "diffs" / (a.pair.id + ".ppm"),
                        amplify_diff(originals[i], attacked[i], cfg.eval.amplify_factor));
      io::export_image8(dir.path() / "images" / (a.pair.id + "_original.ppm"), originals[i]);
      io::export_image8(dir.path() / "images" / (a.pair.id + "_attacked.ppm"), attacked[i]);
    }
  }
  nlohmann::json coords_text = nlohmann::json::array();
  for (const auto& e : m.caption_embeddings) coords_text.push_back(project(e, basis));

  nlohmann::json pixels = nlohmann::json::object();
  for (std::size_t t = 0; t < kPixelThresholds.size(); ++t) pixels[num(kPixelThresholds[t])] = to_json(mean_std(above[t]));
  auto hist = [](const Histogram& h) { return nlohmann::json{{"lo", h.lo}, {"width", h.width}, {"counts", h.counts}}; };
  const double n = static_cast<double>(attacks.size());
  nlohmann::json summary{
      {"attacks", attacks.size()},
      {"converged", converged},
      {"success_rate", success.rate},
      {"l2", to_json(mean_std(l2))},
      {"linf", to_json(mean_std(linf))},
      {"mean_abs", to_json(mean_std(mean_abs))},
      {"pixels_above", pixels},
      {"psnr", to_json(mean_std(psnrs))},
      {"ssim", to_json(mean_std(ssims))},
      {"quantization_survival", static_cast<double>(survived) / n},
      {"cosine",
       {{"text_pairs", cos.text_pairs},
        {"aligned", cos.aligned_pairs},
        {"original", cos.original_pairs},
        {"histogram", {{"text_pairs", hist(cos.text_hist)}, {"aligned", hist(cos.aligned_hist)}, {"original", hist(cos.original_hist)}}},
        {"min_aligned", *std::min_element(cos.aligned_pairs.begin(), cos.aligned_pairs.end())},
        {"max_text_pair", *std::max_element(cos.text_pairs.begin(), cos.text_pairs.end())},
        {"overlap", cos.overlap}}},
      {"pca",
       {{"components", basis.k()},
        {"eigenvalues", basis.eigenvalues},
        {"total_variance", basis.total_variance},
        {"captions", m.captions},
        {"coordinates", {{"original", coords_original}, {"aligned", coords_aligned}, {"text", coords_text}}},
        {"aligned_closer_to_target", static_cast<double>(closer) / n}}}};
  io::write_file(dir.path() / kReport, report);
  io::write_file(dir.path() / kSummary, summary.dump(2) + "\n");
  write_config_echo(dir.path(), cfg);
  dir.commit();

  EvalSummary s{attacks.size(), success.rate, cos.overlap};
  log_line(stage, "eval: success rate " + num(s.success_rate) + ", mean l2 " + num(mean_std(l2).mean) +
                      ", mean PSNR " + num(mean_std(psnrs).mean) + " dB, overlap " + (s.overlap ? "yes" : "no"));
  return s;
}

DetectSummary cmd_detect(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& corpus_dir,
                         const std::optional<fs::path>& attacks_dir, const Stage& stage) {
  cfg.validate();
  const auto corpus = load_corpus(corpus_dir);
  std::vector<Tensor> images;
  std::vector<bool> attacked;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < corpus.items.size() && ids.size() < cfg.sweep.clean_images; ++i) {
    if (corpus.items[i].split != Split::HeldOut) continue;
    images.push_back(corpus.items[i].image);
    attacked.push_back(false);
    ids.push_back(corpus.paths[i]);
  }
  if (attacks_dir) {
    for (auto& a : load_attacks(*attacks_dir, corpus)) {
      images.push_back(std::move(a.image));
      attacked.push_back(true);
      ids.push_back(a.pair.id);
    }
  }
  if (images.empty()) throw ContractError("detect: no images to probe");
  StagedDir dir(stage);
  const auto m = load_model(cfg, checkpoint, corpus);

  std::set<double> sigma_set(cfg.sweep.sigmas.begin(), cfg.sweep.sigmas.end());
  sigma_set.insert(cfg.detect.sigma);
  const std::vector<double> sigmas(sigma_set.begin(), sigma_set.end());
  std::vector<DetectionVerdict> verdicts(sigmas.size() * images.size());
  parallel_for(verdicts.size(), cfg.jobs, [&](std::size_t k) {
    const std::size_t s = k / images.size(), i = k % images.size();
    DetectConfig d = cfg.detect;
    d.sigma = sigmas[s];
    d.seed = image_seed(cfg.detect.seed, i);
    verdicts[k] = noise_probe(images[i], m.model, m.caption_embeddings, d);
  });

  DetectSummary out;
  out.attacked = static_cast<std::size_t>(std::count(attacked.begin(), attacked.end(), true));
  out.clean = images.size() - out.attacked;
  std::string report = "image_id,provenance,verdict,agreement,trials,base_label,sigma\n";
  std::string sweep = "sigma,tpr,fpr\n";
  for (std::size_t s = 0; s < sigmas.size(); ++s) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto& v = verdicts[s * images.size() + i];
      const bool flagged = v.verdict == Verdict::Modified;
      tp += flagged && attacked[i] ? 1 : 0;
      fp += flagged && !attacked[i] ? 1 : 0;
      report += csv_row({ids[i], attacked[i] ? "attacked" : "clean", std::string(verdict_name(v.verdict)),
                         std::to_string(v.agreement), std::to_string(cfg.detect.trials), std::to_string(v.base_label),
                         num(sigmas[s])});
    }
    SweepRow row{sigmas[s], out.attacked ? static_cast<double>(tp) / static_cast<double>(out.attacked) : NAN,
                 out.clean ? static_cast<double>(fp) / static_cast<double>(out.clean) : NAN};
    out.sweep.push_back(row);
    sweep += csv_row({num(row.sigma), num(row.tpr), num(row.fpr)});
    log_line(stage, "detect: sigma " + num(row.sigma) + " TPR " + num(row.tpr) + " FPR " + num(row.fpr));
  }
  io::write_file(dir.path() / kDetectReport, report);
  io::write_file(dir.path() / kSweep, sweep);
  write_config_echo(dir.path(), cfg);
  dir.commit();
  return out;
}

}  // namespace embalign::tools
