#include "embalign/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "embalign/errors.hpp"

namespace embalign {

std::string_view split_name(Split s) { return s == Split::Train ? "train" : "heldout"; }

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "heldout") return Split::HeldOut;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

const std::vector<std::string>& known_shapes() {
  static const std::vector<std::string> shapes{"circle", "square", "triangle", "cross"};
  return shapes;
}

const std::vector<NamedColor>& palette() {
  static const std::vector<NamedColor> colors{
      {"red", {0.85, 0.15, 0.12}},    {"green", {0.15, 0.70, 0.20}},
      {"blue", {0.15, 0.25, 0.85}},   {"yellow", {0.90, 0.82, 0.15}},
      {"orange", {0.95, 0.55, 0.10}}, {"purple", {0.55, 0.20, 0.70}},
      {"cyan", {0.15, 0.80, 0.85}},   {"magenta", {0.85, 0.20, 0.70}},
      {"white", {0.95, 0.95, 0.95}},  {"black", {0.05, 0.05, 0.05}},
  };
  return colors;
}

namespace {

const NamedColor& find_color(std::string_view name) {
  for (const auto& c : palette()) {
    if (c.name == name) return c;
  }
  throw ConfigError("unknown color '" + std::string(name) + "'");
}

bool inside(std::string_view shape, double dx, double dy, double r) {
  if (shape == "circle") return dx * dx + dy * dy <= r * r;
  if (shape == "square") return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
  if (shape == "triangle") {
    // Apex up, base at dy = +r.
    if (dy < -r || dy > r) return false;
    double half_width = r * (dy + r) / (2.0 * r);
    return std::abs(dx) <= half_width;
  }
  if (shape == "cross") {
    const double arm = r / 3.0;
    return (std::abs(dx) <= arm && std::abs(dy) <= r) || (std::abs(dy) <= arm && std::abs(dx) <= r);
  }
  throw ConfigError("unknown shape '" + std::string(shape) + "'");
}

}  // namespace

void CorpusConfig::validate() const {
  if (shapes.empty()) throw ConfigError("corpus config: shape list is empty");
  if (colors.empty()) throw ConfigError("corpus config: color list is empty");
  for (const auto& s : shapes) {
    if (std::find(known_shapes().begin(), known_shapes().end(), s) == known_shapes().end()) {
      throw ConfigError("corpus config: unknown shape '" + s + "'");
    }
  }
  for (const auto& c : colors) find_color(c);
  if (std::set<std::string>(shapes.begin(), shapes.end()).size() != shapes.size() ||
      std::set<std::string>(colors.begin(), colors.end()).size() != colors.size()) {
    throw ConfigError("corpus config: duplicate shape or color");
  }
  if (per_class == 0) throw ConfigError("corpus config: per_class must be positive");
  if (image_size < 8) throw ConfigError("corpus config: image size must be at least 8");
  if (heldout_every < 2) throw ConfigError("corpus config: heldout_every must be at least 2");
}

void to_json(nlohmann::json& j, const CorpusConfig& c) {
  j = nlohmann::json{{"shapes", c.shapes},         {"colors", c.colors},
                     {"per_class", c.per_class},   {"image_size", c.image_size},
                     {"heldout_every", c.heldout_every}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, CorpusConfig& c) {
  CorpusConfig d;
  c.shapes = j.value("shapes", d.shapes);
  c.colors = j.value("colors", d.colors);
  c.per_class = j.value("per_class", d.per_class);
  c.image_size = j.value("image_size", d.image_size);
  c.heldout_every = j.value("heldout_every", d.heldout_every);
  c.seed = j.value("seed", d.seed);
}

std::vector<std::string> class_captions(const CorpusConfig& config) {
  std::vector<std::string> out;
  for (const auto& color : config.colors) {
    for (const auto& shape : config.shapes) out.push_back("a " + color + " " + shape);
  }
  return out;
}

Tensor render_shape(std::string_view shape, std::array<Real, 3> rgb, std::size_t image_size,
                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double s = static_cast<double>(image_size);
  std::uniform_real_distribution<double> radius_dist(0.18 * s, 0.34 * s);
  const double r = radius_dist(rng);
  std::uniform_real_distribution<double> cx_dist(r + 1.0, s - r - 1.0);
  const double cx = cx_dist(rng), cy = cx_dist(rng);
  std::uniform_real_distribution<double> tint(-0.05, 0.05);
  const double bg = 0.5 + tint(rng);
  std::array<double, 3> fg{};
  for (std::size_t ch = 0; ch < 3; ++ch) fg[ch] = std::clamp(rgb[ch] + tint(rng), 0.0, 1.0);

  std::vector<Real> px(image_size * image_size * 3);
  // 4x4 supersampling for soft edges.
  constexpr int kSub = 4;
  for (std::size_t y = 0; y < image_size; ++y) {
    for (std::size_t x = 0; x < image_size; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          double dx = x + (sx + 0.5) / kSub - cx;
          double dy = y + (sy + 0.5) / kSub - cy;
          hits += inside(shape, dx, dy, r) ? 1 : 0;
        }
      }
      const double cover = static_cast<double>(hits) / (kSub * kSub);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        // Rendered at storage precision so saved corpora reload identically.
        px[(y * image_size + x) * 3 + ch] = static_cast<float>(cover * fg[ch] + (1.0 - cover) * bg);
      }
    }
  }
  return Tensor::from_data({image_size, image_size, 3}, std::move(px));
}

std::vector<CorpusItem> generate_corpus(const CorpusConfig& config) {
  config.validate();
  const auto captions = class_captions(config);
  std::vector<CorpusItem> items;
  items.reserve(config.num_classes() * config.per_class);
  for (std::size_t ci = 0; ci < config.colors.size(); ++ci) {
    const auto& color = find_color(config.colors[ci]);
    for (std::size_t si = 0; si < config.shapes.size(); ++si) {
      const std::size_t cls = ci * config.shapes.size() + si;
      for (std::size_t k = 0; k < config.per_class; ++k) {
        // Per-item seed keeps items independent of generation order.
        std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                          static_cast<std::uint32_t>(cls), static_cast<std::uint32_t>(k)};
        std::uint32_t words[2];
        seq.generate(words, words + 2);
        const std::uint64_t item_seed = (std::uint64_t{words[0]} << 32) | words[1];
        CorpusItem item;
        item.image = render_shape(config.shapes[si], color.rgb, config.image_size, item_seed);
        item.caption = captions[cls];
        item.class_id = cls;
        item.split = (k % config.heldout_every == config.heldout_every - 1) ? Split::HeldOut : Split::Train;
        items.push_back(std::move(item));
      }
    }
  }
  return items;
}

Vocabulary::Vocabulary(std::vector<std::string> words) {
  std::set<std::string> unique(words.begin(), words.end());
  unique.erase("<pad>");
  unique.erase("<unk>");
  words_ = {"<pad>", "<unk>"};
  words_.insert(words_.end(), unique.begin(), unique.end());
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
}

Vocabulary Vocabulary::standard() {
  std::vector<std::string> words{"a"};
  for (const auto& s : known_shapes()) words.push_back(s);
  for (const auto& c : palette()) words.emplace_back(c.name);
  return Vocabulary(std::move(words));
}

std::size_t Vocabulary::id(std::string_view word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnknownId : it->second;
}

const std::string& Vocabulary::word(std::size_t id) const {
  if (id >= words_.size()) throw VocabularyError("token id " + std::to_string(id) + " not in vocabulary");
  return words_[id];
}

TokenIds tokenize(std::string_view caption, const Vocabulary& vocab, std::size_t max_len) {
  std::string lower(caption);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream is(lower);
  TokenIds ids;
  std::string word;
  while (is >> word && ids.size() < max_len) ids.push_back(vocab.id(word));
  ids.resize(max_len, kPadId);
  return ids;
}

}  // namespace embalign
