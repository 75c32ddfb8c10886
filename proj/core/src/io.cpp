#include "embalign/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "embalign/errors.hpp"

namespace embalign::io {

namespace {

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u16(std::string& out, std::uint16_t v) {
  put_u8(out, static_cast<std::uint8_t>(v & 0xff));
  put_u8(out, static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) put_u8(out, static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

// Bounds-checked little-endian reader.
class Reader {
 public:
  Reader(std::string_view bytes, std::size_t base) : bytes_(bytes), base_(base) {}

  std::size_t offset() const { return base_ + pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::string_view take(std::size_t n, const char* what) {
    if (remaining() < n) throw FormatError(std::string("truncated ") + what, offset());
    auto v = bytes_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(take(1, what)[0]); }
  std::uint16_t u16(const char* what) {
    auto b = take(2, what);
    return static_cast<std::uint16_t>(static_cast<std::uint8_t>(b[0]) | (static_cast<std::uint8_t>(b[1]) << 8));
  }
  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<std::uint8_t>(b[i])} << (8 * i);
    return v;
  }

 private:
  std::string_view bytes_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

std::string encode_tensor(const Tensor& t) {
  if (t.rank() > 255) throw ContractError("tensor rank exceeds 255");
  std::string out = "FTEN";
  put_u16(out, kTensorVersion);
  put_u8(out, static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) {
    if (e > 0xffffffffULL) throw ContractError("tensor extent exceeds 32 bits");
    put_u32(out, static_cast<std::uint32_t>(e));
  }
  out.reserve(out.size() + 4 * t.numel());
  for (Real v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

Tensor decode_tensor(std::string_view bytes, std::size_t base_offset) {
  Reader r(bytes, base_offset);
  auto magic = r.take(4, "magic");
  if (magic != "FTEN") throw FormatError("bad tensor magic", base_offset);
  const std::size_t version_at = r.offset();
  if (r.u16("version") != kTensorVersion) throw FormatError("unsupported tensor version", version_at);
  const std::size_t rank = r.u8("rank");
  Shape shape(rank);
  for (auto& e : shape) {
    const std::size_t at = r.offset();
    e = r.u32("extent");
    if (e == 0) throw FormatError("zero tensor extent", at);
  }
  const std::size_t n = shape_numel(shape);
  if (r.remaining() < 4 * n) throw FormatError("truncated tensor payload", r.offset());
  if (r.remaining() > 4 * n) throw FormatError("trailing bytes after tensor payload", r.offset() + 4 * n);
  std::vector<Real> data(n);
  for (auto& v : data) v = std::bit_cast<float>(r.u32("payload"));
  return Tensor::from_data(std::move(shape), std::move(data));
}

void save_tensor(const fs::path& path, const Tensor& t) { write_file(path, encode_tensor(t)); }

Tensor load_tensor(const fs::path& path) { return decode_tensor(read_file(path)); }

std::uint8_t quantize_scalar(Real v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Real dequantize_scalar(std::uint8_t q) { return static_cast<float>(q) / 255.0f; }

Tensor quantize_image8(const Tensor& image) {
  std::vector<Real> out(image.numel());
  auto v = image.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dequantize_scalar(quantize_scalar(v[i]));
  return Tensor::from_data(image.shape(), std::move(out));
}

void export_image8(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.shape()[2] != 3) {
    throw DimensionError("export_image8: expected H x W x 3, got " + shape_string(image.shape()));
  }
  const std::size_t h = image.shape()[0], w = image.shape()[1];
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + image.numel());
  for (Real v : image.data()) out.push_back(static_cast<char>(quantize_scalar(v)));
  write_file(path, out);
}

Tensor import_image8(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > (1u << 24)) throw FormatError(std::string("PPM ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("PPM header: expected ") + what, start);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError("not a binary PPM (P6)", 0);
  pos = 2;
  const std::size_t w = number("width"), h = number("height");
  const std::size_t maxval_at = pos;
  const std::size_t maxval = number("max value");
  if (maxval != 255) throw FormatError("PPM max value must be 255", maxval_at);
  if (w == 0 || h == 0) throw FormatError("PPM has a zero extent", maxval_at);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("PPM header must end with one whitespace byte", pos);
  }
  ++pos;
  const std::size_t n = w * h * 3;
  if (bytes.size() - pos < n) throw FormatError("truncated PPM pixel data", bytes.size());
  std::vector<Real> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = dequantize_scalar(static_cast<std::uint8_t>(bytes[pos + i]));
  return Tensor::from_data({h, w, 3}, std::move(data));
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header{{"config", ckpt.model.config}, {"metadata", ckpt.metadata}};
  const std::string text = header.dump();
  std::string out = "ECKP";
  put_u16(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  const auto tensors = ckpt.model.named_tensors();
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    const std::string blob = encode_tensor(t);
    put_u32(out, static_cast<std::uint32_t>(blob.size()));
    out += blob;
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::optional<ModelConfig>& expected) {
  Reader r(bytes, 0);
  if (r.take(4, "magic") != "ECKP") throw FormatError("bad checkpoint magic", 0);
  const std::size_t version_at = r.offset();
  if (r.u16("version") != kCheckpointVersion) throw FormatError("unsupported checkpoint version", version_at);
  const std::size_t header_len = r.u32("header length");
  const std::size_t header_at = r.offset();
  auto header_text = r.take(header_len, "header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what(), header_at);
  }
  if (!header.contains("config") || !header.contains("metadata")) {
    throw FormatError("checkpoint header lacks config or metadata", header_at);
  }
  Checkpoint ckpt;
  const ModelConfig config = header.at("config").get<ModelConfig>();
  if (expected && !(*expected == config)) {
    throw ConfigError("checkpoint config does not match the requested model config");
  }
  ckpt.metadata = header.at("metadata");
  ckpt.model = ModelParams::init(config, 0);

  // Handles share storage with the model, so filling them in place fills the model.
  std::map<std::string, std::optional<Tensor>> slots;
  for (auto& [name, t] : ckpt.model.named_tensors()) slots.emplace(name, t);
  const std::size_t count = r.u32("tensor count");
  if (count != slots.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, model needs " +
                          std::to_string(slots.size()),
                      r.offset() - 4);
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t name_at = r.offset();
    const std::size_t name_len = r.u16("name length");
    const std::string name(r.take(name_len, "tensor name"));
    auto it = slots.find(name);
    if (it == slots.end() || !it->second) throw FormatError("unexpected tensor '" + name + "'", name_at);
    const std::size_t blob_len = r.u32("blob length");
    const std::size_t blob_at = r.offset();
    Tensor t = decode_tensor(r.take(blob_len, "tensor blob"), blob_at);
    if (t.shape() != it->second->shape()) {
      throw FormatError("tensor '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                            shape_string(it->second->shape()),
                        blob_at);
    }
    std::copy(t.data().begin(), t.data().end(), it->second->mutable_data().begin());
    it->second.reset();
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.offset());
  return ckpt;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) { write_file(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const fs::path& path, const std::optional<ModelConfig>& expected) {
  return decode_checkpoint(read_file(path), expected);
}

void write_tsv(const fs::path& path, std::span<const std::string> header, std::span<const Row> rows) {
  std::string out = "#";
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out += '\t';
    out += header[i];
  }
  out += '\n';
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw ContractError("manifest row width differs from header");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (row[i].find_first_of("\t\n") != std::string::npos) {
        throw ContractError("manifest field contains a tab or newline");
      }
      if (i) out += '\t';
      out += row[i];
    }
    out += '\n';
  }
  write_file(path, out);
}

std::vector<Row> read_tsv(const fs::path& path, std::size_t expected_columns) {
  const std::string text = read_file(path);
  std::vector<Row> rows;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty() && line.front() != '#') {
      Row row;
      std::size_t start = 0;
      while (true) {
        std::size_t tab = line.find('\t', start);
        row.emplace_back(line.substr(start, tab == std::string_view::npos ? line.size() - start : tab - start));
        if (tab == std::string_view::npos) break;
        start = tab + 1;
      }
      if (row.size() != expected_columns) {
        throw FormatError("manifest line has " + std::to_string(row.size()) + " fields, expected " +
                              std::to_string(expected_columns),
                          pos);
      }
      rows.push_back(std::move(row));
    }
    pos = end + 1;
  }
  return rows;
}

nlohmann::json vocabulary_to_json(const Vocabulary& v) { return v.words(); }

Vocabulary vocabulary_from_json(const nlohmann::json& j) {
  auto words = j.get<std::vector<std::string>>();
  if (words.size() < 2 || words[kPadId] != "<pad>" || words[kUnknownId] != "<unk>") {
    throw FormatError("vocabulary must start with <pad> and <unk>", 0);
  }
  Vocabulary v(words);
  if (v.words() != words) throw FormatError("vocabulary words are not in canonical order", 0);
  return v;
}

bool quantization_survival(const Tensor& attacked_image, std::size_t target_label, const ModelParams& model,
                           std::span<const Embedding> captions) {
  if (target_label >= captions.size()) throw ContractError("target label outside caption set");
  const Embedding e = encode_image(quantize_image8(attacked_image), model);
  return predict_label(e, captions) == target_label;
}

}  // namespace embalign::io
