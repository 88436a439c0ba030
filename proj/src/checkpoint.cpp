#include "unite/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "unite/errors.hpp"

namespace unite {

namespace {

using nlohmann::json;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}

  std::uint64_t offset() const { return pos_; }

  const char* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(where_ + "truncated while reading " + what + ": need " + std::to_string(n) + " bytes, " +
                           std::to_string(bytes_.size() - pos_) + " left",
                       pos_);
    }
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::uint64_t uint(std::size_t width, const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(width, what));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }

  std::string string(std::size_t n, const char* what) { return std::string(take(n, what), n); }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace

const CheckpointRecord* CheckpointFile::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

const CheckpointRecord& CheckpointFile::at(const std::string& name) const {
  if (const auto* r = find(name)) return *r;
  throw DataError("checkpoint: missing record '" + name + "'");
}

std::string model_config_json(const ModelConfig& c) {
  const json doc{{"n_f", c.n_f},         {"t_s", c.t_s},     {"d_s", c.d_s},
                 {"grid_g", c.grid_g},   {"d_model", c.d_model}, {"n_h", c.n_h},
                 {"depth", c.depth},     {"mlp_ratio", c.mlp_ratio}, {"dropout_rate", c.dropout_rate},
                 {"n_c", c.n_c}};
  return doc.dump();
}

ModelConfig parse_model_config_json(const std::string& text) {
  ModelConfig c;
  try {
    const auto doc = json::parse(text);
    c.n_f = doc.at("n_f").get<std::size_t>();
    c.t_s = doc.at("t_s").get<std::size_t>();
    c.d_s = doc.at("d_s").get<std::size_t>();
    c.grid_g = doc.at("grid_g").get<std::size_t>();
    c.d_model = doc.at("d_model").get<std::size_t>();
    c.n_h = doc.at("n_h").get<std::size_t>();
    c.depth = doc.at("depth").get<std::size_t>();
    c.mlp_ratio = doc.at("mlp_ratio").get<std::size_t>();
    c.dropout_rate = doc.at("dropout_rate").get<double>();
    c.n_c = doc.at("n_c").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file) {
  std::string buf(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(buf, kCheckpointVersion);
  const std::string cfg = model_config_json(file.config);
  put_u32(buf, static_cast<std::uint32_t>(cfg.size()));
  buf += cfg;
  put_u32(buf, static_cast<std::uint32_t>(file.records.size()));
  for (const auto& r : file.records) {
    if (shape_size(r.shape) != r.values.size()) {
      throw DimensionError("checkpoint: record " + r.name + " has " + std::to_string(r.values.size()) +
                           " values for shape " + shape_string(r.shape));
    }
    put_u32(buf, static_cast<std::uint32_t>(r.name.size()));
    buf += r.name;
    put_u32(buf, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) put_u64(buf, d);
    for (double v : r.values) put_u64(buf, std::bit_cast<std::uint64_t>(v));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write-then-rename so an interrupted run never leaves a torn checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();

  Reader r(bytes, path.string() + ": ");
  if (std::memcmp(r.take(8, "magic"), kCheckpointMagic, 8) != 0) {
    throw ParseError(path.string() + ": bad magic, expected UNITECKP", 0);
  }
  const auto version = r.uint(4, "version");
  if (version != kCheckpointVersion) throw ParseError(path.string() + ": unsupported version " + std::to_string(version), 8);

  CheckpointFile file;
  const auto cfg_len = r.uint(4, "config length");
  file.config = parse_model_config_json(r.string(cfg_len, "config"));
  const auto count = r.uint(4, "record count");
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    rec.name = r.string(r.uint(4, "name length"), "name");
    const auto rank = r.uint(4, "rank");
    if (rank > 8) throw ParseError(path.string() + ": implausible rank " + std::to_string(rank), r.offset() - 4);
    for (std::uint64_t d = 0; d < rank; ++d) rec.shape.push_back(r.uint(8, "extent"));
    const std::size_t n = shape_size(rec.shape);
    rec.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) rec.values[k] = std::bit_cast<double>(r.uint(8, "values"));
    file.records.push_back(std::move(rec));
  }
  if (!r.done()) throw ParseError(path.string() + ": trailing bytes after last record", r.offset());
  return file;
}

UniteModel load_model(const std::filesystem::path& path) {
  const auto file = read_checkpoint_file(path);
  std::vector<NamedTensor> params;
  for (const auto& spec : parameter_layout(file.config)) {
    const auto& rec = file.at(spec.name);
    if (rec.shape != spec.shape) {
      throw DimensionError("checkpoint: " + spec.name + " is " + shape_string(rec.shape) + ", expected " +
                           shape_string(spec.shape));
    }
    params.push_back({spec.name, Tensor::parameter(rec.shape, rec.values)});
  }
  return UniteModel(file.config, std::move(params));
}

}  // namespace unite
