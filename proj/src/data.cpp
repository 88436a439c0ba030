#include "unite/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "unite/errors.hpp"
#include "unite/random.hpp"

namespace unite {

namespace {

using nlohmann::json;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Embedding store

std::span<const double> FrameSequence::frame(std::size_t index) const {
  if (index >= header.frame_count) throw DataError("frame " + std::to_string(index) + " out of range");
  return std::span<const double>(values).subspan(index * header.frame_values(), header.frame_values());
}

void write_embeddings(const std::filesystem::path& path, std::uint32_t frame_count, std::uint32_t t_s, std::uint32_t d_s,
                      std::span<const float> values) {
  const std::size_t expected = static_cast<std::size_t>(frame_count) * t_s * d_s;
  if (values.size() != expected) {
    throw DimensionError("write_embeddings: " + std::to_string(values.size()) + " values for " +
                         std::to_string(frame_count) + "x" + std::to_string(t_s) + "x" + std::to_string(d_s));
  }
  std::string buf;
  buf.reserve(kEmbeddingHeaderBytes + expected * 4);
  buf.append(kEmbeddingMagic, sizeof kEmbeddingMagic);
  put_u32(buf, kEmbeddingVersion);
  put_u32(buf, frame_count);
  put_u32(buf, t_s);
  put_u32(buf, d_s);
  put_u32(buf, kDtypeF32);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError("write_embeddings: non-finite value at flat index " + std::to_string(i));
    }
    put_u32(buf, std::bit_cast<std::uint32_t>(values[i]));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("short write to " + path.string());
}

FrameSequence load_embeddings(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  const auto* bytes = reinterpret_cast<const unsigned char*>(raw.data());
  const std::string where = path.string() + ": ";
  if (raw.size() < sizeof kEmbeddingMagic || std::memcmp(raw.data(), kEmbeddingMagic, sizeof kEmbeddingMagic) != 0) {
    throw ParseError(where + "bad magic, expected UNITEEMB", 0);
  }
  if (raw.size() < kEmbeddingHeaderBytes) {
    throw ParseError(where + "truncated header: expected " + std::to_string(kEmbeddingHeaderBytes) + " bytes, got " +
                         std::to_string(raw.size()),
                     raw.size());
  }
  FrameSequence seq;
  auto& h = seq.header;
  h.version = get_u32(bytes + 8);
  h.frame_count = get_u32(bytes + 12);
  h.t_s = get_u32(bytes + 16);
  h.d_s = get_u32(bytes + 20);
  h.dtype = get_u32(bytes + 24);
  if (h.version != kEmbeddingVersion) throw ParseError(where + "unsupported version " + std::to_string(h.version), 8);
  if (h.dtype != kDtypeF32) throw ParseError(where + "unsupported dtype code " + std::to_string(h.dtype), 24);

  const std::size_t expected = kEmbeddingHeaderBytes + h.body_bytes();
  if (raw.size() != expected) {
    throw ParseError(where + (raw.size() < expected ? "truncated body" : "trailing bytes") + ": expected " +
                         std::to_string(expected) + " bytes, got " + std::to_string(raw.size()),
                     std::min(raw.size(), expected));
  }
  const std::size_t n = h.body_bytes() / 4;
  seq.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t offset = kEmbeddingHeaderBytes + 4 * i;
    const float v = std::bit_cast<float>(get_u32(bytes + offset));
    if (!std::isfinite(v)) {
      throw ParseError(where + "non-finite value at flat index " + std::to_string(i), offset);
    }
    seq.values[i] = static_cast<double>(v);
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Manifest

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw ValidationError("split must be train|val|test, got '" + text + "'");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

std::filesystem::path Manifest::resolve(const ManifestEntry& entry) const {
  const std::filesystem::path p(entry.embedding_path);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<ManifestEntry> Manifest::split(Split which) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == which) out.push_back(e);
  return out;
}

void Manifest::validate_labels(std::size_t n_c) const {
  for (const auto& e : entries) {
    if (e.label >= n_c) {
      throw DataError("manifest: video " + e.video_id + " has label " + std::to_string(e.label) + " but n_c=" +
                      std::to_string(n_c));
    }
  }
}

Manifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir, bool strict) {
  static const std::set<std::string> known{"video_id", "embedding_path", "label", "dataset", "generator", "split"};
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("manifest: invalid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw DataError("manifest: top level must be an array of entries");

  Manifest m;
  m.base_dir = base_dir;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& rec = doc[i];
    const std::string where = "manifest entry " + std::to_string(i);
    if (!rec.is_object()) throw DataError(where + ": not an object");
    for (const auto& [key, _] : rec.items()) {
      if (known.count(key)) continue;
      if (strict) throw DataError(where + ": unknown field '" + key + "'");
      m.warnings.push_back(where + ": ignoring unknown field '" + key + "'");
    }
    auto field = [&](const char* key) -> const json& {
      if (!rec.contains(key)) throw DataError(where + ": missing field '" + key + "'");
      return rec.at(key);
    };
    ManifestEntry e;
    try {
      e.video_id = field("video_id").get<std::string>();
      e.embedding_path = field("embedding_path").get<std::string>();
      const auto& label = field("label");
      if (!label.is_number_unsigned()) throw DataError(where + ": label must be a non-negative integer");
      e.label = label.get<std::size_t>();
      e.dataset = field("dataset").get<std::string>();
      e.generator = field("generator").get<std::string>();
      e.split = parse_split(field("split").get<std::string>());
    } catch (const json::type_error& err) {
      throw DataError(where + ": wrong field type: " + err.what());
    } catch (const ValidationError& err) {
      throw DataError(where + ": " + err.what());
    }
    if (!ids.insert(e.video_id).second) throw DataError("manifest: duplicate video_id '" + e.video_id + "'");
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path, bool strict) {
  return parse_manifest(read_file(path), path.parent_path(), strict);
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  json doc = json::array();
  for (const auto& e : entries) {
    doc.push_back({{"video_id", e.video_id},
                   {"embedding_path", e.embedding_path},
                   {"label", e.label},
                   {"dataset", e.dataset},
                   {"generator", e.generator},
                   {"split", to_string(e.split)}});
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Segments and batches

std::size_t segment_count(std::size_t raw_frames, std::size_t n_f, std::size_t stride) {
  if (raw_frames == 0 || n_f == 0 || stride == 0) return 0;
  const std::size_t strided = std::max<std::size_t>(1, raw_frames / stride);
  return (strided + n_f - 1) / n_f;
}

std::vector<VideoSegment> segment_video(const FrameSequence& frames, std::size_t n_f, std::size_t stride,
                                        std::size_t label, const std::string& video_id) {
  if (frames.frame_count() == 0) throw DataError("segment_video: video " + video_id + " has no frames");
  if (n_f == 0) throw ValidationError("segment_video: n_f must be at least 1");
  if (stride == 0) throw ValidationError("segment_video: stride must be at least 1");

  // floor(frames / stride) frames, but never fewer than one.
  const std::size_t n_kept = std::max<std::size_t>(1, frames.frame_count() / stride);
  std::vector<std::size_t> kept(n_kept);
  for (std::size_t i = 0; i < n_kept; ++i) kept[i] = i * stride;

  const std::size_t t_s = frames.header.t_s, d_s = frames.header.d_s, per_frame = t_s * d_s;
  std::vector<VideoSegment> segments;
  for (std::size_t start = 0; start < kept.size(); start += n_f) {
    const std::size_t real = std::min(n_f, kept.size() - start);
    std::vector<double> block(n_f * per_frame);
    for (std::size_t j = 0; j < n_f; ++j) {
      const std::size_t src = kept[start + std::min(j, real - 1)];
      const auto f = frames.frame(src);
      std::copy(f.begin(), f.end(), block.begin() + static_cast<std::ptrdiff_t>(j * per_frame));
    }
    VideoSegment seg;
    seg.xi = Tensor::constant({n_f, t_s, d_s}, std::move(block));
    seg.label = label;
    seg.source_video = video_id;
    seg.start_frame = start;
    seg.real_frames = real;
    segments.push_back(std::move(seg));
  }
  return segments;
}

VideoSegment truncate_frames(const VideoSegment& segment, std::size_t keep) {
  const std::size_t n_f = segment.xi.dim(0);
  if (keep == 0 || keep > n_f) {
    throw ValidationError("frames: must be in [1, " + std::to_string(n_f) + "], got " + std::to_string(keep));
  }
  if (keep == n_f) return segment;
  const std::size_t per_frame = segment.xi.size() / n_f;
  std::vector<double> block(segment.xi.size());
  const auto src = segment.xi.data();
  for (std::size_t j = 0; j < n_f; ++j) {
    const std::size_t from = std::min(j, keep - 1);
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(from * per_frame), per_frame,
                block.begin() + static_cast<std::ptrdiff_t>(j * per_frame));
  }
  VideoSegment out = segment;
  out.xi = Tensor::constant(segment.xi.shape(), std::move(block));
  out.real_frames = std::min(segment.real_frames, keep);
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                   std::uint64_t epoch) {
  if (batch_size == 0) throw ValidationError("batch_size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, epoch));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Synthetic embeddings

Region parse_region(const std::string& text) {
  if (text == "none") return Region::None;
  if (text == "face") return Region::Face;
  if (text == "background") return Region::Background;
  if (text == "global") return Region::Global;
  throw ValidationError("region must be none|face|background|global, got '" + text + "'");
}

std::string to_string(Region region) {
  switch (region) {
    case Region::None: return "none";
    case Region::Face: return "face";
    case Region::Background: return "background";
    case Region::Global: return "global";
  }
  return "none";
}

void SynthSpec::validate() const {
  const auto side = static_cast<std::uint32_t>(std::llround(std::sqrt(static_cast<double>(t_s))));
  if (t_s == 0 || side * side != t_s) throw ValidationError("t_s: must be a positive perfect square");
  if (side < 2) throw ValidationError("t_s: grid must be at least 2x2 to hold face and background regions");
  if (d_s == 0) throw ValidationError("d_s: must be at least 1");
  if (frames_min == 0 || frames_max < frames_min) throw ValidationError("frames_min/frames_max: need 1 <= min <= max");
  if (!(noise >= 0.0)) throw ValidationError("noise: must be non-negative");
  if (!(temporal_rho >= 0.0 && temporal_rho < 1.0)) throw ValidationError("temporal_rho: must be in [0, 1)");
  if (!(train_fraction >= 0.0 && val_fraction >= 0.0 && train_fraction + val_fraction <= 1.0)) {
    throw ValidationError("train_fraction/val_fraction: must be non-negative and sum to at most 1");
  }
  if (recipes.empty()) throw ValidationError("recipes: at least one recipe is required");
  std::set<std::string> names;
  for (const auto& r : recipes) {
    if (r.name.empty()) throw ValidationError("recipes.name: must be non-empty");
    if (!names.insert(r.name).second) throw ValidationError("recipes.name: duplicate '" + r.name + "'");
    if (!(r.amplitude >= 0.0)) throw ValidationError("recipes.amplitude: must be non-negative");
    if (!r.split.empty()) parse_split(r.split);
  }
}

SynthSpec parse_synth_spec(const std::string& json_text) {
  static const std::set<std::string> top{"seed",  "t_s",          "d_s",            "frames_min",   "frames_max",
                                         "noise", "temporal_rho", "train_fraction", "val_fraction", "recipes"};
  static const std::set<std::string> recipe_keys{"name",      "label",  "count",   "region",    "temporal",
                                                 "amplitude", "dataset", "generator", "split"};
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("spec: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("spec: top level must be an object");
  for (const auto& [key, _] : doc.items())
    if (!top.count(key)) throw ValidationError("spec: unknown field '" + key + "'");

  SynthSpec s;
  std::string current = "spec";
  try {
    auto get = [&](const json& obj, const char* key, auto& dst) {
      if (obj.contains(key)) {
        current = key;
        dst = obj.at(key).get<std::remove_reference_t<decltype(dst)>>();
      }
    };
    get(doc, "seed", s.seed);
    get(doc, "t_s", s.t_s);
    get(doc, "d_s", s.d_s);
    get(doc, "frames_min", s.frames_min);
    get(doc, "frames_max", s.frames_max);
    get(doc, "noise", s.noise);
    get(doc, "temporal_rho", s.temporal_rho);
    get(doc, "train_fraction", s.train_fraction);
    get(doc, "val_fraction", s.val_fraction);
    if (doc.contains("recipes")) {
      current = "recipes";
      if (!doc["recipes"].is_array()) throw ValidationError("recipes: must be an array");
      for (const auto& r : doc["recipes"]) {
        if (!r.is_object()) throw ValidationError("recipes: entries must be objects");
        for (const auto& [key, _] : r.items())
          if (!recipe_keys.count(key)) throw ValidationError("recipes: unknown field '" + key + "'");
        SynthRecipe rec;
        std::string region = "none";
        get(r, "name", rec.name);
        get(r, "label", rec.label);
        get(r, "count", rec.count);
        get(r, "region", region);
        get(r, "temporal", rec.temporal);
        get(r, "amplitude", rec.amplitude);
        get(r, "dataset", rec.dataset);
        get(r, "generator", rec.generator);
        get(r, "split", rec.split);
        current = "recipes.region";
        rec.region = parse_region(region);
        if (rec.generator.empty()) rec.generator = rec.name;
        s.recipes.push_back(std::move(rec));
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(current + ": " + e.what());
  }
  s.validate();
  return s;
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("spec: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_synth_spec(ss.str());
}

std::string synth_spec_json(const SynthSpec& s) {
  json recipes = json::array();
  for (const auto& r : s.recipes) {
    recipes.push_back({{"name", r.name},
                       {"label", r.label},
                       {"count", r.count},
                       {"region", to_string(r.region)},
                       {"temporal", r.temporal},
                       {"amplitude", r.amplitude},
                       {"dataset", r.dataset},
                       {"generator", r.generator},
                       {"split", r.split}});
  }
  json doc{{"seed", s.seed},
           {"t_s", s.t_s},
           {"d_s", s.d_s},
           {"frames_min", s.frames_min},
           {"frames_max", s.frames_max},
           {"noise", s.noise},
           {"temporal_rho", s.temporal_rho},
           {"train_fraction", s.train_fraction},
           {"val_fraction", s.val_fraction},
           {"recipes", recipes}};
  return doc.dump(2);
}

SynthSpec default_synth_spec(std::uint64_t seed) {
  SynthSpec s;
  s.seed = seed;
  s.recipes = {
      {"real", 0, 80, Region::None, false, 0.0, "synth", "real", ""},
      {"face", 1, 60, Region::Face, false, 3.0, "synth", "face", ""},
      {"background", 1, 60, Region::Background, false, 1.5, "synth", "background", "test"},
  };
  return s;
}

std::vector<bool> face_mask(std::size_t t_s) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(t_s))));
  const std::size_t lo = side / 4, hi = side - side / 4;
  std::vector<bool> mask(t_s, false);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) mask[r * side + c] = (r >= lo && r < hi && c >= lo && c < hi);
  return mask;
}

namespace {

// Fixed per-dataset vectors: region prototypes and the signature direction.
struct SynthBasis {
  std::vector<double> face, background, signature;
};

SynthBasis make_basis(const SynthSpec& spec) {
  std::mt19937_64 rng(mix_seed(spec.seed, 0xba515));
  SynthBasis b;
  auto draw = [&](std::vector<double>& v) {
    v.resize(spec.d_s);
    for (auto& x : v) x = standard_normal(rng);
  };
  draw(b.face);
  draw(b.background);
  draw(b.signature);
  double norm = 0.0;
  for (double x : b.signature) norm += x * x;
  norm = std::sqrt(norm);
  for (auto& x : b.signature) x /= norm;
  return b;
}

bool touches(Region region, bool is_face) {
  switch (region) {
    case Region::None: return false;
    case Region::Face: return is_face;
    case Region::Background: return !is_face;
    case Region::Global: return true;
  }
  return false;
}

std::vector<float> synth_video(const SynthSpec& spec, const SynthBasis& basis, const SynthRecipe& recipe,
                               std::size_t frames, std::mt19937_64& rng) {
  const std::size_t t_s = spec.t_s, d_s = spec.d_s;
  const auto mask = face_mask(t_s);
  const double rho = recipe.temporal ? 0.0 : spec.temporal_rho;
  const double innovation = std::sqrt(1.0 - rho * rho);

  // Per-video scene appearance for each region, redrawn every frame when the
  // recipe breaks temporal coherence.
  std::vector<double> scene_face(d_s), scene_bg(d_s);
  auto redraw_scene = [&] {
    for (auto& x : scene_face) x = 0.5 * standard_normal(rng);
    for (auto& x : scene_bg) x = 0.5 * standard_normal(rng);
  };
  redraw_scene();
  std::vector<double> drift(t_s * d_s);
  for (auto& x : drift) x = standard_normal(rng);

  std::vector<float> out(frames * t_s * d_s);
  for (std::size_t f = 0; f < frames; ++f) {
    if (f > 0) {
      for (auto& x : drift) x = rho * x + innovation * standard_normal(rng);
      if (recipe.temporal) redraw_scene();
    }
    for (std::size_t t = 0; t < t_s; ++t) {
      const bool is_face = mask[t];
      const auto& proto = is_face ? basis.face : basis.background;
      const auto& scene = is_face ? scene_face : scene_bg;
      const double sig = touches(recipe.region, is_face) ? recipe.amplitude : 0.0;
      for (std::size_t k = 0; k < d_s; ++k) {
        const double v = proto[k] + scene[k] + spec.noise * drift[t * d_s + k] + sig * basis.signature[k];
        out[(f * t_s + t) * d_s + k] = static_cast<float>(v);
      }
    }
  }
  return out;
}

std::string video_id(const SynthRecipe& recipe, std::size_t index) {
  std::ostringstream os;
  os << recipe.name << '_';
  os.width(4);
  os.fill('0');
  os << index;
  return os.str();
}

}  // namespace

std::vector<double> signature_direction(const SynthSpec& spec) { return make_basis(spec).signature; }

Manifest synth_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir / "emb");
  const SynthBasis basis = make_basis(spec);

  std::vector<ManifestEntry> entries;
  for (std::size_t r = 0; r < spec.recipes.size(); ++r) {
    const auto& recipe = spec.recipes[r];

    // Split assignment: a seeded permutation of this recipe's videos.
    std::vector<std::size_t> order(recipe.count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 split_rng(mix_seed(spec.seed, 1000 + r));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform01(split_rng) * static_cast<double>(i))]);
    }
    const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(recipe.count)));
    const auto n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(recipe.count)));
    std::vector<Split> split_of(recipe.count, Split::Test);
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (!recipe.split.empty()) split_of[order[i]] = parse_split(recipe.split);
      else if (i < n_train) split_of[order[i]] = Split::Train;
      else if (i < n_train + n_val) split_of[order[i]] = Split::Val;
    }

    for (std::size_t v = 0; v < recipe.count; ++v) {
      std::mt19937_64 rng(mix_seed(mix_seed(spec.seed, r + 1), v));
      const std::size_t span = spec.frames_max - spec.frames_min + 1;
      const std::size_t frames = spec.frames_min + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(span));
      const auto values = synth_video(spec, basis, recipe, frames, rng);

      ManifestEntry e;
      e.video_id = video_id(recipe, v);
      e.embedding_path = "emb/" + e.video_id + ".emb";
      e.label = recipe.label;
      e.dataset = recipe.dataset;
      e.generator = recipe.generator;
      e.split = split_of[v];
      write_embeddings(out_dir / e.embedding_path, static_cast<std::uint32_t>(frames), spec.t_s, spec.d_s, values);
      entries.push_back(std::move(e));
    }
  }
  write_manifest(out_dir / "manifest.json", entries);
  Manifest m;
  m.entries = std::move(entries);
  m.base_dir = out_dir;
  return m;
}

}  // namespace unite
