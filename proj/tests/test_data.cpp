#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include <unistd.h>

#include "doctest.h"
#include "unite/data.hpp"
#include "unite/errors.hpp"

using namespace unite;
namespace fs = std::filesystem;

namespace {

struct ScratchDir {
  fs::path path;
  explicit ScratchDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("unite_test_data_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void put_u32(std::string& s, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s[at + i] = static_cast<char>((v >> (8 * i)) & 0xff);
}

std::uint64_t parse_offset(const fs::path& p) {
  try {
    load_embeddings(p);
  } catch (const ParseError& e) {
    return e.offset();
  }
  return std::numeric_limits<std::uint64_t>::max();
}

FrameSequence ramp_sequence(std::uint32_t frames, std::uint32_t t_s = 4, std::uint32_t d_s = 2) {
  FrameSequence s;
  s.header.frame_count = frames;
  s.header.t_s = t_s;
  s.header.d_s = d_s;
  for (std::uint32_t f = 0; f < frames; ++f)
    for (std::uint32_t i = 0; i < t_s * d_s; ++i) s.values.push_back(f + 0.001 * i);
  return s;
}

}  // namespace

TEST_CASE("embedding file round trip") {
  ScratchDir dir("roundtrip");
  std::vector<float> values(3 * 4 * 2);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = 0.25f * static_cast<float>(i) - 1.0f;
  const auto p = dir.path / "a.emb";
  write_embeddings(p, 3, 4, 2, values);

  const std::string raw = slurp(p);
  REQUIRE(raw.size() == kEmbeddingHeaderBytes + values.size() * 4);
  CHECK(std::memcmp(raw.data(), "UNITEEMB", 8) == 0);

  const auto seq = load_embeddings(p);
  CHECK(seq.header.frame_count == 3);
  CHECK(seq.header.t_s == 4);
  CHECK(seq.header.d_s == 2);
  for (std::size_t i = 0; i < values.size(); ++i) CHECK(seq.values[i] == static_cast<double>(values[i]));
  CHECK(seq.frame(2)[0] == static_cast<double>(values[16]));
  CHECK_THROWS_AS(seq.frame(3), DataError);

  CHECK_THROWS_AS(write_embeddings(p, 3, 4, 1, values), DimensionError);
  values[5] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(write_embeddings(p, 3, 4, 2, values), NumericError);
}

TEST_CASE("embedding fault injection reports byte offsets") {
  ScratchDir dir("faults");
  std::vector<float> values(2 * 4 * 2, 0.5f);
  const auto good = dir.path / "good.emb";
  write_embeddings(good, 2, 4, 2, values);
  const std::string raw = slurp(good);
  const auto bad = dir.path / "bad.emb";

  std::string s = raw;
  s[3] = 'X';
  dump(bad, s);
  CHECK(parse_offset(bad) == 0);

  s = raw;
  put_u32(s, 8, 2);
  dump(bad, s);
  CHECK(parse_offset(bad) == 8);

  s = raw;
  put_u32(s, 24, 7);
  dump(bad, s);
  CHECK(parse_offset(bad) == 24);

  dump(bad, raw.substr(0, 20));
  CHECK(parse_offset(bad) != std::numeric_limits<std::uint64_t>::max());

  dump(bad, raw.substr(0, raw.size() - 4));
  CHECK_THROWS_AS(load_embeddings(bad), ParseError);

  dump(bad, raw + "xx");
  CHECK_THROWS_AS(load_embeddings(bad), ParseError);

  s = raw;
  put_u32(s, kEmbeddingHeaderBytes + 4 * 5, 0x7fc00000u);  // NaN
  dump(bad, s);
  CHECK(parse_offset(bad) == kEmbeddingHeaderBytes + 4 * 5);

  s = raw;
  put_u32(s, kEmbeddingHeaderBytes + 4 * 9, 0x7f800000u);  // +inf
  dump(bad, s);
  CHECK(parse_offset(bad) == kEmbeddingHeaderBytes + 4 * 9);

  CHECK_THROWS_AS(load_embeddings(dir.path / "missing.emb"), DataError);
}

TEST_CASE("manifest parsing") {
  const std::string ok = R"([
    {"video_id": "a", "embedding_path": "emb/a.emb", "label": 0, "dataset": "d1", "generator": "real", "split": "train"},
    {"video_id": "b", "embedding_path": "/abs/b.emb", "label": 1, "dataset": "d1", "generator": "g", "split": "test"}
  ])";
  const auto m = parse_manifest(ok, "/base");
  REQUIRE(m.entries.size() == 2);
  CHECK(m.resolve(m.entries[0]) == fs::path("/base/emb/a.emb"));
  CHECK(m.resolve(m.entries[1]) == fs::path("/abs/b.emb"));
  CHECK(m.split(Split::Test).size() == 1);
  CHECK(m.split(Split::Val).empty());
  CHECK_NOTHROW(m.validate_labels(2));
  CHECK_THROWS_AS(m.validate_labels(1), DataError);

  const std::string extra =
      R"([{"video_id": "a", "embedding_path": "a.emb", "label": 0, "dataset": "d", "generator": "r", "split": "val", "fps": 30}])";
  CHECK_THROWS_AS(parse_manifest(extra, "."), DataError);
  const auto lenient = parse_manifest(extra, ".", false);
  CHECK(lenient.entries.size() == 1);
  CHECK(lenient.warnings.size() == 1);

  const std::string dup = R"([
    {"video_id": "a", "embedding_path": "a.emb", "label": 0, "dataset": "d", "generator": "r", "split": "train"},
    {"video_id": "a", "embedding_path": "b.emb", "label": 1, "dataset": "d", "generator": "g", "split": "train"}
  ])";
  CHECK_THROWS_AS(parse_manifest(dup, "."), DataError);
  CHECK_THROWS_AS(parse_manifest(dup, ".", false), DataError);

  CHECK_THROWS_AS(parse_manifest("{}", "."), DataError);
  CHECK_THROWS_AS(parse_manifest("[", "."), DataError);
  CHECK_THROWS_AS(parse_manifest(R"([{"video_id": "a"}])", "."), DataError);
  CHECK_THROWS_AS(
      parse_manifest(
          R"([{"video_id": "a", "embedding_path": "a", "label": -1, "dataset": "d", "generator": "r", "split": "train"}])",
          "."),
      DataError);
  CHECK_THROWS_AS(
      parse_manifest(
          R"([{"video_id": "a", "embedding_path": "a", "label": 0, "dataset": "d", "generator": "r", "split": "dev"}])",
          "."),
      DataError);
}

TEST_CASE("manifest write and load") {
  ScratchDir dir("manifest");
  const std::vector<ManifestEntry> entries{{"v1", "v1.emb", 0, "ds", "real", Split::Train},
                                           {"v2", "v2.emb", 1, "ds", "gen", Split::Val}};
  write_manifest(dir.path / "manifest.json", entries);
  const auto m = load_manifest(dir.path / "manifest.json");
  CHECK(m.entries == entries);
  CHECK(m.base_dir == dir.path);
}

TEST_CASE("segmentation") {
  struct Case {
    std::uint32_t raw;
    std::size_t n_f, stride, segments, last_real;
  };
  for (const auto& c : {Case{256, 32, 2, 4, 32}, Case{10, 32, 2, 1, 5}, Case{300, 32, 2, 5, 22}, Case{1, 4, 2, 1, 1},
                        Case{7, 3, 1, 3, 1}}) {
    CAPTURE(c.raw);
    const auto seq = ramp_sequence(c.raw);
    const auto segs = segment_video(seq, c.n_f, c.stride, 1, "v");
    REQUIRE(segs.size() == c.segments);
    CHECK(segment_count(c.raw, c.n_f, c.stride) == c.segments);
    CHECK(segs.back().real_frames == c.last_real);
    for (std::size_t s = 0; s < segs.size(); ++s) {
      CHECK(segs[s].label == 1);
      CHECK(segs[s].start_frame == s * c.n_f);
      CHECK(segs[s].xi.shape() == Shape{c.n_f, 4, 2});
      for (std::size_t j = 0; j < c.n_f; ++j) {
        const std::size_t strided = s * c.n_f + std::min(j, segs[s].real_frames - 1);
        const std::size_t raw_index = c.raw / c.stride == 0 ? 0 : strided * c.stride;
        CHECK(segs[s].xi[j * 8 + 3] == doctest::Approx(raw_index + 0.003));
      }
    }
  }
  CHECK_THROWS_AS(segment_video(ramp_sequence(4), 0, 1, 0, "v"), ValidationError);
  CHECK_THROWS_AS(segment_video(ramp_sequence(4), 2, 0, 0, "v"), ValidationError);
  CHECK_THROWS_AS(segment_video(ramp_sequence(0), 2, 1, 0, "v"), DataError);
}

TEST_CASE("truncate_frames") {
  const auto seg = segment_video(ramp_sequence(8), 4, 1, 0, "v").front();
  const auto t = truncate_frames(seg, 2);
  for (std::size_t j = 0; j < 4; ++j) CHECK(t.xi[j * 8] == static_cast<double>(std::min<std::size_t>(j, 1)));
  CHECK(t.real_frames == 2);
  CHECK(truncate_frames(seg, 4).xi.node() == seg.xi.node());
  CHECK_THROWS_AS(truncate_frames(seg, 0), ValidationError);
  CHECK_THROWS_AS(truncate_frames(seg, 5), ValidationError);
}

TEST_CASE("make_batches") {
  const auto a = make_batches(103, 16, 5, 0);
  REQUIRE(a.size() == 7);
  CHECK(a.back().size() == 7);
  std::multiset<std::size_t> seen;
  for (const auto& b : a) seen.insert(b.begin(), b.end());
  CHECK(seen.size() == 103);
  for (std::size_t i = 0; i < 103; ++i) CHECK(seen.count(i) == 1);

  CHECK(make_batches(103, 16, 5, 0) == a);
  CHECK(make_batches(103, 16, 5, 1) != a);
  CHECK(make_batches(103, 16, 6, 0) != a);

  // Position of item 0 after shuffling is close to uniform over 10 slots.
  std::vector<int> hits(10, 0);
  for (std::uint64_t e = 0; e < 5000; ++e) {
    const auto b = make_batches(10, 10, 1, e).front();
    hits[static_cast<std::size_t>(std::find(b.begin(), b.end(), 0) - b.begin())]++;
  }
  for (int h : hits) CHECK(std::abs(h - 500) < 100);

  CHECK(make_batches(0, 4, 0, 0).empty());
  CHECK_THROWS_AS(make_batches(4, 0, 0, 0), ValidationError);
}

TEST_CASE("synthetic dataset") {
  ScratchDir dir("synth");
  SynthSpec spec = default_synth_spec(3);
  for (auto& r : spec.recipes) r.count = 6;
  CHECK_NOTHROW(spec.validate());

  const auto m1 = synth_dataset(spec, dir.path / "one");
  const auto m2 = synth_dataset(spec, dir.path / "two");
  REQUIRE(m1.entries.size() == 18);
  CHECK(m1.entries == m2.entries);
  for (const auto& e : m1.entries) {
    CHECK(slurp(m1.resolve(e)) == slurp(m2.resolve(e)));
    const auto seq = load_embeddings(m1.resolve(e));
    CHECK(seq.header.t_s == spec.t_s);
    CHECK(seq.frame_count() >= spec.frames_min);
    CHECK(seq.frame_count() <= spec.frames_max);
    if (e.generator == "background") CHECK(e.split == Split::Test);
  }
  const auto reloaded = load_manifest(dir.path / "one" / "manifest.json");
  CHECK(reloaded.entries == m1.entries);

  SynthSpec other = spec;
  other.seed = 4;
  const auto m3 = synth_dataset(other, dir.path / "three");
  CHECK(slurp(m3.resolve(m3.entries[0])) != slurp(m1.resolve(m1.entries[0])));

  CHECK(parse_synth_spec(synth_spec_json(spec)).recipes.size() == 3);
  CHECK(synth_spec_json(parse_synth_spec(synth_spec_json(spec))) == synth_spec_json(spec));

  const auto mask = face_mask(16);
  CHECK(std::count(mask.begin(), mask.end(), true) == 4);
  CHECK(mask[5]);
  CHECK_FALSE(mask[0]);

  double norm = 0;
  for (double v : signature_direction(spec)) norm += v * v;
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("synth spec validation names the field") {
  auto expect = [](const std::string& json, const std::string& field) {
    try {
      parse_synth_spec(json).validate();
      FAIL("accepted " << json);
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  const std::string recipe = R"("recipes": [{"name": "r", "label": 0, "count": 2}])";
  expect(R"({"t_s": 15, )" + recipe + "}", "t_s");
  expect(R"({"noise": -1, )" + recipe + "}", "noise");
  expect(R"({"bogus": 1, )" + recipe + "}", "bogus");
  expect(R"({"recipes": []})", "recipes");
  expect(R"({"recipes": [{"name": "r", "region": "sky"}]})", "region");
  expect(R"({"recipes": [{"name": "r", "amplitude": -2}]})", "amplitude");
  expect(R"({"frames_min": 5, "frames_max": 2, )" + recipe + "}", "frames_min");
  expect(R"({"temporal_rho": 1.0, )" + recipe + "}", "temporal_rho");
  expect("not json", "spec");
}
