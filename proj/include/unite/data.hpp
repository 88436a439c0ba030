#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "unite/tensor.hpp"

namespace unite {

// ---------------------------------------------------------------------------
// Embedding store
// ---------------------------------------------------------------------------

inline constexpr char kEmbeddingMagic[8] = {'U', 'N', 'I', 'T', 'E', 'E', 'M', 'B'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 1;
inline constexpr std::size_t kEmbeddingHeaderBytes = 28;

/// Fixed 28-byte little-endian header: magic, version, frame_count, t_s, d_s,
/// dtype code. The f32 body follows, frame-major then token then feature.
struct EmbeddingHeader {
  std::uint32_t version = kEmbeddingVersion;
  std::uint32_t frame_count = 0;
  std::uint32_t t_s = 0;
  std::uint32_t d_s = 0;
  std::uint32_t dtype = kDtypeF32;

  std::size_t frame_values() const { return static_cast<std::size_t>(t_s) * d_s; }
  std::size_t body_bytes() const { return static_cast<std::size_t>(frame_count) * frame_values() * 4; }
};

/// Per-frame embeddings of one video, widened to float64.
struct FrameSequence {
  EmbeddingHeader header;
  std::vector<double> values;  ///< frame_count * t_s * d_s

  std::size_t frame_count() const { return header.frame_count; }
  std::span<const double> frame(std::size_t index) const;
};

/// Writes `values` (frame_count * t_s * d_s floats) as an embedding file.
/// Throws NumericError on non-finite input.
void write_embeddings(const std::filesystem::path& path, std::uint32_t frame_count, std::uint32_t t_s, std::uint32_t d_s,
                      std::span<const float> values);

/// Reads and validates an embedding file. Bad magic, unknown version or dtype,
/// truncation and non-finite values raise ParseError with a byte offset.
FrameSequence load_embeddings(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

enum class Split { Train, Val, Test };

Split parse_split(const std::string& text);
std::string to_string(Split split);

struct ManifestEntry {
  std::string video_id;
  std::string embedding_path;  ///< as written; relative paths resolve against the manifest directory
  std::size_t label = 0;
  std::string dataset;
  std::string generator;
  Split split = Split::Train;

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;
  std::vector<std::string> warnings;  ///< unknown fields seen in lenient mode

  std::filesystem::path resolve(const ManifestEntry& entry) const;
  std::vector<ManifestEntry> split(Split which) const;
  /// Rejects labels >= n_c.
  void validate_labels(std::size_t n_c) const;
};

/// Parses a JSON array of entry records. Unknown fields are errors when
/// `strict`, warnings otherwise. Duplicate video ids are always rejected.
Manifest load_manifest(const std::filesystem::path& path, bool strict = true);
Manifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir, bool strict = true);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// ---------------------------------------------------------------------------
// Segments and batches
// ---------------------------------------------------------------------------

struct VideoSegment {
  Tensor xi;  ///< [n_f, t_s, d_s], constant
  std::size_t label = 0;
  std::string source_video;
  std::size_t start_frame = 0;  ///< index into the strided frame sequence
  std::size_t real_frames = 0;  ///< frames before padding
};

/// Keeps every `stride`-th frame, then cuts consecutive non-overlapping windows
/// of n_f frames. A short final window is padded by repeating its last real
/// frame. Every segment carries the video's label.
std::vector<VideoSegment> segment_video(const FrameSequence& frames, std::size_t n_f, std::size_t stride,
                                        std::size_t label, const std::string& video_id);

/// Number of segments segment_video produces for `raw_frames` frames.
std::size_t segment_count(std::size_t raw_frames, std::size_t n_f, std::size_t stride);

/// Keeps the first `keep` frames of a segment and repeat-pads the rest.
VideoSegment truncate_frames(const VideoSegment& segment, std::size_t keep);

/// Deterministic shuffle of [0, n) keyed by (seed, epoch), cut into batches.
/// The final short batch is kept.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                   std::uint64_t epoch);

// ---------------------------------------------------------------------------
// Synthetic embeddings
// ---------------------------------------------------------------------------

/// Where a recipe plants its class signature.
enum class Region { None, Face, Background, Global };

Region parse_region(const std::string& text);
std::string to_string(Region region);

struct SynthRecipe {
  std::string name;
  std::size_t label = 0;
  std::size_t count = 0;
  Region region = Region::None;
  bool temporal = false;         ///< break frame-to-frame coherence
  double amplitude = 1.0;        ///< signature strength along the signature direction
  std::string dataset = "synth";
  std::string generator;         ///< defaults to name
  std::string split;             ///< empty: use the SynthSpec split fractions
};

struct SynthSpec {
  std::uint64_t seed = 0;
  std::uint32_t t_s = 16;
  std::uint32_t d_s = 8;
  std::uint32_t frames_min = 8;
  std::uint32_t frames_max = 16;
  double noise = 0.5;            ///< per-token noise level
  double temporal_rho = 0.9;     ///< AR(1) coherence of real content across frames
  double train_fraction = 0.7;
  double val_fraction = 0.0;
  std::vector<SynthRecipe> recipes;

  void validate() const;
};

/// Real, face-region and background-region recipes (~200 videos); the
/// background recipe is entirely in the test split.
SynthSpec default_synth_spec(std::uint64_t seed = 0);

SynthSpec parse_synth_spec(const std::string& json_text);
SynthSpec load_synth_spec(const std::filesystem::path& path);
std::string synth_spec_json(const SynthSpec& spec);

/// Token indices of the central "face" region of a side x side grid; the rest
/// is background.
std::vector<bool> face_mask(std::size_t t_s);

/// The shared unit signature direction used by all fake recipes.
std::vector<double> signature_direction(const SynthSpec& spec);

/// Writes manifest.json and one .emb file per video under out_dir.
Manifest synth_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace unite
