#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "unite/tensor.hpp"

namespace unite {

/// Architecture hyperparameters.
struct ModelConfig {
  std::size_t n_f = 64;      ///< frames per segment
  std::size_t t_s = 729;     ///< encoder tokens per frame (square grid)
  std::size_t d_s = 1152;    ///< encoder feature width
  std::size_t grid_g = 3;    ///< pooled cells per side
  std::size_t d_model = 192;
  std::size_t n_h = 12;
  std::size_t depth = 4;
  std::size_t mlp_ratio = 4;
  double dropout_rate = 0.1;
  std::size_t n_c = 2;

  /// Throws ValidationError naming the first offending field.
  void validate() const;

  std::size_t token_side() const;
  std::size_t cells() const { return grid_g * grid_g; }
  std::size_t seq_len() const { return n_f * cells(); }
  std::size_t head_dim() const { return d_model / n_h; }

  bool operator==(const ModelConfig&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// First-block attention. `weights` is [n_h, L, L] with rows summing to one;
/// `spatial_view` is [n_h, n_f, cells], the attention each token receives
/// averaged over all queries. Both stay on the autodiff graph.
struct AttentionBundle {
  Tensor weights;
  Tensor spatial_view;
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  ///< required when training with dropout
  bool positional_encoding = true;
};

struct ForwardResult {
  Tensor logits;   ///< [n_c]
  Tensor reduced;  ///< reduce_tokens output, [n_f, cells, d_model]
  AttentionBundle attention;
};

/// Parameters in a fixed, config-determined order. Forward never mutates them.
class UniteModel {
 public:
  UniteModel() = default;
  /// Truncated-normal (std 0.02) weights, zero biases, unit layer-norm gains.
  static UniteModel initialize(const ModelConfig& config, std::uint64_t seed);
  /// Adopts `params`, which must match parameter_layout(config) in name and shape.
  UniteModel(ModelConfig config, std::vector<NamedTensor> params);

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::vector<Tensor> parameter_tensors() const;
  const Tensor& param(const std::string& name) const;

  /// Same config, different tensors (same order as parameters()).
  UniteModel with_tensors(std::span<const Tensor> tensors) const;

  std::size_t parameter_count() const;

 private:
  ModelConfig config_;
  std::vector<NamedTensor> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ParameterSpec {
  std::string name;
  Shape shape;
};

/// Names and shapes of every parameter for `config`, in checkpoint order.
std::vector<ParameterSpec> parameter_layout(const ModelConfig& config);
std::size_t parameter_count(const ModelConfig& config);

/// Sine-cosine table [n_f, d]: even columns sin(j / 10000^(2i/d)), odd columns
/// the matching cos. Throws ValidationError for odd d.
Tensor positional_encoding(std::size_t n_f, std::size_t d);

/// Average-pools each frame's token grid to grid_g x grid_g cells and applies
/// the input projection. [n_f, t_s, d_s] -> [n_f, cells, d_model].
Tensor reduce_tokens(const Tensor& segment, const UniteModel& model);

ForwardResult forward(const Tensor& segment, const UniteModel& model, const ForwardOptions& options = {});

struct Heatmap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;  ///< row-major, in [0, 1]
  double at(std::size_t row, std::size_t col) const { return values[row * width + col]; }
};

/// spatial_view[head, frame] as a grid_g x grid_g map, min-max normalized
/// (an all-equal map becomes all zeros), nearest-neighbor upsampled to
/// `size` x `size` pixels. size == 0 keeps the cell grid.
Heatmap heatmap(const AttentionBundle& attention, std::size_t grid_g, std::size_t head, std::size_t frame,
                std::size_t size = 0);

}  // namespace unite
