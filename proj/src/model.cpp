#include "unite/model.hpp"

#include <algorithm>
#include <cmath>

#include "unite/errors.hpp"
#include "unite/ops.hpp"
#include "unite/random.hpp"

namespace unite {

namespace {

constexpr double kLayerNormEps = 1e-5;

std::string block_prefix(std::size_t b) { return "blocks." + std::to_string(b) + "."; }

bool is_weight_matrix(const ParameterSpec& spec) { return spec.shape.size() == 2; }

bool is_layer_norm_gain(const std::string& name) { return name.ends_with(".gain"); }

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ValidationError("model." + field + ": " + why);
  };
  if (n_f == 0) fail("n_f", "must be at least 1");
  if (t_s == 0) fail("t_s", "must be at least 1");
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(t_s))));
  if (side * side != t_s) fail("t_s", std::to_string(t_s) + " is not a perfect square");
  if (d_s == 0) fail("d_s", "must be at least 1");
  if (grid_g == 0 || side % grid_g != 0) {
    fail("grid_g", std::to_string(grid_g) + " does not divide the token grid side " + std::to_string(side));
  }
  if (n_h == 0) fail("n_h", "must be at least 1");
  if (d_model == 0 || d_model % n_h != 0) {
    fail("d_model", std::to_string(d_model) + " is not divisible by n_h=" + std::to_string(n_h));
  }
  if (d_model % 2 != 0) fail("d_model", "must be even for the positional encoding");
  if (depth == 0) fail("depth", "must be at least 1");
  if (mlp_ratio == 0) fail("mlp_ratio", "must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate", "must be in [0, 1)");
  if (n_c != 2 && n_c != 3) fail("n_c", "must be 2 or 3, got " + std::to_string(n_c));
}

std::size_t ModelConfig::token_side() const {
  return static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(t_s))));
}

std::vector<ParameterSpec> parameter_layout(const ModelConfig& c) {
  const std::size_t d = c.d_model, hidden = c.mlp_ratio * c.d_model;
  std::vector<ParameterSpec> layout;
  layout.push_back({"input_proj.weight", {c.d_s, d}});
  layout.push_back({"input_proj.bias", {d}});
  for (std::size_t b = 0; b < c.depth; ++b) {
    const auto p = block_prefix(b);
    layout.push_back({p + "ln1.gain", {d}});
    layout.push_back({p + "ln1.bias", {d}});
    for (const char* proj : {"q", "k", "v", "o"}) {
      layout.push_back({p + "attn." + proj + ".weight", {d, d}});
      layout.push_back({p + "attn." + proj + ".bias", {d}});
    }
    layout.push_back({p + "ln2.gain", {d}});
    layout.push_back({p + "ln2.bias", {d}});
    layout.push_back({p + "mlp.fc1.weight", {d, hidden}});
    layout.push_back({p + "mlp.fc1.bias", {hidden}});
    layout.push_back({p + "mlp.fc2.weight", {hidden, d}});
    layout.push_back({p + "mlp.fc2.bias", {d}});
  }
  layout.push_back({"head.weight", {d, c.n_c}});
  layout.push_back({"head.bias", {c.n_c}});
  return layout;
}

std::size_t parameter_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& spec : parameter_layout(config)) n += shape_size(spec.shape);
  return n;
}

UniteModel UniteModel::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::vector<NamedTensor> params;
  for (auto& spec : parameter_layout(config)) {
    std::vector<double> values(shape_size(spec.shape), 0.0);
    if (is_weight_matrix(spec)) {
      for (auto& v : values) v = truncated_normal(rng, 0.02);
    } else if (is_layer_norm_gain(spec.name)) {
      std::fill(values.begin(), values.end(), 1.0);
    }
    params.push_back({spec.name, Tensor::parameter(spec.shape, std::move(values))});
  }
  return UniteModel(config, std::move(params));
}

UniteModel::UniteModel(ModelConfig config, std::vector<NamedTensor> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto layout = parameter_layout(config_);
  if (layout.size() != params_.size()) {
    throw ValidationError("model: expected " + std::to_string(layout.size()) + " parameter tensors, got " +
                          std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].name != params_[i].name || layout[i].shape != params_[i].value.shape()) {
      throw DimensionError("model: parameter " + std::to_string(i) + " is " + params_[i].name +
                           shape_string(params_[i].value.shape()) + ", expected " + layout[i].name +
                           shape_string(layout[i].shape));
    }
    index_[params_[i].name] = i;
  }
}

std::vector<Tensor> UniteModel::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

const Tensor& UniteModel::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("model: no parameter named " + name);
  return params_[it->second].value;
}

UniteModel UniteModel::with_tensors(std::span<const Tensor> tensors) const {
  if (tensors.size() != params_.size()) {
    throw DimensionError("with_tensors: expected " + std::to_string(params_.size()) + " tensors, got " +
                         std::to_string(tensors.size()));
  }
  std::vector<NamedTensor> params;
  params.reserve(params_.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) params.push_back({params_[i].name, tensors[i]});
  return UniteModel(config_, std::move(params));
}

std::size_t UniteModel::parameter_count() const { return unite::parameter_count(config_); }

Tensor positional_encoding(std::size_t n_f, std::size_t d) {
  if (d % 2 != 0) throw ValidationError("positional_encoding: width must be even, got " + std::to_string(d));
  std::vector<double> pe(n_f * d);
  for (std::size_t j = 0; j < n_f; ++j) {
    for (std::size_t i = 0; 2 * i < d; ++i) {
      const double angle =
          static_cast<double>(j) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      pe[j * d + 2 * i] = std::sin(angle);
      pe[j * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::constant({n_f, d}, std::move(pe));
}

Tensor reduce_tokens(const Tensor& segment, const UniteModel& model) {
  const auto& c = model.config();
  if (segment.shape() != Shape{c.n_f, c.t_s, c.d_s}) {
    throw DimensionError("reduce_tokens: segment is " + shape_string(segment.shape()) + ", config expects " +
                         shape_string({c.n_f, c.t_s, c.d_s}));
  }
  const Tensor pooled = ops::pool_token_grid(segment, c.grid_g);
  const Tensor projected =
      ops::add(ops::matmul(pooled, model.param("input_proj.weight")), model.param("input_proj.bias"));
  return ops::reshape(projected, {c.n_f, c.cells(), c.d_model});
}

namespace {

struct AttentionOutput {
  Tensor output;                  // [L, d_model], before the output projection's residual add
  std::vector<Tensor> probabilities;  // n_h tensors of [L, L]
};

AttentionOutput self_attention(const Tensor& x, const UniteModel& model, const std::string& prefix) {
  const auto& c = model.config();
  auto proj = [&](const char* name) {
    return ops::add(ops::matmul(x, model.param(prefix + "attn." + name + ".weight")),
                    model.param(prefix + "attn." + name + ".bias"));
  };
  const Tensor q = proj("q"), k = proj("k"), v = proj("v");
  const std::size_t dh = c.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  AttentionOutput out;
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < c.n_h; ++h) {
    const Tensor qh = ops::slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor kh = ops::slice_cols(k, h * dh, (h + 1) * dh);
    const Tensor vh = ops::slice_cols(v, h * dh, (h + 1) * dh);
    const Tensor scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt_dh);
    const Tensor probs = ops::softmax(scores, 1);
    heads.push_back(ops::matmul(probs, vh));
    out.probabilities.push_back(probs);
  }
  out.output = ops::add(ops::matmul(ops::concat_cols(heads), model.param(prefix + "attn.o.weight")),
                        model.param(prefix + "attn.o.bias"));
  return out;
}

}  // namespace

ForwardResult forward(const Tensor& segment, const UniteModel& model, const ForwardOptions& options) {
  const auto& c = model.config();
  if (options.training && c.dropout_rate > 0.0 && options.rng == nullptr) {
    throw ValidationError("forward: training with dropout needs an rng");
  }
  ForwardResult result;
  result.reduced = reduce_tokens(segment, model);
  Tensor x = ops::reshape(result.reduced, {c.seq_len(), c.d_model});

  if (options.positional_encoding) {
    // Frame j's row is shared by all of that frame's cells.
    const Tensor pe = positional_encoding(c.n_f, c.d_model);
    std::vector<double> tiled(c.seq_len() * c.d_model);
    for (std::size_t f = 0; f < c.n_f; ++f)
      for (std::size_t cell = 0; cell < c.cells(); ++cell)
        std::copy_n(pe.data().data() + f * c.d_model, c.d_model,
                    tiled.data() + (f * c.cells() + cell) * c.d_model);
    x = ops::add(x, Tensor::constant({c.seq_len(), c.d_model}, std::move(tiled)));
  }

  for (std::size_t b = 0; b < c.depth; ++b) {
    const auto p = block_prefix(b);
    try {
      const Tensor h1 = ops::layer_norm(x, model.param(p + "ln1.gain"), model.param(p + "ln1.bias"), kLayerNormEps);
      auto attn = self_attention(h1, model, p);
      std::mt19937_64 unused(0);
      const Tensor attn_out =
          ops::dropout(attn.output, c.dropout_rate, options.training, options.rng ? *options.rng : unused);
      x = ops::add(x, attn_out);

      const Tensor h2 = ops::layer_norm(x, model.param(p + "ln2.gain"), model.param(p + "ln2.bias"), kLayerNormEps);
      const Tensor hidden =
          ops::gelu(ops::add(ops::matmul(h2, model.param(p + "mlp.fc1.weight")), model.param(p + "mlp.fc1.bias")));
      x = ops::add(x, ops::add(ops::matmul(hidden, model.param(p + "mlp.fc2.weight")), model.param(p + "mlp.fc2.bias")));

      if (b == 0) {
        result.attention.weights = ops::stack(attn.probabilities);
        // Column means: attention each key receives, averaged over queries.
        // Each probability row sums to one, so every head's view sums to one.
        std::vector<Tensor> received;
        received.reserve(c.n_h);
        for (const auto& probs : attn.probabilities) received.push_back(ops::mean(probs, 0));
        result.attention.spatial_view = ops::reshape(ops::stack(received), {c.n_h, c.n_f, c.cells()});
      }
    } catch (const NumericError& e) {
      throw NumericError("encoder block " + std::to_string(b) + ": " + e.what());
    }
  }

  const Tensor pooled = ops::reshape(ops::mean(x, 0), {1, c.d_model});
  const Tensor logits = ops::add(ops::matmul(pooled, model.param("head.weight")), model.param("head.bias"));
  result.logits = ops::reshape(logits, {c.n_c});
  return result;
}

Heatmap heatmap(const AttentionBundle& attention, std::size_t grid_g, std::size_t head, std::size_t frame,
                std::size_t size) {
  const auto& sv = attention.spatial_view;
  if (sv.rank() != 3 || sv.dim(2) != grid_g * grid_g) {
    throw DimensionError("heatmap: spatial view " + shape_string(sv.shape()) + " does not match grid " +
                         std::to_string(grid_g));
  }
  if (head >= sv.dim(0)) {
    throw ValidationError("heatmap: head " + std::to_string(head) + " out of range (n_h=" + std::to_string(sv.dim(0)) + ")");
  }
  if (frame >= sv.dim(1)) {
    throw ValidationError("heatmap: frame " + std::to_string(frame) + " out of range (n_f=" + std::to_string(sv.dim(1)) +
                          ")");
  }
  const std::size_t cells = grid_g * grid_g;
  const auto row = sv.data().subspan((head * sv.dim(1) + frame) * cells, cells);
  const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
  const double range = *hi - *lo;

  std::vector<double> grid(cells, 0.0);
  if (range > 0.0) {
    for (std::size_t i = 0; i < cells; ++i) grid[i] = (row[i] - *lo) / range;
  }
  Heatmap map;
  map.width = map.height = size == 0 ? grid_g : size;
  map.values.resize(map.width * map.height);
  for (std::size_t y = 0; y < map.height; ++y)
    for (std::size_t x = 0; x < map.width; ++x) {
      const std::size_t cy = y * grid_g / map.height, cx = x * grid_g / map.width;
      map.values[y * map.width + x] = grid[cy * grid_g + cx];
    }
  return map;
}

}  // namespace unite
