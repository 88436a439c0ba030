#include "unite/losses.hpp"

#include <set>
#include <string>

#include "unite/errors.hpp"
#include "unite/ops.hpp"

namespace unite {

void ADConfig::validate(std::size_t n_c) const {
  if (!(eta > 0.0 && eta <= 1.0)) throw ValidationError("ad.eta: must be in (0, 1], got " + std::to_string(eta));
  if (delta_within.size() != n_c) {
    throw ValidationError("ad.delta_within: expected " + std::to_string(n_c) + " values (one per class), got " +
                          std::to_string(delta_within.size()));
  }
  if (lambda_ce < 0.0) throw ValidationError("ad.lambda_ce: must be non-negative");
  if (lambda_ad < 0.0) throw ValidationError("ad.lambda_ad: must be non-negative");
}

CenterState CenterState::zeros(std::size_t n_c, std::size_t n_h, std::size_t n_f) {
  CenterState s;
  s.n_c = n_c;
  s.n_h = n_h;
  s.n_f = n_f;
  s.centers.assign(n_c * n_h * n_f, 0.0);
  return s;
}

std::span<const double> CenterState::center(std::size_t cls) const {
  if (cls >= n_c) throw ValidationError("center: class " + std::to_string(cls) + " out of range");
  return std::span<const double>(centers).subspan(cls * n_h * n_f, n_h * n_f);
}

Tensor CenterState::center_tensor(std::size_t cls) const {
  const auto c = center(cls);
  return Tensor::constant({n_h, n_f}, std::vector<double>(c.begin(), c.end()));
}

Tensor pool_attention(const AttentionBundle& attention, const Tensor& reduced) {
  const auto& sv = attention.spatial_view;
  if (sv.rank() != 3 || reduced.rank() != 3 || sv.dim(1) != reduced.dim(0) || sv.dim(2) != reduced.dim(1)) {
    throw DimensionError("pool_attention: spatial view " + shape_string(sv.shape()) + " does not match features " +
                         shape_string(reduced.shape()));
  }
  const Tensor cell_totals = ops::sum(reduced, 2);             // [n_f, cells]
  return ops::sum(ops::mul(sv, cell_totals), 2);               // [n_h, n_f]
}

CenterState update_centers(const CenterState& state, std::span<const double> pooled, std::span<const std::size_t> labels,
                           const ADConfig& config) {
  if (labels.empty()) throw ValidationError("update_centers: empty batch");
  const std::size_t block = state.n_h * state.n_f;
  if (pooled.size() != labels.size() * block) {
    throw DimensionError("update_centers: " + std::to_string(pooled.size()) + " pooled values for " +
                         std::to_string(labels.size()) + " samples of " + std::to_string(block));
  }
  std::vector<std::vector<double>> sums(state.n_c, std::vector<double>(block, 0.0));
  std::vector<std::size_t> counts(state.n_c, 0);
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] >= state.n_c) {
      throw ValidationError("update_centers: label " + std::to_string(labels[b]) + " out of range");
    }
    ++counts[labels[b]];
    for (std::size_t i = 0; i < block; ++i) sums[labels[b]][i] += pooled[b * block + i];
  }
  CenterState next = state;
  for (std::size_t c = 0; c < state.n_c; ++c) {
    if (counts[c] == 0) continue;
    const double inv = 1.0 / static_cast<double>(counts[c]);
    for (std::size_t i = 0; i < block; ++i) {
      double& center = next.centers[c * block + i];
      center = center - config.eta * (center - sums[c][i] * inv);
    }
  }
  next.tau = state.tau + 1;
  return next;
}

Tensor within_loss(const Tensor& pooled, const Tensor& center, double delta_within) {
  if (pooled.shape() != center.shape()) {
    throw DimensionError("within_loss: " + shape_string(pooled.shape()) + " vs center " + shape_string(center.shape()));
  }
  return ops::relu(ops::add_scalar(ops::l2_norm(ops::sub(pooled, center)), -delta_within));
}

Tensor between_loss(const Tensor& center, double delta_between) {
  if (center.rank() != 2 || center.dim(0) < 2) {
    throw DimensionError("between_loss: needs [n_h >= 2, n_f], got " + shape_string(center.shape()));
  }
  const std::size_t n_h = center.dim(0), n_f = center.dim(1);
  const Tensor diff = ops::sub(ops::reshape(center, {n_h, 1, n_f}), ops::reshape(center, {1, n_h, n_f}));
  const Tensor hinge = ops::relu(ops::add_scalar(ops::scale(ops::l2_norm(diff, 2), -1.0), delta_between));
  std::vector<double> off_diagonal(n_h * n_h, 1.0);
  for (std::size_t k = 0; k < n_h; ++k) off_diagonal[k * n_h + k] = 0.0;
  return ops::sum(ops::mul(hinge, Tensor::constant({n_h, n_h}, std::move(off_diagonal))));
}

ADLoss ad_loss(const Tensor& pooled_batch, std::span<const std::size_t> labels, const CenterState& state,
               const ADConfig& config) {
  if (pooled_batch.rank() != 3 || pooled_batch.dim(0) != labels.size() || pooled_batch.dim(1) != state.n_h ||
      pooled_batch.dim(2) != state.n_f) {
    throw DimensionError("ad_loss: pooled batch " + shape_string(pooled_batch.shape()) + " does not match " +
                         std::to_string(labels.size()) + " labels and centers [" + std::to_string(state.n_h) + "," +
                         std::to_string(state.n_f) + "]");
  }
  if (labels.empty()) throw ValidationError("ad_loss: empty batch");
  if (config.delta_within.size() != state.n_c) throw ValidationError("ad_loss: delta_within does not match n_c");

  std::vector<Tensor> within_terms;
  std::set<std::size_t> present;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const std::size_t cls = labels[b];
    if (cls >= state.n_c) throw ValidationError("ad_loss: label " + std::to_string(cls) + " out of range");
    present.insert(cls);
    within_terms.push_back(within_loss(ops::select(pooled_batch, b), state.center_tensor(cls), config.delta_within[cls]));
  }
  ADLoss loss;
  loss.within = ops::mean(ops::stack(within_terms));
  std::vector<Tensor> between_terms;
  for (std::size_t cls : present) between_terms.push_back(between_loss(state.center_tensor(cls), config.delta_between));
  loss.between = ops::sum(ops::stack(between_terms));
  loss.total = ops::add(loss.within, loss.between);
  return loss;
}

Tensor ce_loss(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("ce_loss: logits " + shape_string(logits.shape()) + " for " + std::to_string(labels.size()) +
                         " labels");
  }
  return ops::scale(ops::mean(ops::gather_rows(ops::log_softmax(logits, 1), labels)), -1.0);
}

UniteLoss unite_loss(const Tensor& logits, const Tensor& pooled_batch, std::span<const std::size_t> labels,
                     const CenterState& state, const ADConfig& config) {
  const Tensor ce = ce_loss(logits, labels);
  const ADLoss ad = ad_loss(pooled_batch, labels, state, config);
  UniteLoss out;
  out.total = ops::add(ops::scale(ce, config.lambda_ce), ops::scale(ad.total, config.lambda_ad));
  out.diagnostics = {ce.item(), ad.total.item(), ad.within.item(), ad.between.item()};
  return out;
}

}  // namespace unite
