#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "unite/model.hpp"
#include "unite/tensor.hpp"

namespace unite {

/// Attention-diversity loss settings.
struct ADConfig {
  double eta = 0.05;                            ///< center EMA rate
  std::vector<double> delta_within{0.01, -2.0};  ///< one margin per class
  double delta_between = 0.5;
  double lambda_ce = 0.5;
  double lambda_ad = 0.5;

  void validate(std::size_t n_c) const;
  bool operator==(const ADConfig&) const = default;
};

/// Per-class feature centers, [n_c, n_h, n_f], plus the update counter.
/// Centers are plain values: they never enter the gradient tape.
struct CenterState {
  std::size_t n_c = 0, n_h = 0, n_f = 0;
  std::vector<double> centers;
  std::uint64_t tau = 0;

  static CenterState zeros(std::size_t n_c, std::size_t n_h, std::size_t n_f);
  std::span<const double> center(std::size_t cls) const;
  /// Center of class `cls` as a constant [n_h, n_f] tensor.
  Tensor center_tensor(std::size_t cls) const;

  bool operator==(const CenterState&) const = default;
};

/// P[h, f] = sum over cells and feature dims of spatial_view[h, f, cell] *
/// reduced[f, cell, dim]. Returns [n_h, n_f]; differentiable in both inputs.
Tensor pool_attention(const AttentionBundle& attention, const Tensor& reduced);

/// EMA step for every class present in the batch:
/// C_c <- C_c - eta * (C_c - mean of P_b over items labelled c).
/// `pooled` holds B row-major [n_h, n_f] blocks. Absent classes are untouched;
/// tau advances by one.
CenterState update_centers(const CenterState& state, std::span<const double> pooled, std::span<const std::size_t> labels,
                           const ADConfig& config);

/// max(||P - C||_2 - delta, 0) over the flattened tensors.
Tensor within_loss(const Tensor& pooled, const Tensor& center, double delta_within);

/// Sum over ordered head-row pairs k != l of max(delta - ||C_k - C_l||_2, 0).
Tensor between_loss(const Tensor& center, double delta_between);

struct ADLoss {
  Tensor total;
  Tensor within;   ///< batch mean of per-sample within terms
  Tensor between;  ///< sum over classes present in the batch
};

/// `pooled_batch` is [B, n_h, n_f].
ADLoss ad_loss(const Tensor& pooled_batch, std::span<const std::size_t> labels, const CenterState& state,
               const ADConfig& config);

/// Mean negative log-likelihood of `labels` under softmax(logits); logits [B, n_c].
Tensor ce_loss(const Tensor& logits, std::span<const std::size_t> labels);

struct LossDiagnostics {
  double ce = 0.0;
  double ad = 0.0;
  double within = 0.0;
  double between = 0.0;
};

struct UniteLoss {
  Tensor total;
  LossDiagnostics diagnostics;
};

/// lambda_ce * CE + lambda_ad * AD. Centers are read, never updated here.
UniteLoss unite_loss(const Tensor& logits, const Tensor& pooled_batch, std::span<const std::size_t> labels,
                     const CenterState& state, const ADConfig& config);

}  // namespace unite
