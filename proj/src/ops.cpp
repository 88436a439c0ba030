#include "unite/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "unite/errors.hpp"

namespace unite::ops {

namespace {

using Grads = std::span<std::vector<double>* const>;

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

std::vector<std::size_t> aligned_strides(const Shape& s, std::size_t rank, const Shape& out) {
  std::vector<std::size_t> strides(rank, 0);
  std::size_t step = 1;
  const std::size_t offset = rank - s.size();
  for (std::size_t i = s.size(); i-- > 0;) {
    strides[i + offset] = (s[i] == 1 && out[i + offset] != 1) ? 0 : step;
    step *= s[i];
  }
  return strides;
}

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  plan.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i + a.size() >= rank ? a[i + a.size() - rank] : 1;
    const std::size_t db = i + b.size() >= rank ? b[i + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    plan.out[i] = std::max(da, db);
    if (da == 0 || db == 0) plan.out[i] = 0;
  }
  plan.stride_a = aligned_strides(a, rank, plan.out);
  plan.stride_b = aligned_strides(b, rank, plan.out);
  return plan;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <class F>
void for_each_broadcast(const Broadcast& plan, F&& f) {
  const std::size_t n = shape_size(plan.out);
  if (plan.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t rank = plan.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += plan.stride_a[d];
      ib += plan.stride_b[d];
      if (idx[d] < plan.out[d]) break;
      ia -= plan.stride_a[d] * idx[d];
      ib -= plan.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
  Shape reduced;
};

AxisSplit split_axis(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  AxisSplit split;
  for (std::size_t i = 0; i < axis; ++i) split.outer *= s[i];
  split.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) split.inner *= s[i];
  split.reduced = s;
  split.reduced.erase(split.reduced.begin() + static_cast<std::ptrdiff_t>(axis));
  return split;
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const auto plan = plan_broadcast("add", a.shape(), b.shape());
  std::vector<double> out(shape_size(plan.out));
  auto da = a.data(), db = b.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = da[i] + db[j]; });
  return Tensor::from_op("add", plan.out, std::move(out), {a, b}, [plan](const Node&, std::span<const double> g, Grads gi) {
    for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (gi[0]) (*gi[0])[i] += g[o];
      if (gi[1]) (*gi[1])[j] += g[o];
    });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const auto plan = plan_broadcast("sub", a.shape(), b.shape());
  std::vector<double> out(shape_size(plan.out));
  auto da = a.data(), db = b.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = da[i] - db[j]; });
  return Tensor::from_op("sub", plan.out, std::move(out), {a, b}, [plan](const Node&, std::span<const double> g, Grads gi) {
    for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (gi[0]) (*gi[0])[i] += g[o];
      if (gi[1]) (*gi[1])[j] -= g[o];
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto plan = plan_broadcast("mul", a.shape(), b.shape());
  std::vector<double> out(shape_size(plan.out));
  auto da = a.data(), db = b.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = da[i] * db[j]; });
  return Tensor::from_op("mul", plan.out, std::move(out), {a, b},
                         [plan, a, b](const Node&, std::span<const double> g, Grads gi) {
                           auto da = a.data(), db = b.data();
                           for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
                             if (gi[0]) (*gi[0])[i] += g[o] * db[j];
                             if (gi[1]) (*gi[1])[j] += g[o] * da[i];
                           });
                         });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tensor::from_op("scale", a.shape(), std::move(out), {a},
                         [factor](const Node&, std::span<const double> g, Grads gi) {
                           auto& ga = *gi[0];
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                         });
}

Tensor add_scalar(const Tensor& a, double value) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += value;
  return Tensor::from_op("add_scalar", a.shape(), std::move(out), {a}, [](const Node&, std::span<const double> g, Grads gi) {
    auto& ga = *gi[0];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = da[i * k + p];
      const double* brow = db.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return Tensor::from_op("matmul", {m, n}, std::move(out), {a, b},
                         [a, b, m, k, n](const Node&, std::span<const double> g, Grads gi) {
                           auto da = a.data(), db = b.data();
                           if (gi[0]) {
                             // da = g * b^T
                             auto& ga = *gi[0];
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                 double acc = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * db[p * n + j];
                                 ga[i * k + p] += acc;
                               }
                           }
                           if (gi[1]) {
                             // db = a^T * g
                             auto& gb = *gi[1];
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                 const double av = da[i * k + p];
                                 for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                               }
                           }
                         });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  auto da = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = da[i * n + j];
  return Tensor::from_op("transpose", {n, m}, std::move(out), {a}, [m, n](const Node&, std::span<const double> g, Grads gi) {
    auto& ga = *gi[0];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::from_op("reshape", std::move(shape), std::move(out), {a}, [](const Node&, std::span<const double> g, Grads gi) {
    auto& ga = *gi[0];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank("slice_cols", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (begin > end || end > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                         shape_string(a.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(m * w);
  auto da = a.data();
  for (std::size_t i = 0; i < m; ++i) std::copy_n(da.data() + i * n + begin, w, out.data() + i * w);
  return Tensor::from_op("slice_cols", {m, w}, std::move(out), {a},
                         [m, n, w, begin](const Node&, std::span<const double> g, Grads gi) {
                           auto& ga = *gi[0];
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += g[i * w + j];
                         });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_rank("concat_cols", p, 2);
    if (p.dim(0) != m) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    widths.push_back(p.dim(1));
    n += p.dim(1);
  }
  std::vector<double> out(m * n);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    auto dp = p.data();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(dp.data() + i * w, w, out.data() + i * n + col);
    col += w;
  }
  return Tensor::from_op("concat_cols", {m, n}, std::move(out), {parts.begin(), parts.end()},
                         [m, n, widths](const Node&, std::span<const double> g, Grads gi) {
                           std::size_t col = 0;
                           for (std::size_t p = 0; p < widths.size(); ++p) {
                             const std::size_t w = widths[p];
                             if (gi[p]) {
                               auto& gp = *gi[p];
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + col + j];
                             }
                             col += w;
                           }
                         });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  const Shape inner = parts[0].shape();
  const std::size_t each = parts[0].size();
  std::vector<double> out;
  out.reserve(each * parts.size());
  for (const auto& p : parts) {
    if (p.shape() != inner) {
      throw DimensionError("stack: shape mismatch " + shape_string(inner) + " vs " + shape_string(p.shape()));
    }
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  return Tensor::from_op("stack", std::move(shape), std::move(out), {parts.begin(), parts.end()},
                         [each](const Node&, std::span<const double> g, Grads gi) {
                           for (std::size_t p = 0; p < gi.size(); ++p) {
                             if (!gi[p]) continue;
                             auto& gp = *gi[p];
                             for (std::size_t i = 0; i < each; ++i) gp[i] += g[p * each + i];
                           }
                         });
}

Tensor select(const Tensor& a, std::size_t index) {
  if (a.rank() == 0 || index >= a.dim(0)) {
    throw DimensionError("select: index " + std::to_string(index) + " outside " + shape_string(a.shape()));
  }
  Shape shape(a.shape().begin() + 1, a.shape().end());
  const std::size_t each = shape_size(shape);
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(index * each),
                          a.data().begin() + static_cast<std::ptrdiff_t>((index + 1) * each));
  return Tensor::from_op("select", std::move(shape), std::move(out), {a},
                         [index, each](const Node&, std::span<const double> g, Grads gi) {
                           auto& ga = *gi[0];
                           for (std::size_t i = 0; i < each; ++i) ga[index * each + i] += g[i];
                         });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  require_rank("gather_rows", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (index.size() != m) {
    throw DimensionError("gather_rows: " + std::to_string(index.size()) + " indices for " + shape_string(a.shape()));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (idx[i] >= n) throw DimensionError("gather_rows: column " + std::to_string(idx[i]) + " out of range");
    out[i] = a.data()[i * n + idx[i]];
  }
  return Tensor::from_op("gather_rows", {m}, std::move(out), {a}, [idx, n](const Node&, std::span<const double> g, Grads gi) {
    auto& ga = *gi[0];
    for (std::size_t i = 0; i < idx.size(); ++i) ga[i * n + idx[i]] += g[i];
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return Tensor::from_op("sum", {}, {acc}, {a}, [](const Node&, std::span<const double> g, Grads gi) {
    for (auto& v : *gi[0]) v += g[0];
  });
}

Tensor sum(const Tensor& a, std::size_t axis) {
  const auto s = split_axis("sum", a.shape(), axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  auto da = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.extent; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += da[(o * s.extent + k) * s.inner + i];
  return Tensor::from_op("sum_axis", s.reduced, std::move(out), {a}, [s](const Node&, std::span<const double> g, Grads gi) {
    auto& ga = *gi[0];
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.extent; ++k)
        for (std::size_t i = 0; i < s.inner; ++i) ga[(o * s.extent + k) * s.inner + i] += g[o * s.inner + i];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor mean(const Tensor& a, std::size_t axis) {
  const auto s = split_axis("mean", a.shape(), axis);
  if (s.extent == 0) throw DimensionError("mean: empty axis in " + shape_string(a.shape()));
  return scale(sum(a, axis), 1.0 / static_cast<double>(s.extent));
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto s = split_axis("softmax", a.shape(), axis);
  std::vector<double> out(a.size());
  auto da = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = -INFINITY;
      for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, da[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(da[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= z;
    }
  return Tensor::from_op("softmax", a.shape(), std::move(out), {a}, [s](const Node& self, std::span<const double> g, Grads gi) {
    auto& ga = *gi[0];
    const auto& y = self.data;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t at = base + k * s.inner;
          ga[at] += y[at] * (g[at] - dot);
        }
      }
  });
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  const auto s = split_axis("log_softmax", a.shape(), axis);
  std::vector<double> out(a.size());
  auto da = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = -INFINITY;
      for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, da[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) z += std::exp(da[base + k * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] = da[base + k * s.inner] - lse;
    }
  return Tensor::from_op("log_softmax", a.shape(), std::move(out), {a},
                         [s](const Node& self, std::span<const double> g, Grads gi) {
                           auto& ga = *gi[0];
                           const auto& y = self.data;
                           for (std::size_t o = 0; o < s.outer; ++o)
                             for (std::size_t i = 0; i < s.inner; ++i) {
                               const std::size_t base = o * s.extent * s.inner + i;
                               double gsum = 0.0;
                               for (std::size_t k = 0; k < s.extent; ++k) gsum += g[base + k * s.inner];
                               for (std::size_t k = 0; k < s.extent; ++k) {
                                 const std::size_t at = base + k * s.inner;
                                 ga[at] += g[at] - std::exp(y[at]) * gsum;
                               }
                             }
                         });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("layer_norm: needs a non-empty last axis");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain " + shape_string(gain.shape()) + " / bias " + shape_string(bias.shape()) +
                         " do not match last axis of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_sigma(rows);
  auto dx = x.data(), dg = gain.data(), db = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = dx.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * dg[j] + db[j];
    }
  }
  return Tensor::from_op(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [gain, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma), rows, d](const Node&, std::span<const double> g,
                                                                                Grads gi) {
        auto dg = gain.data();
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t at = r * d + j;
            dxhat[j] = g[at] * dg[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xhat[at];
            if (gi[1]) (*gi[1])[j] += g[at] * xhat[at];
            if (gi[2]) (*gi[2])[j] += g[at];
          }
          mean_dxhat /= static_cast<double>(d);
          mean_dxhat_xhat /= static_cast<double>(d);
          if (gi[0]) {
            for (std::size_t j = 0; j < d; ++j) {
              const std::size_t at = r * d + j;
              (*gi[0])[at] += inv_sigma[r] * (dxhat[j] - mean_dxhat - xhat[at] * mean_dxhat_xhat);
            }
          }
        }
      });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.size());
  auto da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = da[i];
    out[i] = x * 0.5 * std::erfc(-x / std::numbers::sqrt2);
  }
  return Tensor::from_op("gelu", a.shape(), std::move(out), {a}, [a](const Node&, std::span<const double> g, Grads gi) {
    auto& ga = *gi[0];
    auto da = a.data();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = da[i];
      const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      ga[i] += g[i] * (cdf + x * pdf);
    }
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::from_op("relu", a.shape(), std::move(out), {a}, [a](const Node&, std::span<const double> g, Grads gi) {
    auto& ga = *gi[0];
    auto da = a.data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (da[i] > 0.0) ga[i] += g[i];
  });
}

Tensor l2_norm(const Tensor& a) {
  double ss = 0.0;
  for (double v : a.data()) ss += v * v;
  const double norm = std::sqrt(ss);
  return Tensor::from_op("l2_norm", {}, {norm}, {a}, [a, norm](const Node&, std::span<const double> g, Grads gi) {
    if (norm == 0.0) return;
    auto& ga = *gi[0];
    auto da = a.data();
    for (std::size_t i = 0; i < da.size(); ++i) ga[i] += g[0] * da[i] / norm;
  });
}

Tensor l2_norm(const Tensor& a, std::size_t axis) {
  const auto s = split_axis("l2_norm", a.shape(), axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  auto da = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.extent; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const double v = da[(o * s.extent + k) * s.inner + i];
        out[o * s.inner + i] += v * v;
      }
  for (auto& v : out) v = std::sqrt(v);
  return Tensor::from_op("l2_norm_axis", s.reduced, std::move(out), {a},
                         [a, s](const Node& self, std::span<const double> g, Grads gi) {
                           auto& ga = *gi[0];
                           auto da = a.data();
                           for (std::size_t o = 0; o < s.outer; ++o)
                             for (std::size_t i = 0; i < s.inner; ++i) {
                               const double norm = self.data[o * s.inner + i];
                               if (norm == 0.0) continue;
                               for (std::size_t k = 0; k < s.extent; ++k) {
                                 const std::size_t at = (o * s.extent + k) * s.inner + i;
                                 ga[at] += g[o * s.inner + i] * da[at] / norm;
                               }
                             }
                         });
}

Tensor dropout(const Tensor& a, double rate, bool training, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(a.size());
  for (auto& m : mask) m = uniform01(rng) >= rate ? keep_scale : 0.0;
  std::vector<double> out(a.size());
  auto da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * mask[i];
  return Tensor::from_op("dropout", a.shape(), std::move(out), {a},
                         [mask = std::move(mask)](const Node&, std::span<const double> g, Grads gi) {
                           auto& ga = *gi[0];
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
                         });
}

Tensor pool_token_grid(const Tensor& x, std::size_t grid) {
  require_rank("pool_token_grid", x, 3);
  const std::size_t frames = x.dim(0), tokens = x.dim(1), dim = x.dim(2);
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
  if (side * side != tokens) {
    throw DimensionError("pool_token_grid: token count " + std::to_string(tokens) + " is not a perfect square");
  }
  if (grid == 0 || side % grid != 0) {
    throw DimensionError("pool_token_grid: grid " + std::to_string(grid) + " does not divide token side " +
                         std::to_string(side));
  }
  const std::size_t block = side / grid;
  const double inv = 1.0 / static_cast<double>(block * block);
  const std::size_t cells = grid * grid;
  std::vector<double> out(frames * cells * dim, 0.0);
  auto dx = x.data();
  // token (r, c) of a frame feeds cell (r / block, c / block)
  auto cell_of = [=](std::size_t token) { return (token / side / block) * grid + (token % side) / block; };
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t t = 0; t < tokens; ++t) {
      const double* src = dx.data() + (f * tokens + t) * dim;
      double* dst = out.data() + (f * cells + cell_of(t)) * dim;
      for (std::size_t k = 0; k < dim; ++k) dst[k] += src[k] * inv;
    }
  return Tensor::from_op("pool_token_grid", {frames * cells, dim}, std::move(out), {x},
                         [=](const Node&, std::span<const double> g, Grads gi) {
                           auto& gx = *gi[0];
                           for (std::size_t f = 0; f < frames; ++f)
                             for (std::size_t t = 0; t < tokens; ++t) {
                               const double* src = g.data() + (f * cells + cell_of(t)) * dim;
                               double* dst = gx.data() + (f * tokens + t) * dim;
                               for (std::size_t k = 0; k < dim; ++k) dst[k] += src[k] * inv;
                             }
                         });
}

}  // namespace unite::ops
