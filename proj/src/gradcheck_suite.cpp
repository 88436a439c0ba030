#include "unite/gradcheck_suite.hpp"

#include <random>

#include "unite/losses.hpp"
#include "unite/ops.hpp"
#include "unite/random.hpp"

namespace unite {

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.n_f = 4;
  c.t_s = 16;
  c.d_s = 8;
  c.grid_g = 2;
  c.d_model = 16;
  c.n_h = 4;
  c.depth = 2;
  return c;
}

namespace {

class Inputs {
 public:
  explicit Inputs(std::uint64_t seed) : rng_(seed) {}

  Tensor param(Shape shape, double scale = 1.0, double offset = 0.0) {
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = offset + scale * standard_normal(rng_);
    return Tensor::parameter(std::move(shape), std::move(v));
  }
  Tensor constant(Shape shape, double scale = 1.0) { return param(std::move(shape), scale).detach(); }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Contracts an op output with fixed random weights so every output element
// contributes a distinct coefficient.
ScalarFn project(std::function<Tensor(std::span<const Tensor>)> op, std::uint64_t seed) {
  return [op = std::move(op), seed](std::span<const Tensor> in) {
    const Tensor out = op(in);
    std::mt19937_64 rng(seed);
    std::vector<double> w(out.size());
    for (auto& x : w) x = standard_normal(rng);
    return ops::sum(ops::mul(out, Tensor::constant(out.shape(), std::move(w))));
  };
}

}  // namespace

GradCheckResult quadratic_self_test() {
  const Tensor x = Tensor::parameter({5}, {-1.0, 0.5, 2.0, 3.5, 7.0});
  const std::vector<Tensor> in{x};
  return grad_check([](std::span<const Tensor> v) { return ops::sum(ops::mul(ops::add_scalar(v[0], -3.0), ops::add_scalar(v[0], -3.0))); },
                    in);
}

std::vector<OpCheck> gradcheck_suite(const ModelConfig& config, std::uint64_t seed) {
  Inputs gen(seed);
  std::vector<OpCheck> out;
  std::uint64_t k = 0;
  auto check = [&](const std::string& name, std::function<Tensor(std::span<const Tensor>)> op,
                   std::vector<Tensor> inputs) {
    out.push_back({name, grad_check(project(std::move(op), mix_seed(seed, ++k)), inputs)});
  };

  check("add", [](auto in) { return ops::add(in[0], in[1]); }, {gen.param({3, 4}), gen.param({4})});
  check("sub", [](auto in) { return ops::sub(in[0], in[1]); }, {gen.param({3, 1}), gen.param({3, 4})});
  check("mul", [](auto in) { return ops::mul(in[0], in[1]); }, {gen.param({2, 3, 4}), gen.param({3, 1})});
  check("scale", [](auto in) { return ops::scale(in[0], -1.7); }, {gen.param({5})});
  check("add_scalar", [](auto in) { return ops::add_scalar(in[0], 0.3); }, {gen.param({5})});
  check("matmul", [](auto in) { return ops::matmul(in[0], in[1]); }, {gen.param({3, 4}), gen.param({4, 2})});
  check("transpose", [](auto in) { return ops::transpose(in[0]); }, {gen.param({3, 4})});
  check("reshape", [](auto in) { return ops::reshape(in[0], {2, 6}); }, {gen.param({3, 4})});
  check("slice_cols", [](auto in) { return ops::slice_cols(in[0], 1, 3); }, {gen.param({3, 4})});
  check("concat_cols", [](auto in) { return ops::concat_cols(in.subspan(0, 2)); }, {gen.param({3, 2}), gen.param({3, 3})});
  check("stack", [](auto in) { return ops::stack(in.subspan(0, 2)); }, {gen.param({2, 3}), gen.param({2, 3})});
  check("select", [](auto in) { return ops::select(in[0], 1); }, {gen.param({3, 2, 2})});
  check("gather_rows", [](auto in) {
    const std::vector<std::size_t> idx{2, 0, 2};
    return ops::gather_rows(in[0], idx);
  }, {gen.param({3, 4})});
  check("sum", [](auto in) { return ops::sum(in[0]); }, {gen.param({3, 4})});
  check("sum_axis", [](auto in) { return ops::sum(in[0], 1); }, {gen.param({2, 3, 4})});
  check("mean", [](auto in) { return ops::mean(in[0]); }, {gen.param({3, 4})});
  check("mean_axis", [](auto in) { return ops::mean(in[0], 0); }, {gen.param({2, 3, 4})});
  check("softmax", [](auto in) { return ops::softmax(in[0], 1); }, {gen.param({3, 5})});
  check("log_softmax", [](auto in) { return ops::log_softmax(in[0], 1); }, {gen.param({3, 5})});
  check("layer_norm", [](auto in) { return ops::layer_norm(in[0], in[1], in[2]); },
        {gen.param({3, 6}), gen.param({6}, 0.3, 1.0), gen.param({6}, 0.3)});
  check("gelu", [](auto in) { return ops::gelu(in[0]); }, {gen.param({4, 4}, 2.0)});
  check("relu", [](auto in) { return ops::relu(in[0]); }, {gen.param({4, 4})});
  check("l2_norm", [](auto in) { return ops::l2_norm(in[0]); }, {gen.param({3, 4})});
  check("l2_norm_axis", [](auto in) { return ops::l2_norm(in[0], 2); }, {gen.param({2, 3, 4})});
  const std::uint64_t dropout_seed = mix_seed(seed, 0xd0);
  check("dropout", [dropout_seed](auto in) {
    std::mt19937_64 rng(dropout_seed);
    return ops::dropout(in[0], 0.3, true, rng);
  }, {gen.param({4, 5})});
  check("pool_token_grid", [](auto in) { return ops::pool_token_grid(in[0], 2); }, {gen.param({2, 16, 3})});

  // Model and loss level, on `config`.
  const UniteModel model = UniteModel::initialize(config, mix_seed(seed, 0x30de1));
  const auto params = model.parameter_tensors();
  const auto& c = config;
  const Tensor xi_a = gen.constant({c.n_f, c.t_s, c.d_s});
  const Tensor xi_b = gen.constant({c.n_f, c.t_s, c.d_s});

  check("reduce_tokens", [&](auto in) { return reduce_tokens(in[0], model); }, {gen.param({c.n_f, c.t_s, c.d_s})});
  {
    std::vector<Tensor> in{xi_a.detach()};
    in[0] = Tensor::parameter(xi_a.shape(), {xi_a.data().begin(), xi_a.data().end()});
    check("forward_logits", [&](auto v) { return forward(v[0], model).logits; }, in);
    check("spatial_view", [&](auto v) { return forward(v[0], model).attention.spatial_view; }, in);
  }
  check("pool_attention", [&](auto in) {
    const AttentionBundle a{Tensor(), ops::softmax(in[0], 2)};
    return pool_attention(a, in[1]);
  }, {gen.param({c.n_h, c.n_f, c.cells()}), gen.param({c.n_f, c.cells(), c.d_model})});
  check("within_loss", [](auto in) { return within_loss(in[0], in[1].detach(), 0.01); },
        {gen.param({c.n_h, c.n_f}), gen.constant({c.n_h, c.n_f})});
  check("ce_loss", [](auto in) {
    const std::vector<std::size_t> labels{1, 0, 1};
    return ce_loss(in[0], labels);
  }, {gen.param({3, c.n_c})});

  CenterState centers = CenterState::zeros(c.n_c, c.n_h, c.n_f);
  for (auto& v : centers.centers) v = 0.1 * standard_normal(gen.rng());
  ADConfig ad;
  ad.delta_within = c.n_c == 3 ? std::vector<double>{0.01, -2.0, 1.0} : std::vector<double>{0.01, -2.0};
  const std::uint64_t train_seed = mix_seed(seed, 0x7a1);
  auto full_loss = [&, train_seed](std::span<const Tensor> in) {
    const UniteModel m = model.with_tensors(in);
    std::mt19937_64 rng(train_seed);
    ForwardOptions opts;
    opts.training = true;
    opts.rng = &rng;
    const std::vector<std::size_t> labels{0, 1};
    std::vector<Tensor> logits, pooled;
    for (const auto* xi : {&xi_a, &xi_b}) {
      const auto r = forward(*xi, m, opts);
      logits.push_back(r.logits);
      pooled.push_back(pool_attention(r.attention, r.reduced));
    }
    return unite_loss(ops::stack(logits), ops::stack(pooled), labels, centers, ad).total;
  };
  out.push_back({"unite_loss", grad_check(full_loss, params)});
  return out;
}

}  // namespace unite
