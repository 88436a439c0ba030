#include "unite/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "unite/checkpoint.hpp"
#include "unite/errors.hpp"
#include "unite/ops.hpp"
#include "unite/random.hpp"

namespace unite {

void OptimConfig::validate() const {
  if (!(lr0 > 0.0)) throw ValidationError("optim.lr0: must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ValidationError("optim.decay_factor: must be in (0, 1]");
  if (decay_every_steps == 0) throw ValidationError("optim.decay_every_steps: must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ValidationError("optim.beta1: must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ValidationError("optim.beta2: must be in [0, 1)");
  if (!(eps > 0.0)) throw ValidationError("optim.eps: must be positive");
  if (!(weight_decay >= 0.0)) throw ValidationError("optim.weight_decay: must be non-negative");
  if (batch_size == 0) throw ValidationError("optim.batch_size: must be at least 1");
}

double lr_at(std::size_t step, const OptimConfig& config) {
  const auto decays = static_cast<double>(step / config.decay_every_steps);
  return config.lr0 * std::pow(config.decay_factor, decays);
}

OptimizerState OptimizerState::zeros(const UniteModel& model) {
  OptimizerState s;
  for (const auto& p : model.parameters()) {
    s.m.emplace_back(p.value.size(), 0.0);
    s.v.emplace_back(p.value.size(), 0.0);
  }
  return s;
}

UniteModel optimizer_step(const UniteModel& model, OptimizerState& state, const std::vector<std::vector<double>>& grads,
                          const OptimConfig& config) {
  const auto& params = model.parameters();
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw DimensionError("optimizer_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].value.size()) {
      throw DimensionError("optimizer_step: gradient for " + params[i].name + " has " + std::to_string(grads[i].size()) +
                           " values, parameter has " + std::to_string(params[i].value.size()));
    }
    for (double g : grads[i])
      if (!std::isfinite(g)) throw NumericError("optimizer_step: non-finite gradient for " + params[i].name);
  }

  const double lr = lr_at(state.step, config);
  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);

  std::vector<Tensor> updated;
  updated.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    std::vector<double> p(params[i].value.data().begin(), params[i].value.data().end());
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] -= lr * (m_hat / (std::sqrt(v_hat) + config.eps) + config.weight_decay * p[k]);
    }
    updated.push_back(Tensor::parameter(params[i].value.shape(), std::move(p)));
  }
  ++state.step;
  return model.with_tensors(updated);
}

// Run config -------------------------------------------------------------------

void RunConfig::validate() const {
  model.validate();
  optim.validate();
  ad.validate(model.n_c);
  if (stride == 0) throw ValidationError("data.stride: must be at least 1");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size() || !std::isfinite(v)) {
    throw ValidationError(key + ": expected a number, got '" + value + "'");
  }
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    if (!value.empty() && value[0] != '-') v = std::stoull(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) throw ValidationError(key + ": expected a non-negative integer, got '" + value + "'");
  return v;
}

std::vector<double> parse_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  if (out.empty()) throw ValidationError(key + ": expected a comma-separated list");
  return out;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters{
      {"model.n_f", [&](auto& k, auto& v) { c.model.n_f = parse_uint(k, v); }},
      {"model.t_s", [&](auto& k, auto& v) { c.model.t_s = parse_uint(k, v); }},
      {"model.d_s", [&](auto& k, auto& v) { c.model.d_s = parse_uint(k, v); }},
      {"model.grid_g", [&](auto& k, auto& v) { c.model.grid_g = parse_uint(k, v); }},
      {"model.d_model", [&](auto& k, auto& v) { c.model.d_model = parse_uint(k, v); }},
      {"model.n_h", [&](auto& k, auto& v) { c.model.n_h = parse_uint(k, v); }},
      {"model.depth", [&](auto& k, auto& v) { c.model.depth = parse_uint(k, v); }},
      {"model.mlp_ratio", [&](auto& k, auto& v) { c.model.mlp_ratio = parse_uint(k, v); }},
      {"model.dropout_rate", [&](auto& k, auto& v) { c.model.dropout_rate = parse_double(k, v); }},
      {"model.n_c", [&](auto& k, auto& v) { c.model.n_c = parse_uint(k, v); }},
      {"optim.lr0", [&](auto& k, auto& v) { c.optim.lr0 = parse_double(k, v); }},
      {"optim.decay_factor", [&](auto& k, auto& v) { c.optim.decay_factor = parse_double(k, v); }},
      {"optim.decay_every_steps", [&](auto& k, auto& v) { c.optim.decay_every_steps = parse_uint(k, v); }},
      {"optim.beta1", [&](auto& k, auto& v) { c.optim.beta1 = parse_double(k, v); }},
      {"optim.beta2", [&](auto& k, auto& v) { c.optim.beta2 = parse_double(k, v); }},
      {"optim.eps", [&](auto& k, auto& v) { c.optim.eps = parse_double(k, v); }},
      {"optim.weight_decay", [&](auto& k, auto& v) { c.optim.weight_decay = parse_double(k, v); }},
      {"optim.epochs", [&](auto& k, auto& v) { c.optim.epochs = parse_uint(k, v); }},
      {"optim.batch_size", [&](auto& k, auto& v) { c.optim.batch_size = parse_uint(k, v); }},
      {"optim.seed", [&](auto& k, auto& v) { c.optim.seed = parse_uint(k, v); }},
      {"ad.eta", [&](auto& k, auto& v) { c.ad.eta = parse_double(k, v); }},
      {"ad.delta_within", [&](auto& k, auto& v) { c.ad.delta_within = parse_list(k, v); }},
      {"ad.delta_between", [&](auto& k, auto& v) { c.ad.delta_between = parse_double(k, v); }},
      {"ad.lambda_ce", [&](auto& k, auto& v) { c.ad.lambda_ce = parse_double(k, v); }},
      {"ad.lambda_ad", [&](auto& k, auto& v) { c.ad.lambda_ad = parse_double(k, v); }},
      {"data.stride", [&](auto& k, auto& v) { c.stride = parse_uint(k, v); }},
  };
  bool delta_given = false;
  std::stringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw ValidationError(key + ": unknown config key (line " + std::to_string(lineno) + ")");
    it->second(key, value);
    delta_given = delta_given || key == "ad.delta_within";
  }
  // Margins for the fine-grained head when the file sets n_c = 3 but keeps
  // the binary margins.
  if (!delta_given && c.model.n_c == 3) c.ad.delta_within = {0.01, -2.0, 1.0};
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string format_run_config(const RunConfig& c) {
  std::ostringstream os;
  os << "model.n_f = " << c.model.n_f << '\n'
     << "model.t_s = " << c.model.t_s << '\n'
     << "model.d_s = " << c.model.d_s << '\n'
     << "model.grid_g = " << c.model.grid_g << '\n'
     << "model.d_model = " << c.model.d_model << '\n'
     << "model.n_h = " << c.model.n_h << '\n'
     << "model.depth = " << c.model.depth << '\n'
     << "model.mlp_ratio = " << c.model.mlp_ratio << '\n'
     << "model.dropout_rate = " << fmt_double(c.model.dropout_rate) << '\n'
     << "model.n_c = " << c.model.n_c << '\n'
     << "optim.lr0 = " << fmt_double(c.optim.lr0) << '\n'
     << "optim.decay_factor = " << fmt_double(c.optim.decay_factor) << '\n'
     << "optim.decay_every_steps = " << c.optim.decay_every_steps << '\n'
     << "optim.beta1 = " << fmt_double(c.optim.beta1) << '\n'
     << "optim.beta2 = " << fmt_double(c.optim.beta2) << '\n'
     << "optim.eps = " << fmt_double(c.optim.eps) << '\n'
     << "optim.weight_decay = " << fmt_double(c.optim.weight_decay) << '\n'
     << "optim.epochs = " << c.optim.epochs << '\n'
     << "optim.batch_size = " << c.optim.batch_size << '\n'
     << "optim.seed = " << c.optim.seed << '\n'
     << "ad.eta = " << fmt_double(c.ad.eta) << '\n'
     << "ad.delta_within = ";
  for (std::size_t i = 0; i < c.ad.delta_within.size(); ++i) os << (i ? "," : "") << fmt_double(c.ad.delta_within[i]);
  os << '\n'
     << "ad.delta_between = " << fmt_double(c.ad.delta_between) << '\n'
     << "ad.lambda_ce = " << fmt_double(c.ad.lambda_ce) << '\n'
     << "ad.lambda_ad = " << fmt_double(c.ad.lambda_ad) << '\n'
     << "data.stride = " << c.stride << '\n';
  return os.str();
}

std::string format_metrics_row(const StepMetrics& m) {
  std::ostringstream os;
  os << m.step << ',' << m.epoch << ',' << fmt_double(m.lr) << ',' << fmt_double(m.loss_total) << ','
     << fmt_double(m.loss_ce) << ',' << fmt_double(m.loss_within) << ',' << fmt_double(m.loss_between) << ','
     << fmt_double(m.train_acc);
  return os.str();
}

// Training ---------------------------------------------------------------------

std::vector<VideoSegment> load_segments(const Manifest& manifest, Split split, const ModelConfig& model,
                                        std::size_t stride) {
  manifest.validate_labels(model.n_c);
  std::vector<VideoSegment> segments;
  for (const auto& entry : manifest.split(split)) {
    const auto frames = load_embeddings(manifest.resolve(entry));
    if (frames.header.t_s != model.t_s || frames.header.d_s != model.d_s) {
      throw DataError("video " + entry.video_id + ": embeddings are " + std::to_string(frames.header.t_s) + "x" +
                      std::to_string(frames.header.d_s) + ", model expects " + std::to_string(model.t_s) + "x" +
                      std::to_string(model.d_s));
    }
    auto segs = segment_video(frames, model.n_f, stride, entry.label, entry.video_id);
    for (auto& s : segs) segments.push_back(std::move(s));
  }
  return segments;
}

TrainState initial_state(const RunConfig& config) {
  config.validate();
  TrainState s;
  s.model = UniteModel::initialize(config.model, mix_seed(config.optim.seed, 0x1417));
  s.optimizer = OptimizerState::zeros(s.model);
  s.centers = CenterState::zeros(config.model.n_c, config.model.n_h, config.model.n_f);
  return s;
}

StepMetrics train_step(TrainState& state, const std::vector<VideoSegment>& segments,
                       const std::vector<std::size_t>& batch, const RunConfig& config, std::size_t epoch) {
  if (batch.empty()) throw ValidationError("train_step: empty batch");
  std::mt19937_64 rng(mix_seed(config.optim.seed, 0xd0d0 + state.optimizer.step));
  ForwardOptions options;
  options.training = true;
  options.rng = &rng;

  std::vector<Tensor> logits, pooled;
  std::vector<std::size_t> labels;
  for (std::size_t idx : batch) {
    const auto& seg = segments.at(idx);
    const auto out = forward(seg.xi, state.model, options);
    logits.push_back(out.logits);
    pooled.push_back(pool_attention(out.attention, out.reduced));
    labels.push_back(seg.label);
  }
  const Tensor logits_b = ops::stack(logits);
  const Tensor pooled_b = ops::stack(pooled);
  const UniteLoss loss = unite_loss(logits_b, pooled_b, labels, state.centers, config.ad);

  const Gradients grads = backward(loss.total);
  std::vector<std::vector<double>> param_grads;
  for (const auto& p : state.model.parameters()) param_grads.push_back(grads.of(p.value));

  StepMetrics m;
  m.step = state.optimizer.step;
  m.epoch = epoch;
  m.lr = lr_at(state.optimizer.step, config.optim);
  m.loss_total = loss.total.item();
  m.loss_ce = loss.diagnostics.ce;
  m.loss_within = loss.diagnostics.within;
  m.loss_between = loss.diagnostics.between;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const auto row = logits_b.data().subspan(b * config.model.n_c, config.model.n_c);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
      if (row[k] > row[arg]) arg = k;
    correct += arg == labels[b];
  }
  m.train_acc = static_cast<double>(correct) / static_cast<double>(labels.size());

  state.model = optimizer_step(state.model, state.optimizer, param_grads, config.optim);
  state.centers = update_centers(state.centers, pooled_b.data(), labels, config.ad);
  return m;
}

namespace {

void rewrite_metrics(const std::filesystem::path& path, std::size_t keep_before_step) {
  // Drops rows logged after the checkpoint being resumed from.
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (lines.empty()) {
      lines.push_back(line);
      continue;
    }
    if (std::stoull(line.substr(0, line.find(','))) < keep_before_step) lines.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace

TrainResult train(const std::vector<VideoSegment>& segments, const RunConfig& config, const TrainOptions& options) {
  config.validate();
  if (segments.empty()) throw DataError("train: no training segments");

  TrainResult result;
  result.state = options.resume ? load_checkpoint(*options.resume) : initial_state(config);
  auto& state = result.state;
  if (state.model.config() != config.model) throw ValidationError("train: checkpoint model config differs from run config");

  const bool write = !options.out_dir.empty();
  const auto metrics_path = options.out_dir / "metrics.csv";
  if (write) {
    std::filesystem::create_directories(options.out_dir / "checkpoints");
    if (options.resume) {
      rewrite_metrics(metrics_path, state.optimizer.step);
    } else {
      std::ofstream(metrics_path, std::ios::trunc) << kMetricsHeader << '\n';
    }
  }

  std::size_t last_epoch = config.optim.epochs;
  if (options.max_epochs_this_run > 0) last_epoch = std::min(last_epoch, state.epochs_done + options.max_epochs_this_run);

  for (std::size_t epoch = state.epochs_done; epoch < last_epoch; ++epoch) {
    std::vector<StepMetrics> epoch_rows;
    for (const auto& batch : make_batches(segments.size(), config.optim.batch_size, config.optim.seed, epoch)) {
      try {
        epoch_rows.push_back(train_step(state, segments, batch, config, epoch));
      } catch (const NumericError& e) {
        throw NumericError("train: step " + std::to_string(state.optimizer.step) + ": " + e.what());
      }
      if (options.on_step) options.on_step(epoch_rows.back());
    }
    state.epochs_done = epoch + 1;
    if (write) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", state.epochs_done);
      save_checkpoint(options.out_dir / "checkpoints" / name, state);
      save_checkpoint(options.out_dir / "checkpoints" / "last.ckpt", state);
      std::ofstream out(metrics_path, std::ios::app);
      for (const auto& row : epoch_rows) out << format_metrics_row(row) << '\n';
    }
    result.metrics.insert(result.metrics.end(), epoch_rows.begin(), epoch_rows.end());
  }
  return result;
}

// Checkpoints ------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  CheckpointFile file;
  file.config = state.model.config();
  for (const auto& p : state.model.parameters()) {
    file.records.push_back({p.name, p.value.shape(), std::vector<double>(p.value.data().begin(), p.value.data().end())});
  }
  const auto& c = state.centers;
  file.records.push_back({"ad.centers", {c.n_c, c.n_h, c.n_f}, c.centers});
  file.records.push_back({"ad.tau", {1}, {static_cast<double>(c.tau)}});
  file.records.push_back({"optim.step", {1}, {static_cast<double>(state.optimizer.step)}});
  file.records.push_back({"train.epochs_done", {1}, {static_cast<double>(state.epochs_done)}});
  const auto& params = state.model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    file.records.push_back({"optim.m." + params[i].name, params[i].value.shape(), state.optimizer.m[i]});
    file.records.push_back({"optim.v." + params[i].name, params[i].value.shape(), state.optimizer.v[i]});
  }
  write_checkpoint_file(path, file);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const auto file = read_checkpoint_file(path);
  TrainState state;
  state.model = load_model(path);
  const auto& cfg = file.config;
  const auto& centers = file.at("ad.centers");
  if (centers.shape != Shape{cfg.n_c, cfg.n_h, cfg.n_f}) {
    throw DimensionError("checkpoint: ad.centers is " + shape_string(centers.shape));
  }
  state.centers = CenterState::zeros(cfg.n_c, cfg.n_h, cfg.n_f);
  state.centers.centers = centers.values;
  state.centers.tau = static_cast<std::uint64_t>(file.at("ad.tau").values.at(0));
  state.optimizer.step = static_cast<std::size_t>(file.at("optim.step").values.at(0));
  state.epochs_done = static_cast<std::size_t>(file.at("train.epochs_done").values.at(0));
  for (const auto& p : state.model.parameters()) {
    const auto& m = file.at("optim.m." + p.name);
    const auto& v = file.at("optim.v." + p.name);
    if (m.values.size() != p.value.size() || v.values.size() != p.value.size()) {
      throw DimensionError("checkpoint: moment buffers for " + p.name + " do not match the parameter");
    }
    state.optimizer.m.push_back(m.values);
    state.optimizer.v.push_back(v.values);
  }
  return state;
}

}  // namespace unite
