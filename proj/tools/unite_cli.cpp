// Command-line entry point: synth, train, eval, heatmap, gradcheck.
//
// Exit codes: 0 success, 2 invalid configuration or arguments, 3 data error,
// 4 numeric failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "unite/checkpoint.hpp"
#include "unite/data.hpp"
#include "unite/errors.hpp"
#include "unite/evaluation.hpp"
#include "unite/gradcheck_suite.hpp"
#include "unite/image.hpp"
#include "unite/training.hpp"

namespace fs = std::filesystem;
using namespace unite;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// synth -------------------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  const SynthSpec spec = a.spec.empty() ? default_synth_spec() : load_synth_spec(a.spec);
  const Manifest m = synth_dataset(spec, a.out);
  write_text(fs::path(a.out) / "synth_spec.json", synth_spec_json(spec) + "\n");
  std::cout << "wrote " << m.entries.size() << " videos to " << a.out << "\n";
  return kExitOk;
}

// train -------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string manifest;
  std::string out;
  std::string loss = "ce+ad";
  std::vector<std::size_t> depths;
  std::vector<std::size_t> frames;
  std::string resume;
  std::size_t epochs_this_run = 0;
  bool quiet = false;
};

void apply_loss_arm(RunConfig& c, const std::string& loss) {
  if (loss == "ce") {
    c.ad.lambda_ad = 0.0;
  } else if (loss == "ad") {
    c.ad.lambda_ce = 0.0;
  } else if (loss != "ce+ad") {
    throw ValidationError("loss: expected ce, ad or ce+ad, got '" + loss + "'");
  }
}

void train_one(RunConfig config, const Manifest& manifest, const fs::path& out, const TrainArgs& a) {
  config.validate();
  fs::create_directories(out);
  write_text(out / "config.echo", format_run_config(config));
  const auto segments = load_segments(manifest, Split::Train, config.model, config.stride);
  TrainOptions opts;
  opts.out_dir = out;
  if (!a.resume.empty()) opts.resume = fs::path(a.resume);
  opts.max_epochs_this_run = a.epochs_this_run;
  const auto result = train(segments, config, opts);
  if (!a.quiet) {
    const auto& last = result.metrics.empty() ? StepMetrics{} : result.metrics.back();
    std::cout << out.string() << ": " << result.state.epochs_done << " epochs, " << result.state.optimizer.step
              << " steps, last loss " << last.loss_total << ", last batch acc " << last.train_acc << "\n";
  }
}

int cmd_train(const TrainArgs& a) {
  RunConfig base = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  apply_loss_arm(base, a.loss);
  base.validate();
  const Manifest manifest = load_manifest(a.manifest);

  const bool depth_sweep = a.depths.size() > 1;
  const bool frame_sweep = a.frames.size() > 1;
  if ((depth_sweep || frame_sweep) && !a.resume.empty()) {
    throw ValidationError("resume: cannot be combined with a --depth or --frames sweep");
  }
  const std::vector<std::size_t> depths = a.depths.empty() ? std::vector{base.model.depth} : a.depths;
  const std::vector<std::size_t> frames = a.frames.empty() ? std::vector{base.model.n_f} : a.frames;

  // Validate every grid point before any training starts.
  std::vector<std::pair<RunConfig, fs::path>> runs;
  for (std::size_t depth : depths) {
    for (std::size_t n_f : frames) {
      RunConfig c = base;
      c.model.depth = depth;
      c.model.n_f = n_f;
      c.validate();
      fs::path dir = a.out;
      if (depth_sweep) dir /= "depth_" + std::to_string(depth);
      if (frame_sweep) dir /= "frames_" + std::to_string(n_f);
      runs.emplace_back(c, dir);
    }
  }
  for (const auto& [c, dir] : runs) train_one(c, manifest, dir, a);
  return kExitOk;
}

// eval --------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string out;
  std::string mode = "binary";
  std::string split = "test";
  std::size_t frames = 0;
  std::size_t stride = 2;
};

int cmd_eval(const EvalArgs& a) {
  EvalOptions opts;
  opts.mode = parse_eval_mode(a.mode);
  opts.split = parse_split(a.split);
  opts.frames = a.frames;
  if (a.stride == 0) throw ValidationError("stride: must be at least 1");
  opts.stride = a.stride;
  const UniteModel model = load_model(a.checkpoint);
  const Manifest manifest = load_manifest(a.manifest);
  const auto videos = score_manifest(manifest, model, opts);
  const auto reports = build_reports(videos, opts.mode);

  const fs::path dir = fs::path(a.out) / "reports";
  std::string stem = a.split + "_" + a.mode;
  if (a.frames > 0) stem += "_frames" + std::to_string(a.frames);
  write_text(dir / (stem + ".json"), reports_json(reports));
  write_text(dir / (stem + "_scores.csv"), scores_csv(videos));

  std::printf("%-24s %6s %9s %8s %8s %8s %8s\n", "dataset", "n", "accuracy", "pr_auc", "P@0.5", "R@0.5", "R@P0.8");
  for (const auto& r : reports) {
    auto opt = [](const std::optional<double>& v) { return v ? *v : -1.0; };
    std::printf("%-24s %6zu %9.4f %8.4f %8.4f %8.4f %8.4f\n", r.name.c_str(), r.n_samples, r.accuracy, opt(r.pr_auc),
                r.precision_at_05, r.recall_at_05, opt(r.recall_at_precision_08));
  }
  return kExitOk;
}

// heatmap -----------------------------------------------------------------------

struct HeatmapArgs {
  std::string checkpoint;
  std::string embedding;
  std::string out;
  std::size_t head = 0;
  std::size_t frame = 0;
  std::size_t segment = 0;
  std::size_t size = 384;
  std::size_t stride = 2;
  bool gray = false;
};

int cmd_heatmap(const HeatmapArgs& a) {
  const UniteModel model = load_model(a.checkpoint);
  const auto& cfg = model.config();
  const auto seq = load_embeddings(a.embedding);
  if (seq.header.t_s != cfg.t_s || seq.header.d_s != cfg.d_s) {
    throw DataError("embedding geometry " + std::to_string(seq.header.t_s) + "x" + std::to_string(seq.header.d_s) +
                    " does not match the checkpoint");
  }
  if (a.stride == 0) throw ValidationError("stride: must be at least 1");
  const auto segments = segment_video(seq, cfg.n_f, a.stride, 0, a.embedding);
  if (a.segment >= segments.size()) {
    throw ValidationError("segment: index " + std::to_string(a.segment) + " out of range (video has " +
                          std::to_string(segments.size()) + ")");
  }
  NoGradGuard no_grad;
  const auto result = forward(segments[a.segment].xi, model);
  const Heatmap map = heatmap(result.attention, cfg.grid_g, a.head, a.frame, a.size);
  if (a.gray) write_pgm(a.out, map);
  else write_ppm(a.out, map);
  std::cout << "wrote " << map.width << "x" << map.height << " heatmap to " << a.out << "\n";
  return kExitOk;
}

// gradcheck ---------------------------------------------------------------------

struct GradcheckArgs {
  std::string config;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const ModelConfig cfg = a.config.empty() ? tiny_model_config() : load_run_config(a.config).model;
  cfg.validate();
  bool ok = true;
  const auto quad = quadratic_self_test();
  std::printf("%-18s %12.3e  %s\n", "quadratic", quad.max_relative_error, quad.max_relative_error < 1e-9 ? "pass" : "FAIL");
  ok = ok && quad.max_relative_error < 1e-9;
  for (const auto& check : gradcheck_suite(cfg, a.seed)) {
    const bool pass = check.result.max_relative_error < a.tolerance;
    ok = ok && pass;
    std::printf("%-18s %12.3e  %s\n", check.name.c_str(), check.result.max_relative_error, pass ? "pass" : "FAIL");
  }
  if (!ok) {
    std::fprintf(stderr, "gradient check failed (tolerance %.1e)\n", a.tolerance);
    return kExitNumeric;
  }
  return kExitOk;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic video detector over frozen frame embeddings"};
  app.require_subcommand(1);
  int code = kExitOk;

  SynthArgs synth;
  auto* sc = app.add_subcommand("synth", "Generate a synthetic embedding dataset");
  sc->add_option("--spec", synth.spec, "JSON recipe spec (default: built-in three-recipe set)")->check(CLI::ExistingFile);
  sc->add_option("--out", synth.out, "Output directory")->required();
  sc->callback([&] { code = guarded([&] { return cmd_synth(synth); }); });

  TrainArgs train_args;
  auto* tc = app.add_subcommand("train", "Train a model");
  tc->add_option("--config", train_args.config, "key = value run config")->check(CLI::ExistingFile);
  tc->add_option("--manifest", train_args.manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  tc->add_option("--out", train_args.out, "Run directory")->required();
  tc->add_option("--loss", train_args.loss, "ce, ad or ce+ad")->check(CLI::IsMember({"ce", "ad", "ce+ad"}));
  tc->add_option("--depth", train_args.depths, "Encoder depth; a list runs one directory per value")->delimiter(',');
  tc->add_option("--frames", train_args.frames, "Frames per segment; a list runs one directory per value")->delimiter(',');
  tc->add_option("--resume", train_args.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  tc->add_option("--epochs-this-run", train_args.epochs_this_run, "Stop after this many epochs (0: run to completion)");
  tc->add_flag("--quiet", train_args.quiet, "No summary line");
  tc->callback([&] { code = guarded([&] { return cmd_train(train_args); }); });

  EvalArgs eval;
  auto* ec = app.add_subcommand("eval", "Score a manifest split and write reports");
  ec->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ec->add_option("--manifest", eval.manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  ec->add_option("--out", eval.out, "Run directory (reports/ is created inside)")->required();
  ec->add_option("--mode", eval.mode, "binary or finegrained")->check(CLI::IsMember({"binary", "finegrained"}));
  ec->add_option("--split", eval.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ec->add_option("--frames", eval.frames, "Keep the first k frames of each segment (0: all)");
  ec->add_option("--stride", eval.stride, "Frame sampling stride");
  ec->callback([&] { code = guarded([&] { return cmd_eval(eval); }); });

  HeatmapArgs hm;
  auto* hc = app.add_subcommand("heatmap", "Render first-block attention for one head and frame");
  hc->add_option("--checkpoint", hm.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  hc->add_option("--embedding", hm.embedding, "Embedding file")->required()->check(CLI::ExistingFile);
  hc->add_option("--out", hm.out, "Output .ppm (or .pgm with --gray)")->required();
  hc->add_option("--head", hm.head, "Attention head");
  hc->add_option("--frame", hm.frame, "Frame within the segment");
  hc->add_option("--segment", hm.segment, "Segment index within the video");
  hc->add_option("--size", hm.size, "Output width and height in pixels");
  hc->add_option("--stride", hm.stride, "Frame sampling stride");
  hc->add_flag("--gray", hm.gray, "Grayscale PGM instead of the yellow-to-blue PPM");
  hc->callback([&] { code = guarded([&] { return cmd_heatmap(hm); }); });

  GradcheckArgs gc;
  auto* gcc = app.add_subcommand("gradcheck", "Finite-difference check of every op and the training loss");
  gcc->add_option("--config", gc.config, "Run config whose model section is checked (default: tiny)")
      ->check(CLI::ExistingFile);
  gcc->add_option("--tolerance", gc.tolerance, "Maximum relative error");
  gcc->add_option("--seed", gc.seed, "Input seed");
  gcc->callback([&] { code = guarded([&] { return cmd_gradcheck(gc); }); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }
  return code;
}
