#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "unite/checkpoint.hpp"
#include "unite/data.hpp"
#include "unite/errors.hpp"
#include "unite/evaluation.hpp"
#include "unite/gradcheck_suite.hpp"
#include "unite/model.hpp"
#include "unite/training.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace unite;

namespace {

py::dict entry_dict(const ManifestEntry& e) {
  py::dict d;
  d["video_id"] = e.video_id;
  d["embedding_path"] = e.embedding_path;
  d["label"] = e.label;
  d["dataset"] = e.dataset;
  d["generator"] = e.generator;
  d["split"] = to_string(e.split);
  return d;
}

py::dict metrics_dict(const StepMetrics& m) {
  py::dict d;
  d["step"] = m.step;
  d["epoch"] = m.epoch;
  d["lr"] = m.lr;
  d["loss_total"] = m.loss_total;
  d["loss_ce"] = m.loss_ce;
  d["loss_within"] = m.loss_within;
  d["loss_between"] = m.loss_between;
  d["train_acc"] = m.train_acc;
  return d;
}

py::array_t<double> to_array(const Tensor& t) {
  py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::list synth(const std::string& spec_json, const fs::path& out_dir) {
  const SynthSpec spec = spec_json.empty() ? default_synth_spec() : parse_synth_spec(spec_json);
  py::list entries;
  for (const auto& e : synth_dataset(spec, out_dir).entries) entries.append(entry_dict(e));
  return entries;
}

py::list train_run(const std::string& config_text, const fs::path& manifest_path, const fs::path& out_dir,
                   std::size_t max_epochs, const std::optional<fs::path>& resume) {
  const RunConfig config = parse_run_config(config_text);
  const Manifest manifest = load_manifest(manifest_path);
  const auto segments = load_segments(manifest, Split::Train, config.model, config.stride);
  TrainOptions options;
  options.out_dir = out_dir;
  options.max_epochs_this_run = max_epochs;
  options.resume = resume;
  TrainResult result;
  {
    py::gil_scoped_release release;
    result = train(segments, config, options);
  }
  py::list rows;
  for (const auto& m : result.metrics) rows.append(metrics_dict(m));
  return rows;
}

py::tuple evaluate(const fs::path& checkpoint, const fs::path& manifest_path, const std::string& mode,
                   const std::string& split, std::size_t frames, std::size_t stride) {
  EvalOptions options;
  options.mode = parse_eval_mode(mode);
  options.split = parse_split(split);
  options.frames = frames;
  if (stride == 0) throw ValidationError("stride: must be at least 1");
  options.stride = stride;
  const UniteModel model = load_model(checkpoint);
  const Manifest manifest = load_manifest(manifest_path);
  std::vector<ScoredVideo> videos;
  {
    py::gil_scoped_release release;
    videos = score_manifest(manifest, model, options);
  }
  return py::make_tuple(reports_json(build_reports(videos, options.mode)), scores_csv(videos));
}

py::dict pr_metrics(const std::vector<double>& scores, const std::vector<int>& labels) {
  const auto at05 = threshold_metrics(scores, labels, 0.5);
  const auto pr = pr_curve_metrics(scores, labels);
  py::dict d;
  d["accuracy"] = at05.accuracy;
  d["precision_at_05"] = at05.precision;
  d["recall_at_05"] = at05.recall;
  d["pr_auc"] = pr.pr_auc;
  d["precision_at_recall_08"] = pr.precision_at_recall_08;
  d["recall_at_precision_08"] = pr.recall_at_precision_08;
  return d;
}

py::dict forward_checkpoint(const fs::path& checkpoint, py::array_t<double, py::array::c_style | py::array::forcecast> x) {
  const UniteModel model = load_model(checkpoint);
  const auto& c = model.config();
  if (x.ndim() != 3 || static_cast<std::size_t>(x.shape(0)) != c.n_f || static_cast<std::size_t>(x.shape(1)) != c.t_s ||
      static_cast<std::size_t>(x.shape(2)) != c.d_s) {
    throw DimensionError("forward: expected a [n_f, t_s, d_s] array matching the checkpoint");
  }
  const Tensor seg = Tensor::constant({c.n_f, c.t_s, c.d_s}, std::vector<double>(x.data(), x.data() + x.size()));
  NoGradGuard no_grad;
  const auto r = forward(seg, model);
  py::dict d;
  d["logits"] = to_array(r.logits);
  d["spatial_view"] = to_array(r.attention.spatial_view);
  return d;
}

py::array_t<double> read_embeddings(const fs::path& path) {
  const auto seq = load_embeddings(path);
  py::array_t<double> out({static_cast<py::ssize_t>(seq.header.frame_count), static_cast<py::ssize_t>(seq.header.t_s),
                           static_cast<py::ssize_t>(seq.header.d_s)});
  std::copy(seq.values.begin(), seq.values.end(), out.mutable_data());
  return out;
}

void save_embeddings(const fs::path& path, py::array_t<float, py::array::c_style | py::array::forcecast> x) {
  if (x.ndim() != 3) throw DimensionError("write_embeddings: expected a [frames, t_s, d_s] array");
  write_embeddings(path, static_cast<std::uint32_t>(x.shape(0)), static_cast<std::uint32_t>(x.shape(1)),
                   static_cast<std::uint32_t>(x.shape(2)), std::span<const float>(x.data(), x.size()));
}

py::list gradcheck(std::uint64_t seed) {
  py::list out;
  for (const auto& c : gradcheck_suite(tiny_model_config(), seed)) out.append(py::make_tuple(c.name, c.result.max_relative_error));
  return out;
}

}  // namespace

PYBIND11_MODULE(_unite, m) {
  m.doc() = "Transformer video detector over frozen frame embeddings";

  auto base = py::register_exception<Error>(m, "UniteError", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  auto data = py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", data.ptr());

  m.def("default_synth_spec", [](std::uint64_t seed) { return synth_spec_json(default_synth_spec(seed)); },
        py::arg("seed") = 0, "Built-in three-recipe spec as JSON text.");
  m.def("synth", &synth, py::arg("spec_json"), py::arg("out_dir"),
        "Writes a synthetic dataset; returns the manifest entries. Empty spec uses the default.");
  m.def("train", &train_run, py::arg("config_text"), py::arg("manifest"), py::arg("out_dir"),
        py::arg("max_epochs") = 0, py::arg("resume") = std::nullopt, "Trains and returns the per-step metrics rows.");
  m.def("evaluate", &evaluate, py::arg("checkpoint"), py::arg("manifest"), py::arg("mode") = "binary",
        py::arg("split") = "test", py::arg("frames") = 0, py::arg("stride") = 2,
        "Returns (reports JSON text, scores CSV text).");
  m.def("forward", &forward_checkpoint, py::arg("checkpoint"), py::arg("segment"),
        "Inference on one [n_f, t_s, d_s] segment: logits and spatial_view.");
  m.def("metrics", &pr_metrics, py::arg("scores"), py::arg("labels"),
        "Threshold-0.5 and PR-curve metrics for binary labels.");
  m.def("positional_encoding", [](std::size_t n_f, std::size_t d) { return to_array(positional_encoding(n_f, d)); },
        py::arg("n_f"), py::arg("d"));
  m.def("load_embeddings", &read_embeddings, py::arg("path"));
  m.def("write_embeddings", &save_embeddings, py::arg("path"), py::arg("values"));
  m.def("format_run_config", [](const std::string& text) { return format_run_config(parse_run_config(text)); },
        py::arg("text") = "", "Normalized config text with every field.");
  m.def("gradcheck", &gradcheck, py::arg("seed") = 0, "(name, max relative error) per check on the tiny config.");
}
