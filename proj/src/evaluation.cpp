#include "unite/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "unite/errors.hpp"
#include "unite/ops.hpp"

namespace unite {

std::vector<double> video_score(const std::vector<std::vector<double>>& segment_scores) {
  if (segment_scores.empty()) throw ValidationError("video_score: no segments");
  std::vector<double> mean(segment_scores.front().size(), 0.0);
  for (const auto& s : segment_scores) {
    if (s.size() != mean.size()) throw DimensionError("video_score: segments disagree on class count");
    for (std::size_t k = 0; k < s.size(); ++k) mean[k] += s[k];
  }
  for (double& v : mean) v /= static_cast<double>(segment_scores.size());
  return mean;
}

ThresholdMetrics threshold_metrics(std::span<const double> scores, std::span<const int> labels, double t) {
  if (scores.size() != labels.size()) throw DimensionError("threshold_metrics: scores and labels differ in length");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= t;
    const bool pos = labels[i] != 0;
    tp += pred && pos;
    fp += pred && !pos;
    tn += !pred && !pos;
    fn += !pred && pos;
  }
  ThresholdMetrics m;
  m.accuracy = scores.empty() ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  m.precision = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  m.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  return m;
}

PRMetrics pr_curve_metrics(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("pr_curve_metrics: scores and labels differ in length");
  const auto positives = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; }));
  if (positives == 0 || positives == labels.size()) {
    throw ValidationError("pr_curve_metrics: need both positive and negative labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  PRMetrics m;
  std::size_t tp = 0, fp = 0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (labels[order[i]] != 0 ? tp : fp) += 1;
    // Ties share one operating point: only emit after the last equal score.
    if (i + 1 < order.size() && scores[order[i + 1]] == scores[order[i]]) continue;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    m.pr_auc += (recall - prev_recall) * precision;
    prev_recall = recall;
    if (recall >= 0.8) m.precision_at_recall_08 = std::max(m.precision_at_recall_08, precision);
    if (precision >= 0.8) m.recall_at_precision_08 = std::max(m.recall_at_precision_08, recall);
  }
  return m;
}

EvalMode parse_eval_mode(const std::string& text) {
  if (text == "binary") return EvalMode::Binary;
  if (text == "finegrained") return EvalMode::FineGrained;
  throw ValidationError("mode: expected binary or finegrained, got '" + text + "'");
}

std::string to_string(EvalMode mode) { return mode == EvalMode::Binary ? "binary" : "finegrained"; }

std::size_t ScoredVideo::argmax() const {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

EvalReport report_for(const std::string& name, const std::vector<ScoredVideo>& videos, EvalMode mode) {
  EvalReport r;
  r.name = name;
  r.n_samples = videos.size();
  std::vector<double> scores;
  std::vector<int> labels;
  std::size_t correct = 0;
  for (const auto& v : videos) {
    scores.push_back(v.fake_score());
    labels.push_back(v.label != 0 ? 1 : 0);
    if (mode == EvalMode::FineGrained) correct += v.argmax() == v.label;
  }
  const auto at05 = threshold_metrics(scores, labels, 0.5);
  r.accuracy = mode == EvalMode::Binary || videos.empty()
                   ? at05.accuracy
                   : static_cast<double>(correct) / static_cast<double>(videos.size());
  r.precision_at_05 = at05.precision;
  r.recall_at_05 = at05.recall;
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos > 0 && static_cast<std::size_t>(pos) < labels.size()) {
    const auto pr = pr_curve_metrics(scores, labels);
    r.pr_auc = pr.pr_auc;
    r.precision_at_recall_08 = pr.precision_at_recall_08;
    r.recall_at_precision_08 = pr.recall_at_precision_08;
  }
  return r;
}

std::vector<EvalReport> build_reports(const std::vector<ScoredVideo>& videos, EvalMode mode) {
  std::map<std::string, std::vector<ScoredVideo>> by_dataset;
  for (const auto& v : videos) by_dataset[v.dataset].push_back(v);

  std::vector<EvalReport> reports;
  for (const auto& [dataset, group] : by_dataset) {
    EvalReport r = report_for(dataset, group, mode);
    std::vector<ScoredVideo> reals;
    std::map<std::string, std::vector<ScoredVideo>> by_generator;
    for (const auto& v : group) (v.label == 0 ? reals : by_generator[v.generator]).push_back(v);
    for (auto& [generator, fakes] : by_generator) {
      fakes.insert(fakes.end(), reals.begin(), reals.end());
      r.generators.push_back(report_for(generator, fakes, mode));
    }
    reports.push_back(std::move(r));
  }
  reports.push_back(report_for("all", videos, mode));
  return reports;
}

namespace {

using nlohmann::ordered_json;

ordered_json to_json(const EvalReport& r, bool sub = false) {
  auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json j;
  j[sub ? "generator" : "dataset"] = r.name;
  j["accuracy"] = r.accuracy;
  j["pr_auc"] = opt(r.pr_auc);
  j["precision_at_05"] = r.precision_at_05;
  j["recall_at_05"] = r.recall_at_05;
  j["precision_at_recall_08"] = opt(r.precision_at_recall_08);
  j["recall_at_precision_08"] = opt(r.recall_at_precision_08);
  j["n_samples"] = r.n_samples;
  if (!sub) {
    ordered_json gens = ordered_json::array();
    for (const auto& g : r.generators) gens.push_back(to_json(g, true));
    j["generators"] = gens;
  }
  return j;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string report_json(const EvalReport& report) { return to_json(report).dump(2) + "\n"; }

std::string reports_json(const std::vector<EvalReport>& reports) {
  ordered_json arr = ordered_json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  return arr.dump(2) + "\n";
}

std::string scores_csv(const std::vector<ScoredVideo>& videos) {
  std::ostringstream os;
  const std::size_t n_c = videos.empty() ? 0 : videos.front().probs.size();
  os << "video_id,dataset,generator,label";
  for (std::size_t k = 0; k < n_c; ++k) os << ",score_class_" << k;
  os << '\n';
  for (const auto& v : videos) {
    for (const auto* field : {&v.video_id, &v.dataset, &v.generator}) {
      if (field->find_first_of(",\n\"") != std::string::npos) {
        throw ValidationError("scores_csv: field '" + *field + "' contains a comma, quote or newline");
      }
    }
    os << v.video_id << ',' << v.dataset << ',' << v.generator << ',' << v.label;
    for (double p : v.probs) os << ',' << fmt(p);
    os << '\n';
  }
  return os.str();
}

std::vector<ScoredVideo> parse_scores_csv(const std::string& text) {
  std::stringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("scores csv: missing header");
  const auto header = split_csv_line(line);
  if (header.size() < 5 || header[0] != "video_id" || header[3] != "label") {
    throw DataError("scores csv: unexpected header '" + line + "'");
  }
  const std::size_t n_c = header.size() - 4;
  std::vector<ScoredVideo> videos;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4 + n_c) {
      throw DataError("scores csv line " + std::to_string(lineno) + ": expected " + std::to_string(4 + n_c) +
                      " fields, got " + std::to_string(cells.size()));
    }
    ScoredVideo v{cells[0], cells[1], cells[2], 0, {}};
    try {
      v.label = std::stoull(cells[3]);
      for (std::size_t k = 0; k < n_c; ++k) v.probs.push_back(std::stod(cells[4 + k]));
    } catch (const std::exception&) {
      throw DataError("scores csv line " + std::to_string(lineno) + ": bad number");
    }
    videos.push_back(std::move(v));
  }
  return videos;
}

std::vector<double> score_segments(const std::vector<VideoSegment>& segments, const UniteModel& model,
                                   std::size_t frames) {
  NoGradGuard no_grad;
  std::vector<std::vector<double>> per_segment;
  for (const auto& seg : segments) {
    const auto input = frames > 0 && frames < model.config().n_f ? truncate_frames(seg, frames) : seg;
    const auto probs = ops::softmax(forward(input.xi, model).logits, 0);
    per_segment.emplace_back(probs.data().begin(), probs.data().end());
  }
  return video_score(per_segment);
}

std::vector<ScoredVideo> score_manifest(const Manifest& manifest, const UniteModel& model, const EvalOptions& options) {
  const auto& cfg = model.config();
  const std::size_t want = options.mode == EvalMode::Binary ? 2 : 3;
  if (cfg.n_c != want) {
    throw ValidationError("mode: " + to_string(options.mode) + " needs a " + std::to_string(want) +
                          "-class checkpoint, this one has " + std::to_string(cfg.n_c));
  }
  if (options.frames > cfg.n_f) {
    throw ValidationError("frames: " + std::to_string(options.frames) + " exceeds n_f = " + std::to_string(cfg.n_f));
  }
  manifest.validate_labels(cfg.n_c);
  std::vector<ScoredVideo> videos;
  for (const auto& entry : manifest.split(options.split)) {
    const auto seq = load_embeddings(manifest.resolve(entry));
    if (seq.header.t_s != cfg.t_s || seq.header.d_s != cfg.d_s) {
      throw DataError("video " + entry.video_id + ": embeddings are " + std::to_string(seq.header.t_s) + "x" +
                      std::to_string(seq.header.d_s) + ", model expects " + std::to_string(cfg.t_s) + "x" +
                      std::to_string(cfg.d_s));
    }
    const auto segments = segment_video(seq, cfg.n_f, options.stride, entry.label, entry.video_id);
    videos.push_back({entry.video_id, entry.dataset, entry.generator, entry.label,
                      score_segments(segments, model, options.frames)});
  }
  return videos;
}

}  // namespace unite
