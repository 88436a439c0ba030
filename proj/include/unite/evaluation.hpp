#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unite/data.hpp"
#include "unite/model.hpp"

namespace unite {

/// Mean of the segment probability vectors. Throws ValidationError when empty.
std::vector<double> video_score(const std::vector<std::vector<double>>& segment_scores);

struct ThresholdMetrics {
  double accuracy = 0.0;
  double precision = 0.0;  ///< 1.0 when nothing is predicted positive
  double recall = 0.0;     ///< 0.0 when there are no positives
};

/// Predicts positive iff score >= t. Labels are 0 (negative) or 1 (positive).
ThresholdMetrics threshold_metrics(std::span<const double> scores, std::span<const int> labels, double t);

struct PRMetrics {
  double pr_auc = 0.0;
  double precision_at_recall_08 = 0.0;
  double recall_at_precision_08 = 0.0;
};

/// One operating point per distinct score (predict positive iff score >= s).
/// PR-AUC is sum_k (R_k - R_{k-1}) P_k over points in descending-threshold
/// order, R_0 = 0. Throws ValidationError unless both classes are present.
PRMetrics pr_curve_metrics(std::span<const double> scores, std::span<const int> labels);

enum class EvalMode { Binary, FineGrained };

EvalMode parse_eval_mode(const std::string& text);
std::string to_string(EvalMode mode);

struct ScoredVideo {
  std::string video_id;
  std::string dataset;
  std::string generator;
  std::size_t label = 0;
  std::vector<double> probs;  ///< video-level class probabilities

  /// 1 - P(real).
  double fake_score() const { return 1.0 - probs.at(0); }
  std::size_t argmax() const;
};

/// Metrics for one group of videos. PR-curve fields are empty when the group
/// holds a single binary class.
struct EvalReport {
  std::string name;
  std::size_t n_samples = 0;
  double accuracy = 0.0;
  double precision_at_05 = 0.0;
  double recall_at_05 = 0.0;
  std::optional<double> pr_auc;
  std::optional<double> precision_at_recall_08;
  std::optional<double> recall_at_precision_08;
  std::vector<EvalReport> generators;

  bool operator==(const EvalReport&) const = default;
};

/// Metrics over `videos`. Binary labels are label != 0. Accuracy is fake_score
/// >= 0.5 against the binary label in binary mode and argmax against the
/// class label in fine-grained mode.
EvalReport report_for(const std::string& name, const std::vector<ScoredVideo>& videos, EvalMode mode);

/// One report per dataset tag in sorted order, then "all". Each dataset report
/// carries a sub-report per fake generator tag, computed on that generator's
/// videos plus the dataset's real videos.
std::vector<EvalReport> build_reports(const std::vector<ScoredVideo>& videos, EvalMode mode);

std::string report_json(const EvalReport& report);
std::string reports_json(const std::vector<EvalReport>& reports);

/// video_id,dataset,generator,label,score_class_0..score_class_{n_c-1}
std::string scores_csv(const std::vector<ScoredVideo>& videos);
std::vector<ScoredVideo> parse_scores_csv(const std::string& text);

struct EvalOptions {
  EvalMode mode = EvalMode::Binary;
  Split split = Split::Test;
  std::size_t frames = 0;  ///< keep this many frames per segment; 0 keeps n_f
  std::size_t stride = 2;
};

/// Scores one video's segments in inference mode.
std::vector<double> score_segments(const std::vector<VideoSegment>& segments, const UniteModel& model,
                                   std::size_t frames = 0);

/// Scores every video of the chosen split. Throws ValidationError when the
/// model's class count does not match the mode or frames > n_f.
std::vector<ScoredVideo> score_manifest(const Manifest& manifest, const UniteModel& model, const EvalOptions& options);

}  // namespace unite
