#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aqa/box.hpp"

namespace aqa {

// Success thresholds 0, 0.05, …, 1.0; a frame succeeds when IoU > τ.
inline constexpr int kSuccessThresholds = 21;
inline constexpr double kPrecisionPixels = 20.0;
inline constexpr double kNormPrecision = 0.2;

std::vector<double> success_thresholds();
std::vector<double> success_curve(const std::vector<double>& ious);
double success_auc(const std::vector<double>& ious);
// Fraction of frames with IoU > tau.
double success_rate(const std::vector<double>& ious, double tau);
double average_overlap(const std::vector<double>& ious);

double center_error(const PixelBox& pred, const PixelBox& gt);
// Center offset with x scaled by 1/w_gt and y by 1/h_gt, then the L2 norm.
double normalized_center_error(const PixelBox& pred, const PixelBox& gt);

struct PrecisionScores {
  double p20 = 0.0;
  double p_norm = 0.0;
};
PrecisionScores precision(const std::vector<PixelBox>& pred, const std::vector<PixelBox>& gt);

struct SequenceMetrics {
  std::string name;
  std::vector<double> ious;
  std::vector<double> center_errors;
  std::vector<double> norm_center_errors;
  double auc = 0.0;
  double p20 = 0.0;
  double p_norm = 0.0;
  double ao = 0.0;
  double sr50 = 0.0;
  double sr75 = 0.0;

  bool operator==(const SequenceMetrics&) const = default;
};

// Scores frames [first, n) of a sequence; the tracker is initialized on
// frame 0 so OPE runs pass first = 1.
SequenceMetrics score_sequence(const std::string& name, const std::vector<PixelBox>& pred,
                               const std::vector<PixelBox>& gt, int first = 1);

struct EvalReport {
  std::vector<SequenceMetrics> sequences;  // sorted by name
  double auc = 0.0;
  double p20 = 0.0;
  double p_norm = 0.0;
  double ao = 0.0;
  double sr50 = 0.0;
  double sr75 = 0.0;
  std::vector<std::string> skipped;

  bool operator==(const EvalReport&) const = default;
};

// Means over sequences, taken in name order so the result does not depend
// on the order sequences were evaluated in.
EvalReport aggregate(std::vector<SequenceMetrics> sequences, std::vector<std::string> skipped = {});

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
void write_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

}  // namespace aqa
