#include "aqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "aqa/error.hpp"
#include "json.hpp"

namespace aqa {

using nlohmann::json;

std::vector<double> success_thresholds() {
  std::vector<double> t(kSuccessThresholds);
  for (int i = 0; i < kSuccessThresholds; ++i) t[i] = i / 20.0;
  return t;
}

double success_rate(const std::vector<double>& ious, double tau) {
  if (ious.empty()) return 0.0;
  const auto hits = std::count_if(ious.begin(), ious.end(), [tau](double v) { return v > tau; });
  return static_cast<double>(hits) / static_cast<double>(ious.size());
}

std::vector<double> success_curve(const std::vector<double>& ious) {
  std::vector<double> curve;
  for (double tau : success_thresholds()) curve.push_back(success_rate(ious, tau));
  return curve;
}

double success_auc(const std::vector<double>& ious) {
  double s = 0.0;
  for (double v : success_curve(ious)) s += v;
  return s / kSuccessThresholds;
}

double average_overlap(const std::vector<double>& ious) {
  if (ious.empty()) return 0.0;
  double s = 0.0;
  for (double v : ious) s += v;
  return s / static_cast<double>(ious.size());
}

double center_error(const PixelBox& pred, const PixelBox& gt) { return std::hypot(pred.cx() - gt.cx(), pred.cy() - gt.cy()); }

double normalized_center_error(const PixelBox& pred, const PixelBox& gt) {
  if (!(gt.w > 0.0) || !(gt.h > 0.0)) return std::numeric_limits<double>::max();
  return std::hypot((pred.cx() - gt.cx()) / gt.w, (pred.cy() - gt.cy()) / gt.h);
}

PrecisionScores precision(const std::vector<PixelBox>& pred, const std::vector<PixelBox>& gt) {
  if (pred.size() != gt.size()) {
    throw DimensionError("precision: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(gt.size()) +
                         " annotations");
  }
  PrecisionScores s;
  if (pred.empty()) return s;
  int p = 0, pn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    p += center_error(pred[i], gt[i]) <= kPrecisionPixels ? 1 : 0;
    pn += normalized_center_error(pred[i], gt[i]) <= kNormPrecision ? 1 : 0;
  }
  s.p20 = static_cast<double>(p) / static_cast<double>(pred.size());
  s.p_norm = static_cast<double>(pn) / static_cast<double>(pred.size());
  return s;
}

SequenceMetrics score_sequence(const std::string& name, const std::vector<PixelBox>& pred,
                               const std::vector<PixelBox>& gt, int first) {
  if (pred.size() != gt.size()) {
    throw DimensionError(name + ": " + std::to_string(pred.size()) + " result lines vs " + std::to_string(gt.size()) +
                         " annotations");
  }
  SequenceMetrics m;
  m.name = name;
  std::vector<PixelBox> p, g;
  for (std::size_t i = static_cast<std::size_t>(std::max(0, first)); i < pred.size(); ++i) {
    m.ious.push_back(iou(pred[i], gt[i]));
    m.center_errors.push_back(center_error(pred[i], gt[i]));
    m.norm_center_errors.push_back(normalized_center_error(pred[i], gt[i]));
    p.push_back(pred[i]);
    g.push_back(gt[i]);
  }
  m.auc = success_auc(m.ious);
  const PrecisionScores ps = precision(p, g);
  m.p20 = ps.p20;
  m.p_norm = ps.p_norm;
  m.ao = average_overlap(m.ious);
  m.sr50 = success_rate(m.ious, 0.5);
  m.sr75 = success_rate(m.ious, 0.75);
  return m;
}

EvalReport aggregate(std::vector<SequenceMetrics> sequences, std::vector<std::string> skipped) {
  std::sort(sequences.begin(), sequences.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  std::sort(skipped.begin(), skipped.end());
  EvalReport r;
  r.sequences = std::move(sequences);
  r.skipped = std::move(skipped);
  if (r.sequences.empty()) return r;
  for (const SequenceMetrics& m : r.sequences) {
    r.auc += m.auc;
    r.p20 += m.p20;
    r.p_norm += m.p_norm;
    r.ao += m.ao;
    r.sr50 += m.sr50;
    r.sr75 += m.sr75;
  }
  const double n = static_cast<double>(r.sequences.size());
  r.auc /= n;
  r.p20 /= n;
  r.p_norm /= n;
  r.ao /= n;
  r.sr50 /= n;
  r.sr75 /= n;
  return r;
}

namespace {

json metrics_json(const SequenceMetrics& m) {
  return {{"name", m.name},   {"auc", m.auc},   {"p20", m.p20},   {"p_norm", m.p_norm},
          {"ao", m.ao},       {"sr50", m.sr50}, {"sr75", m.sr75}, {"ious", m.ious},
          {"center_errors", m.center_errors}, {"norm_center_errors", m.norm_center_errors}};
}

}  // namespace

std::string report_to_json(const EvalReport& r) {
  json seqs = json::array();
  for (const SequenceMetrics& m : r.sequences) seqs.push_back(metrics_json(m));
  const json doc = {{"summary",
                     {{"sequences", r.sequences.size()},
                      {"auc", r.auc},
                      {"p20", r.p20},
                      {"p_norm", r.p_norm},
                      {"ao", r.ao},
                      {"sr50", r.sr50},
                      {"sr75", r.sr75}}},
                    {"conventions",
                     {{"success_thresholds", kSuccessThresholds},
                      {"success_compare", "iou > threshold"},
                      {"precision_pixels", kPrecisionPixels},
                      {"norm_precision", kNormPrecision},
                      {"first_scored_frame", 2}}},
                    {"per_sequence", seqs},
                    {"skipped", r.skipped}};
  return doc.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    EvalReport r;
    const json& s = doc.at("summary");
    r.auc = s.at("auc").get<double>();
    r.p20 = s.at("p20").get<double>();
    r.p_norm = s.at("p_norm").get<double>();
    r.ao = s.at("ao").get<double>();
    r.sr50 = s.at("sr50").get<double>();
    r.sr75 = s.at("sr75").get<double>();
    for (const json& j : doc.at("per_sequence")) {
      SequenceMetrics m;
      m.name = j.at("name").get<std::string>();
      m.auc = j.at("auc").get<double>();
      m.p20 = j.at("p20").get<double>();
      m.p_norm = j.at("p_norm").get<double>();
      m.ao = j.at("ao").get<double>();
      m.sr50 = j.at("sr50").get<double>();
      m.sr75 = j.at("sr75").get<double>();
      m.ious = j.at("ious").get<std::vector<double>>();
      m.center_errors = j.at("center_errors").get<std::vector<double>>();
      m.norm_center_errors = j.at("norm_center_errors").get<std::vector<double>>();
      r.sequences.push_back(std::move(m));
    }
    r.skipped = doc.at("skipped").get<std::vector<std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed report: ") + e.what());
  }
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << report_to_json(report) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

}  // namespace aqa
