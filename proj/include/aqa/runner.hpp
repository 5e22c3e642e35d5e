#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "aqa/config.hpp"
#include "aqa/gradcheck.hpp"
#include "aqa/metrics.hpp"

namespace aqa {

using Dataset = std::vector<std::shared_ptr<const Sequence>>;

inline constexpr std::uint64_t kTrainStream = 1;
inline constexpr std::uint64_t kEvalStream = 2;

Dataset train_split(const RunConfig& cfg);
Dataset eval_split(const RunConfig& cfg);

struct TrainOutcome {
  std::unique_ptr<AqaModel> model;
  std::vector<StepStats> log;
  double seconds = 0.0;
};

// Full training run. With a non-empty out_dir it writes config.txt (the
// resolved config), loss.log and checkpoint.bin there; on a non-finite loss
// it writes diagnostics.txt and rethrows.
TrainOutcome train_run(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream* progress = nullptr);

std::string format_loss_line(int iter, const StepStats& s);
inline constexpr const char* kLossLogHeader = "iter,loss,lcls,liou,l1";

// One-pass evaluation: initialize on frame 1 ground truth, never
// re-initialize, score frames 2..n. Predictions (frame 1 = gt) are stored
// per sequence name when requested.
EvalReport ope_run(const AqaModel& model, const TrackerConfig& tracker, const Dataset& sequences,
                   std::map<std::string, std::vector<PixelBox>>* predictions = nullptr);

// Central-difference check of d(clip loss)/d(parameter) for every
// parameter tensor of the model, with propagated queries held fixed.
struct GroupCheck {
  std::string name;
  std::size_t count = 0;
  GradComparison cmp;
};
std::vector<GroupCheck> check_model_gradients(AqaModel& model, const SequenceSample& sample, const LossWeights& weights,
                                              double h = 1e-4);
// D=32, N=2, M=1, m=2, 32×32 search, 16×16 template.
RunConfig tiny_gradcheck_config();
// One unaugmented clip drawn from the training split with the run seed.
SequenceSample gradcheck_sample(const RunConfig& cfg);

// Known variants: full, decoder_off, ta_self_attention, stm_attention,
// stm_off, m1, m2, m4, m8 (decoder.window_m).
void apply_variant(RunConfig& cfg, const std::string& variant);

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  double ao = 0.0;
  double auc = 0.0;
  double sr50 = 0.0;
  std::size_t parameters = 0;
  double train_seconds = 0.0;
};

struct AblationSummary {
  std::string variant;
  double mean_ao = 0.0;
  double mean_auc = 0.0;
  double delta_ao = 0.0;  // against the first variant
  double delta_auc = 0.0;
};

struct AblationReport {
  std::vector<AblationRun> runs;
  std::vector<AblationSummary> summary;  // in variant order
};

// Trains and evaluates every variant for every seed on the same data.
AblationReport run_ablation(const RunConfig& base, const std::vector<std::string>& variants,
                            const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir,
                            std::ostream* progress = nullptr);

std::string ablation_table(const AblationReport& report);
std::string ablation_json(const AblationReport& report);

}  // namespace aqa
