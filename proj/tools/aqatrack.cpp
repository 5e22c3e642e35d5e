// aqatrack: train, track, evaluate and ablate the tracker from one binary.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "aqa/checkpoint.hpp"
#include "aqa/error.hpp"
#include "aqa/runner.hpp"

namespace fs = std::filesystem;
using namespace aqa;

namespace {

int exit_code(const std::string& category) {
  static const std::map<std::string, int> codes = {{"config", 2},    {"io", 3},        {"dimension", 4},
                                                   {"contract", 5},  {"invariant", 6}, {"numeric", 7}};
  const auto it = codes.find(category);
  return it == codes.end() ? 1 : it->second;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig{} : parse_config(path);
  apply_overrides(cfg, overrides);
  return cfg;
}

template <class T>
std::vector<T> split_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if constexpr (std::is_same_v<T, std::string>) {
      out.push_back(item);
    } else {
      try {
        std::size_t used = 0;
        out.push_back(static_cast<T>(std::stoull(item, &used)));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw ConfigError(std::string(what) + ": bad entry '" + item + "'");
      }
    }
  }
  return out;
}

std::unique_ptr<AqaModel> load_model(const RunConfig& cfg, const std::string& checkpoint) {
  auto model = std::make_unique<AqaModel>(cfg.model_config(), mix_seed(cfg.seed, 7));
  load_checkpoint(model->parameters(), checkpoint);
  return model;
}

int cmd_train(const std::string& config, const std::vector<std::string>& overrides, const std::string& out_dir,
              std::optional<std::uint64_t> seed, bool evaluate) {
  RunConfig cfg = load_config(config, overrides);
  if (seed) cfg.seed = *seed;
  std::cerr << "training " << cfg.train.iterations << " iterations, " << cfg.sampler.batch_pairs()
            << " pairs per iteration\n";
  const TrainOutcome out = train_run(cfg, out_dir, &std::cerr);
  std::printf("trained %d iterations in %.1f s; final loss %.6f; parameters %zu\n", cfg.train.iterations, out.seconds,
              out.log.empty() ? 0.0 : out.log.back().loss, out.model->parameters().scalar_count());
  if (evaluate) {
    const auto start = std::chrono::steady_clock::now();
    const EvalReport report = ope_run(*out.model, cfg.tracker, eval_split(cfg));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_report(report, fs::path(out_dir) / "report.json");
    std::printf("held-out %zu sequences  AUC %.4f  P %.4f  Pnorm %.4f  AO %.4f  SR50 %.4f  SR75 %.4f  (%.1f s)\n",
                report.sequences.size(), report.auc, report.p20, report.p_norm, report.ao, report.sr50, report.sr75,
                secs);
  }
  return 0;
}

int cmd_track(const std::string& config, const std::vector<std::string>& overrides, const std::string& checkpoint,
              const std::string& sequence, const std::string& out, const std::string& overlays) {
  const RunConfig cfg = load_config(config, overrides);
  const auto model = load_model(cfg, checkpoint);
  const DiskSequence seq(sequence);
  const Tracker tracker(*model, cfg.tracker);
  TrackerState state = tracker.init(seq.frame(0), seq.box(0));
  std::vector<PixelBox> boxes{seq.box(0)};
  double seconds = 0.0;
  if (!overlays.empty()) fs::create_directories(overlays);
  for (int i = 0; i < seq.length(); ++i) {
    Image frame = seq.frame(i);
    if (i > 0) {
      const FrameResult r = tracker.track(state, frame);
      boxes.push_back(r.box);
      seconds += r.seconds;
    }
    if (!overlays.empty()) {
      draw_box(frame, boxes.back(), {1.0f, 0.1f, 0.1f});
      char name[32];
      std::snprintf(name, sizeof name, "%08d.ppm", i + 1);
      write_ppm(frame, fs::path(overlays) / name);
    }
  }
  const fs::path out_path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_boxes(boxes, out_path);
  write_config(cfg, fs::path(out_path.string() + ".config.txt"));
  const int tracked = seq.length() - 1;
  std::printf("%s: %d frames, %.1f fps\n", seq.name().c_str(), seq.length(), tracked > 0 ? tracked / seconds : 0.0);
  return 0;
}

int cmd_eval(const std::string& config, const std::vector<std::string>& overrides, const std::string& results,
             const std::string& annotations, const std::string& out) {
  const RunConfig cfg = load_config(config, overrides);
  if (!fs::is_directory(annotations)) throw IoError("annotation directory not found: " + annotations);
  std::vector<SequenceMetrics> scored;
  std::vector<std::string> skipped;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(annotations)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const fs::path& dir : dirs) {
    const std::string name = dir.filename().string();
    const fs::path gt_path = dir / "groundtruth.txt";
    const fs::path res_path = fs::path(results) / (name + ".txt");
    if (!fs::exists(gt_path)) {
      std::cerr << "warning: " << name << ": missing groundtruth.txt, skipped\n";
      skipped.push_back(name);
      continue;
    }
    if (!fs::exists(res_path)) {
      std::cerr << "warning: " << name << ": no result file, skipped\n";
      skipped.push_back(name);
      continue;
    }
    const auto gt = read_boxes(gt_path);
    const auto pred = read_boxes(res_path);
    if (gt.size() != pred.size()) {
      std::cerr << "warning: " << name << ": " << pred.size() << " results vs " << gt.size()
                << " annotations, skipped\n";
      skipped.push_back(name);
      continue;
    }
    scored.push_back(score_sequence(name, pred, gt, 1));
  }
  const EvalReport report = aggregate(std::move(scored), std::move(skipped));
  const fs::path out_path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_report(report, out_path);
  write_config(cfg, fs::path(out_path.string() + ".config.txt"));
  std::printf("sequences %zu  AUC %.4f  P %.4f  Pnorm %.4f  AO %.4f  SR50 %.4f  SR75 %.4f\n", report.sequences.size(),
              report.auc, report.p20, report.p_norm, report.ao, report.sr50, report.sr75);
  return 0;
}

int cmd_synth(const std::string& config, const std::vector<std::string>& overrides, const std::string& out_dir,
              const std::string& split, int count) {
  RunConfig cfg = load_config(config, overrides);
  if (split != "train" && split != "eval") throw ConfigError("synth --split: expected train or eval, got '" + split + "'");
  if (count >= 0) (split == "train" ? cfg.data.train_sequences : cfg.data.eval_sequences) = count;
  const Dataset data = split == "train" ? train_split(cfg) : eval_split(cfg);
  fs::create_directories(out_dir);
  for (const auto& seq : data) write_sequence(*seq, fs::path(out_dir) / seq->name());
  write_config(cfg, fs::path(out_dir) / "config.txt");
  std::printf("wrote %zu sequences of %d frames to %s\n", data.size(), cfg.synth.length, out_dir.c_str());
  return 0;
}

int cmd_gradcheck(const std::string& config, const std::vector<std::string>& overrides, double h, double tolerance,
                  const std::string& out_dir) {
  RunConfig cfg = config.empty() ? tiny_gradcheck_config() : parse_config(config);
  apply_overrides(cfg, overrides);
  AqaModel model(cfg.model_config(), mix_seed(cfg.seed, 7));
  const SequenceSample sample = gradcheck_sample(cfg);
  const auto start = std::chrono::steady_clock::now();
  const auto checks = check_model_gradients(model, sample, cfg.loss, h);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  double worst = 0.0;
  for (const GroupCheck& g : checks) {
    std::printf("%-44s %7zu  rel %.3e  abs %.3e\n", g.name.c_str(), g.count, g.cmp.max_rel_error, g.cmp.max_abs_error);
    worst = std::max(worst, g.cmp.max_rel_error);
  }
  std::printf("groups %zu  worst relative error %.3e  (%.1f s)\n", checks.size(), worst, secs);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_config(cfg, fs::path(out_dir) / "config.txt");
  }
  if (!(worst < tolerance)) {
    throw NumericError("gradient check failed: worst relative error " + std::to_string(worst) + " ≥ " +
                       std::to_string(tolerance));
  }
  return 0;
}

int cmd_ablate(const std::string& config, const std::vector<std::string>& overrides, const std::string& out_dir,
               const std::string& variants, const std::string& seeds) {
  const RunConfig cfg = load_config(config, overrides);
  fs::create_directories(out_dir);
  write_config(cfg, fs::path(out_dir) / "config.txt");
  const AblationReport report = run_ablation(cfg, split_list<std::string>(variants, "--variants"),
                                             split_list<std::uint64_t>(seeds, "--seeds"), out_dir, &std::cerr);
  std::fputs(ablation_table(report).c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Autoregressive-query transformer tracker"};
  app.require_subcommand(1);

  std::string config, out_dir, checkpoint, sequence, out, overlays, results, annotations, split = "eval";
  std::string variants = "full,decoder_off,ta_self_attention,m1", seeds = "1,2,3";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int count = -1;
  bool evaluate = false;
  double h = 1e-4, tolerance = 1e-3;

  const auto common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", config, "key = value run config");
    if (config_required) opt->required();
    sub->add_option("--set", overrides, "override a config key (key=value), repeatable");
  };

  auto* train = app.add_subcommand("train", "train a model on synthetic sequences");
  common(train, false);
  train->add_option("--out-dir", out_dir, "output directory")->required();
  train->add_option("--seed", seed, "run seed (overrides the config)");
  train->add_flag("--eval", evaluate, "evaluate on the held-out split and write report.json");

  auto* track = app.add_subcommand("track", "track one sequence directory");
  common(track, true);
  track->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  track->add_option("--sequence", sequence, "sequence directory")->required();
  track->add_option("--out", out, "result file (x,y,w,h per frame)")->required();
  track->add_option("--dump-overlays", overlays, "write frames with the predicted box");

  auto* eval = app.add_subcommand("eval", "score result files against annotations");
  common(eval, false);
  eval->add_option("--results", results, "directory of <sequence>.txt result files")->required();
  eval->add_option("--annotations", annotations, "directory of sequence directories")->required();
  eval->add_option("--out", out, "report path (JSON)")->required();

  auto* synth = app.add_subcommand("synth", "write synthetic sequences to disk");
  common(synth, false);
  synth->add_option("--out-dir", out_dir, "output directory")->required();
  synth->add_option("--split", split, "train or eval");
  synth->add_option("--count", count, "number of sequences (default from config)");

  auto* grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  common(grad, false);
  grad->add_option("--step", h, "central-difference step");
  grad->add_option("--tolerance", tolerance, "maximum relative error");
  grad->add_option("--out-dir", out_dir, "where to write the resolved config");

  auto* ablate = app.add_subcommand("ablate", "train and compare ablation variants");
  common(ablate, false);
  ablate->add_option("--out-dir", out_dir, "output directory")->required();
  ablate->add_option("--variants", variants, "comma-separated variants; the first is the reference");
  ablate->add_option("--seeds", seeds, "comma-separated seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[config]: " << e.what() << "\n";
    return exit_code("config");
  }

  try {
    if (*train) return cmd_train(config, overrides, out_dir, seed, evaluate);
    if (*track) return cmd_track(config, overrides, checkpoint, sequence, out, overlays);
    if (*eval) return cmd_eval(config, overrides, results, annotations, out);
    if (*synth) return cmd_synth(config, overrides, out_dir, split, count);
    if (*grad) return cmd_gradcheck(config, overrides, h, tolerance, out_dir);
    if (*ablate) return cmd_ablate(config, overrides, out_dir, variants, seeds);
  } catch (const Error& e) {
    std::cerr << "error[" << e.category() << "]: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error[io]: " << e.what() << "\n";
    return exit_code("io");
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
