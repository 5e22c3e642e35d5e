#include "aqa/runner.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "aqa/checkpoint.hpp"
#include "aqa/error.hpp"
#include "json.hpp"

namespace aqa {

namespace fs = std::filesystem;

Dataset train_split(const RunConfig& cfg) { return synth_dataset(cfg.synth, cfg.data.train_sequences, kTrainStream); }
Dataset eval_split(const RunConfig& cfg) { return synth_dataset(cfg.synth, cfg.data.eval_sequences, kEvalStream); }

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  static_cast<void>(ec);
  return std::string(buf, ptr);
}

double l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void write_diagnostics(const fs::path& path, int iter, double lr_scale, const std::vector<SequenceSample>& batch,
                       const ParameterStore& params, const std::string& reason) {
  std::ofstream out(path);
  out << "reason: " << reason << "\n";
  out << "iteration: " << iter << "\n";
  out << "lr_scale: " << lr_scale << "\n";
  for (const SequenceSample& s : batch) {
    out << "sample " << s.source << " frames";
    for (int f : s.frames) out << ' ' << f;
    out << "\n";
  }
  out << "parameter,value_norm,grad_norm\n";
  for (const Parameter& p : params.all()) {
    out << p.name << ',' << l2(p.tensor.values()) << ',' << (p.tensor.has_grad() ? l2(p.tensor.grad()) : 0.0) << "\n";
  }
}

}  // namespace

std::string format_loss_line(int iter, const StepStats& s) {
  return std::to_string(iter) + "," + shortest(s.loss) + "," + shortest(s.cls) + "," + shortest(s.iou) + "," +
         shortest(s.l1);
}

TrainOutcome train_run(const RunConfig& cfg, const fs::path& out_dir, std::ostream* progress) {
  cfg.validate();
  const bool write = !out_dir.empty();
  std::ofstream log;
  if (write) {
    fs::create_directories(out_dir);
    write_config(cfg, out_dir / "config.txt");
    log.open(out_dir / "loss.log");
    if (!log) throw IoError("cannot open " + (out_dir / "loss.log").string());
    log << kLossLogHeader << "\n";
  }

  TrainOutcome outcome;
  outcome.model = std::make_unique<AqaModel>(cfg.model_config(), mix_seed(cfg.seed, 7));
  AqaModel& model = *outcome.model;
  const Dataset data = train_split(cfg);
  AdamW opt(model.parameters(), cfg.train.optim);
  Rng rng(mix_seed(cfg.seed, 11));
  const int ts = cfg.encoder.template_size, ss = cfg.encoder.search_size;
  const auto start = std::chrono::steady_clock::now();

  for (int iter = 0; iter < cfg.train.iterations; ++iter) {
    std::vector<SequenceSample> batch = sample_batch(data, cfg.sampler, ts, ss, rng);
    for (SequenceSample& s : batch) augment(s, cfg.sampler, rng);
    const double lr_scale = step_decay(iter, cfg.train.iterations, cfg.train.decay_fraction);
    StepStats stats;
    try {
      stats = train_step(model, batch, opt, cfg.loss, lr_scale);
    } catch (const NumericError& e) {
      if (write) write_diagnostics(out_dir / "diagnostics.txt", iter + 1, lr_scale, batch, model.parameters(), e.what());
      throw;
    }
    outcome.log.push_back(stats);
    const std::string line = format_loss_line(iter + 1, stats);
    if (write) log << line << "\n";
    if (progress != nullptr && ((iter + 1) % 100 == 0 || iter + 1 == cfg.train.iterations)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      char buf[64];
      std::snprintf(buf, sizeof buf, "  [%.0fs]", secs);
      *progress << line << buf << std::endl;
    }
    if (write && cfg.train.checkpoint_every > 0 && (iter + 1) % cfg.train.checkpoint_every == 0 &&
        iter + 1 < cfg.train.iterations) {
      char name[48];
      std::snprintf(name, sizeof name, "checkpoint_%06d.bin", iter + 1);
      save_checkpoint(model.parameters(), out_dir / name);
    }
  }
  if (write) {
    log.flush();
    if (!log) throw IoError("failed writing loss.log");
    save_checkpoint(model.parameters(), out_dir / "checkpoint.bin");
  }
  outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return outcome;
}

EvalReport ope_run(const AqaModel& model, const TrackerConfig& tracker_cfg, const Dataset& sequences,
                   std::map<std::string, std::vector<PixelBox>>* predictions) {
  const Tracker tracker(model, tracker_cfg);
  std::vector<SequenceMetrics> scored;
  std::vector<std::string> skipped;
  for (const auto& seq : sequences) {
    std::vector<PixelBox> gt;
    try {
      gt = seq->boxes();
    } catch (const IoError&) {
      skipped.push_back(seq->name());
      continue;
    }
    if (gt.empty() || static_cast<int>(gt.size()) != seq->length() || !(gt[0].w > 0.0 && gt[0].h > 0.0)) {
      skipped.push_back(seq->name());
      continue;
    }
    TrackerState state = tracker.init(seq->frame(0), gt[0]);
    std::vector<PixelBox> pred{gt[0]};
    for (int i = 1; i < seq->length(); ++i) pred.push_back(tracker.track(state, seq->frame(i)).box);
    scored.push_back(score_sequence(seq->name(), pred, gt, 1));
    if (predictions != nullptr) (*predictions)[seq->name()] = std::move(pred);
  }
  return aggregate(std::move(scored), std::move(skipped));
}

std::vector<GroupCheck> check_model_gradients(AqaModel& model, const SequenceSample& sample, const LossWeights& weights,
                                              double h) {
  ParameterStore& params = model.parameters();
  params.zero_grad();
  QueryReplay replay;
  clip_loss(model, sample, weights, nullptr, &replay).backward();
  replay.record = false;
  std::vector<GroupCheck> out;
  for (const Parameter& p : params.all()) {
    Tensor t = p.tensor;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    const Tensor numeric = fd_grad([&] { return clip_loss(model, sample, weights, nullptr, &replay).item(); }, t, h);
    out.push_back({p.name, t.numel(), compare_gradients(analytic, numeric.values())});
  }
  return out;
}

RunConfig tiny_gradcheck_config() {
  RunConfig c;
  c.encoder.template_size = 16;
  c.encoder.search_size = 32;
  c.encoder.dim = 32;
  c.encoder.layers = 2;
  c.encoder.heads = 2;
  c.encoder.mlp_blocks = 2;
  c.encoder.mlp_ratio = 2;
  c.decoder.layers = 1;
  c.decoder.heads = 2;
  c.decoder.ffn_dim = 64;
  c.decoder.window = 2;
  c.decoder.dim = 32;
  c.sampler.sequences = 1;
  c.sampler.pairs = 2;
  c.data.train_sequences = 2;
  return c;
}

SequenceSample gradcheck_sample(const RunConfig& cfg) {
  Rng rng(mix_seed(cfg.seed, 11));
  SamplerConfig one = cfg.sampler;
  one.sequences = 1;
  return sample_batch(train_split(cfg), one, cfg.encoder.template_size, cfg.encoder.search_size, rng).front();
}

void apply_variant(RunConfig& cfg, const std::string& variant) {
  if (variant == "full") return;
  if (variant == "decoder_off") {
    cfg.ablation.decoder_off = true;
  } else if (variant == "ta_self_attention") {
    cfg.ablation.ta_as_self_attention = true;
  } else if (variant == "stm_attention") {
    cfg.ablation.stm_as_attention = true;
  } else if (variant == "stm_off") {
    cfg.ablation.stm_off = true;
  } else if (variant.size() > 1 && variant[0] == 'm') {
    int m = 0;
    const auto [ptr, ec] = std::from_chars(variant.data() + 1, variant.data() + variant.size(), m);
    if (ec != std::errc() || ptr != variant.data() + variant.size() || m < 1) {
      throw ConfigError("ablate: bad window variant '" + variant + "'");
    }
    cfg.decoder.window = m;
  } else {
    throw ConfigError("ablate: unknown variant '" + variant + "'");
  }
  cfg.validate();
}

AblationReport run_ablation(const RunConfig& base, const std::vector<std::string>& variants,
                            const std::vector<std::uint64_t>& seeds, const fs::path& out_dir, std::ostream* progress) {
  if (variants.empty() || seeds.empty()) throw ConfigError("ablate: need at least one variant and one seed");
  AblationReport report;
  for (const std::string& v : variants) {
    RunConfig cfg = base;
    apply_variant(cfg, v);
    AblationSummary sum;
    sum.variant = v;
    for (std::uint64_t seed : seeds) {
      cfg.seed = seed;
      const fs::path dir = out_dir.empty() ? fs::path() : out_dir / (v + "_seed" + std::to_string(seed));
      TrainOutcome trained = train_run(cfg, dir);
      const EvalReport eval = ope_run(*trained.model, cfg.tracker, eval_split(cfg));
      if (!dir.empty()) write_report(eval, dir / "report.json");
      AblationRun run{v, seed, eval.ao, eval.auc, eval.sr50, trained.model->parameters().scalar_count(),
                      trained.seconds};
      if (progress != nullptr) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-18s seed %-4llu AO %.4f AUC %.4f SR50 %.4f (%.0fs)", v.c_str(),
                      static_cast<unsigned long long>(seed), run.ao, run.auc, run.sr50, run.train_seconds);
        *progress << buf << std::endl;
      }
      sum.mean_ao += run.ao / static_cast<double>(seeds.size());
      sum.mean_auc += run.auc / static_cast<double>(seeds.size());
      report.runs.push_back(run);
    }
    report.summary.push_back(sum);
  }
  for (AblationSummary& s : report.summary) {
    s.delta_ao = s.mean_ao - report.summary.front().mean_ao;
    s.delta_auc = s.mean_auc - report.summary.front().mean_auc;
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream(out_dir / "ablation.txt") << ablation_table(report);
    std::ofstream(out_dir / "ablation.json") << ablation_json(report) << "\n";
  }
  return report;
}

std::string ablation_table(const AblationReport& report) {
  std::string out = "variant             mean_AO   mean_AUC  dAO      dAUC\n";
  char buf[160];
  for (const AblationSummary& s : report.summary) {
    std::snprintf(buf, sizeof buf, "%-18s  %.4f    %.4f    %+.4f  %+.4f\n", s.variant.c_str(), s.mean_ao, s.mean_auc,
                  s.delta_ao, s.delta_auc);
    out += buf;
  }
  return out;
}

std::string ablation_json(const AblationReport& report) {
  using nlohmann::json;
  json runs = json::array();
  for (const AblationRun& r : report.runs) {
    runs.push_back({{"variant", r.variant},
                    {"seed", r.seed},
                    {"ao", r.ao},
                    {"auc", r.auc},
                    {"sr50", r.sr50},
                    {"parameters", r.parameters},
                    {"train_seconds", r.train_seconds}});
  }
  json summary = json::array();
  for (const AblationSummary& s : report.summary) {
    summary.push_back({{"variant", s.variant},
                       {"mean_ao", s.mean_ao},
                       {"mean_auc", s.mean_auc},
                       {"delta_ao", s.delta_ao},
                       {"delta_auc", s.delta_auc}});
  }
  return json{{"runs", runs}, {"summary", summary}}.dump(2);
}

}  // namespace aqa
