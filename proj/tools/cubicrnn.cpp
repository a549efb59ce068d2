// SPDX-License-Identifier: Apache-2.0
//
// Command-line harness: train | eval | predict | gradcheck | viz.
// Exit codes: 0 success, 1 verification failure, 2 usage/config error,
// 3 numeric divergence.

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cubic/checkpoint.hpp"
#include "cubic/config.hpp"
#include "cubic/data.hpp"
#include "cubic/grid.hpp"
#include "cubic/loss.hpp"
#include "cubic/pgm.hpp"
#include "cubic/train.hpp"
#include "cubic/verify.hpp"

namespace fs = std::filesystem;
using namespace cubic;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string zero_pad(int v, int digits) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < digits) s.insert(s.begin(), '0');
  return s;
}

void write_metrics_header(std::ofstream& out, const std::string& config_echo) {
  std::istringstream lines(config_echo);
  std::string line;
  while (std::getline(lines, line)) out << "# " << line << "\n";
  out << "iteration,phase,loss_kind,loss,lr,wall_ms\n";
  out.flush();
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  std::vector<std::string> sets;
  bool resume = false;
};

// The model-defining part of a config echo: everything except the iteration
// budget and artifact paths, which may legitimately change across resumes.
std::string resume_fingerprint(const std::string& config_text) {
  std::istringstream in(config_text);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("train.total_iterations", 0) == 0 || line.rfind("paths.", 0) == 0) continue;
    out << line << '\n';
  }
  return out.str();
}

int cmd_train(const TrainArgs& args) {
  ConfigMap cm = ConfigMap::parse_file(args.config_path);
  for (const auto& kv : args.sets) cm.set_kv(kv);
  const RunConfig rc = RunConfig::from_map(cm);
  const std::string config_echo = rc.canonical_text();
  Sampler<float> sampler = make_sampler<float>(rc);

  CubicModel<float> model;
  std::vector<AdamSlot<float>> slots;
  std::int64_t start_iteration = 0;
  if (args.resume && fs::exists(rc.checkpoint_path)) {
    LoadedCheckpoint ck = load_checkpoint(rc.checkpoint_path);
    if (resume_fingerprint(ck.config_text) != resume_fingerprint(config_echo)) {
      throw ConfigError(rc.checkpoint_path +
                        ": checkpoint configuration differs from the requested one; refusing to resume");
    }
    model = std::move(ck.model);
    slots = std::move(ck.slots);
    start_iteration = static_cast<std::int64_t>(ck.iteration);
    std::printf("resuming from %s at iteration %" PRId64 "\n", rc.checkpoint_path.c_str(),
                start_iteration);
  } else {
    model = CubicModel<float>::create(rc.grid);
    model.init_params(rc.train.seed);
    slots = init_adam_slots(model);
  }

  const bool fresh = start_iteration == 0;
  std::ofstream csv(rc.metrics_path, fresh ? std::ios::trunc : std::ios::app);
  if (!csv) throw UsageError(rc.metrics_path + ": cannot open metrics file");
  if (fresh) write_metrics_header(csv, config_echo);

  auto on_record = [&](const TrainRecord& r) {
    csv << r.iteration << ',' << (r.is_val ? "val" : "train") << ',' << loss_kind_name(r.loss_kind)
        << ',' << format_g17(r.loss) << ',' << format_g17(r.lr) << ',' << r.wall_ms << '\n';
    csv.flush();
    if (!r.is_val && rc.checkpoint_every > 0 && (r.iteration + 1) % rc.checkpoint_every == 0 &&
        r.iteration + 1 < rc.train.total_iterations) {
      save_checkpoint(rc.checkpoint_path, config_echo, model, slots,
                      static_cast<std::uint64_t>(r.iteration + 1));
    }
  };

  const auto records = train(model, sampler, rc.train, slots, start_iteration, on_record);
  save_checkpoint(rc.checkpoint_path, config_echo, model, slots,
                  static_cast<std::uint64_t>(rc.train.total_iterations));

  double final_loss = 0;
  for (const auto& r : records) {
    if (!r.is_val) final_loss = r.loss;
  }
  std::printf("trained %zu iterations, final train %s = %s, checkpoint %s, metrics %s\n",
              records.empty() ? 0 : static_cast<std::size_t>(rc.train.total_iterations - start_iteration),
              loss_kind_name(rc.train.loss_kind), format_g17(final_loss).c_str(),
              rc.checkpoint_path.c_str(), rc.metrics_path.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string seeds;  // START:COUNT
  std::string report = "eval_report.csv";
};

std::pair<std::uint64_t, int> parse_seed_range(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) {
    throw UsageError("--seeds expects START:COUNT, got '" + spec + "'");
  }
  try {
    const std::uint64_t start = std::stoull(spec.substr(0, colon));
    const int count = std::stoi(spec.substr(colon + 1));
    return {start, count};
  } catch (const std::exception&) {
    throw UsageError("--seeds expects START:COUNT, got '" + spec + "'");
  }
}

int cmd_eval(const EvalArgs& args) {
  const auto [seed_start, seed_count] = parse_seed_range(args.seeds);
  if (seed_count <= 0) throw UsageError("eval: empty seed range (no data)");
  LoadedCheckpoint ck = load_checkpoint(args.checkpoint);
  Sampler<float> sampler = make_sampler<float>(ck.config);
  const int horizon = ck.config.grid.predict_len;

  std::vector<double> mse_per_step(horizon, 0.0), bce_per_step(horizon, 0.0);
  double mse_total = 0, bce_total = 0;
  for (int s = 0; s < seed_count; ++s) {
    const SequenceSample<float> sample = sampler(seed_start + static_cast<std::uint64_t>(s));
    const auto preds = encode_decode(ck.model, sample.context(), horizon);
    const auto targets = sample.targets();
    for (int k = 0; k < horizon; ++k) {
      const std::span<const Tensor<float>> p(&preds[k], 1);
      const std::span<const Tensor<float>> t(&targets[k], 1);
      mse_per_step[k] += mse_value(p, t);
      bce_per_step[k] += bce_value(p, t);
    }
    mse_total += mse_value<float>(preds, targets);
    bce_total += bce_value<float>(preds, targets);
  }
  mse_total /= seed_count;
  bce_total /= seed_count;
  for (auto& v : mse_per_step) v /= seed_count;
  for (auto& v : bce_per_step) v /= seed_count;

  std::printf("evaluated %d sequences (seeds %" PRIu64 "..%" PRIu64 ")\n", seed_count, seed_start,
              seed_start + seed_count - 1);
  std::printf("per-frame MSE = %s\n", format_g17(mse_total).c_str());
  std::printf("per-frame BCE = %s\n", format_g17(bce_total).c_str());
  std::printf("%-6s %-24s %-24s\n", "step", "mse", "bce");
  for (int k = 0; k < horizon; ++k) {
    std::printf("%-6d %-24s %-24s\n", k + 1, format_g17(mse_per_step[k]).c_str(),
                format_g17(bce_per_step[k]).c_str());
  }

  std::ofstream rep(args.report, std::ios::trunc);
  if (!rep) throw UsageError(args.report + ": cannot open report file");
  rep << "step,mse,bce\n";
  rep << "all," << format_g17(mse_total) << ',' << format_g17(bce_total) << '\n';
  for (int k = 0; k < horizon; ++k) {
    rep << k + 1 << ',' << format_g17(mse_per_step[k]) << ',' << format_g17(bce_per_step[k]) << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint;
  std::string out_dir = "out";
  std::string frames_dir;
  std::uint64_t seed = 0;
  bool have_seed = false;
};

Tensor<float> make_montage(const std::vector<std::span<const Tensor<float>>>& rows) {
  const int h = rows[0][0].height(), w = rows[0][0].width();
  const int gap = 2;
  std::size_t max_tiles = 0;
  for (const auto& r : rows) max_tiles = std::max(max_tiles, r.size());
  Tensor<float> canvas(static_cast<int>(rows.size()) * (h + gap) - gap,
                       static_cast<int>(max_tiles) * (w + gap) - gap, 1);
  canvas.fill(0.5f);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t t = 0; t < rows[r].size(); ++t) {
      const auto& tile = rows[r][t];
      const int oy = static_cast<int>(r) * (h + gap), ox = static_cast<int>(t) * (w + gap);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) canvas.at(oy + y, ox + x, 0) = tile.at(y, x, 0);
      }
    }
  }
  return canvas;
}

int cmd_predict(const PredictArgs& args) {
  LoadedCheckpoint ck = load_checkpoint(args.checkpoint);
  const GridConfig& g = ck.config.grid;

  std::vector<Tensor<float>> context;
  std::vector<Tensor<float>> truth;
  if (args.have_seed) {
    const auto sample = make_sampler<float>(ck.config)(args.seed);
    context.assign(sample.context().begin(), sample.context().end());
    truth.assign(sample.targets().begin(), sample.targets().end());
  } else if (!args.frames_dir.empty()) {
    std::vector<std::string> paths;
    if (!fs::is_directory(args.frames_dir)) {
      throw UsageError(args.frames_dir + ": not a directory");
    }
    for (const auto& e : fs::directory_iterator(args.frames_dir)) {
      if (e.path().extension() == ".pgm") paths.push_back(e.path().string());
    }
    std::sort(paths.begin(), paths.end());
    if (static_cast<int>(paths.size()) != g.context_len) {
      throw UsageError(args.frames_dir + ": expected exactly " + std::to_string(g.context_len) +
                       " context frames (.pgm), found " + std::to_string(paths.size()));
    }
    for (const auto& p : paths) {
      Tensor<float> f = read_pgm<float>(p);
      if (f.height() != g.frame_height || f.width() != g.frame_width) {
        throw UsageError(p + ": frame is " + f.shape() + ", model expects (" +
                         std::to_string(g.frame_height) + ", " + std::to_string(g.frame_width) +
                         ", 1)");
      }
      context.push_back(std::move(f));
    }
  } else {
    throw UsageError("predict: pass --seed N or --frames DIR");
  }

  const auto preds = encode_decode(ck.model, std::span<const Tensor<float>>(context), g.predict_len);

  fs::create_directories(args.out_dir);
  for (int k = 0; k < static_cast<int>(context.size()); ++k) {
    write_pgm(context[k], args.out_dir + "/context_" + zero_pad(k, 3) + ".pgm");
  }
  for (int k = 0; k < static_cast<int>(truth.size()); ++k) {
    write_pgm(truth[k], args.out_dir + "/truth_" + zero_pad(k, 3) + ".pgm");
  }
  for (int k = 0; k < static_cast<int>(preds.size()); ++k) {
    write_pgm(preds[k], args.out_dir + "/pred_" + zero_pad(k, 3) + ".pgm");
  }
  std::vector<std::span<const Tensor<float>>> rows;
  rows.emplace_back(context);
  if (!truth.empty()) rows.emplace_back(truth);
  rows.emplace_back(preds);
  write_pgm(make_montage(rows), args.out_dir + "/montage.pgm");
  std::printf("wrote %zu predicted frames and montage.pgm to %s\n", preds.size(),
              args.out_dir.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck(bool quick, bool inject_fault) {
  GradCheckOptions opt;
  opt.quick = quick;
  opt.inject_fault = inject_fault;
  const auto results = run_gradcheck(opt);
  int failures = 0;
  for (const auto& r : results) {
    const bool ok = r.max_rel_err < kGradCheckTolerance;
    if (!ok) ++failures;
    std::printf("%-44s %.3e %s\n", r.target.c_str(), r.max_rel_err, ok ? "ok" : "FAIL");
  }
  if (failures > 0) {
    std::printf("gradcheck: %d of %zu targets exceed %.0e\n", failures, results.size(),
                kGradCheckTolerance);
    return kExitVerifyFail;
  }
  std::printf("gradcheck: all %zu targets within %.0e\n", results.size(), kGradCheckTolerance);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// viz
// ---------------------------------------------------------------------------

struct VizArgs {
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::string cell = "0,0";
  std::string out_dir = "viz";
};

int cmd_viz(const VizArgs& args) {
  LoadedCheckpoint ck = load_checkpoint(args.checkpoint);
  const GridConfig& g = ck.config.grid;
  int j = -1, l = -1;
  if (std::sscanf(args.cell.c_str(), "%d,%d", &j, &l) != 2) {
    throw UsageError("--cell expects J,L (e.g. 0,2), got '" + args.cell + "'");
  }

  const auto sample = make_sampler<float>(ck.config)(args.seed);
  GridState<float> state = run_encoder(ck.model, sample.context());
  // First decoder step: the window is the last L context frames.
  std::vector<const Tensor<float>*> window;
  for (int i = g.context_len - g.spatial_layers; i < g.context_len; ++i) {
    window.push_back(&sample.frames[i]);
  }
  grid_step(ck.model, GridPhase::decoder, state, std::span<const Tensor<float>* const>(window));

  const auto images = visualize_states(state, g, j, l);
  fs::create_directories(args.out_dir);
  const int c = g.state_channels;
  for (int i = 0; i < static_cast<int>(images.size()); ++i) {
    const bool temporal = i < c;
    const std::string name = args.out_dir + "/" + (temporal ? "h_temporal_" : "h_spatial_") +
                             zero_pad(temporal ? i : i - c, 2) + ".pgm";
    write_pgm_bytes(name, images[i].width, images[i].height,
                    std::span<const std::uint8_t>(images[i].pixels));
  }
  std::printf("wrote %zu state-channel images to %s\n", images.size(), args.out_dir.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CubicRNN video-prediction engine"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", train_args.config_path, "Path to key = value config file")
      ->required();
  train_cmd->add_option("--set", train_args.sets, "Override a config entry (key=value)");
  train_cmd->add_flag("--resume", train_args.resume, "Continue from the configured checkpoint");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a frozen seed range");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint path")->required();
  eval_cmd->add_option("--seeds", eval_args.seeds, "Evaluation seed range START:COUNT")->required();
  eval_cmd->add_option("--report", eval_args.report, "Report CSV path");

  PredictArgs pred_args;
  auto* pred_cmd = app.add_subcommand("predict", "Predict future frames and write PGMs");
  pred_cmd->add_option("--checkpoint", pred_args.checkpoint, "Checkpoint path")->required();
  pred_cmd->add_option("--out", pred_args.out_dir, "Output directory");
  pred_cmd->add_option("--frames", pred_args.frames_dir, "Directory holding context_len PGM frames");
  auto* seed_opt = pred_cmd->add_option("--seed", pred_args.seed, "Generate the context from a seed");

  bool quick = false, inject_fault = false;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference verification suite");
  gc_cmd->add_flag("--quick", quick, "Unit recurrence steps only");
  gc_cmd->add_flag("--inject-fault", inject_fault,
                   "Corrupt one analytic gradient to prove the suite detects it");

  VizArgs viz_args;
  auto* viz_cmd = app.add_subcommand("viz", "Dump hidden-state channel images at the first "
                                            "decoder step");
  viz_cmd->add_option("--checkpoint", viz_args.checkpoint, "Checkpoint path")->required();
  viz_cmd->add_option("--seed", viz_args.seed, "Sequence seed")->required();
  viz_cmd->add_option("--cell", viz_args.cell, "Grid cell as J,L (default 0,0)");
  viz_cmd->add_option("--out", viz_args.out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  pred_args.have_seed = seed_opt->count() > 0;

  try {
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (pred_cmd->parsed()) return cmd_predict(pred_args);
    if (gc_cmd->parsed()) return cmd_gradcheck(quick, inject_fault);
    if (viz_cmd->parsed()) return cmd_viz(viz_args);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitDiverged;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
