#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "graftnet/config.hpp"
#include "graftnet/data.hpp"
#include "graftnet/error.hpp"
#include "graftnet/gradcheck_suite.hpp"
#include "graftnet/trainer.hpp"

using namespace graftnet;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kUsage = 2, kIo = 3, kNumeric = 4, kOther = 5 };

void apply_overrides(TrainConfig& config, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
}

int run_train(const std::string& config_path, const std::string& data, const std::string& val,
              const std::string& out, const std::vector<std::string>& sets, bool unlink_lr, std::size_t max_steps,
              bool quiet) {
  TrainConfig config = config_path.empty() ? TrainConfig{} : load_config(config_path);
  if (unlink_lr) config.unlink_lr = true;
  apply_overrides(config, sets);
  validate_config(config);
  const auto manifest = read_manifest(data);
  DatasetManifest val_manifest;
  if (!val.empty()) val_manifest = read_manifest(val);
  TrainOptions opts;
  opts.threads = worker_threads();
  opts.max_steps = max_steps;
  const auto t0 = std::chrono::steady_clock::now();
  if (!quiet) {
    opts.on_epoch = [&](const EpochRecord& e) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("epoch %3zu  loss %.5f  val_mae %.5f  %.0fs\n", e.epoch + 1, e.train_loss, e.val_mae, secs);
      std::fflush(stdout);
    };
  }
  const auto result = train_to_dir(config, manifest, val.empty() ? nullptr : &val_manifest, out, opts);
  if (!quiet) {
    std::printf("steps %zu  final loss %.6f  final val_mae %.5f  checkpoint %s\n", result.steps.size(),
                result.steps.empty() ? 0.0 : result.steps.back().total, result.final_val_mae, out.c_str());
  }
  return kOk;
}

int run_eval(const std::string& ckpt_dir, const std::string& data, const std::string& csv) {
  auto ckpt = load_checkpoint(ckpt_dir);
  const auto threads = worker_threads();
  const auto samples = load_samples(read_manifest(data), threads);
  const auto rows = evaluate_samples(*ckpt.net, samples, threads);
  write_eval_csv(csv, rows);
  std::vector<EvalResult> all;
  for (const auto& r : rows) all.push_back(r.result);
  if (!all.empty()) {
    const auto agg = aggregate(all);
    std::printf("samples %zu  mae %.5f  f_max %.5f  s %.5f  e %.5f  bde %.4f\n", rows.size(), agg.mae, agg.f_max,
                agg.s_measure, agg.e_measure, agg.bde);
  }
  return kOk;
}

int run_gradcheck(const std::vector<std::string>& ops, std::size_t seeds, bool list) {
  if (list) {
    for (const auto& n : gradcheck_names()) std::printf("%s\n", n.c_str());
    return kOk;
  }
  std::vector<std::uint64_t> seed_list;
  for (std::size_t s = 1; s <= seeds; ++s) seed_list.push_back(s);
  std::size_t failed = 0, total = 0;
  run_gradcheck_suite(ops, seed_list, [&](const SuiteResult& r) {
    ++total;
    if (!r.passed()) ++failed;
    std::printf("%-4s %-22s seed %llu  max_rel_err %.3e  tol %.0e  checked %zu  worst %s\n", r.passed() ? "ok" : "FAIL",
                r.name.c_str(), static_cast<unsigned long long>(r.seed), r.max_rel_error, r.tolerance, r.checked,
                r.worst.c_str());
    std::fflush(stdout);
  });
  std::printf("%zu/%zu checks passed\n", total - failed, total);
  return failed == 0 ? kOk : kCheckFailed;
}

int run_stats(const std::string& data, const std::string& csv, const std::string& hist, std::size_t bins) {
  const auto stats = dataset_stats(read_manifest(data), worker_threads());
  write_stats_csv(csv, stats);
  if (!hist.empty()) write_stats_histogram(hist, stats, bins);
  double mean_log = 0, mean_diag = 0;
  for (const auto& s : stats) {
    mean_log += s.edge_pixels ? std::log10(double(s.edge_pixels)) : 0.0;
    mean_diag += s.diagonal;
  }
  if (!stats.empty()) {
    std::printf("samples %zu  mean log10(edge pixels) %.3f  mean diagonal %.1f\n", stats.size(),
                mean_log / double(stats.size()), mean_diag / double(stats.size()));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graftnet: cross-model grafting for high-resolution salient object detection"};
  app.require_subcommand(1);

  std::string config_path, data, val, out, ckpt, csv, image, hist, difficulty = "mixed";
  std::vector<std::string> sets, ops;
  bool unlink_lr = false, quiet = false, list = false;
  std::size_t max_steps = 0, n = 0, hw = 64, seeds = 5, bins = 10;
  std::uint64_t seed = 7;

  auto* train = app.add_subcommand("train", "Train a model on a manifest");
  train->add_option("--config", config_path, "key = value config file (defaults when omitted)");
  train->add_option("--data", data, "Training manifest")->required();
  train->add_option("--val", val, "Validation manifest (default: split off val_fraction of --data)");
  train->add_option("--out", out, "Checkpoint directory")->required();
  train->add_option("--set", sets, "Config override key=value (repeatable)");
  train->add_flag("--unlink-lr", unlink_lr, "Let lr_other differ from 10x lr_backbone_attn");
  train->add_option("--max-steps", max_steps, "Stop early after this many steps");
  train->add_flag("--quiet", quiet, "No progress output");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  eval->add_option("--data", data, "Manifest")->required();
  eval->add_option("--csv", csv, "Per-sample metrics CSV")->required();

  auto* infer = app.add_subcommand("infer", "Predict a saliency map for one image");
  infer->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  infer->add_option("--image", image, "Input PPM or PGM")->required();
  infer->add_option("--out", out, "Output PGM")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "64-bit finite-difference gradient suite");
  gradcheck->add_option("--op", ops, "Only this check (repeatable)");
  gradcheck->add_option("--seeds", seeds, "Seeds per check")->check(CLI::Range(1, 100));
  gradcheck->add_flag("--list", list, "List check names");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--n", n, "Sample count")->required();
  synth->add_option("--hw", hw, "Image side");
  synth->add_option("--seed", seed, "Seed");
  synth->add_option("--difficulty", difficulty, "blob, thin or mixed");
  synth->add_option("--out", out, "Output directory")->required();

  auto* stats = app.add_subcommand("stats", "Boundary and diagonal statistics of a dataset");
  stats->add_option("--data", data, "Manifest")->required();
  stats->add_option("--csv", csv, "Per-sample CSV")->required();
  stats->add_option("--hist", hist, "Histogram CSV of log10 edge pixels");
  stats->add_option("--bins", bins, "Histogram bins")->check(CLI::Range(1, 1000));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run_train(config_path, data, val, out, sets, unlink_lr, max_steps, quiet);
    if (*eval) return run_eval(ckpt, data, csv);
    if (*infer) {
      auto c = load_checkpoint(ckpt);
      infer_to_file(*c.net, image, out);
      return kOk;
    }
    if (*gradcheck) return run_gradcheck(ops, seeds, list);
    if (*synth) {
      const auto m = synth_generate(n, hw, seed, parse_difficulty(difficulty), out);
      std::printf("wrote %zu samples to %s\n", m.entries.size(), out.c_str());
      return kOk;
    }
    if (*stats) return run_stats(data, csv, hist, bins);
  } catch (const ConfigError& e) {
    std::cerr << "graftnet: config error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "graftnet: i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "graftnet: numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "graftnet: error: " << e.what() << '\n';
    return kOther;
  }
  return kOk;
}
