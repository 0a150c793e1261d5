/*
 * Copyright 2026 dmcm-lab authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "dmcm/cli.hpp"

#include <chrono>
#include <iostream>

#include <CLI11.hpp>

#include "dmcm/checkpoint.hpp"
#include "dmcm/config_io.hpp"
#include "dmcm/svg.hpp"

namespace dmcm {

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::string resume_path;
  std::vector<std::uint64_t> seeds;
  int workers = 1;
  std::string grad_order;
  std::string method = "dmcm";
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required) {
  auto* c = cmd->add_option("--config", opts.config_path,
                            "experiment config (.toml or manifest .json)");
  if (config_required) c->required();
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--resume", opts.resume_path, "checkpoint to resume from");
  cmd->add_option("--seed", opts.seeds, "training seed (repeatable)");
  cmd->add_option("--workers", opts.workers, "worker pool size");
  cmd->add_option("--grad-order", opts.grad_order,
                  "meta-gradient order: first or second")
      ->check(CLI::IsMember({"first", "second"}));
}

ExperimentConfig resolve_config(const CommonOpts& opts,
                                const ExperimentConfig& preset) {
  ExperimentConfig cfg = opts.config_path.empty()
                             ? preset
                             : load_config_file(opts.config_path);
  if (!opts.seeds.empty()) cfg.seeds = opts.seeds;
  if (opts.grad_order == "first") cfg.train.order = GradOrder::First;
  if (opts.grad_order == "second") cfg.train.order = GradOrder::Second;
  cfg.validate();
  return cfg;
}

std::filesystem::path out_dir_or(const CommonOpts& opts,
                                 const std::string& fallback) {
  return opts.out_dir.empty() ? std::filesystem::path("runs") / fallback
                              : std::filesystem::path(opts.out_dir);
}

void write_bundle(const std::filesystem::path& dir,
                  const ExperimentConfig& cfg, const std::string& subcommand,
                  const std::vector<MetricRow>& rows, double wall_seconds) {
  std::filesystem::create_directories(dir);
  write_metrics_csv(dir / "metrics.csv", rows);
  write_manifest(dir / "manifest.json", cfg, subcommand, wall_seconds);
  const Series series = series_from_rows(rows);
  if (!series.empty()) {
    write_line_plot_svg(dir / "plots" / (subcommand + ".svg"),
                        cfg.name + " (" + subcommand + ")", "meta-gradient",
                        "mean MSE", series);
  }
}

double run_seconds(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

int cmd_train(const CommonOpts& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = resolve_config(opts, presets::standard(Method::Dmcm));
  const auto dir = out_dir_or(opts, "train");
  std::filesystem::create_directories(dir);

  std::vector<MetricRow> all_rows;
  bool diverged = false;
  if (!opts.resume_path.empty()) {
    auto trainer = load_checkpoint(opts.resume_path);
    trainer->train_to(trainer->config().budget);
    diverged = trainer->diverged();
    all_rows = trainer->rows();
    save_checkpoint(dir / "checkpoint.json", *trainer);
    cfg = trainer->config();
  } else {
    const int workers = default_workers(opts.workers);
    std::vector<std::vector<MetricRow>> per_seed(cfg.seeds.size());
    std::vector<char> seed_diverged(cfg.seeds.size(), 0);
    parallel_for(int(cfg.seeds.size()), workers, [&](int i) {
      Trainer trainer(cfg, cfg.seeds[size_t(i)]);
      trainer.train_to(cfg.budget);
      per_seed[size_t(i)] = trainer.rows();
      seed_diverged[size_t(i)] = trainer.diverged() ? 1 : 0;
      const auto ckpt = cfg.seeds.size() == 1
                            ? dir / "checkpoint.json"
                            : dir / ("checkpoint-seed" +
                                     std::to_string(cfg.seeds[size_t(i)]) +
                                     ".json");
      save_checkpoint(ckpt, trainer);
    });
    for (std::size_t i = 0; i < per_seed.size(); ++i) {
      all_rows.insert(all_rows.end(), per_seed[i].begin(), per_seed[i].end());
      diverged = diverged || seed_diverged[i];
    }
  }
  write_bundle(dir, cfg, "train", all_rows, run_seconds(t0));
  if (diverged) {
    std::cerr << "training diverged (non-finite loss); see metrics.csv\n";
    return 2;
  }
  std::cout << "wrote " << (dir / "metrics.csv").string() << " ("
            << all_rows.size() << " rows)\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  if (opts.resume_path.empty()) {
    throw std::invalid_argument("eval requires --resume <checkpoint.json>");
  }
  auto trainer = load_checkpoint(opts.resume_path);
  const EvalStats stats = trainer->evaluate_now();
  MetricRow row;
  row.method = method_name(trainer->config().method);
  row.seed = trainer->seed();
  row.meta_step = trainer->steps_done();
  row.mean_mse = stats.mean;
  row.ci95 = stats.ci95;
  row.trial = "eval";
  const auto dir = out_dir_or(opts, "eval");
  write_bundle(dir, trainer->config(), "eval", {row}, run_seconds(t0));
  std::cout << "mean_mse " << format_g17(stats.mean) << " ci95 "
            << format_g17(stats.ci95) << " over "
            << trainer->config().eval_task_count << " tasks\n";
  return 0;
}

int cmd_sweep_ood(const CommonOpts& opts, std::vector<double> fractions,
                  int trials) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg =
      resolve_config(opts, presets::standard(method_from(opts.method)));
  if (fractions.empty()) fractions = {0.4, 0.6, 0.8};
  const int workers = default_workers(opts.workers);
  const auto rows = run_ood_sweep({cfg}, fractions,
                                  trials > 0 ? trials : cfg.trials, workers);
  const auto dir = out_dir_or(opts, "sweep-ood");
  write_bundle(dir, cfg, "sweep-ood", rows, run_seconds(t0));
  std::cout << "wrote " << (dir / "metrics.csv").string() << " ("
            << rows.size() << " rows)\n";
  return 0;
}

int cmd_zeroshot(const CommonOpts& opts, const std::string& restrict_amp) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = resolve_config(opts, presets::zeroshot());
  if (!restrict_amp.empty()) {
    const auto colon = restrict_amp.find(':');
    if (colon == std::string::npos) {
      throw std::invalid_argument("--restrict-amp expects LO:HI");
    }
    cfg.restrict_amplitude = {std::stod(restrict_amp.substr(0, colon)),
                              std::stod(restrict_amp.substr(colon + 1))};
    if (!(cfg.restrict_amplitude->first < cfg.restrict_amplitude->second)) {
      throw std::invalid_argument("--restrict-amp range is empty");
    }
  }
  std::vector<MetricRow> curve;
  const ZeroShotReport report = run_zeroshot(cfg, &curve);
  std::vector<MetricRow> rows = curve;
  const auto add_row = [&](const std::string& label, const EvalStats& s) {
    MetricRow row;
    row.method = method_name(cfg.method);
    row.seed = cfg.seeds.front();
    row.meta_step = cfg.budget;
    row.mean_mse = s.mean;
    row.ci95 = s.ci95;
    row.trial = label;
    rows.push_back(row);
    std::cout << label << ": mean " << format_g17(s.mean) << " +- "
              << format_g17(s.ci95) << "\n";
  };
  add_row("self_adapted", report.self_adapted);
  add_row("recomb_full", report.recomb_full);
  add_row("recomb_restricted", report.recomb_restricted);
  const auto dir = out_dir_or(opts, "zeroshot");
  write_bundle(dir, cfg, "zeroshot", rows, run_seconds(t0));
  return 0;
}

int cmd_mislabel(const CommonOpts& opts, std::vector<double> rates) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig base = resolve_config(opts, [] {
    ExperimentConfig c = presets::standard(Method::Dmcm);
    c.budget = 6000;
    c.seeds = {0, 1, 2};
    return c;
  }());
  if (rates.empty()) rates = {0.0, 0.1, 0.2};
  const int workers = default_workers(opts.workers);
  const MislabelReport report = run_mislabel(base, rates, workers);
  for (const auto& [rate, mean] : report.mean_by_rate) {
    std::cout << "rate " << rate << ": mean MSE " << format_g17(mean) << "\n";
  }
  const auto dir = out_dir_or(opts, "mislabel");
  write_bundle(dir, base, "mislabel", report.rows, run_seconds(t0));
  return 0;
}

int cmd_ncontext(const CommonOpts& opts, bool ood, int trials,
                 std::vector<std::string> variants) {
  const auto t0 = std::chrono::steady_clock::now();
  if (variants.empty()) variants = presets::ncontext_variants();
  std::vector<ExperimentConfig> cfgs;
  for (const std::string& v : variants) cfgs.push_back(presets::ncontext(v, ood));
  const int workers = default_workers(opts.workers);
  const auto rows =
      run_ncontext(cfgs, ood, trials > 0 ? trials : 3, workers);
  const auto dir = out_dir_or(opts, ood ? "ncontext-ood" : "ncontext");
  write_bundle(dir, cfgs.front(), ood ? "ncontext-ood" : "ncontext", rows,
               run_seconds(t0));
  std::cout << "wrote " << (dir / "metrics.csv").string() << " ("
            << rows.size() << " rows)\n";
  return 0;
}

int cmd_param_ablation(const CommonOpts& opts, std::vector<int> sizes) {
  const auto t0 = std::chrono::steady_clock::now();
  if (sizes.empty()) sizes = {1, 2, 3, 6};
  const ExperimentConfig base =
      resolve_config(opts, presets::param_ablation(3));
  const int workers = default_workers(opts.workers);
  const auto rows = run_param_ablation(base, sizes, workers);
  const auto dir = out_dir_or(opts, "param-ablation");
  write_bundle(dir, base, "param-ablation", rows, run_seconds(t0));
  std::cout << "wrote " << (dir / "metrics.csv").string() << " ("
            << rows.size() << " rows)\n";
  return 0;
}

int cmd_timing(const CommonOpts& opts, long long train_steps,
               int adapt_tasks) {
  const auto timing = run_timing(presets::timing_set(), train_steps,
                                 adapt_tasks);
  const auto dir = out_dir_or(opts, "timing");
  std::filesystem::create_directories(dir);
  std::ostringstream os;
  os << "config,train_seconds,adapt_seconds,adapt_seconds_repeat\n";
  for (const TimingRow& r : timing) {
    os << r.config << ',' << format_g17(r.train_seconds) << ','
       << format_g17(r.adapt_seconds) << ','
       << format_g17(r.adapt_seconds_repeat) << '\n';
    std::cout << r.config << ": train " << r.train_seconds << " s, adapt "
              << r.adapt_seconds << " s (repeat " << r.adapt_seconds_repeat
              << " s)\n";
  }
  write_text_file(dir / "timing.csv", os.str());
  return 0;
}

int cmd_gradcheck(int seeds) {
  const GradCheckReport report = run_gradcheck(seeds);
  std::cout << "first-order max relative error:  "
            << format_g17(report.first_order_max_rel) << " ("
            << report.first_order_seconds << " s, " << seeds << " seeds)\n";
  std::cout << "second-order max relative error: "
            << format_g17(report.second_order_max_rel) << " ("
            << report.second_order_seconds << " s)\n";
  std::cout << "linear-model closed form error:  "
            << format_g17(report.closed_form_abs_err) << "\n";
  if (report.first_order_max_rel > 1e-4 ||
      report.second_order_max_rel > 1e-4) {
    std::cerr << "gradcheck FAILED (relative error above 1e-4)\n";
    return 2;
  }
  std::cout << "gradcheck passed\n";
  return 0;
}

}  // namespace

int parse_and_dispatch(int argc, const char* const* argv) {
  CLI::App app{"disentangled multi-context meta-learning laboratory"};
  app.require_subcommand(1);

  CommonOpts train_opts, eval_opts, sweep_opts, zero_opts, mis_opts, nc_opts,
      pa_opts, timing_opts;

  auto* train = app.add_subcommand("train", "train one configuration");
  add_common(train, train_opts, /*config_required=*/false);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_opts, /*config_required=*/false);

  auto* sweep = app.add_subcommand("sweep-ood",
                                   "random range-exclusion robustness sweep");
  add_common(sweep, sweep_opts, false);
  std::vector<double> fractions;
  int sweep_trials = 0;
  sweep->add_option("--fraction", fractions,
                    "excluded fraction (repeatable; default 0.4 0.6 0.8)");
  sweep->add_option("--trials", sweep_trials, "trials per fraction");
  sweep->add_option("--method", sweep_opts.method,
                    "preset method when --config is omitted");

  auto* zero = app.add_subcommand("zeroshot",
                                  "context recombination zero-shot study");
  add_common(zero, zero_opts, false);
  std::string restrict_amp;
  zero->add_option("--restrict-amp", restrict_amp,
                   "restricted amplitude range LO:HI");

  auto* mis = app.add_subcommand("mislabel", "mislabeled task-label study");
  add_common(mis, mis_opts, false);
  std::vector<double> rates;
  mis->add_option("--rate", rates, "mislabel probability (repeatable)");

  auto* nc = app.add_subcommand("ncontext", "context-count ablation");
  add_common(nc, nc_opts, false);
  bool nc_ood = false;
  int nc_trials = 0;
  std::vector<std::string> nc_variants;
  nc->add_flag("--ood", nc_ood, "interval-restricted training");
  nc->add_option("--trials", nc_trials, "OOD interval-selection trials");
  nc->add_option("--variant", nc_variants, "configuration (repeatable)");

  auto* pa = app.add_subcommand("param-ablation",
                                "context parameter-count ablation");
  add_common(pa, pa_opts, false);
  std::vector<int> sizes;
  pa->add_option("--size", sizes, "entangled context size (repeatable)");

  auto* timing = app.add_subcommand("timing", "training/adaptation wall time");
  add_common(timing, timing_opts, false);
  long long train_steps = 400;
  int adapt_tasks = 300;
  timing->add_option("--train-steps", train_steps, "meta-gradients to time");
  timing->add_option("--adapt-tasks", adapt_tasks, "tasks to adapt");

  auto* gc = app.add_subcommand("gradcheck",
                                "finite-difference gradient verification");
  int gc_seeds = 20;
  gc->add_option("--seeds", gc_seeds, "random probes for the first-order check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) return cmd_train(train_opts);
    if (eval->parsed()) return cmd_eval(eval_opts);
    if (sweep->parsed()) return cmd_sweep_ood(sweep_opts, fractions, sweep_trials);
    if (zero->parsed()) return cmd_zeroshot(zero_opts, restrict_amp);
    if (mis->parsed()) return cmd_mislabel(mis_opts, rates);
    if (nc->parsed()) return cmd_ncontext(nc_opts, nc_ood, nc_trials, nc_variants);
    if (pa->parsed()) return cmd_param_ablation(pa_opts, sizes);
    if (timing->parsed()) return cmd_timing(timing_opts, train_steps, adapt_tasks);
    if (gc->parsed()) return cmd_gradcheck(gc_seeds);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int parse_and_dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("dmcm");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return parse_and_dispatch(int(argv.size()), argv.data());
}

}  // namespace dmcm
