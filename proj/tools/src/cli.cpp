#include "cli.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "cfmimo/config.hpp"
#include "cfmimo/harness.hpp"
#include "cfmimo/plot.hpp"
#include "cfmimo/pretrain.hpp"
#include "cfmimo/quantizer.hpp"
#include "cfmimo/transformer.hpp"

namespace cfmimo::cli {

namespace {

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kConfig: return kConfigError;
    case ErrorCategory::kDomain: return kDomainError;
    case ErrorCategory::kNumeric: return kNumericError;
    case ErrorCategory::kIo: return kIoError;
    case ErrorCategory::kShape: return kShapeError;
  }
  return kInternalError;
}

struct Globals {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string profile;
};

Dataset generate_parallel(const DatasetSpec& spec, int tasks_per_chunk, int threads,
                          std::ostream& err) {
  const int chunks = (spec.num_tasks + tasks_per_chunk - 1) / tasks_per_chunk;
  std::vector<Dataset> parts(chunks);
  std::atomic<int> next{0};
  std::atomic<int> done{0};
  std::exception_ptr error;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      const int c = next.fetch_add(1);
      if (c >= chunks) return;
      try {
        const int begin = c * tasks_per_chunk;
        parts[c] = generate_dataset(spec, begin, std::min(spec.num_tasks, begin + tasks_per_chunk));
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        next = chunks;
      }
      std::lock_guard lock(mu);
      err << "gen-data: " << ++done << "/" << chunks << " shards\n";
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  Dataset all;
  for (auto& p : parts) {
    all.append(p);
    p = Dataset{};
  }
  return all;
}

void cmd_design_quantizer(int bits, const std::string& out, std::ostream& os) {
  const QuantizerSpec& q = lloyd_max(bits);
  if (out.empty() || out == "-") {
    write_quantizer_csv(os, q);
  } else {
    std::ofstream f(out);
    require(static_cast<bool>(f), ErrorCategory::kIo, "cannot write " + out);
    write_quantizer_csv(f, q);
    os << "bits=" << bits << " distortion=" << std::setprecision(10) << q.distortion
       << " gain=" << q.bussgang_gain << " iterations=" << q.iterations << '\n';
  }
}

void cmd_gen_data(const Config& cfg, const std::string& out, const Globals& g, std::ostream& os,
                  std::ostream& err) {
  DatasetSpec spec = cfg.dataset;
  if (g.seed) spec.master_seed = *g.seed;
  const Dataset data = generate_parallel(spec, cfg.tasks_per_shard, g.threads, err);
  write_dataset(out, spec, data, cfg.tasks_per_shard);
  os << "wrote " << data.num_examples() << " examples (" << data.num_prompts() << " prompts) to "
     << out << '\n';
}

void cmd_train(const Config& cfg, const std::string& data_dir, const std::string& out,
               const Globals& g, std::ostream& os, std::ostream& err) {
  TrainConfig tc = cfg.train;
  if (g.seed) tc.seed = *g.seed;
  if (tc.diagnostic_checkpoint.empty()) tc.diagnostic_checkpoint = out + ".diverged";
  const Dataset data = read_dataset(data_dir);
  ModelConfig mc = cfg.model_for(data.layout);
  require(mc.token_dim == data.token_dim && mc.max_seq_len == data.seq_len, ErrorCategory::kConfig,
          "train: dataset in " + data_dir +
              " was generated for a different system geometry than the config describes");
  const auto start = std::chrono::steady_clock::now();
  auto log = [&](const LossPoint& p) {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    err << "step " << p.step << " train_mse " << p.train_mse << " val_mse " << p.val_mse << " ("
        << std::fixed << std::setprecision(1) << secs << " s)\n"
        << std::defaultfloat << std::setprecision(6);
  };
  const TrainResult r = train(init_params<float>(mc, tc.seed), data, tc, log);
  save_checkpoint(out, r.params);
  const std::filesystem::path loss = cfg.loss_csv.empty() ? std::filesystem::path(out + ".loss.csv") : cfg.loss_csv;
  std::ofstream f(loss);
  require(static_cast<bool>(f), ErrorCategory::kIo, "cannot write " + loss.string());
  write_loss_csv(f, r.curve);
  os << "best step " << r.best_step << " mse " << r.best_val_mse << "; checkpoint " << out
     << "; loss curve " << loss.string() << '\n';
}

void emit(const ResultTable& t, const Config& cfg, const std::string& csv_flag,
          const std::string& plot_flag, std::ostream& os) {
  const std::filesystem::path csv = csv_flag.empty() ? cfg.results_csv : std::filesystem::path(csv_flag);
  const std::filesystem::path plot = plot_flag.empty() ? cfg.results_plot : std::filesystem::path(plot_flag);
  if (csv.empty() || csv == "-") {
    t.write_csv(os);
  } else {
    t.write_csv(csv);
    os << "wrote " << csv.string() << '\n';
  }
  if (!plot.empty()) {
    require(!csv.empty() && csv != "-", ErrorCategory::kConfig,
            "a plot needs the CSV written to a file (experiment.out_csv or --out)");
    plot_results(csv, plot);
    os << "wrote " << plot.string() << '\n';
  }
  for (const auto& d : t.deltas) {
    os << "delta " << d.a << "-" << d.b << " snr_db=" << d.snr_db << " reuse=" << d.reuse
       << " mean=" << d.delta.mean << " ci95=" << d.delta.ci95 << '\n';
  }
}

ExperimentSpec experiment_spec(const Config& cfg, const Globals& g) {
  ExperimentSpec s = cfg.experiment;
  if (g.seed) s.seed = *g.seed;
  s.threads = g.threads;
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cell-free massive MIMO fronthaul equalization experiments", "cfmimo"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Override the seed of the selected section");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--profile", g.profile, "Base profile: full or desk")
      ->check(CLI::IsMember({"full", "desk"}));

  int bits = 0;
  std::string out_path, config_path, data_dir, ckpt, spec_path, csv_path, plot_path;
  std::string experiment;

  auto* dq = app.add_subcommand("design-quantizer", "Design a Lloyd-Max quantizer, write CSV");
  dq->add_option("--bits", bits, "Bits per real sample")->required()->check(CLI::Range(1, 12));
  dq->add_option("--out", out_path, "Output CSV ('-' for stdout)")->required();

  auto* gd = app.add_subcommand("gen-data", "Generate a pre-training dataset");
  gd->add_option("--config", config_path, "Config file")->required();
  gd->add_option("--out", out_path, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train the ICL equalizer");
  tr->add_option("--config", config_path, "Config file")->required();
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--out", out_path, "Output checkpoint")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the spec's grid");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--spec", spec_path, "Config file with an experiment section")->required();
  ev->add_option("--out", csv_path, "Results CSV (default: experiment.out_csv or stdout)");

  auto* ex = app.add_subcommand("experiment", "Run fig3, fig4 or ablation");
  ex->add_option("name", experiment, "fig3, fig4 or ablation")
      ->required()
      ->check(CLI::IsMember({"fig3", "fig4", "ablation"}));
  ex->add_option("--spec", spec_path, "Config file with an experiment section")->required();
  ex->add_option("--out", csv_path, "Results CSV (default: experiment.out_csv or stdout)");
  ex->add_option("--plot", plot_path, "SVG plot (default: experiment.out_plot)");

  auto* pl = app.add_subcommand("plot", "Render a results CSV as SVG");
  pl->add_option("--csv", csv_path, "Results CSV")->required();
  pl->add_option("--out", out_path, "Output SVG")->required();

  std::vector<const char*> argv{"cfmimo"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    if (rc == 0) return kOk;
    err << "error[usage]: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (dq->parsed()) {
      cmd_design_quantizer(bits, out_path, out);
    } else if (gd->parsed()) {
      cmd_gen_data(load_config(config_path, g.profile), out_path, g, out, err);
    } else if (tr->parsed()) {
      cmd_train(load_config(config_path, g.profile), data_dir, out_path, g, out, err);
    } else if (ev->parsed()) {
      const Config cfg = load_config(spec_path, g.profile);
      ExperimentSpec s = experiment_spec(cfg, g);
      s.id = ExperimentId::kCustom;
      const ModelParams<float> params = load_checkpoint(ckpt);
      const bool full = params.config.layout == PromptLayout::kFull;
      std::vector<std::string> eqs{full ? "icl" : "icl_no_ls"};
      for (const auto& e : s.equalizers) {
        if (e == "lmmse" || e == "lmmse_inf") eqs.push_back(e);
      }
      s.equalizers = eqs;
      (full ? s.checkpoint_full : s.checkpoint_no_ls) = ckpt;
      emit(run_custom(s, cfg.system), cfg, csv_path, "", out);
    } else if (ex->parsed()) {
      const Config cfg = load_config(spec_path, g.profile);
      ExperimentSpec s = experiment_spec(cfg, g);
      s.id = parse_experiment(experiment);
      emit(run_experiment(s, cfg.system), cfg, csv_path, plot_path, out);
    } else if (pl->parsed()) {
      plot_results(csv_path, out_path);
      out << "wrote " << out_path << '\n';
    }
  } catch (const Error& e) {
    err << "error[" << to_string(e.category()) << "]: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::exception& e) {
    err << "error[internal]: " << e.what() << '\n';
    return kInternalError;
  }
  return kOk;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace cfmimo::cli
