#include "cfmimo/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

namespace cfmimo {

std::string_view to_string(ExperimentId id) {
  switch (id) {
    case ExperimentId::kFig3: return "fig3";
    case ExperimentId::kFig4: return "fig4";
    case ExperimentId::kAblation: return "ablation";
    case ExperimentId::kCustom: return "custom";
  }
  return "custom";
}

ExperimentId parse_experiment(std::string_view text) {
  for (auto id : {ExperimentId::kFig3, ExperimentId::kFig4, ExperimentId::kAblation,
                  ExperimentId::kCustom}) {
    if (text == to_string(id)) return id;
  }
  fail(ErrorCategory::kConfig,
       "unknown experiment '" + std::string(text) + "' (expected fig3, fig4, ablation or custom)");
}

namespace {

const std::vector<std::string>& known_equalizers() {
  static const std::vector<std::string> names{"icl", "icl_no_ls", "lmmse", "lmmse_inf"};
  return names;
}

std::string bits_label(int b) { return b == 0 ? "inf" : std::to_string(b); }

}  // namespace

void ExperimentSpec::validate() const {
  require(!bits.empty(), ErrorCategory::kConfig, "experiment.bits must be non-empty");
  require(!snr_db.empty(), ErrorCategory::kConfig, "experiment.snr_db must be non-empty");
  require(!reuse.empty(), ErrorCategory::kConfig, "experiment.reuse must be non-empty");
  require(!equalizers.empty(), ErrorCategory::kConfig, "experiment.equalizers must be non-empty");
  require(blocks >= 100, ErrorCategory::kConfig, "experiment.blocks must be >= 100");
  require(threads >= 1, ErrorCategory::kConfig, "threads must be >= 1");
  for (int b : bits) {
    require(b >= 0 && b <= 12, ErrorCategory::kConfig,
            "experiment.bits entries must be 1..12 or \"inf\"");
  }
  for (int r : reuse) require(r >= 0, ErrorCategory::kConfig, "experiment.reuse must be >= 0");
  require(snr_sweep_bits >= 0 && snr_sweep_bits <= 12, ErrorCategory::kConfig,
          "experiment.snr_sweep_bits must be 1..12 or \"inf\"");
  for (const auto& e : equalizers) {
    require(std::find(known_equalizers().begin(), known_equalizers().end(), e) !=
                known_equalizers().end(),
            ErrorCategory::kConfig,
            "experiment.equalizers: unknown equalizer '" + e +
                "' (expected icl, icl_no_ls, lmmse or lmmse_inf)");
  }
}

// ---------------------------------------------------------------------------
// Results

const ResultRow* ResultTable::find(std::string_view equalizer, int bits, double snr_db,
                                   std::string_view reuse) const {
  for (const auto& r : rows) {
    if (r.equalizer == equalizer && r.bits == bits && std::abs(r.snr_db - snr_db) < 1e-9 &&
        r.reuse == reuse) {
      return &r;
    }
  }
  return nullptr;
}

void ResultTable::write_csv(std::ostream& os) const {
  os << "# " << kResultSchema << '\n';
  os << "experiment,equalizer,b,snr_db,reuse,mse,ci95,blocks,seed,digest\n";
  os << std::setprecision(10);
  for (const auto& r : rows) {
    std::ostringstream digest;
    digest << std::hex << std::setw(16) << std::setfill('0') << r.digest;
    os << r.experiment << ',' << r.equalizer << ',' << bits_label(r.bits) << ',' << r.snr_db
       << ',' << r.reuse << ',' << r.mse.mean << ',' << r.mse.ci95 << ',' << r.mse.blocks << ','
       << r.seed << ',' << digest.str() << '\n';
  }
}

void ResultTable::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorCategory::kIo, "cannot write " + path.string());
  write_csv(os);
}

ResultTable read_results_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCategory::kIo, "cannot open " + path.string());
  ResultTable t;
  std::string line;
  bool header = false;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      require(line.rfind("experiment,equalizer,b,snr_db,reuse,mse,ci95,blocks,seed", 0) == 0,
              ErrorCategory::kIo, path.string() + ": not a results table");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    require(f.size() >= 9, ErrorCategory::kIo,
            path.string() + ":" + std::to_string(lineno) + ": expected at least 9 fields");
    try {
      ResultRow r;
      r.experiment = f[0];
      r.equalizer = f[1];
      r.bits = f[2] == "inf" ? 0 : std::stoi(f[2]);
      r.snr_db = std::stod(f[3]);
      r.reuse = f[4];
      r.mse.mean = std::stod(f[5]);
      r.mse.ci95 = std::stod(f[6]);
      r.mse.blocks = std::stoi(f[7]);
      r.seed = std::stoull(f[8]);
      if (f.size() > 9) r.digest = std::stoull(f[9], nullptr, 16);
      t.rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      fail(ErrorCategory::kIo, path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  require(header, ErrorCategory::kIo, path.string() + ": missing header");
  return t;
}

// ---------------------------------------------------------------------------
// Equalizers

namespace {

std::unique_ptr<Equalizer> load_icl(const std::filesystem::path& ckpt, PromptLayout layout,
                                    const std::string& name, const SystemConfig& sys) {
  const std::string key = layout == PromptLayout::kFull ? "checkpoint_full" : "checkpoint_no_ls";
  require(!ckpt.empty(), ErrorCategory::kConfig,
          "equalizer '" + name + "' needs experiment." + key +
              "; train one with: cfmimo train --config CONFIG --data DIR --out CKPT");
  require(std::filesystem::exists(ckpt), ErrorCategory::kIo,
          "checkpoint '" + ckpt.string() + "' not found for equalizer '" + name +
              "'; create it with: cfmimo gen-data --config CONFIG --out DIR && "
              "cfmimo train --config CONFIG --data DIR --out " + ckpt.string());
  ModelParams<float> params = load_checkpoint(ckpt);
  require(params.config.layout == layout, ErrorCategory::kConfig,
          "checkpoint '" + ckpt.string() + "' has prompt layout " +
              std::string(layout_version(params.config.layout)) + " but equalizer '" + name +
              "' needs " + std::string(layout_version(layout)));
  return std::make_unique<IclEqualizer>(std::move(params), walsh_hadamard_book(sys.pilot_length),
                                        sys.dims(), name);
}

}  // namespace

std::vector<std::unique_ptr<Equalizer>> make_equalizers(const ExperimentSpec& spec,
                                                        const SystemConfig& sys) {
  std::vector<std::unique_ptr<Equalizer>> out;
  const PilotBook book = walsh_hadamard_book(sys.pilot_length);
  for (const auto& name : spec.equalizers) {
    if (name == "icl") {
      out.push_back(load_icl(spec.checkpoint_full, PromptLayout::kFull, name, sys));
    } else if (name == "icl_no_ls") {
      out.push_back(load_icl(spec.checkpoint_no_ls, PromptLayout::kNoLargeScale, name, sys));
    } else if (name == "lmmse") {
      out.push_back(std::make_unique<LmmseEqualizer>(book, false, spec.lmmse));
    } else if (name == "lmmse_inf") {
      out.push_back(std::make_unique<LmmseEqualizer>(book, true, spec.lmmse));
    } else {
      fail(ErrorCategory::kConfig, "unknown equalizer '" + name + "'");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runners

namespace {

struct Point {
  int bits = 0;
  double snr_db = 0.0;
  std::string reuse;
  AssignmentPolicy policy;
  std::optional<int> ue_count;
};

struct PointResult {
  EvalResult eval;
};

// Points are independent and seeded from the spec alone, so the schedule does
// not affect the numbers.
std::vector<PointResult> run_points(const std::vector<Point>& points,
                                    const std::vector<const Equalizer*>& eqs,
                                    const ExperimentSpec& spec, const SystemConfig& sys) {
  std::vector<PointResult> results(points.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= points.size()) return;
      try {
        EvalSpec es;
        es.system = sys;
        es.noise_power = sys.noise_power_for_snr(points[i].snr_db);
        es.policy = points[i].policy;
        es.bits = points[i].bits;
        es.ue_count = points[i].ue_count;
        es.blocks = spec.blocks;
        es.seed = spec.seed;
        results[i].eval = evaluate(eqs, es);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next = points.size();
      }
    }
  };
  const int n = std::min<int>(spec.threads, static_cast<int>(points.size()));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return results;
}

ResultTable tabulate(const std::vector<Point>& points, const std::vector<PointResult>& results,
                     const std::vector<const Equalizer*>& eqs, const ExperimentSpec& spec) {
  ResultTable t;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t e = 0; e < eqs.size(); ++e) {
      ResultRow r;
      r.experiment = std::string(to_string(spec.id));
      r.equalizer = eqs[e]->name();
      r.bits = points[i].bits;
      r.snr_db = points[i].snr_db;
      r.reuse = points[i].reuse;
      r.mse = results[i].eval.mse[e];
      r.seed = spec.seed;
      r.digest = results[i].eval.digest;
      t.rows.push_back(std::move(r));
    }
  }
  return t;
}

std::vector<const Equalizer*> raw(const std::vector<std::unique_ptr<Equalizer>>& eqs) {
  std::vector<const Equalizer*> out;
  for (const auto& e : eqs) out.push_back(e.get());
  return out;
}

int fixed_ue_count(const ExperimentSpec& spec, const SystemConfig& sys) {
  const int k = spec.ue_count.value_or(sys.deployment.ue_max);
  require(k >= sys.deployment.ue_min && k <= sys.deployment.ue_max, ErrorCategory::kConfig,
          "experiment.ue_count " + std::to_string(k) + " is outside the deployment UE range");
  return k;
}

std::vector<Point> reuse_sweep(const ExperimentSpec& spec, const SystemConfig& sys, int bits) {
  const int k = fixed_ue_count(spec, sys);
  std::vector<Point> points;
  for (double snr : spec.snr_db) {
    for (int r : spec.reuse) {
      require(r <= k - 1, ErrorCategory::kConfig,
              "experiment.reuse " + std::to_string(r) + " needs more than " + std::to_string(k) +
                  " UEs");
      require(k - r <= sys.pilot_length, ErrorCategory::kConfig,
              "experiment.reuse " + std::to_string(r) + " leaves more pilots in use than T_p");
      points.push_back({bits, snr, std::to_string(r), policy::FixedReuse{r}, k});
    }
  }
  return points;
}

}  // namespace

ResultTable run_fig3(const ExperimentSpec& in, const SystemConfig& sys) {
  ExperimentSpec spec = in;
  spec.id = ExperimentId::kFig3;
  spec.validate();
  const auto eqs = make_equalizers(spec, sys);
  std::vector<Point> points;
  const std::optional<int> k = spec.ue_count;
  for (const AssignmentPolicy& pol : {AssignmentPolicy(policy::Orthogonal{}), spec.reuse_policy}) {
    for (int b : spec.bits) points.push_back({b, spec.operating_snr_db, to_string(pol), pol, k});
  }
  return tabulate(points, run_points(points, raw(eqs), spec, sys), raw(eqs), spec);
}

ResultTable run_fig4(const ExperimentSpec& in, const SystemConfig& sys) {
  ExperimentSpec spec = in;
  spec.id = ExperimentId::kFig4;
  spec.validate();
  const auto eqs = make_equalizers(spec, sys);
  const auto points = reuse_sweep(spec, sys, spec.snr_sweep_bits);
  return tabulate(points, run_points(points, raw(eqs), spec, sys), raw(eqs), spec);
}

ResultTable run_ablation(const ExperimentSpec& spec, const SystemConfig& sys) {
  ExperimentSpec s = spec;
  s.id = ExperimentId::kAblation;
  s.equalizers = {"icl", "icl_no_ls"};
  s.validate();
  const auto eqs = make_equalizers(s, sys);
  const auto points = reuse_sweep(s, sys, s.snr_sweep_bits);
  const auto results = run_points(points, raw(eqs), s, sys);
  ResultTable t = tabulate(points, results, raw(eqs), s);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& full = results[i].eval.per_block[0];
    const auto& nols = results[i].eval.per_block[1];
    std::vector<double> diff(full.size());
    for (std::size_t j = 0; j < full.size(); ++j) diff[j] = nols[j] - full[j];
    t.deltas.push_back({"icl_no_ls", "icl", points[i].bits, points[i].snr_db, points[i].reuse,
                        summarize(diff)});
  }
  return t;
}

ResultTable run_custom(const ExperimentSpec& in, const SystemConfig& sys) {
  ExperimentSpec spec = in;
  spec.id = ExperimentId::kCustom;
  spec.validate();
  const auto eqs = make_equalizers(spec, sys);
  std::vector<Point> points;
  for (double snr : spec.snr_db) {
    for (int b : spec.bits) {
      points.push_back({b, snr, to_string(spec.reuse_policy), spec.reuse_policy, spec.ue_count});
    }
  }
  return tabulate(points, run_points(points, raw(eqs), spec, sys), raw(eqs), spec);
}

ResultTable run_experiment(const ExperimentSpec& spec, const SystemConfig& sys) {
  switch (spec.id) {
    case ExperimentId::kFig3: return run_fig3(spec, sys);
    case ExperimentId::kFig4: return run_fig4(spec, sys);
    case ExperimentId::kAblation: return run_ablation(spec, sys);
    case ExperimentId::kCustom: return run_custom(spec, sys);
  }
  return run_custom(spec, sys);
}

}  // namespace cfmimo
