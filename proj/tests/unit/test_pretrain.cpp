#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "cfmimo/pretrain.hpp"

using namespace cfmimo;

namespace {

SystemConfig desk_system() {
  SystemConfig s;
  s.deployment = DeploymentConfig::desk_scale();
  s.pilot_length = 4;
  return s;
}

DatasetSpec small_spec(int tasks, int examples) {
  DatasetSpec d;
  d.system = desk_system();
  d.num_tasks = tasks;
  d.examples_per_task = examples;
  d.policy = policy::MixedReuse{};
  d.bits = {2, 4, 0};
  d.master_seed = 17;
  return d;
}

ModelConfig tiny_model(const SystemConfig& sys, PromptLayout layout) {
  ModelConfig m;
  m.num_layers = 2;
  m.embed_dim = 32;
  m.num_heads = 4;
  m.token_dim = sys.dims().token_dim();
  m.max_seq_len = sys.dims().seq_len(layout);
  m.layout = layout;
  return m;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(SystemConfig, SnrMapping) {
  SystemConfig s;
  EXPECT_NEAR(10 * std::log10(s.noise_power_for_snr(24.0)), -146.0, 1e-9);
  EXPECT_NEAR(10 * std::log10(s.noise_power_for_snr(30.0)), -152.0, 1e-9);
  EXPECT_NEAR(10 * std::log10(s.noise_power_for_snr(0.0)), -122.0, 1e-9);
}

TEST(DatasetSpec, NoiseRangeIsPerTaskAndBounded) {
  DatasetSpec d = small_spec(4, 1);
  EXPECT_EQ(d.task_noise_power(3), d.system.reference_noise_power());
  d.snr_db_low = 10.0;
  d.snr_db_high = 20.0;
  double lo = 1e9, hi = -1e9;
  for (int t = 0; t < 500; ++t) {
    const double snr = -146.0 + 24.0 - 10 * std::log10(d.task_noise_power(t));
    lo = std::min(lo, snr);
    hi = std::max(hi, snr);
  }
  EXPECT_GE(lo, 10.0 - 1e-9);
  EXPECT_LE(hi, 20.0 + 1e-9);
  EXPECT_LT(lo, 11.0);
  EXPECT_GT(hi, 19.0);
  EXPECT_EQ(d.task_noise_power(7), d.task_noise_power(7));
  d.snr_db_high = 5.0;
  EXPECT_THROW(d.validate(), Error);
}

TEST(SimulateBlock, DeterministicAndDistinct) {
  const SystemConfig sys = desk_system();
  const PilotBook book = walsh_hadamard_book(4);
  const TaskConfig t = draw_task(sys, sys.reference_noise_power(), 5, 2);
  const int bits[] = {1, 3};
  const Block a = simulate_block(sys, book, t, policy::MixedReuse{}, bits, 5, 2, 9);
  const Block b = simulate_block(sys, book, t, policy::MixedReuse{}, bits, 5, 2, 9);
  EXPECT_EQ(block_digest(a), block_digest(b));
  EXPECT_EQ(a.qframe.y_stacked, b.qframe.y_stacked);
  EXPECT_NE(block_digest(a), block_digest(simulate_block(sys, book, t, policy::MixedReuse{}, bits, 5, 2, 10)));
}

TEST(SimulateBlock, SingleBitChoiceLeavesRandomDrawsUnchanged) {
  const SystemConfig sys = desk_system();
  const PilotBook book = walsh_hadamard_book(4);
  const TaskConfig t = draw_task(sys, sys.reference_noise_power(), 5, 0);
  const int b1[] = {1}, b8[] = {8};
  EXPECT_EQ(block_digest(simulate_block(sys, book, t, policy::Orthogonal{}, b1, 5, 0, 0)),
            block_digest(simulate_block(sys, book, t, policy::Orthogonal{}, b8, 5, 0, 0)));
}

TEST(GenerateDataset, DeterministicAndShardable) {
  const DatasetSpec spec = small_spec(6, 3);
  const Dataset all = generate_dataset(spec);
  const Dataset again = generate_dataset(spec);
  EXPECT_EQ(all.tokens, again.tokens);
  Dataset pieces = generate_dataset(spec, 0, 2);
  pieces.append(generate_dataset(spec, 2, 5));
  pieces.append(generate_dataset(spec, 5, 6));
  EXPECT_EQ(all.tokens, pieces.tokens);
  EXPECT_EQ(all.targets, pieces.targets);
  EXPECT_EQ(all.task_of, pieces.task_of);
  EXPECT_EQ(all.num_examples(), 18u);
  EXPECT_EQ(all.seq_len, 11);
  EXPECT_EQ(all.token_dim, 9);
}

TEST(GenerateDataset, BitsAndConstellationsAreUniform) {
  DatasetSpec spec = small_spec(400, 4);
  spec.bits = {1, 2, 3, 4};
  const Dataset d = generate_dataset(spec);
  std::array<double, 5> mod{};
  std::array<double, 13> bits{};
  for (std::size_t p = 0; p < d.num_prompts(); ++p) {
    mod[d.constellation_of[p]] += 1;
    bits[d.bits_of[p]] += 1;
  }
  // Per-UE constellation draws are independent, so the prompt counts are multinomial.
  const double n = static_cast<double>(d.num_prompts());
  double chi2 = 0;
  for (double c : mod) chi2 += (c - n / 5) * (c - n / 5) / (n / 5);
  EXPECT_LT(chi2, 18.47);  // 4 dof, p = 0.001
  // Bits are drawn per example; prompts of one example share them.
  std::array<double, 4> per_example{};
  for (std::size_t p = 0; p < d.num_prompts(); ++p) {
    if (p == 0 || d.example_of[p] != d.example_of[p - 1] || d.task_of[p] != d.task_of[p - 1]) {
      per_example[d.bits_of[p] - 1] += 1;
    }
  }
  const double m = 1600.0;
  chi2 = 0;
  for (double c : per_example) chi2 += (c - m / 4) * (c - m / 4) / (m / 4);
  EXPECT_LT(chi2, 16.27);  // 3 dof, p = 0.001
}

TEST(GenerateDataset, TargetsAreTransmittedSymbols) {
  const DatasetSpec spec = small_spec(3, 2);
  const Dataset d = generate_dataset(spec);
  const PilotBook book = walsh_hadamard_book(4);
  std::size_t p = 0;
  for (int t = 0; t < 3; ++t) {
    const TaskConfig task = draw_task(spec.system, spec.task_noise_power(t), spec.master_seed, t);
    for (int e = 0; e < 2; ++e) {
      const Block blk = simulate_block(spec.system, book, task, spec.policy, spec.bits,
                                       spec.master_seed, t, e);
      for (int k = 0; k < task.num_ues(); ++k, ++p) {
        EXPECT_EQ(d.targets[2 * p], static_cast<float>(blk.frame.x[k].real()));
        EXPECT_EQ(d.targets[2 * p + 1], static_cast<float>(blk.frame.x[k].imag()));
      }
    }
  }
  EXPECT_EQ(p, d.num_prompts());
}

TEST(DatasetFiles, RoundTrip) {
  const DatasetSpec spec = small_spec(5, 2);
  const Dataset d = generate_dataset(spec);
  const auto dir = temp_dir("cfmimo_test_dataset");
  write_dataset(dir, spec, d, 2);
  EXPECT_TRUE(std::filesystem::exists(dir / "index.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "shard-00002.bin"));
  const Dataset r = read_dataset(dir);
  EXPECT_EQ(r.tokens, d.tokens);
  EXPECT_EQ(r.targets, d.targets);
  EXPECT_EQ(r.task_of, d.task_of);
  EXPECT_EQ(r.example_of, d.example_of);
  EXPECT_EQ(r.bits_of, d.bits_of);
  EXPECT_EQ(r.constellation_of, d.constellation_of);
  EXPECT_EQ(r.layout, d.layout);
  std::filesystem::remove_all(dir);
}

TEST(DatasetFiles, MissingDirectoryIsIoError) {
  try {
    read_dataset(temp_dir("cfmimo_no_such_dataset"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kIo);
  }
}

TEST(TrainConfig, Schedule) {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.warmup_steps = 10;
  c.total_steps = 110;
  EXPECT_NEAR(c.lr_at(0), 1e-4, 1e-15);
  EXPECT_NEAR(c.lr_at(9), 1e-3, 1e-15);
  EXPECT_NEAR(c.lr_at(10), 1e-3, 1e-15);
  EXPECT_NEAR(c.lr_at(60), 5e-4, 1e-12);
  EXPECT_NEAR(c.lr_at(110), 0.0, 1e-15);
}

TEST(Summarize, KnownValues) {
  const double s[] = {1.0, 2.0, 3.0, 4.0};
  const MseEstimate m = summarize(s);
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.ci95, 1.96 * std::sqrt(5.0 / 3.0 / 4.0), 1e-12);
  EXPECT_EQ(m.blocks, 4);
}

TEST(Evaluate, ZeroAndGenieBounds) {
  EvalSpec spec;
  spec.system = desk_system();
  spec.noise_power = spec.system.reference_noise_power();
  spec.blocks = 3000;
  spec.bits = 3;
  ZeroEqualizer zero;
  GenieEqualizer genie;
  const Equalizer* eqs[] = {&zero, &genie};
  const EvalResult r = evaluate(eqs, spec);
  // Every alphabet has unit mean energy.
  EXPECT_NEAR(r.mse[0].mean, 1.0, 3 * r.mse[0].ci95);
  EXPECT_EQ(r.mse[1].mean, 0.0);
  EXPECT_EQ(r.per_block[0].size(), 3000u);
}

TEST(Evaluate, PairedDrawsAndDigest) {
  EvalSpec spec;
  spec.system = desk_system();
  spec.noise_power = spec.system.reference_noise_power();
  spec.blocks = 300;
  LmmseEqualizer a(walsh_hadamard_book(4), false), b(walsh_hadamard_book(4), true);
  const Equalizer* both[] = {&a, &b};
  const EvalResult joint = evaluate(both, spec);
  const EvalResult alone = evaluate(std::span<const Equalizer* const>(both + 1, 1), spec);
  EXPECT_EQ(joint.per_block[1], alone.per_block[0]);
  EXPECT_EQ(joint.digest, alone.digest);
  spec.seed = 2;
  EXPECT_NE(evaluate(both, spec).digest, joint.digest);
}

TEST(IclEqualizer, ZeroReadoutOutputsZeroAndBatchesAgree) {
  const SystemConfig sys = desk_system();
  auto params = init_params<float>(tiny_model(sys, PromptLayout::kFull), 3);
  IclEqualizer icl(params, walsh_hadamard_book(4), sys.dims());
  EXPECT_EQ(icl.name(), "icl");
  const PilotBook book = walsh_hadamard_book(4);
  std::vector<Block> blocks;
  const int bits[] = {4};
  for (int i = 0; i < 5; ++i) {
    const TaskConfig t = draw_task(sys, sys.reference_noise_power(), 1, i);
    blocks.push_back(simulate_block(sys, book, t, policy::Orthogonal{}, bits, 1, i, 0));
  }
  const auto batch = icl.equalize_batch(blocks);
  for (int i = 0; i < 5; ++i) EXPECT_LT((batch[i] - icl.equalize(blocks[i])).norm(), 1e-5);

  for (const char* name : {"readout.weight", "readout.bias"}) {
    const auto& t = params.tensor(name);
    std::fill_n(params.data.begin() + t.offset, t.size, 0.0f);
  }
  IclEqualizer zero(params, book, sys.dims());
  for (const auto& x : zero.equalize_batch(blocks)) EXPECT_EQ(x.norm(), 0.0);
}

TEST(IclEqualizer, RejectsMismatchedGeometry) {
  const SystemConfig desk = desk_system();
  const SystemConfig full;
  EXPECT_THROW(IclEqualizer(init_params<float>(tiny_model(desk, PromptLayout::kFull), 1),
                            walsh_hadamard_book(8), full.dims()),
               Error);
}

TEST(Train, StepZeroLossIsSymbolEnergy) {
  const DatasetSpec spec = small_spec(40, 8);
  const Dataset d = generate_dataset(spec);
  auto params = init_params<float>(tiny_model(spec.system, PromptLayout::kFull), 1);
  for (const char* name : {"readout.weight", "readout.bias"}) {
    const auto& t = params.tensor(name);
    std::fill_n(params.data.begin() + t.offset, t.size, 0.0f);
  }
  std::vector<std::size_t> all(d.num_prompts());
  std::iota(all.begin(), all.end(), 0);
  double energy = 0;
  for (float v : d.targets) energy += v * v;
  EXPECT_NEAR(dataset_mse(params, d, all), energy / d.num_prompts(), 1e-5);
  EXPECT_NEAR(energy / d.num_prompts(), 1.0, 0.1);
}

TEST(Train, LossDecreasesAndKeepsBestValidation) {
  // Small enough to memorize, so the training loss must fall quickly.
  const DatasetSpec spec = small_spec(20, 4);
  const Dataset d = generate_dataset(spec);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.learning_rate = 3e-3;
  tc.warmup_steps = 20;
  tc.total_steps = 300;
  tc.eval_interval = 50;
  tc.val_fraction = 0.1;
  const TrainResult r = train(init_params<float>(tiny_model(spec.system, PromptLayout::kFull), 2), d, tc);
  ASSERT_EQ(r.curve.size(), 6u);
  EXPECT_LT(r.curve.back().train_mse, 0.7 * r.curve.front().train_mse);
  double best = 1e9;
  for (const auto& p : r.curve) {
    EXPECT_TRUE(std::isfinite(p.val_mse));
    best = std::min(best, p.val_mse);
  }
  EXPECT_EQ(r.best_val_mse, best);

  // The returned parameters are the best checkpoint: rescoring the validation
  // tasks (the last 2 task indices) reproduces the recorded value.
  std::vector<std::size_t> val;
  for (std::size_t p = 0; p < d.num_prompts(); ++p) {
    if (d.task_of[p] >= 18) val.push_back(p);
  }
  EXPECT_NEAR(dataset_mse(r.params, d, val), r.best_val_mse, 1e-6);
}

TEST(Train, Deterministic) {
  const DatasetSpec spec = small_spec(10, 4);
  const Dataset d = generate_dataset(spec);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.total_steps = 20;
  tc.warmup_steps = 2;
  tc.eval_interval = 10;
  const auto p0 = init_params<float>(tiny_model(spec.system, PromptLayout::kFull), 3);
  EXPECT_EQ(train(p0, d, tc).params.data, train(p0, d, tc).params.data);
}

TEST(Train, OverfitsASingleTask) {
  const DatasetSpec spec = small_spec(1, 16);
  const Dataset d = generate_dataset(spec);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.learning_rate = 3e-3;
  tc.warmup_steps = 20;
  tc.total_steps = 800;
  tc.eval_interval = 100;
  const TrainResult r = train(init_params<float>(tiny_model(spec.system, PromptLayout::kFull), 4), d, tc);
  EXPECT_TRUE(std::isnan(r.curve.back().val_mse));
  EXPECT_EQ(r.best_step, 800);
  std::vector<std::size_t> all(d.num_prompts());
  std::iota(all.begin(), all.end(), 0);
  EXPECT_LT(dataset_mse(r.params, d, all), 1e-2);
}

TEST(Train, DivergenceWritesDiagnosticCheckpoint) {
  const DatasetSpec spec = small_spec(4, 4);
  const Dataset d = generate_dataset(spec);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.learning_rate = 1e30;
  tc.warmup_steps = 0;
  tc.total_steps = 50;
  tc.eval_interval = 1;
  tc.clip_norm = 1e30;
  const auto dir = temp_dir("cfmimo_test_diverge");
  std::filesystem::create_directories(dir);
  tc.diagnostic_checkpoint = dir / "diag.ckpt";
  try {
    train(init_params<float>(tiny_model(spec.system, PromptLayout::kFull), 5), d, tc);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kNumeric);
  }
  EXPECT_TRUE(load_checkpoint(tc.diagnostic_checkpoint).all_finite());
  std::filesystem::remove_all(dir);
}

TEST(Train, LayoutMismatchIsConfigError) {
  DatasetSpec spec = small_spec(2, 2);
  spec.layout = PromptLayout::kNoLargeScale;
  const Dataset d = generate_dataset(spec);
  try {
    train(init_params<float>(tiny_model(spec.system, PromptLayout::kFull), 1), d, TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kConfig);
  }
}

TEST(LossCsv, Format) {
  const LossPoint pts[] = {{10, 0.5, 0.25}, {20, 0.125, std::nan("")}};
  std::ostringstream os;
  write_loss_csv(os, pts);
  EXPECT_EQ(os.str(), "step,train_mse,val_mse\n10,0.5,0.25\n20,0.125,\n");
}
