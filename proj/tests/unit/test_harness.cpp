#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cfmimo/harness.hpp"
#include "cfmimo/plot.hpp"

using namespace cfmimo;

namespace {

SystemConfig desk_system() {
  SystemConfig s;
  s.deployment = DeploymentConfig::desk_scale();
  s.pilot_length = 4;
  return s;
}

std::filesystem::path scratch() {
  auto p = std::filesystem::temp_directory_path() / "cfmimo_test_harness";
  std::filesystem::create_directories(p);
  return p;
}

std::filesystem::path tiny_checkpoint(PromptLayout layout, const std::string& name) {
  const SystemConfig sys = desk_system();
  ModelConfig m;
  m.num_layers = 1;
  m.embed_dim = 8;
  m.num_heads = 2;
  m.token_dim = sys.dims().token_dim();
  m.max_seq_len = sys.dims().seq_len(layout);
  m.layout = layout;
  const auto path = scratch() / name;
  save_checkpoint(path, init_params<float>(m, 1));
  return path;
}

ExperimentSpec lmmse_spec() {
  ExperimentSpec s;
  s.bits = {1, 4, 0};
  s.snr_db = {12, 24};
  s.reuse = {0, 1};
  s.equalizers = {"lmmse", "lmmse_inf"};
  s.blocks = 200;
  s.reuse_policy = policy::FixedReuse{1};
  s.ue_count = 2;
  return s;
}

}  // namespace

TEST(ExperimentSpec, Validation) {
  ExperimentSpec s = lmmse_spec();
  EXPECT_NO_THROW(s.validate());
  s.blocks = 50;
  EXPECT_THROW(s.validate(), Error);
  s = lmmse_spec();
  s.equalizers = {"mmse"};
  EXPECT_THROW(s.validate(), Error);
  s = lmmse_spec();
  s.bits = {13};
  EXPECT_THROW(s.validate(), Error);
  EXPECT_EQ(parse_experiment("fig4"), ExperimentId::kFig4);
  EXPECT_THROW(parse_experiment("fig5"), Error);
}

TEST(Fig3, UnquantizedBaselineIsConstantAcrossBits) {
  const ExperimentSpec s = lmmse_spec();
  const ResultTable t = run_fig3(s, desk_system());
  ASSERT_EQ(t.rows.size(), 2u * 3u * 2u);
  for (const char* regime : {"orthogonal", "fixed_reuse(1)"}) {
    const ResultRow* ref = t.find("lmmse_inf", 0, 24, regime);
    ASSERT_NE(ref, nullptr) << regime;
    for (int b : s.bits) {
      const ResultRow* r = t.find("lmmse_inf", b, 24, regime);
      ASSERT_NE(r, nullptr);
      EXPECT_EQ(r->mse.mean, ref->mse.mean);
      EXPECT_EQ(r->digest, ref->digest);
    }
    // With a bypass fronthaul the quantized path must agree with the ideal one.
    EXPECT_NEAR(t.find("lmmse", 0, 24, regime)->mse.mean, ref->mse.mean, 1e-9);
  }
  // Under contamination the per-block error is heavy tailed, so the bit
  // ordering is only checked with orthogonal pilots.
  EXPECT_GT(t.find("lmmse", 1, 24, "orthogonal")->mse.mean,
            t.find("lmmse", 4, 24, "orthogonal")->mse.mean);
}

TEST(Fig4, GridAndRejectsImpossibleReuse) {
  ExperimentSpec s = lmmse_spec();
  s.snr_sweep_bits = 4;
  const ResultTable t = run_fig4(s, desk_system());
  EXPECT_EQ(t.rows.size(), 2u * 2u * 2u);
  for (const auto& r : t.rows) {
    EXPECT_EQ(r.bits, 4);
    EXPECT_EQ(r.experiment, "fig4");
  }
  EXPECT_GT(t.find("lmmse_inf", 4, 24, "1")->mse.mean, t.find("lmmse_inf", 4, 24, "0")->mse.mean);
  s.reuse = {2};
  EXPECT_THROW(run_fig4(s, desk_system()), Error);
}

TEST(Ablation, PairedDeltasMatchRows) {
  ExperimentSpec s = lmmse_spec();
  s.checkpoint_full = tiny_checkpoint(PromptLayout::kFull, "full.ckpt");
  s.checkpoint_no_ls = tiny_checkpoint(PromptLayout::kNoLargeScale, "nols.ckpt");
  s.snr_db = {24};
  s.blocks = 150;
  const ResultTable t = run_ablation(s, desk_system());
  ASSERT_EQ(t.rows.size(), 2u * 2u);
  ASSERT_EQ(t.deltas.size(), 2u);
  for (const auto& d : t.deltas) {
    const auto* a = t.find("icl_no_ls", d.bits, d.snr_db, d.reuse);
    const auto* b = t.find("icl", d.bits, d.snr_db, d.reuse);
    ASSERT_TRUE(a && b);
    EXPECT_NEAR(d.delta.mean, a->mse.mean - b->mse.mean, 1e-12);
    EXPECT_EQ(a->digest, b->digest);
    EXPECT_EQ(d.delta.blocks, 150);
  }
}

TEST(Harness, ThreadCountDoesNotChangeResults) {
  ExperimentSpec s = lmmse_spec();
  s.blocks = 100;
  std::ostringstream one, three;
  run_custom(s, desk_system()).write_csv(one);
  s.threads = 3;
  run_custom(s, desk_system()).write_csv(three);
  EXPECT_EQ(one.str(), three.str());
}

TEST(Harness, MissingCheckpointNamesTheFix) {
  ExperimentSpec s = lmmse_spec();
  s.equalizers = {"icl"};
  s.checkpoint_full = scratch() / "absent.ckpt";
  try {
    run_fig3(s, desk_system());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kIo);
    EXPECT_NE(std::string(e.what()).find("cfmimo train"), std::string::npos);
  }
  s.checkpoint_full.clear();
  try {
    run_fig3(s, desk_system());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kConfig);
    EXPECT_NE(std::string(e.what()).find("experiment.checkpoint_full"), std::string::npos);
  }
}

TEST(Harness, SwappedCheckpointLayoutIsConfigError) {
  ExperimentSpec s = lmmse_spec();
  s.equalizers = {"icl"};
  s.checkpoint_full = tiny_checkpoint(PromptLayout::kNoLargeScale, "swapped.ckpt");
  try {
    make_equalizers(s, desk_system());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kConfig);
  }
}

TEST(ResultsCsv, RoundTripAndDeterminism) {
  const ExperimentSpec s = lmmse_spec();
  const ResultTable t = run_custom(s, desk_system());
  const auto path = scratch() / "results.csv";
  t.write_csv(path);
  const ResultTable r = read_results_csv(path);
  ASSERT_EQ(r.rows.size(), t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    EXPECT_EQ(r.rows[i].equalizer, t.rows[i].equalizer);
    EXPECT_EQ(r.rows[i].bits, t.rows[i].bits);
    EXPECT_EQ(r.rows[i].reuse, t.rows[i].reuse);
    EXPECT_EQ(r.rows[i].digest, t.rows[i].digest);
    EXPECT_NEAR(r.rows[i].mse.mean, t.rows[i].mse.mean, 1e-9 * t.rows[i].mse.mean);
  }
  std::ostringstream a, b;
  t.write_csv(a);
  run_custom(s, desk_system()).write_csv(b);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str().rfind("# cfmimo-results-v1\nexperiment,equalizer,b,snr_db,reuse,mse,ci95,blocks,seed,digest\n", 0), 0u);
  EXPECT_NE(a.str().find(",inf,"), std::string::npos);
}

TEST(ResultsCsv, MalformedFileIsIoError) {
  const auto path = scratch() / "bad.csv";
  std::ofstream(path) << "hello\n";
  try {
    read_results_csv(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kIo);
  }
}

TEST(Plot, WritesOnePanelPerRegime) {
  const ResultTable t = run_fig3(lmmse_spec(), desk_system());
  const auto figs = figures_from_results(t);
  ASSERT_EQ(figs.size(), 2u);
  EXPECT_EQ(figs[0].series.size(), 2u);
  EXPECT_EQ(figs[0].x_tick_labels.back(), "inf");
  const auto csv = scratch() / "fig3.csv";
  const auto svg = scratch() / "fig3.svg";
  t.write_csv(csv);
  plot_results(csv, svg);
  std::ifstream in(svg);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(text.rfind("<svg", 0), 0u);
  EXPECT_NE(text.find("lmmse_inf"), std::string::npos);
}
