#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "cfmimo/transformer.hpp"

using namespace cfmimo;

namespace {

// Straight-line reference of the pre-norm decoder, written with plain loops
// against the documented tensor names.
struct Ref {
  const ModelParams<double>& p;

  double w(const std::string& name, int r, int c) const {
    const auto& t = p.tensor(name);
    return p.data[t.offset + static_cast<std::size_t>(r) * t.shape.back() + c];
  }
  double v(const std::string& name, int i) const { return p.data[p.tensor(name).offset + i]; }

  using Rows = std::vector<std::vector<double>>;

  Rows linear(const Rows& x, const std::string& name, int out) const {
    Rows y(x.size(), std::vector<double>(out));
    for (std::size_t r = 0; r < x.size(); ++r) {
      for (int o = 0; o < out; ++o) {
        double acc = v(name + ".bias", o);
        for (std::size_t i = 0; i < x[r].size(); ++i) acc += x[r][i] * w(name + ".weight", i, o);
        y[r][o] = acc;
      }
    }
    return y;
  }

  Rows norm(const Rows& x, const std::string& name) const {
    Rows y = x;
    for (std::size_t r = 0; r < x.size(); ++r) {
      const double n = static_cast<double>(x[r].size());
      double mean = 0, var = 0;
      for (double a : x[r]) mean += a / n;
      for (double a : x[r]) var += (a - mean) * (a - mean) / n;
      for (std::size_t i = 0; i < x[r].size(); ++i) {
        y[r][i] = (x[r][i] - mean) / std::sqrt(var + 1e-5) * v(name + ".gain", i) +
                  v(name + ".bias", i);
      }
    }
    return y;
  }

  static double gelu(double u) {
    return 0.5 * u * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (u + 0.044715 * u * u * u)));
  }

  std::array<double, 2> run(const RowMat<double>& tokens) const {
    const ModelConfig& c = p.config;
    const int s = static_cast<int>(tokens.rows());
    const int e = c.embed_dim, dh = c.head_dim();
    Rows h(s, std::vector<double>(e));
    for (int t = 0; t < s; ++t) {
      for (int j = 0; j < e; ++j) {
        double acc = v("embed.bias", j) + w("pos", t, j);
        for (int i = 0; i < c.token_dim; ++i) acc += tokens(t, i) * w("embed.weight", i, j);
        h[t][j] = acc;
      }
    }
    for (int l = 0; l < c.num_layers; ++l) {
      const std::string pre = "layers." + std::to_string(l) + ".";
      const Rows qkv = linear(norm(h, pre + "ln1"), pre + "attn.qkv", 3 * e);
      Rows att(s, std::vector<double>(e, 0.0));
      for (int hd = 0; hd < c.num_heads; ++hd) {
        for (int t = 0; t < s; ++t) {
          std::vector<double> score(t + 1);
          double mx = -1e300;
          for (int u = 0; u <= t; ++u) {
            double dot = 0;
            for (int i = 0; i < dh; ++i) dot += qkv[t][hd * dh + i] * qkv[u][e + hd * dh + i];
            score[u] = dot / std::sqrt(static_cast<double>(dh));
            mx = std::max(mx, score[u]);
          }
          double z = 0;
          for (double& sc : score) z += (sc = std::exp(sc - mx));
          for (int u = 0; u <= t; ++u) {
            for (int i = 0; i < dh; ++i) att[t][hd * dh + i] += score[u] / z * qkv[u][2 * e + hd * dh + i];
          }
        }
      }
      const Rows o = linear(att, pre + "attn.out", e);
      for (int t = 0; t < s; ++t) for (int j = 0; j < e; ++j) h[t][j] += o[t][j];
      Rows u = linear(norm(h, pre + "ln2"), pre + "ff.in", c.ff_dim());
      for (auto& row : u) for (double& a : row) a = gelu(a);
      const Rows f = linear(u, pre + "ff.out", e);
      for (int t = 0; t < s; ++t) for (int j = 0; j < e; ++j) h[t][j] += f[t][j];
    }
    const Rows last = norm({h.back()}, "final_ln");
    const Rows out = linear(last, "readout", 2);
    return {out[0][0], out[0][1]};
  }
};

ModelConfig small_config() {
  ModelConfig c;
  c.num_layers = 1;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.max_seq_len = 6;
  c.token_dim = 5;
  return c;
}

ModelParams<double> random_params(const ModelConfig& c, std::uint64_t seed, double scale = 0.3) {
  ModelParams<double> p(c);
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> g(0.0, scale);
  for (double& v : p.data) v = g(eng);
  // Keep gains away from zero so every path carries signal.
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    if (p.tensors[i].name.ends_with(".gain")) p.matrix(i).array() += 1.0;
  }
  return p;
}

TokenBatch<double> random_batch(int batch, int s, int d, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> g;
  TokenBatch<double> b;
  b.batch = batch;
  b.seq_len = s;
  b.tokens.resize(batch * s, d);
  for (Eigen::Index i = 0; i < b.tokens.size(); ++i) b.tokens.data()[i] = g(eng);
  return b;
}

}  // namespace

TEST(ParameterLayout, DefaultCount) {
  ModelConfig c;  // 4 layers, width 64, 4 heads, d_tok 17, 24 positions
  EXPECT_EQ(parameter_count(c), 202882u);
  const auto t = parameter_layout(c);
  EXPECT_EQ(t.front().name, "embed.weight");
  EXPECT_EQ(t.back().name, "readout.bias");
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_EQ(t[i].offset, t[i - 1].offset + t[i - 1].size);
}

TEST(ParameterLayout, RejectsBadHeads) {
  ModelConfig c;
  c.num_heads = 5;
  EXPECT_THROW(parameter_layout(c), Error);
}

TEST(Forward, MatchesReference) {
  const ModelConfig c = small_config();
  const ModelParams<double> p = random_params(c, 3);
  const TokenBatch<double> b = random_batch(3, 5, c.token_dim, 4);
  const RowMat<double> out = forward(p, b);
  ASSERT_EQ(out.rows(), 3);
  const Ref ref{p};
  for (int i = 0; i < 3; ++i) {
    const auto r = ref.run(b.tokens.middleRows(i * 5, 5));
    EXPECT_NEAR(out(i, 0), r[0], 1e-10);
    EXPECT_NEAR(out(i, 1), r[1], 1e-10);
  }
}

TEST(Forward, TwoLayersMatchReference) {
  ModelConfig c = small_config();
  c.num_layers = 2;
  c.num_heads = 4;
  const ModelParams<double> p = random_params(c, 5);
  const TokenBatch<double> b = random_batch(2, 6, c.token_dim, 6);
  const RowMat<double> out = forward(p, b);
  const Ref ref{p};
  for (int i = 0; i < 2; ++i) {
    const auto r = ref.run(b.tokens.middleRows(i * 6, 6));
    EXPECT_NEAR(out(i, 0), r[0], 1e-10);
    EXPECT_NEAR(out(i, 1), r[1], 1e-10);
  }
}

TEST(Forward, BatchEntriesAreIndependent) {
  const ModelConfig c = small_config();
  const ModelParams<double> p = random_params(c, 7);
  TokenBatch<double> b = random_batch(2, 5, c.token_dim, 8);
  const RowMat<double> before = forward(p, b);
  b.tokens.middleRows(5, 5).setRandom();
  const RowMat<double> after = forward(p, b);
  EXPECT_EQ(before.row(0), after.row(0));
  EXPECT_NE(before.row(1), after.row(1));
}

TEST(Forward, Deterministic) {
  ModelConfig c = small_config();
  const auto p1 = init_params<float>(c, 9);
  const auto p2 = init_params<float>(c, 9);
  EXPECT_EQ(p1.data, p2.data);
  EXPECT_NE(p1.data, init_params<float>(c, 10).data);
  const auto b = random_batch(4, 5, c.token_dim, 1);
  TokenBatch<float> bf{b.batch, b.seq_len, b.tokens.cast<float>()};
  EXPECT_EQ(forward(p1, bf), forward(p2, bf));
}

TEST(Forward, ShapeErrors) {
  const ModelConfig c = small_config();
  const auto p = random_params(c, 1);
  EXPECT_THROW(forward(p, random_batch(1, 7, c.token_dim, 1)), Error);
  EXPECT_THROW(forward(p, random_batch(1, 5, c.token_dim + 1, 1)), Error);
}

TEST(Init, Statistics) {
  ModelConfig c;
  const auto p = init_params<double>(c, 1);
  const auto& t = p.tensor("layers.0.ff.in.weight");
  double sum2 = 0, mx = 0;
  for (std::size_t i = 0; i < t.size; ++i) {
    const double v = p.data[t.offset + i];
    sum2 += v * v;
    mx = std::max(mx, std::abs(v));
  }
  // Standard normal truncated at 2 has variance 0.7737.
  EXPECT_NEAR(std::sqrt(sum2 / t.size), 0.02 * std::sqrt(0.7737), 5e-4);
  EXPECT_LE(mx, 0.04);
  const auto& g = p.tensor("final_ln.gain");
  for (std::size_t i = 0; i < g.size; ++i) EXPECT_EQ(p.data[g.offset + i], 1.0);
  const auto& o = p.tensor("layers.3.attn.out.weight");
  double so = 0;
  for (std::size_t i = 0; i < o.size; ++i) so += p.data[o.offset + i] * p.data[o.offset + i];
  EXPECT_NEAR(std::sqrt(so / o.size), 0.02 / std::sqrt(8.0) * std::sqrt(0.7737), 3e-4);
}

TEST(Gradient, MatchesCentralDifferences) {
  const ModelConfig c = small_config();
  ModelParams<double> p = random_params(c, 11);
  const TokenBatch<double> b = random_batch(3, 5, c.token_dim, 12);
  RowMat<double> targets(3, 2);
  targets << 0.3, -0.7, 1.0, 0.2, -0.5, 0.5;
  ModelParams<double> grad(c);
  grad.set_zero();
  const double loss = loss_and_grad(p, b, targets, &grad);
  EXPECT_NEAR(loss, (forward(p, b) - targets).squaredNorm() / 3.0, 1e-12);

  const double h = 1e-6;
  double worst = 0.0;
  std::size_t worst_i = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p.data[i];
    p.data[i] = keep + h;
    const double up = loss_and_grad<double>(p, b, targets, nullptr);
    p.data[i] = keep - h;
    const double down = loss_and_grad<double>(p, b, targets, nullptr);
    p.data[i] = keep;
    const double fd = (up - down) / (2 * h);
    // Key biases have an exactly zero gradient (softmax shift invariance), so
    // tiny entries are compared on an absolute floor.
    const double rel = std::abs(fd - grad.data[i]) / std::max(1e-4, std::abs(fd) + std::abs(grad.data[i]));
    if (rel > worst) {
      worst = rel;
      worst_i = i;
    }
  }
  std::string where;
  for (const auto& t : p.tensors) {
    if (worst_i >= t.offset && worst_i < t.offset + t.size) where = t.name;
  }
  EXPECT_LT(worst, 1e-5) << where << " analytic " << grad.data[worst_i];
}

TEST(Gradient, AccumulatesIntoExistingBuffer) {
  const ModelConfig c = small_config();
  const ModelParams<double> p = random_params(c, 13);
  const TokenBatch<double> b = random_batch(2, 4, c.token_dim, 14);
  RowMat<double> targets = RowMat<double>::Ones(2, 2);
  ModelParams<double> g1(c), g2(c);
  g1.set_zero();
  g2.set_zero();
  loss_and_grad(p, b, targets, &g1);
  loss_and_grad(p, b, targets, &g2);
  loss_and_grad(p, b, targets, &g2);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g2.data[i], 2 * g1.data[i], 1e-12);
}

TEST(Gradient, ZeroReadoutGivesUnitLossOnUnitTargets) {
  ModelConfig c = small_config();
  auto p = init_params<double>(c, 1);
  for (const char* name : {"readout.weight", "readout.bias"}) {
    const auto& t = p.tensor(name);
    std::fill_n(p.data.begin() + t.offset, t.size, 0.0);
  }
  RowMat<double> targets(2, 2);
  targets << 1.0, 0.0, 0.0, -1.0;
  EXPECT_DOUBLE_EQ(loss_and_grad<double>(p, random_batch(2, 5, c.token_dim, 1), targets, nullptr), 1.0);
}

TEST(Checkpoint, RoundTrip) {
  ModelConfig c = small_config();
  c.layout = PromptLayout::kNoLargeScale;
  const auto p = init_params<float>(c, 21);
  const auto path = std::filesystem::temp_directory_path() / "cfmimo_test_ckpt.bin";
  save_checkpoint(path, p);
  const auto q = load_checkpoint(path);
  EXPECT_EQ(q.config, p.config);
  EXPECT_EQ(q.data, p.data);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto dir = std::filesystem::temp_directory_path();
  EXPECT_THROW(load_checkpoint(dir / "cfmimo_missing.ckpt"), Error);
  const auto bad = dir / "cfmimo_bad.ckpt";
  std::ofstream(bad) << "not a checkpoint";
  try {
    load_checkpoint(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kIo);
  }
  const auto p = init_params<float>(small_config(), 1);
  save_checkpoint(bad, p);
  std::filesystem::resize_file(bad, std::filesystem::file_size(bad) - 4);
  EXPECT_THROW(load_checkpoint(bad), Error);
  std::filesystem::remove(bad);
}
