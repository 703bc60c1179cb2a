#include "cfmimo/transformer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "cfmimo/rng.hpp"

namespace cfmimo {

void ModelConfig::validate() const {
  require(num_layers >= 1, ErrorCategory::kConfig, "model.num_layers must be >= 1");
  require(embed_dim >= 1 && num_heads >= 1 && embed_dim % num_heads == 0, ErrorCategory::kConfig,
          "model.embed_dim must be a positive multiple of model.num_heads");
  require(max_seq_len >= 1, ErrorCategory::kConfig, "model.max_seq_len must be >= 1");
  require(token_dim >= 1, ErrorCategory::kConfig, "model.token_dim must be >= 1");
  require(ff_mult >= 1, ErrorCategory::kConfig, "model.ff_mult must be >= 1");
}

namespace {

constexpr int kTensorsPerLayer = 12;
constexpr int kHeadTensors = 3;

enum LayerSlot : int {
  kLn1Gain = 0,
  kLn1Bias,
  kQkvWeight,
  kQkvBias,
  kOutWeight,
  kOutBias,
  kLn2Gain,
  kLn2Bias,
  kFfInWeight,
  kFfInBias,
  kFfOutWeight,
  kFfOutBias,
};

std::size_t layer_tensor(int layer, LayerSlot slot) {
  return kHeadTensors + static_cast<std::size_t>(layer) * kTensorsPerLayer + slot;
}

struct TailIndex {
  std::size_t ln_gain, ln_bias, weight, bias;
};

TailIndex tail_index(const ModelConfig& cfg) {
  const std::size_t base = kHeadTensors + static_cast<std::size_t>(cfg.num_layers) * kTensorsPerLayer;
  return {base, base + 1, base + 2, base + 3};
}

constexpr double kLnEps = 1e-5;

}  // namespace

std::vector<TensorInfo> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  const int e = cfg.embed_dim;
  const int f = cfg.ff_dim();
  std::vector<TensorInfo> t;
  auto add = [&](std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    const std::size_t offset = t.empty() ? 0 : t.back().offset + t.back().size;
    t.push_back({std::move(name), std::move(shape), offset, n});
  };
  add("embed.weight", {cfg.token_dim, e});
  add("embed.bias", {e});
  add("pos", {cfg.max_seq_len, e});
  for (int i = 0; i < cfg.num_layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    add(p + "ln1.gain", {e});
    add(p + "ln1.bias", {e});
    add(p + "attn.qkv.weight", {e, 3 * e});
    add(p + "attn.qkv.bias", {3 * e});
    add(p + "attn.out.weight", {e, e});
    add(p + "attn.out.bias", {e});
    add(p + "ln2.gain", {e});
    add(p + "ln2.bias", {e});
    add(p + "ff.in.weight", {e, f});
    add(p + "ff.in.bias", {f});
    add(p + "ff.out.weight", {f, e});
    add(p + "ff.out.bias", {e});
  }
  add("final_ln.gain", {e});
  add("final_ln.bias", {e});
  add("readout.weight", {e, 2});
  add("readout.bias", {2});
  return t;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const auto t = parameter_layout(cfg);
  return t.back().offset + t.back().size;
}

template <typename T>
ModelParams<T>::ModelParams(const ModelConfig& cfg)
    : config(cfg), tensors(parameter_layout(cfg)), data(parameter_count(cfg), T(0)) {}

template <typename T>
const TensorInfo& ModelParams<T>::tensor(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  fail(ErrorCategory::kShape, "no tensor named '" + std::string(name) + "'");
}

template <typename T>
Eigen::Map<RowMat<T>> ModelParams<T>::matrix(std::size_t index) {
  const auto& t = tensors[index];
  const int rows = t.shape.size() == 2 ? t.shape[0] : 1;
  const int cols = t.shape.back();
  return Eigen::Map<RowMat<T>>(data.data() + t.offset, rows, cols);
}

template <typename T>
Eigen::Map<const RowMat<T>> ModelParams<T>::matrix(std::size_t index) const {
  const auto& t = tensors[index];
  const int rows = t.shape.size() == 2 ? t.shape[0] : 1;
  const int cols = t.shape.back();
  return Eigen::Map<const RowMat<T>>(data.data() + t.offset, rows, cols);
}

template <typename T>
bool ModelParams<T>::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams<T> p(cfg);
  rng::Engine eng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto truncated = [&] {
    for (;;) {
      const double v = gauss(eng);
      if (std::abs(v) <= 2.0) return v;
    }
  };
  const double std_dev = 0.02;
  const double residual = std_dev / std::sqrt(2.0 * cfg.num_layers);
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    const auto& t = p.tensors[i];
    auto m = p.matrix(i);
    const bool is_gain = t.name.ends_with(".gain");
    const bool is_bias = t.name.ends_with(".bias");
    if (is_gain) {
      m.setConstant(T(1));
    } else if (is_bias) {
      m.setZero();
    } else {
      const bool is_residual =
          t.name.ends_with("attn.out.weight") || t.name.ends_with("ff.out.weight");
      const double s = is_residual ? residual : std_dev;
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<T>(s * truncated());
      }
    }
  }
  return p;
}

template <typename T>
TokenBatch<T> make_batch(std::span<const TokenSequence> seqs) {
  require(!seqs.empty(), ErrorCategory::kShape, "make_batch: empty batch");
  TokenBatch<T> b;
  b.batch = static_cast<int>(seqs.size());
  b.seq_len = seqs.front().seq_len();
  const int d = seqs.front().token_dim();
  b.tokens.resize(static_cast<Eigen::Index>(b.batch) * b.seq_len, d);
  for (int i = 0; i < b.batch; ++i) {
    require(seqs[i].seq_len() == b.seq_len && seqs[i].token_dim() == d, ErrorCategory::kShape,
            "make_batch: sequences differ in shape");
    b.tokens.middleRows(static_cast<Eigen::Index>(i) * b.seq_len, b.seq_len) =
        seqs[i].tokens.cast<T>();
  }
  return b;
}

namespace {

template <typename T>
using Mat = RowMat<T>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct LnCache {
  Mat<T> xhat;
  ColVec<T> rstd;
};

template <typename T, typename Gain, typename Bias>
Mat<T> layer_norm(const Mat<T>& x, const Gain& gain, const Bias& bias, LnCache<T>* cache) {
  const auto n = x.cols();
  ColVec<T> mean = x.rowwise().mean();
  Mat<T> centered = x.colwise() - mean;
  ColVec<T> var = centered.array().square().rowwise().sum() / static_cast<T>(n);
  ColVec<T> rstd = (var.array() + static_cast<T>(kLnEps)).rsqrt();
  Mat<T> xhat = centered.array().colwise() * rstd.array();
  Mat<T> y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename T, typename Gain, typename DGain, typename DBias>
Mat<T> layer_norm_backward(const Mat<T>& dy, const LnCache<T>& c, const Gain& gain, DGain dgain,
                           DBias dbias) {
  dgain += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  const Mat<T> dxhat = dy.array().rowwise() * gain.row(0).array();
  const T inv_n = T(1) / static_cast<T>(dy.cols());
  const ColVec<T> mean_d = dxhat.rowwise().sum() * inv_n;
  const ColVec<T> mean_dx = (dxhat.array() * c.xhat.array()).rowwise().sum().matrix() * inv_n;
  Mat<T> dx = dxhat;
  dx.colwise() -= mean_d;
  dx.array() -= c.xhat.array().colwise() * mean_dx.array();
  dx.array().colwise() *= c.rstd.array();
  return dx;
}

template <typename T>
T gelu(T u) {
  const T k = static_cast<T>(0.7978845608028654);
  return T(0.5) * u * (T(1) + std::tanh(k * (u + T(0.044715) * u * u * u)));
}

template <typename T>
T gelu_grad(T u) {
  const T k = static_cast<T>(0.7978845608028654);
  const T t = std::tanh(k * (u + T(0.044715) * u * u * u));
  return T(0.5) * (T(1) + t) +
         T(0.5) * u * (T(1) - t * t) * k * (T(1) + T(3) * T(0.044715) * u * u);
}

template <typename T>
struct LayerCache {
  LnCache<T> ln1;
  Mat<T> a;      // LN1 output
  Mat<T> qkv;
  Mat<T> probs;  // (batch * heads * S) x S
  Mat<T> attn;   // concatenated head outputs
  LnCache<T> ln2;
  Mat<T> c;      // LN2 output
  Mat<T> u;      // FF pre-activation
  Mat<T> g;      // FF activation
};

template <typename T>
struct ForwardCache {
  std::vector<LayerCache<T>> layers;
  LnCache<T> final_ln;
  Mat<T> final_out;
};

template <typename T>
Mat<T> run_forward(const ModelParams<T>& p, const TokenBatch<T>& in, ForwardCache<T>* cache) {
  const ModelConfig& cfg = p.config;
  const int b = in.batch;
  const int s = in.seq_len;
  const int e = cfg.embed_dim;
  const int heads = cfg.num_heads;
  const int dh = cfg.head_dim();
  require(s <= cfg.max_seq_len, ErrorCategory::kShape,
          "forward: sequence length " + std::to_string(s) + " exceeds max_seq_len");
  require(in.tokens.cols() == cfg.token_dim, ErrorCategory::kShape,
          "forward: token dimension mismatch");
  require(in.tokens.rows() == static_cast<Eigen::Index>(b) * s, ErrorCategory::kShape,
          "forward: token rows must equal batch * seq_len");

  Mat<T> h = in.tokens * p.matrix(0);
  h.rowwise() += p.matrix(1).row(0);
  const auto pos = p.matrix(2);
  for (int i = 0; i < b; ++i) h.middleRows(static_cast<Eigen::Index>(i) * s, s) += pos.topRows(s);

  if (cache) cache->layers.resize(cfg.num_layers);
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Mat<T> scores(s, s);

  for (int layer = 0; layer < cfg.num_layers; ++layer) {
    LayerCache<T> local;
    LayerCache<T>& lc = cache ? cache->layers[layer] : local;
    lc.a = layer_norm<T>(h, p.matrix(layer_tensor(layer, kLn1Gain)),
                         p.matrix(layer_tensor(layer, kLn1Bias)), &lc.ln1);
    lc.qkv = lc.a * p.matrix(layer_tensor(layer, kQkvWeight));
    lc.qkv.rowwise() += p.matrix(layer_tensor(layer, kQkvBias)).row(0);
    lc.attn.resize(h.rows(), e);
    if (cache) lc.probs.resize(static_cast<Eigen::Index>(b) * heads * s, s);
    for (int i = 0; i < b; ++i) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(i) * s;
      for (int hd = 0; hd < heads; ++hd) {
        const auto q = lc.qkv.block(r0, hd * dh, s, dh);
        const auto k = lc.qkv.block(r0, e + hd * dh, s, dh);
        const auto v = lc.qkv.block(r0, 2 * e + hd * dh, s, dh);
        scores.noalias() = (q * k.transpose()) * scale;
        for (int r = 0; r < s; ++r) {
          const T mx = scores.row(r).head(r + 1).maxCoeff();
          T sum = 0;
          for (int c = 0; c <= r; ++c) {
            const T w = std::exp(scores(r, c) - mx);
            scores(r, c) = w;
            sum += w;
          }
          for (int c = 0; c <= r; ++c) scores(r, c) /= sum;
          for (int c = r + 1; c < s; ++c) scores(r, c) = T(0);
        }
        lc.attn.block(r0, hd * dh, s, dh).noalias() = scores * v;
        if (cache) lc.probs.middleRows((static_cast<Eigen::Index>(i) * heads + hd) * s, s) = scores;
      }
    }
    h.noalias() += lc.attn * p.matrix(layer_tensor(layer, kOutWeight));
    h.rowwise() += p.matrix(layer_tensor(layer, kOutBias)).row(0);

    lc.c = layer_norm<T>(h, p.matrix(layer_tensor(layer, kLn2Gain)),
                         p.matrix(layer_tensor(layer, kLn2Bias)), &lc.ln2);
    lc.u = lc.c * p.matrix(layer_tensor(layer, kFfInWeight));
    lc.u.rowwise() += p.matrix(layer_tensor(layer, kFfInBias)).row(0);
    lc.g = lc.u.unaryExpr([](T x) { return gelu(x); });
    h.noalias() += lc.g * p.matrix(layer_tensor(layer, kFfOutWeight));
    h.rowwise() += p.matrix(layer_tensor(layer, kFfOutBias)).row(0);
  }

  Mat<T> last(b, e);
  for (int i = 0; i < b; ++i) last.row(i) = h.row(static_cast<Eigen::Index>(i) * s + s - 1);
  const TailIndex ti = tail_index(cfg);
  LnCache<T> local_ln;
  Mat<T> f = layer_norm<T>(last, p.matrix(ti.ln_gain), p.matrix(ti.ln_bias),
                           cache ? &cache->final_ln : &local_ln);
  Mat<T> out = f * p.matrix(ti.weight);
  out.rowwise() += p.matrix(ti.bias).row(0);
  if (cache) cache->final_out = std::move(f);
  return out;
}

}  // namespace

template <typename T>
RowMat<T> forward(const ModelParams<T>& params, const TokenBatch<T>& batch) {
  return run_forward<T>(params, batch, nullptr);
}

template <typename T>
T loss_and_grad(const ModelParams<T>& p, const TokenBatch<T>& in, const RowMat<T>& targets,
                ModelParams<T>* grad) {
  const ModelConfig& cfg = p.config;
  require(targets.rows() == in.batch && targets.cols() == 2, ErrorCategory::kShape,
          "loss_and_grad: targets must be batch x 2");
  ForwardCache<T> cache;
  const Mat<T> out = run_forward<T>(p, in, grad ? &cache : nullptr);
  const Mat<T> diff = out - targets;
  const T loss = diff.squaredNorm() / static_cast<T>(in.batch);
  if (!grad) return loss;
  require(grad->size() == p.size(), ErrorCategory::kShape, "loss_and_grad: gradient size mismatch");

  const int b = in.batch;
  const int s = in.seq_len;
  const int e = cfg.embed_dim;
  const int heads = cfg.num_heads;
  const int dh = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const TailIndex ti = tail_index(cfg);

  const Mat<T> dout = diff * (T(2) / static_cast<T>(b));
  grad->matrix(ti.weight).noalias() += cache.final_out.transpose() * dout;
  grad->matrix(ti.bias) += dout.colwise().sum();
  const Mat<T> df = dout * p.matrix(ti.weight).transpose();
  const Mat<T> dlast = layer_norm_backward<T>(df, cache.final_ln, p.matrix(ti.ln_gain),
                                              grad->matrix(ti.ln_gain), grad->matrix(ti.ln_bias));

  Mat<T> dh_res = Mat<T>::Zero(static_cast<Eigen::Index>(b) * s, e);
  for (int i = 0; i < b; ++i) dh_res.row(static_cast<Eigen::Index>(i) * s + s - 1) = dlast.row(i);

  Mat<T> dscores(s, s);
  Mat<T> dprobs(s, s);
  for (int layer = cfg.num_layers - 1; layer >= 0; --layer) {
    const LayerCache<T>& lc = cache.layers[layer];

    // Feed-forward branch.
    grad->matrix(layer_tensor(layer, kFfOutWeight)).noalias() += lc.g.transpose() * dh_res;
    grad->matrix(layer_tensor(layer, kFfOutBias)) += dh_res.colwise().sum();
    Mat<T> du = dh_res * p.matrix(layer_tensor(layer, kFfOutWeight)).transpose();
    du.array() *= lc.u.unaryExpr([](T x) { return gelu_grad(x); }).array();
    grad->matrix(layer_tensor(layer, kFfInWeight)).noalias() += lc.c.transpose() * du;
    grad->matrix(layer_tensor(layer, kFfInBias)) += du.colwise().sum();
    const Mat<T> dc = du * p.matrix(layer_tensor(layer, kFfInWeight)).transpose();
    dh_res += layer_norm_backward<T>(dc, lc.ln2, p.matrix(layer_tensor(layer, kLn2Gain)),
                                     grad->matrix(layer_tensor(layer, kLn2Gain)),
                                     grad->matrix(layer_tensor(layer, kLn2Bias)));

    // Attention branch.
    grad->matrix(layer_tensor(layer, kOutWeight)).noalias() += lc.attn.transpose() * dh_res;
    grad->matrix(layer_tensor(layer, kOutBias)) += dh_res.colwise().sum();
    const Mat<T> dattn = dh_res * p.matrix(layer_tensor(layer, kOutWeight)).transpose();
    Mat<T> dqkv(lc.qkv.rows(), lc.qkv.cols());
    for (int i = 0; i < b; ++i) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(i) * s;
      for (int hd = 0; hd < heads; ++hd) {
        const auto q = lc.qkv.block(r0, hd * dh, s, dh);
        const auto k = lc.qkv.block(r0, e + hd * dh, s, dh);
        const auto v = lc.qkv.block(r0, 2 * e + hd * dh, s, dh);
        const auto probs = lc.probs.middleRows((static_cast<Eigen::Index>(i) * heads + hd) * s, s);
        const auto d_o = dattn.block(r0, hd * dh, s, dh);
        dprobs.noalias() = d_o * v.transpose();
        dqkv.block(r0, 2 * e + hd * dh, s, dh).noalias() = probs.transpose() * d_o;
        const ColVec<T> row_dot = (dprobs.array() * probs.array()).rowwise().sum();
        dscores = probs.array() * (dprobs.array().colwise() - row_dot.array());
        dscores *= scale;
        dqkv.block(r0, hd * dh, s, dh).noalias() = dscores * k;
        dqkv.block(r0, e + hd * dh, s, dh).noalias() = dscores.transpose() * q;
      }
    }
    grad->matrix(layer_tensor(layer, kQkvWeight)).noalias() += lc.a.transpose() * dqkv;
    grad->matrix(layer_tensor(layer, kQkvBias)) += dqkv.colwise().sum();
    const Mat<T> da = dqkv * p.matrix(layer_tensor(layer, kQkvWeight)).transpose();
    dh_res += layer_norm_backward<T>(da, lc.ln1, p.matrix(layer_tensor(layer, kLn1Gain)),
                                     grad->matrix(layer_tensor(layer, kLn1Gain)),
                                     grad->matrix(layer_tensor(layer, kLn1Bias)));
  }

  grad->matrix(0).noalias() += in.tokens.transpose() * dh_res;
  grad->matrix(1) += dh_res.colwise().sum();
  auto dpos = grad->matrix(2);
  for (int i = 0; i < b; ++i) {
    dpos.topRows(s) += dh_res.middleRows(static_cast<Eigen::Index>(i) * s, s);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'C', 'F', 'I', 'C', 'L', 'C', 'K', '1'};

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers}, {"embed_dim", c.embed_dim},
          {"num_heads", c.num_heads},   {"max_seq_len", c.max_seq_len},
          {"token_dim", c.token_dim},   {"ff_mult", c.ff_mult},
          {"positional", "absolute-learned"}};
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char bytes[8];
  is.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void write_f32(std::ostream& os, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  unsigned char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), 4);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params) {
  nlohmann::json header;
  header["format"] = "cfmimo-checkpoint";
  header["format_version"] = 1;
  header["layout_version"] = std::string(layout_version(params.config.layout));
  header["config"] = config_to_json(params.config);
  header["dtype"] = "float32-le";
  nlohmann::json table = nlohmann::json::array();
  for (const auto& t : params.tensors) table.push_back({{"name", t.name}, {"shape", t.shape}});
  header["tensors"] = table;
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorCategory::kIo,
          "cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof kMagic);
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (float v : params.data) write_f32(os, v);
  require(static_cast<bool>(os), ErrorCategory::kIo, "failed writing checkpoint " + path.string());
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCategory::kIo, "cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, 8);
  require(is && std::memcmp(magic, kMagic, 8) == 0, ErrorCategory::kIo,
          "not a checkpoint file: " + path.string());
  const std::uint64_t len = read_u64(is);
  require(is && len < (1u << 24), ErrorCategory::kIo, "corrupt checkpoint header");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    fail(ErrorCategory::kIo, std::string("corrupt checkpoint header: ") + e.what());
  }
  require(header.value("dtype", "") == "float32-le", ErrorCategory::kIo,
          "unsupported checkpoint dtype");
  ModelConfig cfg;
  const auto& c = header.at("config");
  cfg.num_layers = c.at("num_layers");
  cfg.embed_dim = c.at("embed_dim");
  cfg.num_heads = c.at("num_heads");
  cfg.max_seq_len = c.at("max_seq_len");
  cfg.token_dim = c.at("token_dim");
  cfg.ff_mult = c.at("ff_mult");
  cfg.layout = parse_layout(header.at("layout_version").get<std::string>());
  ModelParams<float> p(cfg);
  const auto& table = header.at("tensors");
  require(table.size() == p.tensors.size(), ErrorCategory::kIo,
          "checkpoint tensor table does not match its config");
  for (std::size_t i = 0; i < table.size(); ++i) {
    require(table[i].at("name") == p.tensors[i].name &&
                table[i].at("shape").get<std::vector<int>>() == p.tensors[i].shape,
            ErrorCategory::kIo, "checkpoint tensor mismatch at " + p.tensors[i].name);
  }
  std::vector<unsigned char> raw(p.data.size() * 4);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require(static_cast<std::size_t>(is.gcount()) == raw.size(), ErrorCategory::kIo,
          "truncated checkpoint " + path.string());
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    std::uint32_t bits = 0;
    for (int j = 0; j < 4; ++j) bits |= static_cast<std::uint32_t>(raw[4 * i + j]) << (8 * j);
    p.data[i] = std::bit_cast<float>(bits);
  }
  return p;
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<float> init_params<float>(const ModelConfig&, std::uint64_t);
template ModelParams<double> init_params<double>(const ModelConfig&, std::uint64_t);
template TokenBatch<float> make_batch<float>(std::span<const TokenSequence>);
template TokenBatch<double> make_batch<double>(std::span<const TokenSequence>);
template RowMat<float> forward<float>(const ModelParams<float>&, const TokenBatch<float>&);
template RowMat<double> forward<double>(const ModelParams<double>&, const TokenBatch<double>&);
template float loss_and_grad<float>(const ModelParams<float>&, const TokenBatch<float>&,
                                    const RowMat<float>&, ModelParams<float>*);
template double loss_and_grad<double>(const ModelParams<double>&, const TokenBatch<double>&,
                                      const RowMat<double>&, ModelParams<double>*);

}  // namespace cfmimo
