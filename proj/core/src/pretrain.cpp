#include "cfmimo/pretrain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cfmimo/lmmse.hpp"
#include "cfmimo/rng.hpp"

namespace cfmimo {

double SystemConfig::noise_power_for_snr(double snr_db) const {
  return std::pow(10.0, (reference_noise_db + reference_snr_db - snr_db) / 10.0);
}

void SystemConfig::validate() const {
  deployment.validate();
  walsh_hadamard_book(pilot_length);
  require(!constellations.empty(), ErrorCategory::kConfig,
          "signal.constellations must be non-empty");
}

TaskConfig draw_task(const SystemConfig& sys, double noise_power, std::uint64_t master,
                     std::uint64_t task_index, std::optional<int> ue_count) {
  const auto seed = rng::derive(master, task_index, 0, rng::Purpose::kTask);
  if (!ue_count) return build_task(sys.deployment, noise_power, sys.constellations, seed);
  DeploymentConfig dep = sys.deployment;
  dep.ue_min = dep.ue_max = *ue_count;
  return build_task(dep, noise_power, sys.constellations, seed);
}

Block simulate_block(const SystemConfig& sys, const PilotBook& book, const TaskConfig& task,
                     const AssignmentPolicy& policy, std::span<const int> bits_choices,
                     std::uint64_t master, std::uint64_t task_index, std::uint64_t block_index) {
  require(!bits_choices.empty(), ErrorCategory::kConfig, "simulate_block: no bit widths");
  require(book.length() == sys.pilot_length, ErrorCategory::kShape,
          "simulate_block: pilot book length mismatch");
  using rng::Purpose;
  auto seed = [&](Purpose p) { return rng::derive(master, task_index, block_index, p); };

  Block blk;
  blk.task = task;
  blk.assignment =
      assign_pilots(task.num_ues(), sys.pilot_length, policy, seed(Purpose::kAssignment));
  blk.channels = sample_channels(task, seed(Purpose::kChannel));
  blk.frame.x = draw_symbols(task, seed(Purpose::kSymbols));
  PilotPhase pilots = transmit_pilots(blk.channels, blk.assignment, book, task.noise_power,
                                      seed(Purpose::kPilotNoise));
  DataPhase data = transmit_data(blk.channels, blk.frame.x, task.noise_power,
                                 seed(Purpose::kDataNoise));
  blk.frame.Z = std::move(pilots.Z);
  blk.frame.pilot_noise = std::move(pilots.noise);
  blk.frame.y = std::move(data.y);
  blk.frame.data_noise = std::move(data.noise);

  if (bits_choices.size() == 1) {
    blk.bits = bits_choices.front();
  } else {
    rng::Engine eng(seed(Purpose::kFronthaul));
    std::uniform_int_distribution<std::size_t> pick(0, bits_choices.size() - 1);
    blk.bits = bits_choices[pick(eng)];
  }
  blk.profile = scaling_profile(task);
  blk.qframe = quantize_frame(blk.frame, lloyd_max(blk.bits), blk.profile);
  return blk;
}

namespace {

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ULL;
    }
  }
  void complex(const cdouble* p, Eigen::Index n) {
    bytes(p, static_cast<std::size_t>(n) * sizeof(cdouble));
  }
};

}  // namespace

std::uint64_t block_digest(const Block& blk, std::uint64_t seed) {
  Fnv f;
  f.bytes(&seed, sizeof seed);
  for (const auto& h : blk.channels.h) f.complex(h.data(), h.size());
  for (const auto& n : blk.frame.pilot_noise) f.complex(n.data(), n.size());
  for (const auto& n : blk.frame.data_noise) f.complex(n.data(), n.size());
  f.complex(blk.frame.x.data(), blk.frame.x.size());
  f.bytes(blk.assignment.pilot.data(), blk.assignment.pilot.size() * sizeof(int));
  return f.h;
}

Example make_example(const SystemConfig& sys, const Block& blk, PromptLayout layout,
                     std::uint32_t task_index, std::uint32_t example_index) {
  const PilotBook book = walsh_hadamard_book(sys.pilot_length);
  const PromptInputs in{blk.task, blk.assignment, book, blk.qframe, blk.profile};
  Example ex;
  ex.task_index = task_index;
  ex.example_index = example_index;
  ex.bits = blk.bits;
  ex.noise_power = blk.task.noise_power;
  ex.constellations = blk.task.constellations;
  ex.target = blk.frame.x;
  for (int k = 0; k < blk.task.num_ues(); ++k) {
    ex.prompts.push_back(encode_prompt(in, k, sys.dims(), layout));
  }
  return ex;
}

void DatasetSpec::validate() const {
  system.validate();
  require(num_tasks >= 1, ErrorCategory::kConfig, "dataset.num_tasks must be >= 1");
  require(examples_per_task >= 1, ErrorCategory::kConfig,
          "dataset.examples_per_task must be >= 1");
  require(!bits.empty(), ErrorCategory::kConfig, "dataset.bits must be non-empty");
  for (int b : bits) {
    require(b >= 0 && b <= 12, ErrorCategory::kConfig, "dataset.bits entries must be in [0, 12]");
  }
  require(std::isnan(snr_db_low) == std::isnan(snr_db_high), ErrorCategory::kConfig,
          "dataset.snr_db_range needs both ends");
  require(std::isnan(snr_db_low) || snr_db_low <= snr_db_high, ErrorCategory::kConfig,
          "dataset.snr_db_range must be ascending");
}

double DatasetSpec::task_noise_power(std::uint64_t task_index) const {
  if (std::isnan(snr_db_low)) return system.reference_noise_power();
  rng::Engine eng(rng::derive(master_seed, task_index, 1, rng::Purpose::kTask));
  std::uniform_real_distribution<double> snr(snr_db_low, snr_db_high);
  return system.noise_power_for_snr(snr_db_low == snr_db_high ? snr_db_low : snr(eng));
}

Example generate_example(const DatasetSpec& spec, const PilotBook& book, const TaskConfig& task,
                         std::uint32_t task_index, std::uint32_t example_index) {
  const Block blk = simulate_block(spec.system, book, task, spec.policy, spec.bits,
                                   spec.master_seed, task_index, example_index);
  return make_example(spec.system, blk, spec.layout, task_index, example_index);
}

std::size_t Dataset::num_examples() const {
  std::size_t n = 0;
  for (std::size_t p = 0; p < num_prompts(); ++p) {
    if (p == 0 || task_of[p] != task_of[p - 1] || example_of[p] != example_of[p - 1]) ++n;
  }
  return n;
}

void Dataset::append(const Example& ex) {
  for (std::size_t k = 0; k < ex.prompts.size(); ++k) {
    const TokenSequence& seq = ex.prompts[k];
    if (num_prompts() == 0 && seq_len == 0) {
      layout = seq.layout;
      seq_len = seq.seq_len();
      token_dim = seq.token_dim();
    }
    require(seq.layout == layout && seq.seq_len() == seq_len && seq.token_dim() == token_dim,
            ErrorCategory::kShape, "Dataset::append: prompt layout mismatch");
    for (int r = 0; r < seq_len; ++r) {
      for (int c = 0; c < token_dim; ++c) tokens.push_back(static_cast<float>(seq.tokens(r, c)));
    }
    targets.push_back(static_cast<float>(ex.target[static_cast<Eigen::Index>(k)].real()));
    targets.push_back(static_cast<float>(ex.target[static_cast<Eigen::Index>(k)].imag()));
    task_of.push_back(ex.task_index);
    example_of.push_back(ex.example_index);
    constellation_of.push_back(static_cast<std::uint8_t>(modulation_index(ex.constellations[k])));
    bits_of.push_back(static_cast<std::uint8_t>(ex.bits));
    noise_power_of.push_back(static_cast<float>(ex.noise_power));
  }
}

void Dataset::append(const Dataset& other) {
  if (other.num_prompts() == 0) return;
  if (num_prompts() == 0) {
    layout = other.layout;
    seq_len = other.seq_len;
    token_dim = other.token_dim;
    max_ues = other.max_ues;
  }
  require(other.layout == layout && other.seq_len == seq_len && other.token_dim == token_dim,
          ErrorCategory::kShape, "Dataset::append: layout mismatch");
  auto cat = [](auto& dst, const auto& src) { dst.insert(dst.end(), src.begin(), src.end()); };
  cat(tokens, other.tokens);
  cat(targets, other.targets);
  cat(task_of, other.task_of);
  cat(example_of, other.example_of);
  cat(constellation_of, other.constellation_of);
  cat(bits_of, other.bits_of);
  cat(noise_power_of, other.noise_power_of);
}

Dataset generate_dataset(const DatasetSpec& spec, int task_begin, int task_end) {
  spec.validate();
  require(0 <= task_begin && task_begin <= task_end && task_end <= spec.num_tasks,
          ErrorCategory::kConfig, "generate_dataset: task range out of bounds");
  const PilotBook book = walsh_hadamard_book(spec.system.pilot_length);
  const PromptDims dims = spec.system.dims();
  Dataset data;
  data.layout = spec.layout;
  data.seq_len = dims.seq_len(spec.layout);
  data.token_dim = dims.token_dim();
  data.max_ues = dims.max_ues;
  for (int t = task_begin; t < task_end; ++t) {
    const TaskConfig task =
        draw_task(spec.system, spec.task_noise_power(t), spec.master_seed, t);
    for (int e = 0; e < spec.examples_per_task; ++e) {
      data.append(generate_example(spec, book, task, static_cast<std::uint32_t>(t),
                                   static_cast<std::uint32_t>(e)));
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// Dataset files

namespace {

constexpr char kShardMagic[8] = {'C', 'F', 'D', 'S', 'H', 'R', 'D', '1'};

template <typename U>
void put_le(std::ostream& os, U v) {
  static_assert(std::is_integral_v<U>);
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

void put_f32(std::ostream& os, float f) { put_le(os, std::bit_cast<std::uint32_t>(f)); }

template <typename U>
U get_le(std::istream& is) {
  unsigned char b[sizeof(U)];
  is.read(reinterpret_cast<char*>(b), sizeof(U));
  require(static_cast<bool>(is), ErrorCategory::kIo, "truncated dataset shard");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

float get_f32(std::istream& is) { return std::bit_cast<float>(get_le<std::uint32_t>(is)); }

std::string shard_name(int i) {
  std::ostringstream os;
  os << "shard-" << std::setw(5) << std::setfill('0') << i << ".bin";
  return os.str();
}

// Record: u32 task, u32 example, u32 K, u32 bits, f32 noise power, then per UE
// u32 modulation index, f32 target re, f32 target im, S * d f32 tokens.
void write_shard(const std::filesystem::path& file, const Dataset& data, std::size_t p_begin,
                 std::size_t p_end, const nlohmann::json& header) {
  std::ofstream os(file, std::ios::binary);
  require(static_cast<bool>(os), ErrorCategory::kIo, "cannot write " + file.string());
  os.write(kShardMagic, sizeof kShardMagic);
  const std::string text = header.dump();
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::size_t p = p_begin;
  while (p < p_end) {
    std::size_t q = p;
    while (q < p_end && data.task_of[q] == data.task_of[p] &&
           data.example_of[q] == data.example_of[p]) {
      ++q;
    }
    put_le<std::uint32_t>(os, data.task_of[p]);
    put_le<std::uint32_t>(os, data.example_of[p]);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(q - p));
    put_le<std::uint32_t>(os, data.bits_of[p]);
    put_f32(os, data.noise_power_of[p]);
    for (std::size_t i = p; i < q; ++i) {
      put_le<std::uint32_t>(os, data.constellation_of[i]);
      put_f32(os, data.targets[2 * i]);
      put_f32(os, data.targets[2 * i + 1]);
      for (float v : data.prompt_tokens(i)) put_f32(os, v);
    }
    p = q;
  }
  require(static_cast<bool>(os), ErrorCategory::kIo, "failed writing " + file.string());
}

Dataset read_shard(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  require(static_cast<bool>(is), ErrorCategory::kIo, "cannot open " + file.string());
  char magic[8];
  is.read(magic, 8);
  require(is && std::memcmp(magic, kShardMagic, 8) == 0, ErrorCategory::kIo,
          "not a dataset shard: " + file.string());
  const auto len = get_le<std::uint32_t>(is);
  std::string text(len, '\0');
  is.read(text.data(), len);
  const auto header = nlohmann::json::parse(text);
  Dataset d;
  d.layout = parse_layout(header.at("layout_version").get<std::string>());
  d.seq_len = header.at("seq_len");
  d.token_dim = header.at("token_dim");
  d.max_ues = header.at("max_ues");
  const std::size_t examples = header.at("num_examples");
  const std::size_t n = static_cast<std::size_t>(d.seq_len) * d.token_dim;
  for (std::size_t e = 0; e < examples; ++e) {
    const auto task = get_le<std::uint32_t>(is);
    const auto example = get_le<std::uint32_t>(is);
    const auto k_count = get_le<std::uint32_t>(is);
    const auto bits = get_le<std::uint32_t>(is);
    const float noise = get_f32(is);
    for (std::uint32_t k = 0; k < k_count; ++k) {
      d.constellation_of.push_back(static_cast<std::uint8_t>(get_le<std::uint32_t>(is)));
      d.targets.push_back(get_f32(is));
      d.targets.push_back(get_f32(is));
      for (std::size_t i = 0; i < n; ++i) d.tokens.push_back(get_f32(is));
      d.task_of.push_back(task);
      d.example_of.push_back(example);
      d.bits_of.push_back(static_cast<std::uint8_t>(bits));
      d.noise_power_of.push_back(noise);
    }
  }
  return d;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, const Dataset& data,
                   int tasks_per_shard) {
  require(tasks_per_shard >= 1, ErrorCategory::kConfig, "tasks_per_shard must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCategory::kIo, "cannot create " + dir.string() + ": " + ec.message());

  nlohmann::json index;
  index["format"] = "cfmimo-dataset";
  index["format_version"] = kDatasetFormatVersion;
  index["layout_version"] = std::string(layout_version(data.layout));
  index["seq_len"] = data.seq_len;
  index["token_dim"] = data.token_dim;
  index["max_ues"] = data.max_ues;
  index["master_seed"] = spec.master_seed;
  index["num_tasks"] = spec.num_tasks;
  index["examples_per_task"] = spec.examples_per_task;
  index["policy"] = to_string(spec.policy);
  index["bits"] = spec.bits;
  index["shards"] = nlohmann::json::array();

  std::size_t p = 0;
  int shard = 0;
  while (p < data.num_prompts()) {
    const std::uint32_t first_task = data.task_of[p];
    std::size_t q = p;
    while (q < data.num_prompts() && data.task_of[q] < first_task + tasks_per_shard) ++q;
    Dataset view;
    view.task_of.assign(data.task_of.begin() + p, data.task_of.begin() + q);
    view.example_of.assign(data.example_of.begin() + p, data.example_of.begin() + q);
    const std::size_t examples = view.num_examples();
    nlohmann::json header = {{"layout_version", index["layout_version"]},
                             {"seq_len", data.seq_len},
                             {"token_dim", data.token_dim},
                             {"max_ues", data.max_ues},
                             {"task_begin", first_task},
                             {"task_end", data.task_of[q - 1] + 1},
                             {"num_examples", examples},
                             {"num_prompts", q - p}};
    const std::string name = shard_name(shard++);
    write_shard(dir / name, data, p, q, header);
    header["file"] = name;
    index["shards"].push_back(header);
    p = q;
  }
  std::ofstream os(dir / "index.json");
  require(static_cast<bool>(os), ErrorCategory::kIo, "cannot write index.json");
  os << index.dump(2) << '\n';
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "index.json");
  require(static_cast<bool>(is), ErrorCategory::kIo, "missing " + (dir / "index.json").string());
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(is);
  } catch (const std::exception& e) {
    fail(ErrorCategory::kIo, std::string("corrupt dataset index: ") + e.what());
  }
  require(index.value("format", "") == "cfmimo-dataset" &&
              index.value("format_version", 0) == kDatasetFormatVersion,
          ErrorCategory::kIo, "unsupported dataset format in " + dir.string());
  Dataset all;
  all.layout = parse_layout(index.at("layout_version").get<std::string>());
  all.seq_len = index.at("seq_len");
  all.token_dim = index.at("token_dim");
  all.max_ues = index.at("max_ues");
  for (const auto& s : index.at("shards")) {
    all.append(read_shard(dir / s.at("file").get<std::string>()));
  }
  return all;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  require(batch_size >= 1, ErrorCategory::kConfig, "train.batch_size must be >= 1");
  require(learning_rate > 0.0, ErrorCategory::kConfig, "train.learning_rate must be > 0");
  require(warmup_steps >= 0, ErrorCategory::kConfig, "train.warmup_steps must be >= 0");
  require(total_steps >= 1, ErrorCategory::kConfig, "train.total_steps must be >= 1");
  require(clip_norm > 0.0, ErrorCategory::kConfig, "train.clip_norm must be > 0");
  require(eval_interval >= 1, ErrorCategory::kConfig, "train.eval_interval must be >= 1");
  require(weight_decay >= 0.0, ErrorCategory::kConfig, "train.weight_decay must be >= 0");
  require(val_fraction >= 0.0 && val_fraction < 1.0, ErrorCategory::kConfig,
          "train.val_fraction must be in [0, 1)");
}

double TrainConfig::lr_at(int step) const {
  if (step < warmup_steps) return learning_rate * (step + 1) / static_cast<double>(warmup_steps);
  const int decay = std::max(1, total_steps - warmup_steps);
  const double progress = std::min(1.0, (step - warmup_steps) / static_cast<double>(decay));
  return learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

TokenBatch<float> gather(const Dataset& data, std::span<const std::size_t> idx,
                         RowMat<float>* targets) {
  TokenBatch<float> b;
  b.batch = static_cast<int>(idx.size());
  b.seq_len = data.seq_len;
  b.tokens.resize(static_cast<Eigen::Index>(idx.size()) * data.seq_len, data.token_dim);
  const std::size_t n = static_cast<std::size_t>(data.seq_len) * data.token_dim;
  if (targets) targets->resize(b.batch, 2);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::memcpy(b.tokens.data() + i * n, data.tokens.data() + idx[i] * n, n * sizeof(float));
    if (targets) {
      (*targets)(static_cast<Eigen::Index>(i), 0) = data.targets[2 * idx[i]];
      (*targets)(static_cast<Eigen::Index>(i), 1) = data.targets[2 * idx[i] + 1];
    }
  }
  return b;
}

struct Adam {
  std::vector<float> m;
  std::vector<float> v;
  int t = 0;

  void step(ModelParams<float>& p, const ModelParams<float>& g, const TrainConfig& cfg,
            double lr) {
    if (m.empty()) {
      m.assign(p.size(), 0.0f);
      v.assign(p.size(), 0.0f);
    }
    ++t;
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    const auto b1 = static_cast<float>(cfg.beta1);
    const auto b2 = static_cast<float>(cfg.beta2);
    const auto step = static_cast<float>(lr / c1);
    const auto inv_c2 = static_cast<float>(1.0 / c2);
    const auto eps = static_cast<float>(cfg.epsilon);
    const auto decay = static_cast<float>(lr * cfg.weight_decay);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const float gi = g.data[i];
      m[i] = b1 * m[i] + (1.0f - b1) * gi;
      v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
      p.data[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps) + decay * p.data[i];
    }
  }
};

}  // namespace

double dataset_mse(const ModelParams<float>& params, const Dataset& data,
                   std::span<const std::size_t> prompts, int batch_size) {
  if (prompts.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  RowMat<float> targets;
  for (std::size_t i = 0; i < prompts.size(); i += batch_size) {
    const auto chunk = prompts.subspan(i, std::min<std::size_t>(batch_size, prompts.size() - i));
    const TokenBatch<float> b = gather(data, chunk, &targets);
    const RowMat<float> out = forward(params, b);
    acc += static_cast<double>((out - targets).squaredNorm());
  }
  return acc / static_cast<double>(prompts.size());
}

TrainResult train(ModelParams<float> params, const Dataset& data, const TrainConfig& cfg,
                  const TrainLogger& log) {
  cfg.validate();
  require(data.num_prompts() > 0, ErrorCategory::kConfig, "train: empty dataset");
  require(params.config.layout == data.layout, ErrorCategory::kConfig,
          "train: model layout " + std::string(layout_version(params.config.layout)) +
              " does not match dataset layout " + std::string(layout_version(data.layout)));
  require(params.config.token_dim == data.token_dim && params.config.max_seq_len >= data.seq_len,
          ErrorCategory::kShape, "train: model dimensions do not fit the dataset");

  // Validation is a suffix of the task indices, never a split within a task.
  std::set<std::uint32_t> task_set(data.task_of.begin(), data.task_of.end());
  const std::vector<std::uint32_t> tasks(task_set.begin(), task_set.end());
  std::size_t n_val = 0;
  if (tasks.size() >= 2 && cfg.val_fraction > 0.0) {
    n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.val_fraction * tasks.size())));
  }
  const std::uint32_t first_val =
      n_val == 0 ? std::numeric_limits<std::uint32_t>::max() : tasks[tasks.size() - n_val];
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t p = 0; p < data.num_prompts(); ++p) {
    (data.task_of[p] >= first_val ? val_idx : train_idx).push_back(p);
  }
  if (val_idx.size() > static_cast<std::size_t>(cfg.max_val_prompts)) {
    std::vector<std::size_t> sub;
    const double stride = static_cast<double>(val_idx.size()) / cfg.max_val_prompts;
    for (int i = 0; i < cfg.max_val_prompts; ++i) {
      sub.push_back(val_idx[static_cast<std::size_t>(i * stride)]);
    }
    val_idx = std::move(sub);
  }
  require(!train_idx.empty(), ErrorCategory::kConfig, "train: no training prompts after split");

  rng::Engine eng(rng::derive(cfg.seed, 0, 0, rng::Purpose::kTraining));
  std::uniform_int_distribution<std::size_t> pick(0, train_idx.size() - 1);
  ModelParams<float> grad(params.config);
  Adam adam;
  std::vector<std::size_t> batch(cfg.batch_size);
  RowMat<float> targets;

  TrainResult result;
  result.best_val_mse = std::numeric_limits<double>::infinity();
  double running = 0.0;
  int running_n = 0;
  ModelParams<float> last_finite = params;

  for (int step = 0; step < cfg.total_steps; ++step) {
    for (auto& b : batch) b = train_idx[pick(eng)];
    const TokenBatch<float> tb = gather(data, batch, &targets);
    grad.set_zero();
    const float loss = loss_and_grad(params, tb, targets, &grad);
    if (!std::isfinite(loss) || !grad.all_finite()) {
      if (!cfg.diagnostic_checkpoint.empty()) save_checkpoint(cfg.diagnostic_checkpoint, last_finite);
      fail(ErrorCategory::kNumeric, "train: loss diverged at step " + std::to_string(step) +
                                        (cfg.diagnostic_checkpoint.empty()
                                             ? std::string()
                                             : "; last finite parameters written to " +
                                                   cfg.diagnostic_checkpoint.string()));
    }
    double norm2 = 0.0;
    for (float g : grad.data) norm2 += static_cast<double>(g) * g;
    const double norm = std::sqrt(norm2);
    if (norm > cfg.clip_norm) {
      const auto s = static_cast<float>(cfg.clip_norm / norm);
      for (float& g : grad.data) g *= s;
    }
    if (step % cfg.eval_interval == 0 && !cfg.diagnostic_checkpoint.empty()) last_finite = params;
    adam.step(params, grad, cfg, cfg.lr_at(step));
    running += loss;
    ++running_n;

    const bool last = step + 1 == cfg.total_steps;
    if ((step + 1) % cfg.eval_interval == 0 || last) {
      LossPoint pt;
      pt.step = step + 1;
      pt.train_mse = running / running_n;
      pt.val_mse = dataset_mse(params, data, val_idx);
      running = 0.0;
      running_n = 0;
      result.curve.push_back(pt);
      if (log) log(pt);
      const double score = val_idx.empty() ? pt.train_mse : pt.val_mse;
      if (val_idx.empty() ? last : score < result.best_val_mse) {
        result.best_val_mse = score;
        result.best_step = pt.step;
        result.params = params;
      }
    }
  }
  return result;
}

void write_loss_csv(std::ostream& os, std::span<const LossPoint> curve) {
  os << "step,train_mse,val_mse\n" << std::setprecision(9);
  for (const auto& p : curve) {
    os << p.step << ',' << p.train_mse << ',';
    if (std::isfinite(p.val_mse)) os << p.val_mse;
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<CVec> Equalizer::equalize_batch(std::span<const Block> blocks) const {
  std::vector<CVec> out;
  out.reserve(blocks.size());
  for (const auto& b : blocks) out.push_back(equalize(b));
  return out;
}

LmmseEqualizer::LmmseEqualizer(const PilotBook& book, bool infinite_capacity, LmmseOptions opts)
    : book_(book), infinite_(infinite_capacity), opts_(opts) {}

CVec LmmseEqualizer::equalize(const Block& blk) const {
  if (infinite_) {
    return lmmse_equalize(blk.frame, blk.assignment, book_, blk.task, QuantizerSpec::bypass(),
                          opts_);
  }
  return lmmse_equalize(blk.qframe, blk.assignment, book_, blk.task, lloyd_max(blk.bits),
                        blk.profile, opts_);
}

IclEqualizer::IclEqualizer(ModelParams<float> params, const PilotBook& book, PromptDims dims,
                           std::string name)
    : params_(std::move(params)), book_(book), dims_(dims), name_(std::move(name)) {
  const PromptLayout layout = params_.config.layout;
  if (name_.empty()) name_ = layout == PromptLayout::kFull ? "icl" : "icl_no_ls";
  require(params_.config.token_dim == dims_.token_dim() &&
              params_.config.max_seq_len >= dims_.seq_len(layout),
          ErrorCategory::kConfig,
          "checkpoint layout does not match the system geometry (token_dim " +
              std::to_string(params_.config.token_dim) + " vs " +
              std::to_string(dims_.token_dim()) + ")");
}

CVec IclEqualizer::equalize(const Block& blk) const {
  return equalize_batch(std::span<const Block>(&blk, 1)).front();
}

std::vector<CVec> IclEqualizer::equalize_batch(std::span<const Block> blocks) const {
  std::vector<TokenSequence> prompts;
  for (const auto& blk : blocks) {
    const PromptInputs in{blk.task, blk.assignment, book_, blk.qframe, blk.profile};
    for (int k = 0; k < blk.task.num_ues(); ++k) {
      prompts.push_back(encode_prompt(in, k, dims_, params_.config.layout));
    }
  }
  const TokenBatch<float> batch = make_batch<float>(prompts);
  const RowMat<float> out = forward(params_, batch);
  std::vector<CVec> result;
  Eigen::Index row = 0;
  for (const auto& blk : blocks) {
    CVec x(blk.task.num_ues());
    for (int k = 0; k < blk.task.num_ues(); ++k, ++row) x[k] = cdouble(out(row, 0), out(row, 1));
    result.push_back(std::move(x));
  }
  return result;
}

MseEstimate summarize(std::span<const double> samples) {
  MseEstimate m;
  m.blocks = static_cast<int>(samples.size());
  if (samples.empty()) return m;
  const double n = static_cast<double>(samples.size());
  m.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  if (samples.size() >= 2) {
    double ss = 0.0;
    for (double s : samples) ss += (s - m.mean) * (s - m.mean);
    m.ci95 = 1.96 * std::sqrt(ss / (n - 1.0) / n);
  }
  return m;
}

EvalResult evaluate(std::span<const Equalizer* const> equalizers, const EvalSpec& spec) {
  spec.system.validate();
  require(spec.blocks >= 1, ErrorCategory::kConfig, "evaluate: blocks must be >= 1");
  const PilotBook book = walsh_hadamard_book(spec.system.pilot_length);
  const int bits[1] = {spec.bits};
  EvalResult res;
  res.per_block.assign(equalizers.size(), {});
  Fnv digest;
  constexpr int kChunk = 256;
  std::vector<Block> chunk;
  for (int first = 0; first < spec.blocks; first += kChunk) {
    chunk.clear();
    const int last = std::min(spec.blocks, first + kChunk);
    for (int i = first; i < last; ++i) {
      const TaskConfig task = draw_task(spec.system, spec.noise_power, spec.seed,
                                        static_cast<std::uint64_t>(i), spec.ue_count);
      chunk.push_back(simulate_block(spec.system, book, task, spec.policy, bits, spec.seed,
                                     static_cast<std::uint64_t>(i), 0));
      const std::uint64_t d = block_digest(chunk.back());
      digest.bytes(&d, sizeof d);
    }
    for (std::size_t e = 0; e < equalizers.size(); ++e) {
      const std::vector<CVec> xhat = equalizers[e]->equalize_batch(chunk);
      for (std::size_t b = 0; b < chunk.size(); ++b) {
        const CVec& x = chunk[b].frame.x;
        res.per_block[e].push_back((xhat[b] - x).squaredNorm() / static_cast<double>(x.size()));
      }
    }
  }
  for (const auto& samples : res.per_block) res.mse.push_back(summarize(samples));
  res.digest = digest.h;
  return res;
}

MseEstimate evaluate_mse(const Equalizer& eq, const EvalSpec& spec) {
  const Equalizer* list[1] = {&eq};
  return evaluate(list, spec).mse.front();
}

}  // namespace cfmimo
