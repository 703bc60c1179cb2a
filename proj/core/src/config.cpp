#include "cfmimo/config.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cfmimo {

using nlohmann::json;

ModelConfig Config::model_for(PromptLayout layout) const {
  ModelConfig m = model;
  const PromptDims dims = system.dims();
  m.layout = layout;
  m.token_dim = dims.token_dim();
  m.max_seq_len = dims.seq_len(layout);
  return m;
}

Config default_config(std::string_view profile) {
  Config c;
  c.profile = std::string(profile);
  if (profile == "full") {
    c.system.deployment = DeploymentConfig::full_scale();
    c.system.pilot_length = 8;
    c.experiment.reuse = {0, 1, 2, 3};
  } else if (profile == "desk") {
    c.system.deployment = DeploymentConfig::desk_scale();
    c.system.pilot_length = 4;
    c.dataset.num_tasks = 2048;
    c.dataset.examples_per_task = 256;
    c.dataset.policy = policy::MixedReuse{};
    c.dataset.bits = {1, 2, 3, 4, 5, 6, 8, 0};
    c.dataset.master_seed = 11;
    c.model.num_layers = 2;
    c.model.embed_dim = 64;
    c.model.num_heads = 4;
    c.train.learning_rate = 1e-3;
    c.train.eval_interval = 1000;
    c.experiment.reuse = {0, 1};
    c.experiment.reuse_policy = policy::FixedReuse{1};
    c.experiment.ue_count = 2;
  } else {
    fail(ErrorCategory::kConfig,
         "config: profile: unknown profile '" + std::string(profile) + "' (expected full or desk)");
  }
  c.dataset.system = c.system;
  c.model = c.model_for(PromptLayout::kFull);
  return c;
}

namespace {

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

[[noreturn]] void bad(const std::string& path, const std::string& msg) {
  fail(ErrorCategory::kConfig, "config: " + path + ": " + msg);
}

// A JSON object whose keys must all be consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) bad(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(std::string_view key) const { return j_.contains(key); }
  std::string path(std::string_view key) const { return join(path_, key); }

  const json* raw(std::string_view key) {
    seen_.insert(std::string(key));
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  Section child(std::string_view key) {
    const json* v = raw(key);
    static const json empty = json::object();
    return Section(v ? *v : empty, path(key));
  }

  void get(std::string_view key, int& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number_integer()) bad(path(key), "expected an integer");
      const auto x = v->get<long long>();
      if (x < INT32_MIN || x > INT32_MAX) bad(path(key), "integer out of range");
      out = static_cast<int>(x);
    }
  }
  void get(std::string_view key, std::uint64_t& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number_unsigned()) bad(path(key), "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(std::string_view key, double& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number()) bad(path(key), "expected a number");
      out = v->get<double>();
    }
  }
  void get(std::string_view key, bool& out) {
    if (const json* v = raw(key)) {
      if (!v->is_boolean()) bad(path(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(std::string_view key, std::string& out) {
    if (const json* v = raw(key)) {
      if (!v->is_string()) bad(path(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void get_path(std::string_view key, std::filesystem::path& out,
                const std::filesystem::path& base) {
    std::string s;
    if (has(key)) {
      get(key, s);
      std::filesystem::path p(s);
      out = p.is_relative() && !base.empty() ? base / p : p;
    } else {
      raw(key);
    }
  }

  const json* array(std::string_view key) {
    const json* v = raw(key);
    if (v && !v->is_array()) bad(path(key), "expected an array");
    return v;
  }

  /// Runs f(element, element_path) for each element and applies the parsed
  /// values only when the key is present.
  template <typename T, typename F>
  void list(std::string_view key, std::vector<T>& out, F&& f) {
    if (const json* v = array(key)) {
      std::vector<T> parsed;
      for (std::size_t i = 0; i < v->size(); ++i) {
        parsed.push_back(f((*v)[i], path(key) + "[" + std::to_string(i) + "]"));
      }
      out = std::move(parsed);
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) bad(path(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

int as_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) bad(path, "expected an integer");
  return v.get<int>();
}

double as_double(const json& v, const std::string& path) {
  if (!v.is_number()) bad(path, "expected a number");
  return v.get<double>();
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) bad(path, "expected a string");
  return v.get<std::string>();
}

int as_bits(const json& v, const std::string& path) {
  if (v.is_string()) {
    if (v.get<std::string>() == "inf") return 0;
    bad(path, "expected an integer or \"inf\"");
  }
  const int b = as_int(v, path);
  if (b < 1 || b > 12) bad(path, "bit width must be 1..12 or \"inf\"");
  return b;
}

// Re-throws library errors with the key path attached.
template <typename F>
auto at(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    bad(path, e.what());
  }
}

void parse_system(Section s, SystemConfig& sys) {
  DeploymentConfig& d = sys.deployment;
  s.get("area_side_m", d.area_side_m);
  s.get("antennas_per_ap", d.antennas_per_ap);
  s.get("carrier_hz", d.carrier_hz);
  s.list("ap_positions", d.ap_positions, [](const json& v, const std::string& p) {
    if (!v.is_array() || v.size() != 2) bad(p, "expected [x, y]");
    return Point2{as_double(v[0], p + "[0]"), as_double(v[1], p + "[1]")};
  });
  s.get("ue_min", d.ue_min);
  s.get("ue_max", d.ue_max);
  s.get("min_distance_m", d.min_distance_m);
  if (s.has("asd_deg")) {
    double deg = 0.0;
    s.get("asd_deg", deg);
    d.asd_rad = deg * std::numbers::pi / 180.0;
  } else {
    s.raw("asd_deg");
  }
  s.get("shadow_fading_db", d.shadow_fading_db);
  s.get("pilot_length", sys.pilot_length);
  s.list("constellations", sys.constellations, [](const json& v, const std::string& p) {
    const std::string name = as_string(v, p);
    return at(p, [&] { return parse_constellation(name); });
  });
  s.get("reference_noise_db", sys.reference_noise_db);
  s.get("reference_snr_db", sys.reference_snr_db);
  s.finish();
  at("system", [&] {
    sys.validate();
    return 0;
  });
}

void parse_dataset(Section s, Config& c) {
  DatasetSpec& d = c.dataset;
  s.get("num_tasks", d.num_tasks);
  s.get("examples_per_task", d.examples_per_task);
  if (s.has("policy")) {
    std::string p;
    s.get("policy", p);
    d.policy = at(s.path("policy"), [&] { return parse_policy(p); });
  } else {
    s.raw("policy");
  }
  s.list("bits", d.bits, as_bits);
  if (s.has("layout")) {
    std::string l;
    s.get("layout", l);
    d.layout = at(s.path("layout"), [&] { return parse_layout(l); });
  } else {
    s.raw("layout");
  }
  s.get("seed", d.master_seed);
  if (const json* r = s.array("snr_db_range")) {
    if (r->size() != 2) bad(s.path("snr_db_range"), "expected [low, high]");
    d.snr_db_low = as_double((*r)[0], s.path("snr_db_range[0]"));
    d.snr_db_high = as_double((*r)[1], s.path("snr_db_range[1]"));
  }
  s.get("tasks_per_shard", c.tasks_per_shard);
  s.finish();
  if (c.tasks_per_shard < 1) bad(s.path("tasks_per_shard"), "must be >= 1");
}

void parse_model(Section s, ModelConfig& m) {
  s.get("num_layers", m.num_layers);
  s.get("embed_dim", m.embed_dim);
  s.get("num_heads", m.num_heads);
  s.get("ff_mult", m.ff_mult);
  s.finish();
}

void parse_train(Section s, Config& c, const std::filesystem::path& base) {
  TrainConfig& t = c.train;
  s.get("batch_size", t.batch_size);
  s.get("learning_rate", t.learning_rate);
  s.get("warmup_steps", t.warmup_steps);
  s.get("total_steps", t.total_steps);
  s.get("clip_norm", t.clip_norm);
  s.get("eval_interval", t.eval_interval);
  s.get("weight_decay", t.weight_decay);
  s.get("beta1", t.beta1);
  s.get("beta2", t.beta2);
  s.get("epsilon", t.epsilon);
  s.get("val_fraction", t.val_fraction);
  s.get("max_val_prompts", t.max_val_prompts);
  s.get("seed", t.seed);
  s.get_path("diagnostic_checkpoint", t.diagnostic_checkpoint, base);
  s.get_path("loss_csv", c.loss_csv, base);
  s.finish();
}

void parse_experiment_section(Section s, Config& c, const std::filesystem::path& base) {
  ExperimentSpec& e = c.experiment;
  if (s.has("id")) {
    std::string id;
    s.get("id", id);
    e.id = at(s.path("id"), [&] { return parse_experiment(id); });
  } else {
    s.raw("id");
  }
  s.list("bits", e.bits, as_bits);
  s.list("snr_db", e.snr_db, as_double);
  s.list("reuse", e.reuse, as_int);
  s.list("equalizers", e.equalizers, as_string);
  s.get("blocks", e.blocks);
  s.get("seed", e.seed);
  s.get_path("checkpoint_full", e.checkpoint_full, base);
  s.get_path("checkpoint_no_ls", e.checkpoint_no_ls, base);
  s.get("operating_snr_db", e.operating_snr_db);
  if (const json* v = s.raw("snr_sweep_bits")) e.snr_sweep_bits = as_bits(*v, s.path("snr_sweep_bits"));
  if (s.has("reuse_policy")) {
    std::string p;
    s.get("reuse_policy", p);
    e.reuse_policy = at(s.path("reuse_policy"), [&] { return parse_policy(p); });
  } else {
    s.raw("reuse_policy");
  }
  if (const json* v = s.raw("ue_count")) {
    if (v->is_null()) {
      e.ue_count.reset();
    } else {
      e.ue_count = as_int(*v, s.path("ue_count"));
    }
  }
  s.get("assume_perfect_estimates", e.lmmse.assume_perfect_estimates);
  s.get_path("out_csv", c.results_csv, base);
  s.get_path("out_plot", c.results_plot, base);
  s.finish();
  at("experiment", [&] {
    e.validate();
    return 0;
  });
}

}  // namespace

Config parse_config(std::string_view text, const std::filesystem::path& base_dir,
                    std::string_view profile) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCategory::kConfig, std::string("config: <root>: invalid JSON: ") + e.what());
  }
  Section root(doc, "");
  int version = 0;
  if (!root.has("schema_version")) bad("schema_version", "missing (expected 1)");
  root.get("schema_version", version);
  if (version != kConfigSchemaVersion) {
    bad("schema_version", "unsupported version " + std::to_string(version) + " (expected 1)");
  }
  std::string prof = "full";
  root.get("profile", prof);
  if (!profile.empty()) prof = std::string(profile);
  Config c = at("profile", [&] { return default_config(prof); });

  parse_system(root.child("system"), c.system);
  c.dataset.system = c.system;
  parse_dataset(root.child("dataset"), c);
  parse_model(root.child("model"), c.model);
  parse_train(root.child("train"), c, base_dir);
  parse_experiment_section(root.child("experiment"), c, base_dir);
  root.finish();

  c.model = c.model_for(c.dataset.layout);
  at("model", [&] {
    c.model.validate();
    return 0;
  });
  at("train", [&] {
    c.train.validate();
    return 0;
  });
  at("dataset", [&] {
    c.dataset.validate();
    return 0;
  });
  return c;
}

Config load_config(const std::filesystem::path& path, std::string_view profile) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCategory::kIo, "cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.parent_path(), profile);
}

}  // namespace cfmimo
