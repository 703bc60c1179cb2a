#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "cfmimo/harness.hpp"
#include "cfmimo/pretrain.hpp"
#include "cfmimo/transformer.hpp"

namespace cfmimo {

inline constexpr int kConfigSchemaVersion = 1;

/// Everything a run needs, read from one JSON document. See docs/config.md.
struct Config {
  std::string profile = "full";
  SystemConfig system;
  DatasetSpec dataset;
  int tasks_per_shard = 64;
  ModelConfig model;
  TrainConfig train;
  std::filesystem::path loss_csv;
  ExperimentSpec experiment;
  std::filesystem::path results_csv;
  std::filesystem::path results_plot;

  /// Model config sized for this system and the given prompt layout.
  ModelConfig model_for(PromptLayout layout) const;
};

/// Built-in defaults: "full" (4 APs, T_p = 8, K <= 4) or "desk" (2 APs,
/// T_p = 4, K <= 2, small model).
Config default_config(std::string_view profile);

/// Parses a config document. Relative paths resolve against base_dir. A
/// non-empty profile overrides the document's "profile" key. Errors carry
/// ErrorCategory::kConfig and name the offending key path.
Config parse_config(std::string_view text, const std::filesystem::path& base_dir = {},
                    std::string_view profile = {});
Config load_config(const std::filesystem::path& path, std::string_view profile = {});

}  // namespace cfmimo
