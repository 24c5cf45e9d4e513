#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ecgtext::cli {

// Fully resolved run settings: built-in defaults, overlaid by --config file
// values, overlaid by command-line flags. The resolved form is echoed to
// the output directory before any work starts.
struct RunConfig {
  // paths
  std::string manifest;
  std::string embeddings;
  std::string checkpoint;
  std::string catalog;
  std::string out;  // pretrain/eval default this to "ecgtext_out"
  std::string input;      // embed-text source lines
  std::string merge;      // embed-text: existing table to merge
  std::string record;     // inspect-record target
  std::string split = "auto";
  std::string template_kind = "report";
  // text provider
  bool stub_text = false;
  int stub_dim = 128;
  std::uint64_t stub_seed = 7;
  // training
  std::uint64_t seed = 1;
  int epochs = 50;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 1e-3;
  bool shuffle = true;
  bool decoupled_weight_decay = true;
  double clip_norm = 0.0;
  int checkpoint_every = 0;
  // model
  double tau_init = 0.07;
  int projection_dim = 128;
  int in_leads = 12;
  std::vector<int> stage_channels{64, 128, 256, 512};
  std::vector<int> blocks_per_stage{2, 2, 2, 2};
  // ingestion
  double sample_rate_hz = 100.0;
  double window_seconds = 10.0;
  bool zscore = true;
};

nlohmann::json to_json(const RunConfig& config);

// Applies recognized keys of a config-file object; unknown keys are errors.
void apply_config_file(RunConfig& config, const nlohmann::json& file);

// Exit codes: 0 success, 2 input error, 3 catalog mismatch, 4 parse error,
// 1 anything else.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace ecgtext::cli
