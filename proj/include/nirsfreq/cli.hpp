#pragma once

// Command-line front end: merged run configuration (JSON file + flag
// overrides), the six subcommands, and the exit-code mapping. The cmd_*
// functions are plain library calls so tests can drive them without a
// process boundary; cli_main adds argument parsing and exception -> exit
// code translation (0 ok, 2 usage/config, 3 data, 4 numeric).

#include <string>
#include <vector>

#include "nirsfreq/dataset.hpp"
#include "nirsfreq/diff/nn.hpp"
#include "nirsfreq/model.hpp"
#include "nirsfreq/spatial.hpp"

namespace nirsfreq {

struct RunConfig {
  SyntheticConfig synthetic;
  ModelConfig model;
  diff::TrainConfig train;
  WelchParams welch;
  int n_folds = 4;
  int threads = 1;
  std::vector<double> proportions{0.4, 0.7, 1.0};
  std::vector<int> sweep_k{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<int> fam_k{2, 5, 8};
};

// Strict parse: unknown keys are rejected; missing keys keep defaults.
RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& cfg);

// FNV-1a digest of the canonical config JSON; embedded in every output file.
std::string run_config_hash(const RunConfig& cfg);

void validate_run_config(const RunConfig& cfg);

// subcommands (throw Config/Data/NumericError on failure)
void cmd_generate(const RunConfig& cfg, const std::string& out_dir);
void cmd_extract(const RunConfig& cfg, const std::string& dataset_dir, const std::string& out_dir);
void cmd_analyze(const RunConfig& cfg, const std::string& dataset_dir, const std::string& out_dir);
void cmd_train(const RunConfig& cfg, const std::string& dataset_dir, const std::string& out_dir);
void cmd_ablate(const RunConfig& cfg, const std::string& dataset_dir, const std::string& out_dir,
                const std::string& sweep);
void cmd_report(const RunConfig& cfg, const std::string& run_dir);

int cli_main(int argc, char** argv);

}  // namespace nirsfreq
