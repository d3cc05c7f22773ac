#pragma once

// One JSON file configures every command; the command bodies live here so the
// tool in tools/ is only argument parsing.

#include <exception>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "autoreg/bilevel.hpp"
#include "autoreg/io.hpp"
#include "autoreg/train_eval.hpp"

namespace autoreg {

struct RunPaths {
  std::filesystem::path data = "data";
  std::filesystem::path search = "search";
  std::filesystem::path train = "train";
  std::filesystem::path eval = "eval";
};

struct RunConfig {
  std::uint64_t seed = 1;  // the only seed; copied into synth, search and train
  SynthSpec synth;
  SearchConfig search;
  TrainConfig train;
  RunPaths paths;
  std::string raw;  // the file as read, echoed into every output directory
};

/// Keys: seed, multimodal, strict_paper_v_term, constants, synth, search,
/// train, paths. Section-level seeds are refused. ConfigError on anything
/// unknown or inconsistent.
RunConfig run_config_from_json(const nlohmann::json& j, std::optional<std::uint64_t> seed_override = {});
RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = {});
nlohmann::json run_config_to_json(const RunConfig& c);

using Log = std::function<void(const std::string&)>;

/// ConfigError when `dir` exists, is not empty and `force` is off.
void prepare_output(const std::filesystem::path& dir, bool force);

/// config.json (byte copy) and resolved_config.json.
void write_config_echo(const std::filesystem::path& dir, const RunConfig& c);

struct SynthSummary {
  DatasetManifest manifest;
  std::vector<std::pair<std::string, MeanStd>> baseline_dice;  // per split
};

SynthSummary cmd_synth(const RunConfig& c, const std::filesystem::path& out, const Log& log = {});

/// Checkpoint after every epoch in out/checkpoint; `resume` continues from it.
SearchResult cmd_search(const RunConfig& c, const std::filesystem::path& data, const std::filesystem::path& out,
                        bool resume, const Log& log = {});

/// The searched model's weights are the starting point.
TrainState cmd_train(const RunConfig& c, const std::filesystem::path& model_dir, const std::filesystem::path& data,
                     const std::filesystem::path& out, bool resume, const Log& log = {});

Registration cmd_register(const std::filesystem::path& model_dir, const std::filesystem::path& source,
                          const std::filesystem::path& target, const std::filesystem::path& out,
                          const Log& log = {});

struct EvalSummary {
  EvalTable model, baseline;
};

EvalSummary cmd_eval(const RunConfig& c, const std::filesystem::path& model_dir, const std::filesystem::path& data,
                     const std::string& split, const std::filesystem::path& out, const Log& log = {});

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumerical = 4,
  kExitNotConverged = 5,
};

/// Maps the library's error types onto exit codes.
int exit_code_for(const std::exception& e);

}  // namespace autoreg
