// autoreg: synth | search | train | register | eval

#include <omp.h>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "autoreg/error.hpp"
#include "autoreg/run.hpp"

namespace fs = std::filesystem;
using namespace autoreg;

namespace {

struct Common {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool strict_convergence = false;
};

void add_common(CLI::App* cmd, Common& o, bool needs_config) {
  auto* c = cmd->add_option("-c,--config", o.config, "run configuration (JSON)")->check(CLI::ExistingFile);
  if (needs_config) c->required();
  cmd->add_option("-o,--out", o.out, "output directory (default: from the config paths)");
  cmd->add_option("--seed", o.seed, "overrides the configured seed");
  cmd->add_flag("--force", o.force, "write into a non-empty output directory");
  cmd->add_flag("--strict-convergence", o.strict_convergence, "search: exit 5 when a stage did not converge");
}

void apply_thread_cap() {
  const char* env = std::getenv("AUTOREG_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("AUTOREG_THREADS must be a positive integer, got '") + env + "'");
  omp_set_num_threads(static_cast<int>(n));
}

fs::path pick(const std::string& flag, const fs::path& fallback) { return flag.empty() ? fallback : fs::path(flag); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AutoReg: searched deformable registration networks"};
  app.require_subcommand(1);
  Common o;
  std::string data, model, source, target, split = "test";
  bool resume = false;

  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
  add_common(synth, o, true);

  auto* search = app.add_subcommand("search", "architecture and loss-weight search");
  add_common(search, o, true);
  search->add_option("-d,--data", data, "dataset directory");
  search->add_flag("--resume", resume, "continue from the checkpoint in the output directory");

  auto* trn = app.add_subcommand("train", "train the searched network");
  add_common(trn, o, true);
  trn->add_option("-d,--data", data, "dataset directory");
  trn->add_option("-m,--model", model, "model directory (default: <search>/model)");
  trn->add_flag("--resume", resume, "continue from the checkpoint in the output directory");

  auto* reg = app.add_subcommand("register", "register one image pair");
  add_common(reg, o, false);
  reg->add_option("-m,--model", model, "model directory")->required();
  reg->add_option("-s,--source", source, "source image (ARVF)")->required()->check(CLI::ExistingFile);
  reg->add_option("-t,--target", target, "target image (ARVF)")->required()->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "evaluate a model on a split");
  add_common(ev, o, true);
  ev->add_option("-d,--data", data, "dataset directory");
  ev->add_option("-m,--model", model, "model directory (default: <train>/model)");
  ev->add_option("--split", split, "split to score")->check(CLI::IsMember({"train", "val", "test"}));

  CLI11_PARSE(app, argc, argv);

  const Log log = [](const std::string& s) { std::cout << s << std::endl; };
  const std::string name = app.get_subcommands().front()->get_name();
  try {
    apply_thread_cap();
    if (reg->parsed()) {
      if (o.out.empty()) throw ConfigError("register needs -o/--out");
      const fs::path out = o.out;
      prepare_output(out, o.force);
      if (!o.config.empty()) write_config_echo(out, load_run_config(o.config, o.seed));
      cmd_register(model, source, target, out, log);
      return kExitOk;
    }

    const RunConfig cfg = load_run_config(o.config, o.seed);
    const fs::path data_dir = pick(data, cfg.paths.data);
    if (synth->parsed()) {
      const fs::path out = pick(o.out, cfg.paths.data);
      prepare_output(out, o.force);
      cmd_synth(cfg, out, log);
    } else if (search->parsed()) {
      const fs::path out = pick(o.out, cfg.paths.search);
      prepare_output(out, o.force || resume);
      const SearchResult r = cmd_search(cfg, data_dir, out, resume, log);
      if (!r.converged && o.strict_convergence) {
        std::cerr << "autoreg search: a stage hit its epoch limit without converging\n";
        return kExitNotConverged;
      }
    } else if (trn->parsed()) {
      const fs::path out = pick(o.out, cfg.paths.train);
      prepare_output(out, o.force || resume);
      cmd_train(cfg, pick(model, cfg.paths.search / "model"), data_dir, out, resume, log);
    } else if (ev->parsed()) {
      const fs::path out = pick(o.out, cfg.paths.eval);
      prepare_output(out, o.force);
      cmd_eval(cfg, pick(model, cfg.paths.train / "model"), data_dir, split, out, log);
    }
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "autoreg " << name << ": " << e.what() << "\n";
    return exit_code_for(e);
  }
}
