#include "autoreg/run.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "autoreg/error.hpp"
#include "autoreg/field_core.hpp"

namespace autoreg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void say(const Log& log, const std::string& s) {
  if (log) log(s);
}

void refuse_seed(const json& section, const char* name) {
  if (section.is_object() && section.contains("seed"))
    throw ConfigError(std::string(name) + ": per-section seeds are not accepted; set the top-level seed");
}

// Same error type, message prefixed with where it happened.
[[noreturn]] void rethrow_in(const std::string& where) {
  try {
    throw;
  } catch (const NumericalError& e) {
    throw NumericalError(e.term(), where + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(e.field(), where + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  } catch (const ContractError& e) {
    throw ContractError(where + ": " + e.what());
  }
}

fs::path manifest_in(const fs::path& data) { return data / "manifest.json"; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

RunConfig run_config_from_json(const json& j, std::optional<std::uint64_t> seed_override) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  json synth = json::object(), search = json::object(), train = json::object();
  bool multimodal = false, strict = false;
  std::optional<json> constants;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "multimodal") multimodal = v.get<bool>();
      else if (k == "strict_paper_v_term") strict = v.get<bool>();
      else if (k == "constants") constants = v;
      else if (k == "synth") synth = v;
      else if (k == "search") search = v;
      else if (k == "train") train = v;
      else if (k == "paths") {
        for (const auto& [pk, pv] : v.items()) {
          const auto p = fs::path(pv.get<std::string>());
          if (pk == "data") c.paths.data = p;
          else if (pk == "search") c.paths.search = p;
          else if (pk == "train") c.paths.train = p;
          else if (pk == "eval") c.paths.eval = p;
          else throw ConfigError("paths: unknown key '" + pk + "'");
        }
      } else {
        throw ConfigError("config: unknown key '" + k + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (seed_override) c.seed = *seed_override;
  refuse_seed(synth, "synth");
  refuse_seed(search, "search");
  refuse_seed(train, "train");
  if (!search.is_object() || !synth.is_object()) throw ConfigError("config: synth and search must be objects");

  c.synth = synth_spec_from_json(synth);
  c.synth.seed = c.seed;
  if (multimodal) c.synth.multimodal = true;

  if (constants) {
    if (search.contains("constants")) throw ConfigError("config: constants given both at top level and in search");
    search["constants"] = *constants;
  }
  json& net = search["network"];
  if (net.is_null()) net = json::object();
  if (!net.is_object()) throw ConfigError("network must be a JSON object");
  if (net.contains("ndim") && net["ndim"] != c.synth.ndim)
    throw ConfigError("config: search.network.ndim disagrees with synth.ndim");
  net["ndim"] = c.synth.ndim;
  c.search = search_config_from_json(search);
  c.search.seed = c.seed;
  if (strict) c.search.strict_paper_v_term = true;

  c.train = train_config_from_json(train);
  c.train.seed = c.seed;
  return c;
}

RunConfig load_run_config(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  std::string raw;
  try {
    raw = read_file(path);
  } catch (const FormatError&) {
    throw ConfigError("cannot read config " + path.string());
  }
  json j;
  try {
    j = json::parse(raw);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  RunConfig c = run_config_from_json(j, seed_override);
  c.raw = std::move(raw);
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json s = search_config_to_json(c.search);
  s.erase("seed");
  json t = train_config_to_json(c.train);
  t.erase("seed");
  json y = synth_spec_to_json(c.synth);
  y.erase("seed");
  return json{{"seed", c.seed},
              {"synth", y},
              {"search", s},
              {"train", t},
              {"paths",
               {{"data", c.paths.data.string()},
                {"search", c.paths.search.string()},
                {"train", c.paths.train.string()},
                {"eval", c.paths.eval.string()}}}};
}

void prepare_output(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force)
      throw ConfigError("output directory " + dir.string() + " is not empty (use --force to write into it)");
  }
  fs::create_directories(dir);
}

void write_config_echo(const fs::path& dir, const RunConfig& c) {
  fs::create_directories(dir);
  write_file(dir / "config.json", c.raw);
  write_file(dir / "resolved_config.json", run_config_to_json(c).dump(2) + "\n");
}

SynthSummary cmd_synth(const RunConfig& c, const fs::path& out, const Log& log) {
  const SynthDataset ds = synth_dataset(c.synth);
  SynthSummary s;
  s.manifest = write_dataset(out, ds, c.synth);
  s.manifest.validate();
  write_config_echo(out, c);
  for (const Dataset* d : {&ds.train, &ds.val, &ds.test}) {
    const EvalTable t = evaluate_identity(*d);
    s.baseline_dice.emplace_back(d->name, t.dice);
    say(log, d->name + ": " + std::to_string(d->pairs.size()) + " pairs, pre-registration Dice " +
                 format_mean_std(t.dice));
  }
  return s;
}

SearchResult cmd_search(const RunConfig& c, const fs::path& data, const fs::path& out, bool resume,
                        const Log& log) {
  const Dataset train = load_split(manifest_in(data), "train");
  const Dataset val = load_split(manifest_in(data), "val");
  const fs::path ckpt = out / "checkpoint";
  std::optional<SearchState> start;
  if (resume && fs::exists(ckpt / "manifest.json")) {
    start = state_from_checkpoint(load_checkpoint(ckpt), c.search);
    say(log, std::string("resuming at ") + phase_name(start->phase) + " epoch " + std::to_string(start->epoch));
  }
  write_config_echo(out, c);
  SearchHooks hooks;
  hooks.log = log;
  Phase at = start ? start->phase : Phase::Feature;
  hooks.on_epoch = [&](const SearchState& s) {
    at = s.phase;
    save_checkpoint(ckpt, state_to_checkpoint(s));
  };
  SearchResult r;
  try {
    r = run_search_pipeline(c.search, train, val, hooks, start);
  } catch (...) {
    rethrow_in(std::string("search phase ") + phase_name(at));
  }
  write_search_report(out, r, c.search);
  save_model(out / "model", Model{c.search.network, r.arch, r.lambda, c.search.constants, r.weights});
  say(log, "lambda = [" + fmt("%.4f", r.lambda.lambda1) + ", " + fmt("%.4f", r.lambda.lambda2) + ", " +
               fmt("%.4f", r.lambda.lambda3) + ", " + fmt("%.4f", r.lambda.lambda4) + "]" +
               (r.converged ? "" : " (not converged)"));
  return r;
}

TrainState cmd_train(const RunConfig& c, const fs::path& model_dir, const fs::path& data, const fs::path& out,
                     bool resume, const Log& log) {
  const Model model = load_model(model_dir);
  if (!(model.network == c.search.network))
    throw ConfigError("model in " + model_dir.string() + " was built for a different network than the config");
  const Dataset train_set = load_split(manifest_in(data), "train");
  TrainConfig tc = c.train;
  tc.checkpoint_dir = out / "checkpoint";
  std::optional<TrainState> start;
  if (resume && fs::exists(tc.checkpoint_dir / "manifest.json")) {
    start = train_state_from_checkpoint(load_checkpoint(tc.checkpoint_dir), model);
    say(log, "resuming after epoch " + std::to_string(start->epoch));
  }
  write_config_echo(out, c);
  const TrainState s = train(model, train_set, tc, start, [&](const TrainState& st) {
    say(log, "epoch " + std::to_string(st.epoch) + " loss " + fmt("%.6f", st.losses.back()));
  });
  Model trained = model;
  trained.weights = s.weights;
  save_model(out / "model", trained);
  std::string curve = "epoch,train_loss\n";
  for (std::size_t i = 0; i < s.losses.size(); ++i) curve += std::to_string(i) + "," + fmt("%.17g", s.losses[i]) + "\n";
  write_file(out / "loss_curve.csv", curve);
  return s;
}

Registration cmd_register(const fs::path& model_dir, const fs::path& source, const fs::path& target,
                          const fs::path& out, const Log& log) {
  const Model model = load_model(model_dir);
  const ScalarField s = load_scalar(source), t = load_scalar(target);
  if (s.ndim() != model.network.ndim)
    throw ConfigError("model is " + std::to_string(model.network.ndim) + "D but the images are " +
                      std::to_string(s.ndim()) + "D");
  Registration r = register_pair(model, s, t);
  fs::create_directories(out);
  save_volume(out / "phi.arvf", r.phi);
  save_volume(out / "warped.arvf", r.warped);
  ScalarField before(s.dims()), after(s.dims());
  for (std::size_t i = 0; i < s.size(); ++i) {
    before[i] = std::abs(t[i] - s[i]);
    after[i] = std::abs(t[i] - r.warped[i]);
  }
  save_volume(out / "err_before.arvf", before);
  save_volume(out / "err_after.arvf", after);
  say(log, "inference " + fmt("%.4f", r.seconds) + " s, folds " + std::to_string(count_folds(r.phi)));
  return r;
}

EvalSummary cmd_eval(const RunConfig& c, const fs::path& model_dir, const fs::path& data, const std::string& split,
                     const fs::path& out, const Log& log) {
  const Model model = load_model(model_dir);
  if (!(model.network == c.search.network))
    throw ConfigError("model in " + model_dir.string() + " was built for a different network than the config");
  const Dataset d = load_split(manifest_in(data), split);
  EvalSummary s{evaluate(model, d), evaluate_identity(d)};
  write_config_echo(out, c);
  write_file(out / "eval_table.csv", s.model.csv());
  write_file(out / "baseline_table.csv", s.baseline.csv());
  say(log, split + ": Dice " + format_mean_std(s.model.dice) + " (before " + format_mean_std(s.baseline.dice) +
               "), NCC " + format_mean_std(s.model.ncc) + ", folds " + format_mean_std(s.model.folds));
  return s;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const ContractError*>(&e))
    return kExitData;
  if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
  return kExitFailure;
}

}  // namespace autoreg
