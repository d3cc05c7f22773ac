#include "autoreg/train_eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "autoreg/error.hpp"
#include "autoreg/field_core.hpp"
#include "autoreg/losses.hpp"

namespace autoreg {

using nlohmann::json;

Model Model::initial(const NetworkConfig& net, const DerivedArch& arch, const LossHyper& lambda,
                     const LossConstants& k, std::uint64_t seed) {
  Model m{net, arch, lambda, k, Network(net).init_weights(seed)};
  return m;
}

ModelSetup Model::setup(const Network& net) const {
  ModelSetup m;
  m.net = &net;
  m.feature = arch;
  m.deform = arch;
  m.lambda = lambda.to_tensor();
  m.constants = constants;
  return m;
}

namespace {

json constants_json(const LossConstants& k) {
  return json{{"ncc_window", k.ncc_window}, {"delta", k.delta}, {"mind_sigma", k.mind_sigma}};
}

LossConstants constants_from(const json& j) {
  LossConstants k;
  k.ncc_window = j.at("ncc_window").get<std::array<int, 3>>();
  k.delta = j.at("delta").get<double>();
  k.mind_sigma = j.at("mind_sigma").get<double>();
  return k;
}

json model_meta(const Model& m) {
  return json{{"kind", "model"},
              {"network", network_config_to_json(m.network)},
              {"arch", derived_arch_to_json(m.arch)},
              {"lambda", {m.lambda.lambda1, m.lambda.lambda2, m.lambda.lambda3, m.lambda.lambda4}},
              {"constants", constants_json(m.constants)}};
}

Model model_from_meta(const json& meta, const Checkpoint& c) {
  if (!meta.contains("model")) throw FormatError("model", "checkpoint holds no model description");
  Model m;
  try {
    const json& j = meta.at("model");
    m.network = network_config_from_json(j.at("network"));
    m.arch = derived_arch_from_json(j.at("arch"));
    const auto l = j.at("lambda").get<std::vector<double>>();
    if (l.size() != 4) throw FormatError("lambda", "model lambda needs four values");
    m.lambda = {l[0], l[1], l[2], l[3]};
    m.constants = constants_from(j.at("constants"));
  } catch (const json::exception& e) {
    throw FormatError("model", std::string("model description: ") + e.what());
  }
  if (m.arch.catalog != m.network.catalog) throw ConfigError("model: architecture catalog differs from the network");
  m.weights = Network(m.network).empty_weights();
  c.restore("w.", m.weights);
  return m;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0x7a11, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace

Checkpoint model_to_checkpoint(const Model& m) {
  Checkpoint c;
  c.meta["model"] = model_meta(m);
  c.put("w.", m.weights);
  return c;
}

Model model_from_checkpoint(const Checkpoint& c) { return model_from_meta(c.meta, c); }

void save_model(const std::filesystem::path& dir, const Model& m) { save_checkpoint(dir, model_to_checkpoint(m)); }

Model load_model(const std::filesystem::path& dir) { return model_from_checkpoint(load_checkpoint(dir)); }

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (!(lr > 0)) throw ConfigError("train: lr must be positive");
  if (steps_per_epoch < 0 || checkpoint_every < 0) throw ConfigError("train: negative step or cadence");
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"lr", c.lr},
              {"seed", c.seed},
              {"steps_per_epoch", c.steps_per_epoch},
              {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "epochs") c.epochs = v.get<int>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "steps_per_epoch") c.steps_per_epoch = v.get<int>();
      else if (k == "checkpoint_every") c.checkpoint_every = v.get<int>();
      else throw ConfigError("train: unknown key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  c.validate();
  return c;
}

Checkpoint train_state_to_checkpoint(const Model& m, const TrainState& s) {
  Model mm = m;
  mm.weights = s.weights;
  Checkpoint c = model_to_checkpoint(mm);
  for (std::size_t i = 0; i < s.opt.m.size(); ++i) {
    c.put("opt.m." + s.weights.name(i), s.opt.m[i]);
    c.put("opt.v." + s.weights.name(i), s.opt.v[i]);
  }
  c.meta["train"] = {{"epoch", s.epoch}, {"opt_step", s.opt.step}, {"losses", s.losses}};
  return c;
}

TrainState train_state_from_checkpoint(const Checkpoint& c, const Model& m) {
  if (!c.meta.contains("train")) throw FormatError("train", "checkpoint holds no training state");
  const Model stored = model_from_checkpoint(c);
  if (stored.network.channels != m.network.channels || stored.network.ndim != m.network.ndim ||
      !(stored.arch == m.arch))
    throw ConfigError("train: checkpoint was written for a different network or architecture");
  TrainState s;
  s.weights = stored.weights;
  try {
    const json& t = c.meta.at("train");
    s.epoch = t.at("epoch").get<int>();
    s.opt.step = t.at("opt_step").get<long>();
    s.losses = t.at("losses").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError("train", std::string("training state: ") + e.what());
  }
  if (s.weights.size() > 0 && c.has("opt.m." + s.weights.name(0)))
    for (std::size_t i = 0; i < s.weights.size(); ++i) {
      s.opt.m.push_back(c.get("opt.m." + s.weights.name(i)));
      s.opt.v.push_back(c.get("opt.v." + s.weights.name(i)));
    }
  return s;
}

TrainState train(const Model& model, const Dataset& data, const TrainConfig& cfg, std::optional<TrainState> resume,
                 const std::function<void(const TrainState&)>& on_epoch) {
  cfg.validate();
  if (data.pairs.empty()) throw DataError("train: empty dataset");
  const Network net(model.network);
  TrainState s;
  if (resume) s = std::move(*resume);
  else s.weights = model.weights;
  if (!s.weights.same_layout(net.empty_weights())) throw ConfigError("train: weights do not fit the network");
  const ModelSetup setup = model.setup(net);
  const auto mask = net.trainable_mask();
  Adam opt;
  opt.lr = cfg.lr;
  const std::size_t n = data.pairs.size();
  const std::size_t steps = cfg.steps_per_epoch > 0 ? static_cast<std::size_t>(cfg.steps_per_epoch) : n;

  while (s.epoch < cfg.epochs) {
    const TrainState last_good = s;
    try {
      const auto order = shuffled(n, cfg.seed, s.epoch);
      double sum = 0.0;
      for (std::size_t i = 0; i < steps; ++i) {
        const Evaluation e = registration_objective(setup, data.pairs[order[i % n]])(s.weights, Tensor(), true, false);
        sum += e.value;
        opt.step(s.weights.tensors(), e.dw, s.opt, mask);
      }
      if (!s.weights.all_finite()) throw NumericalError("weights", "train: weights became non-finite");
      s.losses.push_back(sum / steps);
      ++s.epoch;
    } catch (const NumericalError&) {
      if (!cfg.checkpoint_dir.empty()) save_checkpoint(cfg.checkpoint_dir, train_state_to_checkpoint(model, last_good));
      throw;
    }
    if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
        (s.epoch % cfg.checkpoint_every == 0 || s.epoch == cfg.epochs))
      save_checkpoint(cfg.checkpoint_dir, train_state_to_checkpoint(model, s));
    if (on_epoch) on_epoch(s);
  }
  return s;
}

// ---------------------------------------------------------------------------

Registration register_pair(const Model& model, const ScalarField& source, const ScalarField& target) {
  require(source.dims() == target.dims(), "register: source and target shapes differ");
  const Network net(model.network);
  const ModelSetup setup = model.setup(net);
  const auto w = bind_weights(model.weights, false);
  RegPair pair;
  pair.source = source;
  pair.target = target;
  const auto t0 = std::chrono::steady_clock::now();
  const auto out = run_backbone(setup, pair, w, {});
  const auto t1 = std::chrono::steady_clock::now();
  Registration r;
  r.phi = VectorField(out.phi_full.value());
  r.warped = ScalarField(out.warped[0].value());
  r.seconds = std::chrono::duration<double>(t1 - t0).count();
  return r;
}

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  m.count = static_cast<int>(xs.size());
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= xs.size();
  double v = 0.0;
  for (double x : xs) v += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(v / xs.size());
  return m;
}

std::string format_mean_std(const MeanStd& m, int decimals) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.*f ± %.*f", decimals, m.mean, decimals, m.std);
  return buf;
}

std::string EvalTable::csv() const {
  std::ostringstream os;
  os << "pair_id,dice_mean,ncc,folds,seconds\n";
  char buf[64];
  for (const auto& r : records) {
    os << r.pair_id << ',';
    if (r.dice) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.dice);
      os << buf;
    } else {
      os << "NA";
    }
    std::snprintf(buf, sizeof buf, ",%.6f,%ld,%.6f\n", r.ncc, r.folds, r.seconds);
    os << buf;
  }
  os << "aggregate," << format_mean_std(dice) << ',' << format_mean_std(ncc) << ',' << format_mean_std(folds) << ','
     << format_mean_std(seconds, 4) << '\n';
  return os.str();
}

namespace {

void aggregate(EvalTable& t) {
  std::vector<double> d, n, f, s;
  for (const auto& r : t.records) {
    if (r.dice) d.push_back(*r.dice);
    n.push_back(r.ncc);
    f.push_back(static_cast<double>(r.folds));
    s.push_back(r.seconds);
  }
  t.dice = mean_std(d);
  t.ncc = mean_std(n);
  t.folds = mean_std(f);
  t.seconds = mean_std(s);
}

EvalRecord score(const RegPair& p, const VectorField& phi, const ScalarField& warped, double seconds) {
  EvalRecord r;
  r.pair_id = p.id;
  r.ncc = global_ncc(warped, p.target);
  r.folds = static_cast<long>(count_folds(phi));
  r.seconds = seconds;
  if (p.has_labels()) r.dice = dice_score(warp_labels(*p.source_labels, phi), *p.target_labels).mean;
  if (!std::isfinite(r.ncc) || (r.dice && !std::isfinite(*r.dice)))
    throw NumericalError("metrics", "evaluate: non-finite metric for pair " + p.id);
  return r;
}

}  // namespace

EvalTable evaluate(const Model& model, const Dataset& data) {
  EvalTable t;
  for (const auto& p : data.pairs) {
    const auto reg = register_pair(model, p.source, p.target);
    t.records.push_back(score(p, reg.phi, reg.warped, reg.seconds));
  }
  aggregate(t);
  return t;
}

EvalTable evaluate_identity(const Dataset& data) {
  EvalTable t;
  for (const auto& p : data.pairs) {
    const VectorField zero(p.source.dims());
    t.records.push_back(score(p, zero, p.source, 0.0));
  }
  aggregate(t);
  return t;
}

}  // namespace autoreg
