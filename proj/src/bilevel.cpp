#include "autoreg/bilevel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "autoreg/error.hpp"

namespace autoreg {

using nlohmann::json;

ParamSet unrolled_weights(const ParamSet& w, const Tensor& theta, const Objective& train, double lr, double* loss) {
  const Evaluation e = train(w, theta, true, false);
  if (loss) *loss = e.value;
  ParamSet out = w;
  out.axpy(-lr, e.dw);
  return out;
}

Hypergradient hypergradient(const Tensor& theta, const ParamSet& w, const Objective& train, const Objective& val,
                            const HyperOptions& opt) {
  require(opt.epsilon > 0, "hypergradient: epsilon must be positive");
  Hypergradient h;
  h.unrolled = unrolled_weights(w, theta, train, opt.lr_inner, &h.train_loss);
  const Evaluation v = val(h.unrolled, theta, true, true);
  h.val_loss = v.value;
  h.epsilon = opt.epsilon;
  if (opt.epsilon_guard) h.epsilon /= 1.0 + w.max_abs(v.dw);
  ParamSet plus = w, minus = w;
  plus.axpy(h.epsilon, v.dw);
  minus.axpy(-h.epsilon, v.dw);
  const Tensor dp = train(plus, theta, false, true).dtheta;
  const Tensor dm = train(minus, theta, false, true).dtheta;
  const double factor = opt.strict_paper_v_term ? 1.0 : opt.lr_inner;
  h.grad = v.dtheta;
  for (std::size_t i = 0; i < h.grad.size(); ++i) h.grad[i] -= factor * (dp[i] - dm[i]) / (2.0 * h.epsilon);
  if (!all_finite(h.grad)) throw NumericalError("hypergradient", "hypergradient: finite-difference term is not finite");
  return h;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::array<const char*, 7> kPhaseNames{"feature", "deform", "warm_start", "hyper",
                                                 "post_weights", "post_joint", "done"};

double l2_sq(const Tensor& t) { return dot(t, t); }

}  // namespace

const char* phase_name(Phase p) { return kPhaseNames.at(static_cast<int>(p)); }

Phase phase_from_name(const std::string& s) {
  for (std::size_t i = 0; i < kPhaseNames.size(); ++i)
    if (s == kPhaseNames[i]) return static_cast<Phase>(i);
  throw FormatError("phase", "unknown search phase '" + s + "'");
}

void SearchConfig::validate() const {
  if (!(lr_omega > 0 && lr_alpha >= 0 && lr_lambda >= 0))
    throw ConfigError("search: lr_omega must be > 0 and lr_alpha, lr_lambda >= 0");
  if (stability_window < 1) throw ConfigError("search: stability_window must be >= 1");
  if (lambda_tolerance <= 0) throw ConfigError("search: lambda_tolerance must be positive");
  for (int e : {max_epochs_feature, max_epochs_deform, max_epochs_hyper, warm_epochs, post_weights_epochs,
                post_joint_epochs, steps_per_epoch})
    if (e < 0) throw ConfigError("search: epoch and step counts must be >= 0");
  if (lambda_l2 < 0) throw ConfigError("search: lambda_l2 must be >= 0");
  if (network.ndim != 2 && network.ndim != 3) throw ConfigError("search: network ndim must be 2 or 3");
  if (network.channels < 1) throw ConfigError("search: channels must be >= 1");
  if (network.catalog.empty()) throw ConfigError("search: empty op catalog");
  if (!network.frozen.empty() && network.frozen.size() != network.catalog.size())
    throw ConfigError("search: frozen mask length differs from the catalog");
  if (!lambda_init.feasible()) throw ConfigError("search: lambda_init violates lambda1 in [0,1], others >= 0");
}

json network_config_to_json(const NetworkConfig& c) {
  json cat = json::array();
  for (auto k : c.catalog) cat.push_back(op_name(k));
  json j{{"ndim", c.ndim}, {"channels", c.channels}, {"catalog", cat}, {"leaky_slope", c.leaky_slope},
         {"squaring_steps", c.squaring_steps}};
  j["frozen"] = json::array();
  for (bool b : c.frozen) j["frozen"].push_back(b);
  return j;
}

NetworkConfig network_config_from_json(const json& j) {
  NetworkConfig c;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "ndim") c.ndim = v.get<int>();
      else if (k == "channels") c.channels = v.get<int>();
      else if (k == "catalog") {
        c.catalog.clear();
        for (const auto& n : v) c.catalog.push_back(op_from_name(n.get<std::string>()));
      } else if (k == "frozen") c.frozen = v.get<std::vector<bool>>();
      else if (k == "leaky_slope") c.leaky_slope = v.get<double>();
      else if (k == "squaring_steps") c.squaring_steps = v.get<int>();
      else throw ConfigError("network: unknown key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network: ") + e.what());
  }
  return c;
}

json search_config_to_json(const SearchConfig& c) {
  return json{{"network", network_config_to_json(c.network)},
              {"constants",
               {{"ncc_window", c.constants.ncc_window},
                {"delta", c.constants.delta},
                {"mind_sigma", c.constants.mind_sigma}}},
              {"lr_omega", c.lr_omega},
              {"lr_alpha", c.lr_alpha},
              {"lr_lambda", c.lr_lambda},
              {"adam_omega", c.adam_omega},
              {"adam_alpha", c.adam_alpha},
              {"adam_lambda", c.adam_lambda},
              {"epsilon_guard", c.epsilon_guard},
              {"strict_paper_v_term", c.strict_paper_v_term},
              {"stability_window", c.stability_window},
              {"lambda_tolerance", c.lambda_tolerance},
              {"max_epochs_feature", c.max_epochs_feature},
              {"max_epochs_deform", c.max_epochs_deform},
              {"max_epochs_hyper", c.max_epochs_hyper},
              {"warm_epochs", c.warm_epochs},
              {"post_weights_epochs", c.post_weights_epochs},
              {"post_joint_epochs", c.post_joint_epochs},
              {"steps_per_epoch", c.steps_per_epoch},
              {"lambda_l2", c.lambda_l2},
              {"lambda_init",
               {c.lambda_init.lambda1, c.lambda_init.lambda2, c.lambda_init.lambda3, c.lambda_init.lambda4}},
              {"seed", c.seed}};
}

SearchConfig search_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("search config must be a JSON object");
  SearchConfig c;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "network") c.network = network_config_from_json(v);
      else if (k == "constants") {
        for (const auto& [ck, cv] : v.items()) {
          if (ck == "ncc_window") c.constants.ncc_window = cv.get<std::array<int, 3>>();
          else if (ck == "delta") c.constants.delta = cv.get<double>();
          else if (ck == "mind_sigma") c.constants.mind_sigma = cv.get<double>();
          else throw ConfigError("constants: unknown key '" + ck + "'");
        }
      } else if (k == "lr_omega") c.lr_omega = v.get<double>();
      else if (k == "lr_alpha") c.lr_alpha = v.get<double>();
      else if (k == "lr_lambda") c.lr_lambda = v.get<double>();
      else if (k == "adam_omega") c.adam_omega = v.get<bool>();
      else if (k == "adam_alpha") c.adam_alpha = v.get<bool>();
      else if (k == "adam_lambda") c.adam_lambda = v.get<bool>();
      else if (k == "epsilon_guard") c.epsilon_guard = v.get<bool>();
      else if (k == "strict_paper_v_term") c.strict_paper_v_term = v.get<bool>();
      else if (k == "stability_window") c.stability_window = v.get<int>();
      else if (k == "lambda_tolerance") c.lambda_tolerance = v.get<double>();
      else if (k == "max_epochs_feature") c.max_epochs_feature = v.get<int>();
      else if (k == "max_epochs_deform") c.max_epochs_deform = v.get<int>();
      else if (k == "max_epochs_hyper") c.max_epochs_hyper = v.get<int>();
      else if (k == "warm_epochs") c.warm_epochs = v.get<int>();
      else if (k == "post_weights_epochs") c.post_weights_epochs = v.get<int>();
      else if (k == "post_joint_epochs") c.post_joint_epochs = v.get<int>();
      else if (k == "steps_per_epoch") c.steps_per_epoch = v.get<int>();
      else if (k == "lambda_l2") c.lambda_l2 = v.get<double>();
      else if (k == "lambda_init") {
        const auto l = v.get<std::vector<double>>();
        if (l.size() != 4) throw ConfigError("search: lambda_init needs four values");
        c.lambda_init = {l[0], l[1], l[2], l[3]};
      } else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("search: unknown key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("search: ") + e.what());
  }
  c.validate();
  return c;
}

json derived_arch_to_json(const DerivedArch& a) {
  json cat = json::array();
  for (auto k : a.catalog) cat.push_back(op_name(k));
  auto rows = [&](const std::array<int, kRows>& r) {
    json out = json::array();
    for (int i = 0; i < kRows; ++i)
      out.push_back({{"scale", i / kEdges}, {"edge", i % kEdges}, {"op", op_name(a.catalog.at(r[i]))}, {"index", r[i]}});
    return out;
  };
  return json{{"catalog", cat}, {"feature", rows(a.feature)}, {"deform", rows(a.deform)}};
}

DerivedArch derived_arch_from_json(const json& j) {
  DerivedArch a;
  try {
    for (const auto& n : j.at("catalog")) a.catalog.push_back(op_from_name(n.get<std::string>()));
    auto rows = [&](const json& r, std::array<int, kRows>& out) {
      if (r.size() != kRows) throw FormatError("derived_arch", "derived architecture needs six rows per family");
      for (int i = 0; i < kRows; ++i) {
        out[i] = r.at(i).at("index").get<int>();
        if (out[i] < 0 || out[i] >= static_cast<int>(a.catalog.size()) ||
            op_name(a.catalog[out[i]]) != r.at(i).at("op").get<std::string>())
          throw FormatError("derived_arch", "derived architecture row " + std::to_string(i) + " is inconsistent");
      }
    };
    rows(j.at("feature"), a.feature);
    rows(j.at("deform"), a.deform);
  } catch (const json::exception& e) {
    throw FormatError("derived_arch", std::string("derived architecture: ") + e.what());
  }
  return a;
}

// ---------------------------------------------------------------------------

bool SearchState::operator==(const SearchState& o) const {
  auto same_losses = [](const EpochLosses& a, const EpochLosses& b) {
    return a.phase == b.phase && a.epoch == b.epoch && std::bit_cast<std::uint64_t>(a.train_loss) ==
           std::bit_cast<std::uint64_t>(b.train_loss) &&
           std::bit_cast<std::uint64_t>(a.val_loss) == std::bit_cast<std::uint64_t>(b.val_loss);
  };
  auto same_lambda = [](const LambdaTraceRow& a, const LambdaTraceRow& b) {
    return a.phase == b.phase && a.epoch == b.epoch && a.lambda == b.lambda &&
           std::bit_cast<std::uint64_t>(a.seg_val) == std::bit_cast<std::uint64_t>(b.seg_val);
  };
  auto same_alpha = [](const AlphaTraceRow& a, const AlphaTraceRow& b) {
    return a.phase == b.phase && a.epoch == b.epoch && a.alpha == b.alpha;
  };
  return phase == o.phase && epoch == o.epoch && weights == o.weights && weights_opt == o.weights_opt &&
         alpha == o.alpha && lambda == o.lambda && alpha_f_opt == o.alpha_f_opt && alpha_d_opt == o.alpha_d_opt &&
         lambda_opt == o.lambda_opt && feature_arch == o.feature_arch && deform_arch == o.deform_arch &&
         arch_history == o.arch_history && lambda_history == o.lambda_history && converged == o.converged &&
         std::equal(alpha_trace.begin(), alpha_trace.end(), o.alpha_trace.begin(), o.alpha_trace.end(), same_alpha) &&
         std::equal(lambda_trace.begin(), lambda_trace.end(), o.lambda_trace.begin(), o.lambda_trace.end(),
                    same_lambda) &&
         std::equal(losses.begin(), losses.end(), o.losses.begin(), o.losses.end(), same_losses);
}

SearchState initial_state(const SearchConfig& cfg) {
  cfg.validate();
  const Network net(cfg.network);
  SearchState s;
  s.weights = net.init_weights(cfg.seed);
  s.alpha = ArchParams::zeros(net.num_ops());
  s.lambda = cfg.lambda_init.to_tensor();
  return s;
}

bool stability_check(const std::vector<DerivedArch>& history, int window) {
  require(window >= 1, "stability_check: window must be >= 1");
  if (static_cast<int>(history.size()) < window) return false;
  const auto first = history.end() - window;
  return std::all_of(first, history.end(), [&](const DerivedArch& a) { return a == *first; });
}

bool stability_check(const std::vector<Tensor>& history, int window, double tol) {
  require(window >= 1, "stability_check: window must be >= 1");
  if (static_cast<int>(history.size()) < window) return false;
  for (std::size_t i = history.size() - window + 1; i < history.size(); ++i)
    if (max_abs_diff(history[i], history[i - 1]) >= tol) return false;
  return true;
}

namespace {

bool bilevel_phase(Phase p) {
  return p == Phase::Feature || p == Phase::Deform || p == Phase::Hyper || p == Phase::PostJoint;
}

int phase_epoch_limit(Phase p, const SearchConfig& c) {
  switch (p) {
    case Phase::Feature: return c.max_epochs_feature;
    case Phase::Deform: return c.max_epochs_deform;
    case Phase::WarmStart: return c.warm_epochs;
    case Phase::Hyper: return c.max_epochs_hyper;
    case Phase::PostWeights: return c.post_weights_epochs;
    case Phase::PostJoint: return c.post_joint_epochs;
    case Phase::Done: return 0;
  }
  return 0;
}

ModelSetup setup_for(const SearchState& s, const Network& net, const SearchConfig& cfg) {
  ModelSetup m;
  m.net = &net;
  m.alpha = s.alpha;
  m.lambda = s.lambda;
  m.constants = cfg.constants;
  switch (s.phase) {
    case Phase::Feature: m.role = ThetaRole::AlphaF; break;
    case Phase::Deform:
      m.role = ThetaRole::AlphaD;
      m.feature = s.feature_arch;
      break;
    case Phase::Hyper:
    case Phase::PostJoint:
      m.role = ThetaRole::Lambda;
      m.feature = s.feature_arch;
      m.deform = s.deform_arch;
      break;
    default:
      m.role = ThetaRole::None;
      m.feature = s.feature_arch;
      m.deform = s.deform_arch;
      break;
  }
  return m;
}

Tensor& theta_of(SearchState& s) {
  switch (s.phase) {
    case Phase::Feature: return s.alpha.alpha_f;
    case Phase::Deform: return s.alpha.alpha_d;
    default: return s.lambda;
  }
}

Adam::State& theta_opt_of(SearchState& s) {
  switch (s.phase) {
    case Phase::Feature: return s.alpha_f_opt;
    case Phase::Deform: return s.alpha_d_opt;
    default: return s.lambda_opt;
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, Phase p, int epoch, int stream) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 16 * (static_cast<std::uint64_t>(p) + 1) + stream,
                                  static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void weight_step(SearchState& s, const Network& net, const SearchConfig& cfg, const Evaluation& e) {
  if (cfg.adam_omega) {
    Adam opt;
    opt.lr = cfg.lr_omega;
    opt.step(s.weights.tensors(), e.dw, s.weights_opt, net.trainable_mask());
  } else {
    s.weights.axpy(-cfg.lr_omega, e.dw);
  }
}

void record_alpha(SearchState& s) {
  s.alpha_trace.push_back({s.phase, s.epoch, s.alpha});
}

void end_phase(SearchState& s, const SearchConfig& cfg, const Network& net) {
  switch (s.phase) {
    case Phase::Feature: {
      s.feature_arch = derive_architecture(s.alpha, net.config().catalog);
      s.weights = net.init_weights(cfg.seed);
      s.weights_opt = {};
      s.arch_history.clear();
      s.phase = Phase::Deform;
      break;
    }
    case Phase::Deform: {
      s.deform_arch = derive_architecture(s.alpha, net.config().catalog);
      s.weights = net.init_weights(cfg.seed);
      s.weights_opt = {};
      s.arch_history.clear();
      s.phase = Phase::WarmStart;
      break;
    }
    case Phase::WarmStart: s.phase = Phase::Hyper; break;
    case Phase::Hyper:
      s.lambda_history.clear();
      s.phase = Phase::PostWeights;
      break;
    case Phase::PostWeights: s.phase = Phase::PostJoint; break;
    case Phase::PostJoint: s.phase = Phase::Done; break;
    case Phase::Done: break;
  }
  s.epoch = 0;
}

void run_epoch(SearchState& s, const SearchConfig& cfg, const Network& net, const Dataset& train, const Dataset& val) {
  const std::size_t n = train.pairs.size();
  const std::size_t steps = cfg.steps_per_epoch > 0 ? static_cast<std::size_t>(cfg.steps_per_epoch) : n;
  const auto order = epoch_order(n, cfg.seed, s.phase, s.epoch, 0);
  double train_sum = 0.0, val_sum = 0.0, seg_sum = 0.0;

  if (!bilevel_phase(s.phase)) {
    const ModelSetup m = setup_for(s, net, cfg);
    for (std::size_t i = 0; i < steps; ++i) {
      const Evaluation e = registration_objective(m, train.pairs[order[i % n]])(s.weights, Tensor(), true, false);
      train_sum += e.value;
      weight_step(s, net, cfg, e);
    }
    ++s.epoch;
    s.losses.push_back({s.phase, s.epoch, train_sum / steps, std::numeric_limits<double>::quiet_NaN()});
    return;
  }

  const bool lambda_phase = s.phase == Phase::Hyper || s.phase == Phase::PostJoint;
  const double lr_theta = lambda_phase ? cfg.lr_lambda : cfg.lr_alpha;
  const bool adaptive = lambda_phase ? cfg.adam_lambda : cfg.adam_alpha;
  const auto vorder = epoch_order(val.pairs.size(), cfg.seed, s.phase, s.epoch, 1);
  HyperOptions opt;
  opt.lr_inner = cfg.lr_omega;
  opt.epsilon = lr_theta > 0 ? lr_theta : cfg.lr_omega;
  opt.epsilon_guard = cfg.epsilon_guard;
  opt.strict_paper_v_term = cfg.strict_paper_v_term;

  for (std::size_t i = 0; i < steps; ++i) {
    ModelSetup m = setup_for(s, net, cfg);
    const RegPair& tr = train.pairs[order[i % n]];
    const RegPair& va = val.pairs[vorder[i % val.pairs.size()]];
    const RegPair& fresh = train.pairs[order[(i + 1) % n]];
    Tensor& theta = theta_of(s);
    const Objective ltr = registration_objective(m, tr);
    const Objective lval = lambda_phase ? segmentation_objective(m, va, cfg.lambda_l2) : registration_objective(m, va);
    const Hypergradient h = hypergradient(theta, s.weights, ltr, lval, opt);
    val_sum += h.val_loss;
    if (lambda_phase) seg_sum += h.val_loss - cfg.lambda_l2 * l2_sq(theta);

    if (lr_theta > 0) {
      if (adaptive) {
        Adam a;
        a.lr = lr_theta;
        std::vector<Tensor> p{theta};
        a.step(p, {h.grad}, theta_opt_of(s));
        theta = std::move(p[0]);
      } else {
        theta.axpy(-lr_theta, h.grad);
      }
      if (lambda_phase) {
        LossHyper l = LossHyper::from_tensor(theta);
        l.project();
        theta = l.to_tensor();
      }
      if (!all_finite(theta)) throw NumericalError(phase_name(s.phase), "search: parameters became non-finite");
    }

    m = setup_for(s, net, cfg);
    const Evaluation e = registration_objective(m, fresh)(s.weights, theta, true, false);
    train_sum += e.value;
    weight_step(s, net, cfg, e);
  }
  ++s.epoch;
  s.losses.push_back({s.phase, s.epoch, train_sum / steps, val_sum / steps});
  if (lambda_phase) {
    s.lambda_trace.push_back({s.phase, s.epoch, LossHyper::from_tensor(s.lambda), seg_sum / steps});
    if (!LossHyper::from_tensor(s.lambda).feasible())
      throw NumericalError("lambda", "search: lambda left its feasible set");
  } else {
    record_alpha(s);
  }
}

void require_data(const Dataset& train, const Dataset& val) {
  if (train.pairs.empty()) throw DataError("search: empty training split");
  if (val.pairs.empty()) throw DataError("search: empty validation split");
}

void require_val_labels(const Dataset& val) {
  if (!val.all_labeled())
    throw DataError("search: the validation split has pairs without labels; the loss-weight stage needs them");
}

}  // namespace

void run_phase(SearchState& s, const SearchConfig& cfg, const Dataset& train, const Dataset& val,
               const SearchHooks& hooks) {
  if (s.phase == Phase::Done) return;
  cfg.validate();
  require_data(train, val);
  const Network net(cfg.network);
  if (!s.weights.same_layout(net.empty_weights()))
    throw ConfigError("search: weight layout differs from the configured network");
  if ((s.phase == Phase::Hyper || s.phase == Phase::PostJoint) && phase_epoch_limit(s.phase, cfg) > 0)
    require_val_labels(val);

  const Phase phase = s.phase;
  const int limit = phase_epoch_limit(phase, cfg);
  auto log = [&](const std::string& msg) {
    if (hooks.log) hooks.log(msg);
  };
  if ((phase == Phase::Feature || phase == Phase::Deform) && s.epoch == 0) record_alpha(s);

  while (s.epoch < limit) {
    run_epoch(s, cfg, net, train, val);
    bool stable = false;
    if (phase == Phase::Feature || phase == Phase::Deform) {
      s.arch_history.push_back(derive_architecture(s.alpha, net.config().catalog));
      stable = stability_check(s.arch_history, cfg.stability_window);
    } else if (phase == Phase::Hyper) {
      s.lambda_history.push_back(s.lambda);
      stable = stability_check(s.lambda_history, cfg.stability_window, cfg.lambda_tolerance);
    }
    const auto& l = s.losses.back();
    std::ostringstream os;
    os.precision(5);
    os << phase_name(phase) << " epoch " << s.epoch << "/" << limit << " train " << l.train_loss;
    if (!std::isnan(l.val_loss)) os << " val " << l.val_loss;
    if (phase == Phase::Hyper || phase == Phase::PostJoint) {
      const auto lam = LossHyper::from_tensor(s.lambda);
      os << " lambda " << lam.lambda1 << ' ' << lam.lambda2 << ' ' << lam.lambda3 << ' ' << lam.lambda4;
    }
    log(os.str());
    if (stable) {
      s.converged[phase == Phase::Feature ? 0 : phase == Phase::Deform ? 1 : 2] = true;
      break;
    }
    if (s.epoch < limit && hooks.on_epoch) hooks.on_epoch(s);
  }
  if (phase == Phase::Feature || phase == Phase::Deform || phase == Phase::Hyper) {
    const int k = phase == Phase::Feature ? 0 : phase == Phase::Deform ? 1 : 2;
    if (!s.converged[k]) log(std::string(phase_name(phase)) + ": epoch limit reached without a stable result");
  }
  end_phase(s, cfg, net);
  if (hooks.on_epoch) hooks.on_epoch(s);
}

SearchResult run_search_pipeline(const SearchConfig& cfg, const Dataset& train, const Dataset& val,
                                 const SearchHooks& hooks, std::optional<SearchState> resume) {
  cfg.validate();
  require_data(train, val);
  if (cfg.max_epochs_hyper > 0 || cfg.post_joint_epochs > 0) require_val_labels(val);
  SearchState s = resume ? std::move(*resume) : initial_state(cfg);
  while (s.phase != Phase::Done) run_phase(s, cfg, train, val, hooks);
  SearchResult r;
  r.arch = *s.deform_arch;
  r.arch.feature = s.feature_arch->feature;
  r.lambda = LossHyper::from_tensor(s.lambda);
  r.weights = s.weights;
  r.converged = s.converged[0] && s.converged[1] && s.converged[2];
  r.state = std::move(s);
  return r;
}

// ---------------------------------------------------------------------------

namespace {

void put_adam(Checkpoint& c, const std::string& prefix, const Adam::State& st, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < st.m.size(); ++i) {
    c.put(prefix + ".m." + names[i], st.m[i]);
    c.put(prefix + ".v." + names[i], st.v[i]);
  }
}

Adam::State get_adam(const Checkpoint& c, const std::string& prefix, long step, const std::vector<std::string>& names) {
  Adam::State st;
  st.step = step;
  if (!c.has(prefix + ".m." + names.at(0))) return st;
  for (const auto& n : names) {
    st.m.push_back(c.get(prefix + ".m." + n));
    st.v.push_back(c.get(prefix + ".v." + n));
  }
  return st;
}

json arch_params_json(const ArchParams& a) {
  return json{{"f", a.alpha_f.storage()}, {"d", a.alpha_d.storage()}};
}

ArchParams arch_params_from(const json& j, int ops) {
  ArchParams a = ArchParams::zeros(ops);
  a.alpha_f = Tensor(a.alpha_f.shape(), j.at("f").get<std::vector<double>>());
  a.alpha_d = Tensor(a.alpha_d.shape(), j.at("d").get<std::vector<double>>());
  return a;
}

json optional_arch(const std::optional<DerivedArch>& a) { return a ? derived_arch_to_json(*a) : json(nullptr); }

std::optional<DerivedArch> optional_arch_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return derived_arch_from_json(j);
}

// NaN is not representable in JSON.
json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }
double number_from(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

}  // namespace

Checkpoint state_to_checkpoint(const SearchState& s) {
  Checkpoint c;
  c.put("w.", s.weights);
  std::vector<std::string> wn;
  for (std::size_t i = 0; i < s.weights.size(); ++i) wn.push_back(s.weights.name(i));
  put_adam(c, "wopt", s.weights_opt, wn);
  c.put("alpha_f", s.alpha.alpha_f);
  c.put("alpha_d", s.alpha.alpha_d);
  c.put("lambda", s.lambda);
  put_adam(c, "alpha_f_opt", s.alpha_f_opt, {"t"});
  put_adam(c, "alpha_d_opt", s.alpha_d_opt, {"t"});
  put_adam(c, "lambda_opt", s.lambda_opt, {"t"});

  json j;
  j["kind"] = "search";
  j["phase"] = phase_name(s.phase);
  j["epoch"] = s.epoch;
  j["opt_steps"] = {{"weights", s.weights_opt.step},
                    {"alpha_f", s.alpha_f_opt.step},
                    {"alpha_d", s.alpha_d_opt.step},
                    {"lambda", s.lambda_opt.step}};
  j["feature_arch"] = optional_arch(s.feature_arch);
  j["deform_arch"] = optional_arch(s.deform_arch);
  j["arch_history"] = json::array();
  for (const auto& a : s.arch_history) j["arch_history"].push_back(derived_arch_to_json(a));
  j["lambda_history"] = json::array();
  for (const auto& t : s.lambda_history) j["lambda_history"].push_back(t.storage());
  j["converged"] = s.converged;
  j["alpha_trace"] = json::array();
  for (const auto& r : s.alpha_trace)
    j["alpha_trace"].push_back({{"phase", phase_name(r.phase)}, {"epoch", r.epoch}, {"alpha", arch_params_json(r.alpha)}});
  j["lambda_trace"] = json::array();
  for (const auto& r : s.lambda_trace)
    j["lambda_trace"].push_back({{"phase", phase_name(r.phase)},
                                 {"epoch", r.epoch},
                                 {"lambda", r.lambda.to_tensor().storage()},
                                 {"seg_val", number_or_null(r.seg_val)}});
  j["losses"] = json::array();
  for (const auto& r : s.losses)
    j["losses"].push_back({{"phase", phase_name(r.phase)},
                           {"epoch", r.epoch},
                           {"train", number_or_null(r.train_loss)},
                           {"val", number_or_null(r.val_loss)}});
  c.meta["state"] = std::move(j);
  return c;
}

SearchState state_from_checkpoint(const Checkpoint& c, const SearchConfig& cfg) {
  const Network net(cfg.network);
  SearchState s;
  s.weights = net.empty_weights();
  c.restore("w.", s.weights);
  if (!c.meta.contains("state")) throw FormatError("state", "checkpoint holds no search state");
  try {
    const json& j = c.meta.at("state");
    if (j.at("kind") != "search") throw FormatError("kind", "checkpoint is not a search checkpoint");
    s.phase = phase_from_name(j.at("phase").get<std::string>());
    s.epoch = j.at("epoch").get<int>();
    std::vector<std::string> wn;
    for (std::size_t i = 0; i < s.weights.size(); ++i) wn.push_back(s.weights.name(i));
    const json& steps = j.at("opt_steps");
    s.weights_opt = get_adam(c, "wopt", steps.at("weights").get<long>(), wn);
    s.alpha.alpha_f = c.get("alpha_f");
    s.alpha.alpha_d = c.get("alpha_d");
    if (s.alpha.alpha_f.shape() != ArchParams::zeros(net.num_ops()).alpha_f.shape())
      throw ConfigError("checkpoint: architecture logits do not match the configured catalog");
    s.lambda = c.get("lambda");
    s.alpha_f_opt = get_adam(c, "alpha_f_opt", steps.at("alpha_f").get<long>(), {"t"});
    s.alpha_d_opt = get_adam(c, "alpha_d_opt", steps.at("alpha_d").get<long>(), {"t"});
    s.lambda_opt = get_adam(c, "lambda_opt", steps.at("lambda").get<long>(), {"t"});
    s.feature_arch = optional_arch_from(j.at("feature_arch"));
    s.deform_arch = optional_arch_from(j.at("deform_arch"));
    for (const auto& a : j.at("arch_history")) s.arch_history.push_back(derived_arch_from_json(a));
    for (const auto& t : j.at("lambda_history")) s.lambda_history.emplace_back(std::vector<int>{4}, t.get<std::vector<double>>());
    s.converged = j.at("converged").get<std::array<bool, 3>>();
    for (const auto& r : j.at("alpha_trace"))
      s.alpha_trace.push_back({phase_from_name(r.at("phase")), r.at("epoch").get<int>(),
                               arch_params_from(r.at("alpha"), net.num_ops())});
    for (const auto& r : j.at("lambda_trace"))
      s.lambda_trace.push_back({phase_from_name(r.at("phase")), r.at("epoch").get<int>(),
                                LossHyper::from_tensor(Tensor({4}, r.at("lambda").get<std::vector<double>>())),
                                number_from(r.at("seg_val"))});
    for (const auto& r : j.at("losses"))
      s.losses.push_back({phase_from_name(r.at("phase")), r.at("epoch").get<int>(), number_from(r.at("train")),
                          number_from(r.at("val"))});
  } catch (const json::exception& e) {
    throw FormatError("state", std::string("checkpoint search state: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------

namespace {

std::string g17(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_search_report(const std::filesystem::path& dir, const SearchResult& r, const SearchConfig& cfg) {
  std::filesystem::create_directories(dir);
  const auto& catalog = cfg.network.catalog;
  const int n = static_cast<int>(catalog.size());

  std::ostringstream a;
  a << "phase,epoch,family,scale,edge,op,weight\n";
  for (const auto& row : r.state.alpha_trace)
    for (int f = 0; f < 2; ++f) {
      const Tensor& L = f == 0 ? row.alpha.alpha_f : row.alpha.alpha_d;
      for (int k = 0; k < kRows; ++k) {
        const Tensor w = ad::softmax_row(ad::constant(L), k).value();
        for (int o = 0; o < n; ++o)
          a << phase_name(row.phase) << ',' << row.epoch << ',' << (f == 0 ? "F" : "D") << ',' << k / kEdges << ','
            << k % kEdges << ',' << op_name(catalog[o]) << ',' << g17(w[o]) << '\n';
      }
    }
  write_file(dir / "alpha_trace.csv", a.str());

  std::ostringstream l;
  l << "phase,epoch,lambda1,lambda2,lambda3,lambda4,seg_val\n";
  for (const auto& row : r.state.lambda_trace)
    l << phase_name(row.phase) << ',' << row.epoch << ',' << g17(row.lambda.lambda1) << ',' << g17(row.lambda.lambda2)
      << ',' << g17(row.lambda.lambda3) << ',' << g17(row.lambda.lambda4) << ',' << g17(row.seg_val) << '\n';
  write_file(dir / "lambda_trace.csv", l.str());

  std::ostringstream c;
  c << "phase,epoch,train_loss,val_loss\n";
  for (const auto& row : r.state.losses)
    c << phase_name(row.phase) << ',' << row.epoch << ',' << g17(row.train_loss) << ',' << g17(row.val_loss) << '\n';
  write_file(dir / "loss_curves.csv", c.str());

  json d = derived_arch_to_json(r.arch);
  d["lambda"] = {r.lambda.lambda1, r.lambda.lambda2, r.lambda.lambda3, r.lambda.lambda4};
  d["converged"] = {{"feature", r.state.converged[0]}, {"deform", r.state.converged[1]}, {"hyper", r.state.converged[2]}};
  write_file(dir / "derived_arch.json", d.dump(2) + "\n");

  const auto flag = dir / "non_converged.flag";
  if (r.converged) {
    std::filesystem::remove(flag);
  } else {
    std::string msg;
    const char* names[] = {"feature", "deform", "hyper"};
    for (int k = 0; k < 3; ++k)
      if (!r.state.converged[k]) msg += std::string(names[k]) + " stage reached its epoch limit\n";
    write_file(flag, msg);
  }
}

}  // namespace autoreg
