#pragma once

// Staged architecture and loss-weight search with one-step unrolled
// finite-difference hypergradients.

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "autoreg/io.hpp"
#include "autoreg/objectives.hpp"

namespace autoreg {

struct HyperOptions {
  double lr_inner = 1e-4;  // step of the virtual weight update
  double epsilon = 1e-4;   // finite-difference radius before the guard
  bool epsilon_guard = true;        // epsilon / (1 + |g|_inf)
  bool strict_paper_v_term = false;  // drop lr_inner from the second-order term
};

struct Hypergradient {
  Tensor grad;
  ParamSet unrolled;  // w'
  double train_loss = 0.0;  // L_tr(w, theta)
  double val_loss = 0.0;    // L_val(w', theta)
  double epsilon = 0.0;     // radius actually used
};

/// w' = w - lr * grad_w L_tr(w, theta) over trainable entries.
ParamSet unrolled_weights(const ParamSet& w, const Tensor& theta, const Objective& train, double lr,
                          double* loss = nullptr);

/// d/dtheta L_val(w - lr grad_w L_tr(w, theta), theta) to second order in
/// epsilon, with the mixed second derivative replaced by a central difference
/// of grad_theta L_tr at w +- epsilon * grad_w' L_val.
Hypergradient hypergradient(const Tensor& theta, const ParamSet& w, const Objective& train,
                            const Objective& val, const HyperOptions& opt);

// ---------------------------------------------------------------------------

enum class Phase { Feature, Deform, WarmStart, Hyper, PostWeights, PostJoint, Done };

const char* phase_name(Phase p);
Phase phase_from_name(const std::string& s);

struct SearchConfig {
  NetworkConfig network;
  LossConstants constants;
  double lr_omega = 1e-4;
  double lr_alpha = 1e-4;
  double lr_lambda = 4e-3;
  bool adam_omega = true;
  bool adam_alpha = false;
  bool adam_lambda = true;
  bool epsilon_guard = true;
  bool strict_paper_v_term = false;
  int stability_window = 10;
  double lambda_tolerance = 1e-3;
  int max_epochs_feature = 50;
  int max_epochs_deform = 50;
  int max_epochs_hyper = 50;
  int warm_epochs = 5;
  int post_weights_epochs = 15;
  int post_joint_epochs = 30;
  int steps_per_epoch = 0;  // 0: one pass over the training pairs
  double lambda_l2 = 1e-3;
  LossHyper lambda_init;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json search_config_to_json(const SearchConfig& c);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
SearchConfig search_config_from_json(const nlohmann::json& j);
nlohmann::json network_config_to_json(const NetworkConfig& c);
NetworkConfig network_config_from_json(const nlohmann::json& j);
nlohmann::json derived_arch_to_json(const DerivedArch& a);
DerivedArch derived_arch_from_json(const nlohmann::json& j);

struct AlphaTraceRow {
  Phase phase;
  int epoch;
  ArchParams alpha;
};

struct EpochLosses {
  Phase phase;
  int epoch;
  double train_loss;
  double val_loss;  // NaN for weights-only phases
};

struct LambdaTraceRow {
  Phase phase;
  int epoch;
  LossHyper lambda;
  double seg_val;
};

/// Everything needed to continue a search from an epoch boundary.
struct SearchState {
  Phase phase = Phase::Feature;
  int epoch = 0;  // completed epochs in the current phase
  ParamSet weights;
  Adam::State weights_opt;
  ArchParams alpha;
  Tensor lambda;
  Adam::State alpha_f_opt, alpha_d_opt, lambda_opt;
  std::optional<DerivedArch> feature_arch;  // set when stage 1 ends
  std::optional<DerivedArch> deform_arch;   // set when stage 2 ends
  std::vector<DerivedArch> arch_history;    // current alpha stage
  std::vector<Tensor> lambda_history;       // current lambda stage
  std::array<bool, 3> converged{};          // feature, deform, hyper
  std::vector<AlphaTraceRow> alpha_trace;
  std::vector<LambdaTraceRow> lambda_trace;
  std::vector<EpochLosses> losses;

  bool operator==(const SearchState&) const;
};

SearchState initial_state(const SearchConfig& cfg);

/// Last `window` entries identical.
bool stability_check(const std::vector<DerivedArch>& history, int window);
/// Last `window` entries with every consecutive max-abs change below tol.
bool stability_check(const std::vector<Tensor>& history, int window, double tol = 1e-3);

struct SearchHooks {
  /// Called after every completed epoch and after the final transition.
  std::function<void(const SearchState&)> on_epoch;
  /// Progress lines; silent when empty.
  std::function<void(const std::string&)> log;
};

/// Runs epochs of one phase until it ends (stability or max epochs), leaving
/// the state at the start of the next phase.
void run_phase(SearchState& s, const SearchConfig& cfg, const Dataset& train, const Dataset& val,
               const SearchHooks& hooks = {});

struct SearchResult {
  DerivedArch arch;
  LossHyper lambda;
  ParamSet weights;
  bool converged = false;
  SearchState state;
};

/// Stage 1 -> stage 2 -> warm start -> stage 3 -> post-search training,
/// starting from `resume` when given.
SearchResult run_search_pipeline(const SearchConfig& cfg, const Dataset& train, const Dataset& val,
                                 const SearchHooks& hooks = {}, std::optional<SearchState> resume = {});

Checkpoint state_to_checkpoint(const SearchState& s);
/// ConfigError when the weight layout differs from the configured network.
SearchState state_from_checkpoint(const Checkpoint& c, const SearchConfig& cfg);

/// alpha_trace.csv, lambda_trace.csv, loss_curves.csv, derived_arch.json and
/// non_converged.flag (only when a stage hit its epoch limit).
void write_search_report(const std::filesystem::path& dir, const SearchResult& r, const SearchConfig& cfg);

}  // namespace autoreg
