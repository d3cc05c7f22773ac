#pragma once

// Final training with a fixed architecture and loss weights, one-shot
// registration and test-set evaluation.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "autoreg/bilevel.hpp"

namespace autoreg {

/// A trained (or trainable) registration network with everything needed to
/// run it.
struct Model {
  NetworkConfig network;
  DerivedArch arch;
  LossHyper lambda;
  LossConstants constants;
  ParamSet weights;

  /// Fresh weights for the configured network.
  static Model initial(const NetworkConfig& net, const DerivedArch& arch, const LossHyper& lambda,
                       const LossConstants& k, std::uint64_t seed);
  ModelSetup setup(const Network& net) const;
  bool operator==(const Model&) const = default;
};

Checkpoint model_to_checkpoint(const Model& m);
/// ConfigError when the stored weights do not fit the stored network.
Model model_from_checkpoint(const Checkpoint& c);
void save_model(const std::filesystem::path& dir, const Model& m);
Model load_model(const std::filesystem::path& dir);

struct TrainConfig {
  int epochs = 200;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  int steps_per_epoch = 0;     // 0: one pass over the pairs
  int checkpoint_every = 0;    // epochs; 0 disables
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainState {
  ParamSet weights;
  Adam::State opt;
  int epoch = 0;
  std::vector<double> losses;  // mean training loss per epoch
  bool operator==(const TrainState&) const = default;
};

/// Minimises the registration loss with Adam; pairs are visited in a seeded
/// per-epoch order. On a non-finite loss the last good state is written to the
/// checkpoint directory (when set) before the NumericalError propagates.
TrainState train(const Model& model, const Dataset& data, const TrainConfig& cfg,
                 std::optional<TrainState> resume = {},
                 const std::function<void(const TrainState&)>& on_epoch = {});

Checkpoint train_state_to_checkpoint(const Model& m, const TrainState& s);
TrainState train_state_from_checkpoint(const Checkpoint& c, const Model& m);

struct Registration {
  VectorField phi;       // full-resolution displacement
  ScalarField warped;    // source warped by phi
  double seconds = 0.0;  // forward pass and upsampling only
};

Registration register_pair(const Model& model, const ScalarField& source, const ScalarField& target);

struct EvalRecord {
  std::string pair_id;
  std::optional<double> dice;  // nullopt when the pair has no labels
  double ncc = 0.0;
  long folds = 0;
  double seconds = 0.0;
};

struct MeanStd {
  double mean = 0.0, std = 0.0;
  int count = 0;
};

/// Population standard deviation (divisor n).
MeanStd mean_std(const std::vector<double>& xs);
/// "0.xxx ± 0.yyy"
std::string format_mean_std(const MeanStd& m, int decimals = 3);

struct EvalTable {
  std::vector<EvalRecord> records;
  MeanStd dice, ncc, folds, seconds;

  std::string csv() const;
};

/// Labels are carried along with nearest-neighbour sampling of the same field.
EvalTable evaluate(const Model& model, const Dataset& data);

/// Scores the identity transform: the pre-registration baseline.
EvalTable evaluate_identity(const Dataset& data);

}  // namespace autoreg
