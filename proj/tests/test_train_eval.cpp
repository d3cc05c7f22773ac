#include <cmath>
#include <filesystem>

#include "autoreg/error.hpp"
#include "autoreg/field_core.hpp"
#include "autoreg/losses.hpp"
#include "autoreg/train_eval.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace autoreg;
namespace fs = std::filesystem;

namespace {

NetworkConfig small_net() {
  NetworkConfig n;
  n.channels = 4;
  n.catalog = {OpKind::CONV1, OpKind::CONV3, OpKind::SEP3};
  return n;
}

DerivedArch arch_of(const NetworkConfig& n, int f, int d) {
  DerivedArch a;
  a.catalog = n.catalog;
  a.feature.fill(f);
  a.deform.fill(d);
  return a;
}

Model small_model(std::uint64_t seed = 1) {
  const auto n = small_net();
  return Model::initial(n, arch_of(n, 1, 1), LossHyper{}, LossConstants{}, seed);
}

Dataset synth_split(int n, std::uint64_t seed, bool identical = false, int size = 32) {
  SynthSpec s;
  s.shape = {size, size};
  Dataset d;
  d.name = "test";
  for (int i = 0; i < n; ++i) {
    auto p = synth_pair(s, derive_seed(seed, i));
    p.id = "p" + std::to_string(i);
    if (identical) {
      p.target = p.source;
      p.target_labels = p.source_labels;
    }
    d.pairs.push_back(std::move(p));
  }
  return d;
}

double mean_displacement(const VectorField& phi) {
  double sum = 0;
  const std::size_t n = phi.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0;
    for (int c = 0; c < phi.ndim(); ++c) m += phi.component(c)[i] * phi.component(c)[i];
    sum += std::sqrt(m);
  }
  return sum / n;
}

std::uint64_t dataset_hash(const Dataset& d) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : d.pairs) {
    h = hash_bytes(p.source.tensor(), h);
    h = hash_bytes(p.target.tensor(), h);
    if (p.source_labels) h = hash_bytes(p.source_labels->one_hot(), h);
  }
  return h;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("autoreg_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("zero epochs leave the weights unchanged") {
  const auto m = small_model();
  TrainConfig c;
  c.epochs = 0;
  const auto s = train(m, synth_split(2, 1), c);
  CHECK(s.weights == m.weights);
  CHECK(s.losses.empty());
}

TEST_CASE("training is deterministic and reduces the loss") {
  const auto m = small_model();
  const auto data = synth_split(3, 2);
  TrainConfig c;
  c.epochs = 6;
  c.lr = 3e-3;
  const auto a = train(m, data, c);
  const auto b = train(m, data, c);
  CHECK(a.weights.hash() == b.weights.hash());
  CHECK(a == b);
  REQUIRE(a.losses.size() == 6);
  CHECK(a.losses.back() < a.losses.front());
}

TEST_CASE("training resumes bit-exactly from a checkpoint") {
  TempDir tmp("train");
  const auto m = small_model();
  const auto data = synth_split(3, 3);
  TrainConfig c;
  c.epochs = 4;
  c.lr = 3e-3;
  c.checkpoint_every = 2;
  c.checkpoint_dir = tmp.path;
  std::optional<Checkpoint> at2;
  const auto full = train(m, data, c, {}, [&](const TrainState& s) {
    if (s.epoch == 2) at2 = train_state_to_checkpoint(m, s);
  });
  REQUIRE(at2);
  const auto resumed = train(m, data, c, train_state_from_checkpoint(*at2, m));
  CHECK(resumed == full);
  // the cadence wrote the final state
  const auto last = train_state_from_checkpoint(load_checkpoint(tmp.path), m);
  CHECK(last == full);

  Model other = m;
  other.arch = arch_of(m.network, 0, 2);
  CHECK_THROWS_AS(train_state_from_checkpoint(*at2, other), ConfigError);
}

TEST_CASE("non-finite loss keeps the last good state on disk") {
  TempDir tmp("nan");
  const auto m = small_model();
  auto data = synth_split(2, 4);
  data.pairs[1].source[3] = std::nan("");
  TrainConfig c;
  c.epochs = 3;
  c.steps_per_epoch = 1;
  c.checkpoint_dir = tmp.path;
  // epoch 0 visits one pair; keep going until the bad one comes up
  CHECK_THROWS_AS(train(m, data, c), NumericalError);
  const auto kept = train_state_from_checkpoint(load_checkpoint(tmp.path), m);
  CHECK(kept.weights.all_finite());
}

TEST_CASE("self-registration after training on identical pairs") {
  const auto data = synth_split(3, 5, true);
  const auto m = small_model();
  TrainConfig c;
  c.epochs = 5;
  c.lr = 3e-3;
  auto trained = m;
  trained.weights = train(m, data, c).weights;
  for (const auto& p : data.pairs) {
    const auto r = register_pair(trained, p.source, p.target);
    CHECK(mean_displacement(r.phi) < 0.1);
  }
}

TEST_CASE("register") {
  const auto data = synth_split(1, 6);
  const auto& p = data.pairs[0];
  SUBCASE("zero-head model is the identity") {
    const auto r = register_pair(small_model(), p.source, p.target);
    CHECK(max_abs(r.phi.tensor()) == 0.0);
    CHECK(r.warped == p.source);
    CHECK(r.seconds >= 0.0);
  }
  SUBCASE("stateless") {
    auto m = small_model();
    for (std::size_t i = 0; i < m.weights.size(); ++i)
      if (m.weights.name(i).find("head.w") != std::string::npos)
        m.weights[i] = testutil::random_tensor(m.weights[i].shape(), 9, -0.2, 0.2);
    const auto a = register_pair(m, p.source, p.target);
    const auto b = register_pair(m, p.source, p.target);
    CHECK(a.phi == b.phi);
    CHECK(max_abs(a.phi.tensor()) > 0);
    CHECK(a.phi.dims() == p.source.dims());
    CHECK(a.warped == warp(p.source, a.phi));
  }
  SUBCASE("shape contract") {
    const ScalarField odd(std::vector<int>{30, 30});
    CHECK_THROWS_AS(register_pair(small_model(), odd, odd), ContractError);
    CHECK_THROWS_AS(register_pair(small_model(), p.source, odd), ContractError);
  }
}

TEST_CASE("evaluation") {
  const auto data = synth_split(4, 7);
  SUBCASE("identity model on identical pairs") {
    const auto same = synth_split(2, 8, true);
    const auto t = evaluate(small_model(), same);
    for (const auto& r : t.records) {
      CHECK(*r.dice == 1.0);
      CHECK(r.folds == 0);
      CHECK(r.ncc == doctest::Approx(1.0));
    }
  }
  SUBCASE("untrained model reproduces the pre-registration baseline") {
    const auto model = small_model();
    const auto h0 = model.weights.hash(), d0 = dataset_hash(data);
    const auto t = evaluate(model, data);
    const auto base = evaluate_identity(data);
    CHECK(model.weights.hash() == h0);
    CHECK(dataset_hash(data) == d0);
    REQUIRE(t.records.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(*t.records[i].dice == *base.records[i].dice);
      CHECK(*t.records[i].dice == dice_score(*data.pairs[i].source_labels, *data.pairs[i].target_labels).mean);
      CHECK(t.records[i].ncc == base.records[i].ncc);
    }
    CHECK(t.dice.mean == base.dice.mean);
  }
  SUBCASE("pairs without labels are flagged, not scored") {
    auto d = data;
    d.pairs[2].target_labels.reset();
    const auto t = evaluate_identity(d);
    CHECK_FALSE(t.records[2].dice.has_value());
    CHECK(t.dice.count == 3);
    CHECK(t.csv().find("p2,NA,") != std::string::npos);
  }
  SUBCASE("folded field is counted") {
    // u0 = -2 (x0 - 4) on a 5x3 patch: Jacobian determinant -1 on its 3x3 interior
    RegPair p = data.pairs[0];
    VectorField phi(p.source.dims());
    const int n = p.source.dims()[1];
    for (int y = 10; y < 15; ++y)
      for (int x = 10; x < 13; ++x) phi.component(0)[y * n + x] = -2.0 * (y - 12);
    CHECK(count_folds(phi) == 9);
  }
}

TEST_CASE("aggregates and table format") {
  const auto m = mean_std({1.0, 2.0, 3.0, 4.0});
  CHECK(m.mean == 2.5);
  CHECK(m.std == doctest::Approx(std::sqrt(1.25)));
  CHECK(format_mean_std({0.784, 0.008, 5}) == "0.784 ± 0.008");
  CHECK(format_mean_std(mean_std({0.5, 0.7})) == "0.600 ± 0.100");

  EvalTable t;
  t.records.push_back({"a", 0.5, 0.25, 0, 0.01});
  t.records.push_back({"b", 0.7, 0.75, 2, 0.03});
  t.dice = mean_std({0.5, 0.7});
  t.ncc = mean_std({0.25, 0.75});
  t.folds = mean_std({0, 2});
  t.seconds = mean_std({0.01, 0.03});
  const std::string csv = t.csv();
  CHECK(csv.rfind("pair_id,dice_mean,ncc,folds,seconds\n", 0) == 0);
  CHECK(csv.find("a,0.500000,0.250000,0,0.010000\n") != std::string::npos);
  CHECK(csv.find("aggregate,0.600 ± 0.100,0.500 ± 0.250,1.000 ± 1.000,0.0200 ± 0.0100\n") != std::string::npos);
}

TEST_CASE("model checkpoints") {
  TempDir tmp("model");
  auto m = small_model(3);
  m.lambda = {0.3, 0.7, 0.05, 0.2};
  m.constants.mind_sigma = 0.8;
  save_model(tmp.path, m);
  CHECK(load_model(tmp.path) == m);
  auto c = load_checkpoint(tmp.path);
  c.meta["model"]["network"]["channels"] = 6;
  CHECK_THROWS_AS(model_from_checkpoint(c), ConfigError);
}
