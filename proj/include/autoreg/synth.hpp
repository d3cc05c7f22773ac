#pragma once

// Synthetic registration pairs with known deformations and segmentations.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "autoreg/field.hpp"

namespace autoreg {

struct SynthSpec {
  int ndim = 2;
  std::vector<int> shape{64, 64};
  int num_train = 40;
  int num_val = 8;
  int num_test = 20;
  int num_labels = 5;
  double amplitude = 4.0;  // max |v| in voxels
  double sigma = 6.0;      // blur of the random velocity
  double noise = 0.02;
  double blur = 1.0;       // softening of region boundaries
  bool multimodal = false;
  double remap_power = 3.0;  // target intensity t -> 1 - t^p in multimodal mode
  std::uint64_t seed = 1;
  int max_retries = 20;

  void validate() const;
  bool operator==(const SynthSpec&) const = default;
};

struct RegPair {
  std::string id;
  ScalarField source;
  ScalarField target;
  std::optional<LabelField> source_labels;
  std::optional<LabelField> target_labels;
  std::optional<VectorField> ground_truth;

  bool has_labels() const { return source_labels.has_value() && target_labels.has_value(); }
};

struct Dataset {
  std::string name;
  std::vector<RegPair> pairs;

  bool all_labeled() const;
};

struct SynthBase {
  ScalarField image;
  LabelField labels;
};

/// Nested regions of equal volume around a jittered grid of blobs (one per 16
/// voxels along each axis), one random
/// intensity level per region, softened and with Gaussian noise.
SynthBase synth_base(const SynthSpec& spec, std::uint64_t seed);

/// Smooth random velocity scaled so max |v| == amplitude.
VectorField synth_velocity(const SynthSpec& spec, std::uint64_t seed);

/// Source is the base; target is the base warped by a fold-free ground truth
/// plus independent noise (and the contrast remap in multimodal mode).
RegPair synth_pair(const SynthSpec& spec, std::uint64_t seed);

struct SynthDataset {
  Dataset train, val, test;
};

/// Every pair seed derives from spec.seed, the split and the pair index.
SynthDataset synth_dataset(const SynthSpec& spec);

/// Separable Gaussian blur with border replication, per channel.
Tensor gaussian_blur(const Tensor& t, double sigma);

/// Mixes a seed with up to two small integers.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace autoreg
