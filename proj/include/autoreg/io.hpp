#pragma once

// On-disk formats: ARVF volumes, dataset manifests and checkpoints.
//
// ARVF layout (little-endian): "ARVF", u32 version, u8 dtype, u8 ndim,
// u8 channels, u8 reserved, ndim x u32 extents, then C-order data with the
// channel axis slowest.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "autoreg/field.hpp"
#include "autoreg/params.hpp"
#include "autoreg/synth.hpp"

namespace autoreg {

namespace fs = std::filesystem;

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1, I32 = 2 };

inline constexpr std::uint32_t kArvfVersion = 1;

struct ArvfHeader {
  Dtype dtype = Dtype::F64;
  int ndim = 0;
  int channels = 1;
  std::vector<int> extents;

  /// Full tensor shape, channel axis first.
  std::vector<int> shape() const;
};

/// Any tensor of rank >= 1: dim 0 is stored as channels, the rest as extents.
/// I32 requires integral values.
void save_tensor(const fs::path& path, const Tensor& t, Dtype dtype = Dtype::F64);
Tensor load_tensor(const fs::path& path, ArvfHeader* header = nullptr);
ArvfHeader read_arvf_header(const fs::path& path);

/// Serialized bytes of a tensor; what save_tensor writes.
std::string encode_arvf(const Tensor& t, Dtype dtype = Dtype::F64);
Tensor decode_arvf(const std::string& bytes, ArvfHeader* header = nullptr);

void save_volume(const fs::path& path, const ScalarField& f);
void save_volume(const fs::path& path, const VectorField& f);
void save_volume(const fs::path& path, const LabelField& f);
/// Grid tensor that must satisfy channels == ndim.
void save_vector_tensor(const fs::path& path, const Tensor& t);

ScalarField load_scalar(const fs::path& path);
VectorField load_vector(const fs::path& path);
/// num_labels <= 0 means max label + 1.
LabelField load_labels(const fs::path& path, int num_labels = 0);

// ---------------------------------------------------------------------------

nlohmann::json synth_spec_to_json(const SynthSpec& s);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
SynthSpec synth_spec_from_json(const nlohmann::json& j);

struct ManifestPair {
  std::string id;
  std::string source, target;
  std::string source_labels, target_labels;  // empty when absent
  std::string ground_truth;
};

struct ManifestSplit {
  std::string name;
  std::vector<ManifestPair> pairs;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  nlohmann::json synth_spec;
  int num_labels = 0;
  std::vector<ManifestSplit> splits;

  const ManifestSplit& split(const std::string& name) const;
  /// DataError if the val split has a pair without labels.
  void validate() const;
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

/// Writes every split under dir/<split>/ and dir/manifest.json.
DatasetManifest write_dataset(const fs::path& dir, const SynthDataset& data, const SynthSpec& spec);
DatasetManifest read_manifest(const fs::path& manifest_path);
/// Paths in the manifest are relative to its directory.
Dataset load_split(const fs::path& manifest_path, const std::string& split);

// ---------------------------------------------------------------------------

/// Named tensors plus free-form metadata. Tensor names are unique and become
/// file names inside the checkpoint directory.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  void put(const std::string& name, const Tensor& t);
  void put(const std::string& prefix, const ParamSet& p);
  bool has(const std::string& name) const;
  /// FormatError naming the tensor when absent.
  const Tensor& get(const std::string& name) const;
  /// Copies prefix + name for every entry of `into`; ConfigError when an
  /// entry is missing or its shape differs.
  void restore(const std::string& prefix, ParamSet& into) const;
};

void save_checkpoint(const fs::path& dir, const Checkpoint& c);
Checkpoint load_checkpoint(const fs::path& dir);

/// Whole file as a string; FormatError("file") when unreadable.
std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& bytes);

}  // namespace autoreg
