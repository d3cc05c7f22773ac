#pragma once

// Candidate operators, mixed operations, feature/deformation cells and the
// two-scale registration backbone.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "autoreg/autodiff.hpp"
#include "autoreg/losses.hpp"
#include "autoreg/params.hpp"

namespace autoreg {

enum class OpKind { CONV1, CONV3, CONV5, SEP3, SEP5, DIL3, DIL5, DIL7 };

struct OpSpec {
  int kernel;
  int dilation;
  bool separable;
};

OpSpec op_spec(OpKind k);
const char* op_name(OpKind k);
OpKind op_from_name(const std::string& name);
/// All eight kinds in catalog order.
std::vector<OpKind> full_catalog();

inline constexpr int kEdges = 3;
inline constexpr int kScales = 2;
inline constexpr int kRows = kEdges * kScales;  // logit rows per cell family

inline int arch_row(int scale, int edge) { return scale * kEdges + edge; }

struct NetworkConfig {
  int ndim = 2;
  int channels = 16;
  std::vector<OpKind> catalog = full_catalog();
  /// Per catalog entry; frozen ops keep zero weights forever.
  std::vector<bool> frozen;
  double leaky_slope = 0.2;
  int squaring_steps = 7;
  bool operator==(const NetworkConfig&) const = default;
};

/// Weights of one candidate op on one edge. Unused slots are -1.
struct OpSlots {
  long weight = -1;     // [Co, Ci, k...]
  long depthwise = -1;  // [Ci, k...]
  long bias = -1;       // [Co]
};

enum class CellKind { FeatureSource, FeatureTarget, Deform };

/// Fixes the parameter layout for a configuration.
class Network {
 public:
  explicit Network(NetworkConfig cfg);

  const NetworkConfig& config() const noexcept { return cfg_; }
  int num_ops() const noexcept { return static_cast<int>(cfg_.catalog.size()); }
  OpKind op(int index) const { return cfg_.catalog.at(index); }
  bool op_frozen(int index) const { return !cfg_.frozen.empty() && cfg_.frozen.at(index); }

  /// Fan-in scaled uniform kernels, zero biases, zero velocity heads.
  ParamSet init_weights(std::uint64_t seed) const;
  /// Names and shapes only, zero-filled.
  ParamSet empty_weights() const;

  const OpSlots& slots(CellKind cell, int scale, int edge, int op) const;
  long head_weight(int scale) const { return head_w_[scale]; }
  long head_bias(int scale) const { return head_b_[scale]; }
  std::vector<bool> trainable_mask() const;

  /// Input and output channels of an edge.
  std::pair<int, int> edge_channels(CellKind cell, int scale, int edge) const;

 private:
  NetworkConfig cfg_;
  struct Entry {
    std::string name;
    std::vector<int> shape;
    bool trainable;
    int fan_in;  // 0 for zero-initialised tensors
  };
  std::vector<Entry> layout_;
  // [cell kind][scale][edge][op]
  std::vector<OpSlots> slots_;
  std::array<long, 2> head_w_{}, head_b_{};
  std::size_t slot_index(CellKind cell, int scale, int edge, int op) const;
};

/// Architecture logits: rows are (scale, edge) pairs, columns catalog ops.
struct ArchParams {
  Tensor alpha_f;
  Tensor alpha_d;

  static ArchParams zeros(int num_ops);
  bool operator==(const ArchParams&) const = default;
};

struct DerivedArch {
  std::vector<OpKind> catalog;
  std::array<int, kRows> feature{};
  std::array<int, kRows> deform{};

  OpKind feature_op(int row) const { return catalog.at(feature[row]); }
  OpKind deform_op(int row) const { return catalog.at(deform[row]); }
  bool operator==(const DerivedArch&) const = default;
};

/// Row-wise argmax; ties go to the lowest index.
std::array<int, kRows> argmax_rows(const Tensor& logits);
DerivedArch derive_architecture(const ArchParams& alpha, const std::vector<OpKind>& catalog);

/// Architecture of one cell family during a forward pass: either relaxed
/// (softmax over `logits`) or one fixed op per row.
struct FamilyArch {
  ad::Var logits;
  std::vector<int> choice;

  bool discrete() const { return !choice.empty(); }
  static FamilyArch relaxed(const Tensor& logits, bool requires_grad);
  static FamilyArch relaxed(ad::Var logits);
  static FamilyArch fixed(const std::array<int, kRows>& rows);
};

/// Binds weight tensors as graph leaves. Trainable tensors become parameters
/// when `requires_grad`, everything else constants.
std::vector<ad::Var> bind_weights(const ParamSet& w, bool requires_grad);

struct OpVars {
  ad::Var weight, depthwise, bias;
};

OpVars op_vars(const Network& net, const std::vector<ad::Var>& w, CellKind cell, int scale, int edge,
               int op);

/// Convolution (or depthwise + 1x1 mixer), zero "same" padding, LeakyReLU.
ad::Var apply_op(OpKind kind, const ad::Var& input, const OpVars& weights, double slope = 0.2);

/// sum_o softmax(logits row)_o * apply_op(o, input).
ad::Var mixed_op(const Network& net, const ad::Var& input, const ad::Var& logits, int row,
                 const std::vector<OpVars>& ops);

/// Three-edge chain then stride-2 subsampling.
ad::Var feature_cell_forward(const Network& net, const ad::Var& input, const std::vector<ad::Var>& w,
                             CellKind stream, int scale, const FamilyArch& arch);

/// Concatenation, three-edge chain, velocity head and, for the coarse cell
/// (scale 0), a x2 resize.
ad::Var deformation_cell_forward(const Network& net, const ad::Var& source_features,
                                 const ad::Var& target_features, const std::vector<ad::Var>& w,
                                 int scale, const FamilyArch& arch);

struct BackboneOutput {
  ad::Var v_coarse;  // half resolution
  ad::Var v_fine;    // half resolution
  ad::Var phi_quarter, phi_half, phi_full;
  std::array<ad::Var, 3> source;  // image pyramid, full/half/quarter
  std::array<ad::Var, 3> target;
  std::array<ad::Var, 3> warped;
};

/// Source and target are [1, spatial] with every extent divisible by 4.
BackboneOutput backbone_forward(const Network& net, const ad::Var& source, const ad::Var& target,
                                const std::vector<ad::Var>& w, const FamilyArch& feature,
                                const FamilyArch& deform);

/// Multi-scale registration loss on a backbone output; `lambda` is a 4-vector.
ad::RegLossGraph registration_loss(const BackboneOutput& out, const ad::Var& lambda,
                                   const LossConstants& k);

/// Heatmap rows: one per (family, scale, edge, op) with softmax weight and an
/// argmax flag.
std::string arch_heatmap_csv(const ArchParams& alpha, const std::vector<OpKind>& catalog);

}  // namespace autoreg
