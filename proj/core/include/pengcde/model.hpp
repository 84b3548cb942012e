#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pengcde/equivariant.hpp"
#include "pengcde/series.hpp"
#include "pengcde/solver.hpp"
#include "pengcde/spline.hpp"
#include "pengcde/tensor.hpp"

namespace pengcde {

/// The differential-equation model family. All graph variants share the same
/// convolutional field and differ only in how the adjacency path value and
/// its derivative are fused into the effective adjacency:
///   Constant   dZ = b dt
///   Gnode      most recent observed snapshot, no interpolation
///   Adjacency  interpolated path value only
///   PreMult    W1 A + W2 dA with dense learnable matrices
///   Original   A + dA
///   Peng       equivariant fusion L1(A) + L2(dA) over the 15-map basis
///   PengFeatures  Peng plus node-feature controls contracted per node
enum class Variant { Constant, Gnode, Adjacency, PreMult, Original, Peng, PengFeatures };

Variant variant_from_string(const std::string& name);
std::string to_string(Variant variant);

enum class Activation { Tanh, Identity };

struct ModelParams {
  Variant variant = Variant::Peng;
  std::size_t nodes = 0;
  std::size_t dz = 16;
  std::size_t dx = 0;  // feature channels before time augmentation
  std::size_t dy = 1;
  std::size_t layers = 2;  // number of graph-convolution weight matrices
  bool per_layer_fusion = false;
  bool use_layer_norm = true;
  Activation activation = Activation::Tanh;

  // Fusion: one (or `layers`, with per_layer_fusion) coefficient pair for
  // Peng variants; dense n x n matrices for PreMult.
  std::vector<Tensor> fusion_a;   // 15 coefficients each
  std::vector<Tensor> fusion_da;
  Tensor premult_w1, premult_w2;

  Tensor const_field;              // n x dz (Constant only)
  std::vector<Tensor> conv_w;      // layers weight matrices
  std::vector<Tensor> ln_gain, ln_bias;
  Tensor init_w;                   // 2 x dz
  Tensor readout_w;                // dz x dy
  Tensor readout_b;                // dy

  std::size_t fusion_parameter_count() const;
};

/// Glorot-style initialization; Peng fusion starts as the plain sum
/// A + dA (identity coefficients 1, rest 0).
ModelParams init_params(Variant variant, std::size_t nodes, std::size_t dz, std::size_t dx,
                        std::size_t dy, std::size_t layers, std::uint64_t seed,
                        bool per_layer_fusion = false);

struct NamedParam {
  std::string name;
  Tensor* tensor;
};
std::vector<NamedParam> collect_parameters(ModelParams& params);

/// Control paths driving one forward solve.
struct ControlPaths {
  CubicPath a_path;                   // n x n adjacency channels
  std::optional<CubicPath> x_path;    // n x (dx+1) time-augmented features
  const DynamicGraphSeries* series = nullptr;  // snapshot lookup (Gnode)

  double t_begin() const { return a_path.t_begin(); }
  double t_end() const { return a_path.t_end(); }
};

/// Fits splines over all snapshots of the series. Features are fitted with a
/// prepended time channel when present (and required for PengFeatures).
ControlPaths build_paths(const DynamicGraphSeries& series, bool with_features);

/// Initial latent state zeta(A at t0): one graph convolution over the
/// per-node summary [t0, degree/(n-1)].
Tensor init_state(const ModelParams& params, const ControlPaths& paths, double t0);

/// Path-value form of the field: callers supply the adjacency value, its
/// derivative, and (for PengFeatures) the control derivative dX. Used
/// directly by reparametrization tests.
Tensor vector_field_values(const ModelParams& params, const Tensor& z, const Tensor& a_value,
                           const Tensor& a_deriv, const Tensor* x_deriv);

/// Field at time t with paths evaluated internally.
Tensor vector_field(const ModelParams& params, double t, const Tensor& z,
                    const ControlPaths& paths);

struct ForwardResult {
  std::vector<double> times;
  std::vector<Tensor> latents;      // n x dz
  std::vector<Tensor> predictions;  // n x dy
  SolverStats stats;
};

/// init_state + solve + row-wise affine readout at each save time.
ForwardResult forward(const ModelParams& params, const ControlPaths& paths,
                      std::vector<double> save_times, const SolverConfig& config);

Tensor readout(const ModelParams& params, const Tensor& z);

/// Checkpoint JSON: variant tag, dims and flags, every parameter tensor as
/// shape plus flat values, solver config, and seed provenance.
std::string checkpoint_to_json(const ModelParams& params, const SolverConfig& config,
                               std::uint64_t seed);
void save_checkpoint(const ModelParams& params, const SolverConfig& config, std::uint64_t seed,
                     const std::string& path);
struct Checkpoint {
  ModelParams params;
  SolverConfig solver;
  std::uint64_t seed = 0;
};
Checkpoint checkpoint_from_json(const std::string& text);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pengcde
