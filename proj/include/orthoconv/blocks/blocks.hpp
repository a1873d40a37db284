#pragma once

#include <array>
#include <functional>
#include <vector>

#include "orthoconv/core/tensor.hpp"

namespace orthoconv::blocks {

enum class ActivationType { abs, soft_huber, maxmin, householder, householder2 };

const char* to_string(ActivationType t);
ActivationType activation_from_string(const std::string& name);

/// Pairwise kinds act on channels (i, i + c/2).
struct ActivationKind {
  ActivationType type = ActivationType::maxmin;
  double delta = 0.1;  // soft_huber smoothing
  // One direction per channel pair; householder2 uses `directions` then `directions2`.
  std::vector<std::array<double, 2>> directions;
  std::vector<std::array<double, 2>> directions2;
  // Reflected branch scaled by sqrt(2): the variant whose direction lost its 1/sqrt(2) factor.
  bool legacy_unnormalized = false;

  static ActivationKind abs();
  static ActivationKind soft_huber(double delta);
  static ActivationKind maxmin();
  /// Directions are normalized on construction.
  static ActivationKind householder(std::vector<std::array<double, 2>> v);
  static ActivationKind householder2(std::vector<std::array<double, 2>> v1, std::vector<std::array<double, 2>> v2);
};

FeatureMap apply_activation(const ActivationKind& kind, const FeatureMap& x);

/// Distance of `x` to the activation's non-smooth set (|x| for abs, |a - b| for maxmin pairs,
/// |v^T z| for householder pairs). Infinite for soft_huber.
double distance_to_kinks(const ActivationKind& kind, const FeatureMap& x);

enum class CenteringMode { batch, layer };

/// Running statistics for batch centering. Caller-owned.
struct CenteringState {
  std::vector<double> running_mean;  // per channel; empty means zeros
  double momentum = 0.1;
  bool training = true;
};

/// Batch mode: training subtracts the per-channel batch mean and returns the updated running mean
/// in `state_out`; eval subtracts the stored running mean. Layer mode: subtracts each sample's mean
/// over channels and positions. No variance division.
std::vector<FeatureMap> apply_centering(CenteringMode mode, const std::vector<FeatureMap>& batch,
                                        const CenteringState& state_in, CenteringState* state_out = nullptr);

enum class ResidualType { concat, l2norm, additive, prescaled_additive };

const char* to_string(ResidualType t);

struct ResidualKind {
  ResidualType type = ResidualType::additive;
  double alpha = 0.0;     // raw gate
  double epsilon = 1e-6;  // l2norm
};

double sigmoid(double v);

using MapFn = std::function<FeatureMap(const FeatureMap&)>;

/// concat: fn on the first half of the channels, second half passed through.
/// l2norm: sqrt(x^2/2 + fn(x)^2/2 + eps) elementwise.
/// additive: sigmoid(alpha) x + (1 - sigmoid(alpha)) fn(x).
/// prescaled_additive: (x + fn(alpha x)) / (1 + |alpha|).
FeatureMap apply_residual(const ResidualKind& kind, const FeatureMap& x, const MapFn& fn);

}  // namespace orthoconv::blocks
