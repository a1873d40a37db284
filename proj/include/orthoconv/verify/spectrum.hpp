#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "orthoconv/core/conv.hpp"
#include "orthoconv/core/tensor.hpp"
#include "orthoconv/layers/config.hpp"

namespace orthoconv::verify {

enum class Method { toeplitz_svd, fft_circular, gram_bound, power_iter, jacobian };
enum class Contract { orthogonal, lipschitz };
enum class Verdict { orthogonal, one_lipschitz, violation };

const char* to_string(Method m);
const char* to_string(Contract c);
const char* to_string(Verdict v);

struct SpectrumReport {
  Method method = Method::toeplitz_svd;
  double sigma_max = 0.0;
  std::optional<double> sigma_min;   // absent for upper-bound / top-only methods
  std::vector<double> all_values;    // descending; empty unless the method computes them
  double tolerance = 1e-4;
  Contract contract = Contract::orthogonal;
  Verdict verdict = Verdict::violation;
  MapShape input_shape{};
  double elapsed = 0.0;              // seconds
  std::vector<double> violating_point;

  bool passed() const { return verdict != Verdict::violation; }

  /// Sets `verdict` from the contract. Orthogonal needs sigma_max <= 1 + tol and, when the method
  /// provides it, sigma_min >= 1 - tol. Without sigma_min only the upper side is checked and the
  /// verdict is one_lipschitz.
  void judge();
};

struct ReportFormat {
  bool all_values = false;
  bool elapsed = false;
};

nlohmann::json to_json(const SpectrumReport& r, ReportFormat fmt = {});

/// Full SVD of the impulse-response Toeplitz matrix.
SpectrumReport toeplitz_svd_spectrum(const Tensor4& k, const ConvSpec& spec, MapShape in_shape,
                                     Contract contract = Contract::orthogonal, double tol = 1e-4);

/// Per-frequency SVD of the H x W DFT of the (dilated) kernel. Circular, stride 1 only.
SpectrumReport fft_circular_spectrum(const Tensor4& k, const ConvSpec& spec, int height, int width,
                                     Contract contract = Contract::orthogonal, double tol = 1e-4);

struct GramOptions {
  int iters = 6;
  bool normalize = true;
  double tolerance = 1e-4;
};

/// Certified upper bound on the operator norm of the infinite-domain convolution (and hence of
/// every zero- or circular-padded restriction). Strides are handled by a polyphase rewrite.
/// Bound sequence: (sum_taps ||V_t[tap]||_2)^(1/2^t) with V_1 the Gram kernel and V_{t+1} = V_t (*) V_t.
SpectrumReport gram_bound(const Tensor4& k, const ConvSpec& spec, const GramOptions& opts = {});
/// Bounds for t = 1..iters.
std::vector<double> gram_bound_sequence(const Tensor4& k, const ConvSpec& spec, int iters, bool normalize = true);

/// Power iteration on T^T T using the convolution and its adjoint. A lower estimate of sigma_max.
SpectrumReport operator_power_iteration(const Tensor4& k, const ConvSpec& spec, MapShape in_shape, int iters,
                                        std::uint64_t seed = 0, double tol = 1e-4);

using MapFn = std::function<FeatureMap(const FeatureMap&)>;

struct JacobianOptions {
  int n_points = 5;
  bool require_iso = false;
  double tolerance = 1e-4;
  double step = 1e-5;
  std::uint64_t seed = 0;
  /// Rejects sample points too close to non-smooth sets; resampled up to 1000 times.
  std::function<bool(const FeatureMap&)> accept_point;
};

/// Central-difference Jacobian at `x`.
Eigen::MatrixXd finite_difference_jacobian(const MapFn& f, const FeatureMap& x, double step);

/// Checks sigma_max(J) <= 1 + tol (and sigma_min >= 1 - tol when require_iso) at random points.
SpectrumReport jacobian_spectral_check(const MapFn& f, MapShape in_shape, const JacobianOptions& opts = {});

/// Padding and input shape on which a layer's finite Toeplitz operator inherits the exact
/// (co-)isometry of the infinite-domain map: circular "same" padding, or for zero padding full
/// padding when the stored kernel is isometric and no padding when it is co-isometric. The grid
/// side is raised from `n` when the kernel extent needs it.
struct VerificationSetup {
  ConvSpec spec;
  MapShape in_shape;
};
VerificationSetup verification_setup(const layers::ConvLayerConfig& cfg, const Tensor4& kernel, int n = 8);

}  // namespace orthoconv::verify
