#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "orthoconv/core/conv.hpp"
#include "orthoconv/core/tensor.hpp"
#include "orthoconv/layers/config.hpp"

namespace orthoconv::layers {

using dense::Matrix;
using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------------------------
// Free parameters. Unconstrained arrays; every construction below maps them to a kernel.

struct BcopParams {
  Matrix q;                         // c x c, orthogonalized into the 1x1 factor
  std::vector<Matrix> projectors;   // 2(k-1) matrices of shape c x floor(c/2)
};

struct RkoParams {
  Matrix w;  // c_out x (c_in * s * s)
};

/// One BCOP and one RKO factor per group.
struct AocParams {
  std::vector<BcopParams> bcop;
  std::vector<RkoParams> rko;
};

/// Square kernel (per group) plus an RKO factor per group when stride or channels change.
struct SocParams {
  Tensor4 kernel;                // (c, c / g, k, k) with c = kernel_in()
  std::vector<RkoParams> rko;    // empty when the map is square and stride 1
};

struct SllParams {
  Tensor4 kernel;             // (c_hidden, c / g, k, k)
  std::vector<double> bias;   // c_hidden
  std::vector<double> q;      // c_hidden, positive weights of the rescaling
};

/// Standard normal entries scaled by 1/sqrt(fan_in).
Matrix random_matrix(int rows, int cols, Rng& rng);
Tensor4 random_kernel(int c_out, int c_in, int kh, int kw, Rng& rng);

BcopParams random_bcop_params(int channels, int kernel_size, Rng& rng);
RkoParams random_rko_params(int c_in, int c_out, int stride, Rng& rng);
AocParams random_aoc_params(const ConvLayerConfig& cfg, Rng& rng);
SocParams random_soc_params(const ConvLayerConfig& cfg, Rng& rng);
SllParams random_sll_params(int channels, int kernel_size, Rng& rng, int groups = 1);

/// Adds `magnitude` * N(0, 1) to every free value.
void perturb(AocParams& p, double magnitude, Rng& rng);
void perturb(SocParams& p, double magnitude, Rng& rng);
void perturb(SllParams& p, double magnitude, Rng& rng);
void perturb(Tensor4& k, double magnitude, Rng& rng);

// ---------------------------------------------------------------------------------------------
// Kernel algebra.

/// Kernel of conv_{outer}(conv_{inner}(x)): K[o,c,mu] = sum_m sum_{lambda+kappa=mu}
/// outer[o,m,lambda] * inner[m,c,kappa]. Spatial size adds minus one. The inner convolution must
/// have stride 1; the outer one may be strided. Dilation (shared) and padding (summed per side)
/// are applied at application time.
Tensor4 block_conv_fuse(const Tensor4& outer, const Tensor4& inner, int groups = 1);

/// Concatenates per-group kernels (all of the same shape) along the output channels.
Tensor4 stack_groups(const std::vector<Tensor4>& per_group);
/// Kernel of group `g` as an ungrouped tensor.
Tensor4 group_slice(const Tensor4& k, int groups, int g);

/// Semi-orthogonal version of `w` (orthonormal on the short side) using `ortho`. The exponential
/// map, which is square-only, is applied to a zero-padded square embedding.
Matrix semi_orthogonalize(const Matrix& w, const dense::OrthoParams& ortho);

// ---------------------------------------------------------------------------------------------
// Orthogonal constructions.

/// Orthogonal k x k kernel on `c` channels from a 1x1 orthogonal factor and 2(k-1) projector
/// kernels [P | I - P] (k-1 horizontal, k-1 vertical).
Tensor4 bcop_kernel(const BcopParams& params, int c, int k, const dense::OrthoParams& ortho);

/// s x s kernel, semi-orthogonal reshaped matrix. Exactly (co-)isometric at stride s.
Tensor4 rko_kernel(const RkoParams& params, int c_in, int c_out, int s, const dense::OrthoParams& ortho);

/// RKO (stride s, outer) fused with a (k - s + 1)-sized BCOP on kernel_in()/g channels, per group.
/// The result is the stored kernel for `cfg` (see ConvLayerConfig for the transposed layout).
Tensor4 aoc_kernel(const AocParams& params, const ConvLayerConfig& cfg);

/// K_skew[a,b,i,j] = (K[a,b,i,j] - K[b,a,k-1-i,k-1-j]) / 2 within each group. Even kernels are
/// first padded to odd size by a trailing zero row and column.
Tensor4 skew_symmetrize(const Tensor4& k, int groups = 1);

/// Sum of |.| over taps and over the other input channel of the Gram kernel, per input channel.
std::vector<double> aol_channel_bounds(const Tensor4& k, int groups = 1);

/// Square, stride-1 exponential generator: skew kernel divided by the AOL norm bound.
Tensor4 soc_generator(const Tensor4& free_kernel, int groups = 1);

/// delta + sum_{j=1..terms} G^{(*)j} / j!, embedded centered; spatial size terms*(k-1)+1.
Tensor4 soc_series_kernel(const Tensor4& generator, int terms, int groups = 1);

/// x + G*x/1! + G*(G*x)/2! + ... evaluated term by term (no fusion).
FeatureMap soc_implicit_apply(const FeatureMap& x, const Tensor4& generator, int terms, const ConvSpec& spec);

/// Explicit SOC kernel for `cfg`; fused with an RKO factor when the map is not square or strided.
Tensor4 soc_explicit_kernel(const SocParams& params, const ConvLayerConfig& cfg);

// ---------------------------------------------------------------------------------------------
// Lipschitz rescalings and blocks.

/// Scales input channel i by d_i^{-1/2}; `steps` > 1 re-estimates on the rescaled kernel.
Tensor4 aol_rescale(const Tensor4& k, int steps = 1, int groups = 1);

/// T^{-1/2} K with T_ii = sum_j sum_taps |(K K^T)_ij| q_j / q_i over hidden channels.
Tensor4 sll_rescale(const Tensor4& k, const std::vector<double>& q, int groups = 1);

using Activation = std::function<double(double)>;
double relu(double v);

/// x - 2 K^T * sigma(K * x + b) with K used as given (rescale first with sll_rescale).
FeatureMap sll_forward(const FeatureMap& x, const Tensor4& k, const std::vector<double>& bias,
                       const ConvSpec& spec, const Activation& sigma = relu);

struct SllAocKernels {
  Tensor4 skip;     // K_post (*) K_pre, stride s
  Tensor4 inner;    // K (*) K_pre, stride 1
  Tensor4 outer;    // K_post (*) K^T, stride s
  ConvSpec skip_spec;
  ConvSpec inner_spec;
  ConvSpec outer_spec;
};

/// Fuses the three kernels once. All convolutions use circular "same" padding; `k` is the
/// already-rescaled SLL kernel.
SllAocKernels fuse_sll_aoc(const Tensor4& k, const Tensor4& k_pre, const Tensor4& k_post, int stride);

/// (K_post (*) K_pre) *_s x - 2 (K_post (*) K^T) *_s sigma((K (*) K_pre) * x + b).
FeatureMap sll_aoc_block(const FeatureMap& x, const SllAocKernels& fused, const std::vector<double>& bias,
                         const Activation& sigma = relu);

struct SandwichKernels {
  Tensor4 a;  // (q, c_out, k, k)
  Tensor4 b;  // (q, c_in, k, k)
};

/// Co-isometric AOC kernel on c_out + c_in input channels and `hidden` output channels, split
/// along its input channels so that K_A K_A^T + K_B K_B^T = I.
SandwichKernels sandwich_kernels(const AocParams& params, int c_in, int c_out, int hidden, int kernel_size,
                                 const dense::OrthoParams& ortho);
ConvLayerConfig sandwich_config(int c_in, int c_out, int hidden, int kernel_size, const dense::OrthoParams& ortho);

/// sqrt(2) K_A^T * (Psi sigma(sqrt(2) Psi^{-1} K_B * h + b)), Psi = diag(exp(d)).
FeatureMap sandwich_aoc_forward(const FeatureMap& h, const SandwichKernels& k, const std::vector<double>& d,
                                const std::vector<double>& bias, const ConvSpec& spec,
                                const Activation& sigma = relu);

/// A materialized constrained convolution. Forward is a single plain convolution.
struct ConvLayer {
  ConvLayerConfig cfg;
  Tensor4 kernel;
  ConvSpec spec;

  FeatureMap forward(const FeatureMap& x) const { return apply_conv(x, kernel, spec); }
};

ConvLayer make_aoc_layer(const AocParams& params, const ConvLayerConfig& cfg);
ConvLayer make_soc_layer(const SocParams& params, const ConvLayerConfig& cfg);

/// Circular "same" spec for stride-1 square blocks.
ConvSpec circular_same_spec(const Tensor4& k, int dilation = 1, int groups = 1);

}  // namespace orthoconv::layers
