#pragma once

#include <Eigen/Dense>

#include "orthoconv/core/tensor.hpp"

namespace orthoconv {

enum class PaddingMode { zero, circular };

/// Per-side padding in pixels. Asymmetric values are needed for even kernels.
struct Padding {
  int top = 0;
  int bottom = 0;
  int left = 0;
  int right = 0;

  friend bool operator==(const Padding&, const Padding&) = default;
};

/// Convolution configuration shared by the forward, transposed and Toeplitz routines.
///
/// Kernels are always stored in the orientation of the forward (non-transposed)
/// convolution: shape (c_out, c_in / groups, kh, kw). A transposed convolution with the
/// same kernel and spec is the exact adjoint of the forward one, so its input carries
/// c_out channels and its output c_in channels.
struct ConvSpec {
  int stride_h = 1;
  int stride_w = 1;
  int dilation_h = 1;
  int dilation_w = 1;
  int groups = 1;
  PaddingMode padding_mode = PaddingMode::zero;
  bool transposed = false;
  Padding padding{};
  int output_padding_h = 0;
  int output_padding_w = 0;

  ConvSpec& with_stride(int s) {
    stride_h = stride_w = s;
    return *this;
  }
  ConvSpec& with_dilation(int d) {
    dilation_h = dilation_w = d;
    return *this;
  }

  /// Throws ConfigError for non-positive stride/dilation/groups, negative padding, or the
  /// circular + transposed combination.
  void validate() const;
};

/// Total padding d*(k-1) per axis, split with the extra pixel at the bottom/right.
Padding same_padding(int kh, int kw, int dilation_h = 1, int dilation_w = 1);
/// d*(k-1) on every side: the output covers every position the kernel can reach.
Padding full_padding(int kh, int kw, int dilation_h = 1, int dilation_w = 1);

/// Output shape of `apply_conv(x, k, spec)` for an input of shape `in`.
MapShape conv_output_shape(const Tensor4& k, const ConvSpec& spec, MapShape in);

/// Strided, dilated, grouped cross-correlation (no kernel flip).
FeatureMap conv2d_forward(const FeatureMap& x, const Tensor4& k, const ConvSpec& spec);

/// Adjoint of conv2d_forward for the same kernel and spec (zero padding only).
FeatureMap conv_transpose2d_forward(const FeatureMap& x, const Tensor4& k, const ConvSpec& spec);

/// Dispatches on spec.transposed.
FeatureMap apply_conv(const FeatureMap& x, const Tensor4& k, const ConvSpec& spec);

/// Adjoint of the forward convolution for any padding mode. `in_shape` is the shape of the
/// forward input, i.e. of the returned map. The transposed flag of `spec` is ignored.
FeatureMap conv2d_adjoint(const FeatureMap& y, const Tensor4& k, const ConvSpec& spec,
                          MapShape in_shape);

/// Kernel of the adjoint convolution: channels transposed within each group, taps flipped.
Tensor4 adjoint_kernel(const Tensor4& k, int groups = 1);

/// Spec under which `adjoint_kernel(k)` applied as a forward convolution reproduces the adjoint
/// of a stride-1, size-preserving convolution. Works for both padding modes.
ConvSpec adjoint_spec(const Tensor4& k, const ConvSpec& spec);

/// Dense operator M with flatten(apply_conv(x)) = M * flatten(x), assembled column by column
/// from unit impulses. `threads` = 0 uses the hardware concurrency.
Eigen::MatrixXd toeplitz_assemble(const Tensor4& k, const ConvSpec& spec, MapShape in_shape,
                                  unsigned threads = 0);

}  // namespace orthoconv
