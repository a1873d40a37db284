#pragma once

#include <string>

#include "orthoconv/core/conv.hpp"
#include "orthoconv/core/errors.hpp"
#include "orthoconv/dense/ortho.hpp"

namespace orthoconv::layers {

/// Shape and hyperparameters of one constrained convolution layer.
///
/// c_in / c_out are the channel counts of the layer as applied. For a transposed layer the
/// stored kernel has shape (c_in, c_out / groups, k, k): it is the forward kernel of the
/// adjoint map c_out -> c_in.
struct ConvLayerConfig {
  int c_in = 4;
  int c_out = 4;
  int kernel_size = 3;
  int stride = 1;
  int dilation = 1;
  int groups = 1;
  bool transposed = false;
  PaddingMode padding_mode = PaddingMode::circular;
  dense::OrthoParams ortho{.method = dense::OrthoMethod::qr};
  int soc_terms = 8;
  int aol_steps = 1;
  // Ask for a norm-preserving (TᵀT = I) map rather than any semi-orthogonal one.
  bool require_isometry = false;

  /// Channels of the forward map whose kernel is stored.
  int kernel_in() const { return transposed ? c_out : c_in; }
  int kernel_out() const { return transposed ? c_in : c_out; }

  void validate() const {
    if (c_in < 1 || c_out < 1) throw ConfigError("channel counts must be >= 1");
    if (kernel_size < 1) throw ConfigError("kernel_size must be >= 1");
    if (stride < 1) throw ConfigError("stride must be >= 1");
    if (dilation < 1) throw ConfigError("dilation must be >= 1");
    if (groups < 1 || c_in % groups != 0 || c_out % groups != 0)
      throw ConfigError("groups must divide c_in and c_out");
    if (soc_terms < 1) throw ConfigError("soc_terms must be >= 1");
    if (aol_steps < 1) throw ConfigError("aol_steps must be >= 1");
    if (transposed && padding_mode == PaddingMode::circular)
      throw ConfigError("circular padding is not supported for transposed convolutions");
    ortho.validate();
  }

  std::string describe() const {
    return "k=" + std::to_string(kernel_size) + " s=" + std::to_string(stride) + " d=" +
           std::to_string(dilation) + " g=" + std::to_string(groups) + " " + std::to_string(c_in) + "->" +
           std::to_string(c_out) + (padding_mode == PaddingMode::circular ? " circular" : " zero") +
           (transposed ? " transposed" : "");
  }
};

/// Spec used to apply a layer's kernel: "same"-style padding, output padding that makes a
/// transposed layer upsample by exactly the stride.
inline ConvSpec layer_spec(const ConvLayerConfig& cfg, const Tensor4& kernel) {
  ConvSpec spec;
  spec.with_stride(cfg.stride).with_dilation(cfg.dilation);
  spec.groups = cfg.groups;
  spec.padding_mode = cfg.padding_mode;
  spec.transposed = cfg.transposed;
  spec.padding = same_padding(kernel.kh(), kernel.kw(), cfg.dilation, cfg.dilation);
  if (cfg.transposed) spec.output_padding_h = spec.output_padding_w = cfg.stride - 1;
  return spec;
}

}  // namespace orthoconv::layers
