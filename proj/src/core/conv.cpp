#include "orthoconv/core/conv.hpp"

#include <algorithm>
#include <thread>
#include <vector>

#include "orthoconv/core/errors.hpp"

namespace orthoconv {

namespace {

int floor_mod(int a, int n) {
  const int r = a % n;
  return r < 0 ? r + n : r;
}

// For every (output position, tap) pair the input index it reads, or -1 when the tap lands
// in zero padding.
std::vector<int> tap_index_map(int out_len, int in_len, int k, int stride, int dilation, int pad_before,
                               PaddingMode mode) {
  std::vector<int> map(static_cast<std::size_t>(out_len) * k);
  for (int o = 0; o < out_len; ++o) {
    for (int t = 0; t < k; ++t) {
      const int raw = o * stride + t * dilation - pad_before;
      int idx = raw;
      if (mode == PaddingMode::circular) {
        idx = floor_mod(raw, in_len);
      } else if (raw < 0 || raw >= in_len) {
        idx = -1;
      }
      map[static_cast<std::size_t>(o) * k + t] = idx;
    }
  }
  return map;
}

void check_channels(const Tensor4& k, const ConvSpec& spec, int forward_in_channels) {
  if (k.c_out() % spec.groups != 0)
    throw ShapeError("kernel output channels " + std::to_string(k.c_out()) + " not divisible by groups " +
                     std::to_string(spec.groups));
  if (forward_in_channels != k.c_in() * spec.groups)
    throw ShapeError("input has " + std::to_string(forward_in_channels) + " channels, kernel " +
                     k.shape_string() + " with groups " + std::to_string(spec.groups) + " expects " +
                     std::to_string(k.c_in() * spec.groups));
}

MapShape forward_output_shape(const Tensor4& k, const ConvSpec& spec, MapShape in) {
  check_channels(k, spec, in.channels);
  const int span_h = in.height + spec.padding.top + spec.padding.bottom - spec.dilation_h * (k.kh() - 1) - 1;
  const int span_w = in.width + spec.padding.left + spec.padding.right - spec.dilation_w * (k.kw() - 1) - 1;
  if (span_h < 0 || span_w < 0)
    throw ShapeError("input " + std::to_string(in.height) + "x" + std::to_string(in.width) +
                     " smaller than the dilated kernel extent under the chosen padding");
  return {k.c_out(), span_h / spec.stride_h + 1, span_w / spec.stride_w + 1};
}

MapShape transposed_output_shape(const Tensor4& k, const ConvSpec& spec, MapShape in) {
  if (in.channels != k.c_out())
    throw ShapeError("transposed input has " + std::to_string(in.channels) + " channels, kernel " +
                     k.shape_string() + " expects " + std::to_string(k.c_out()));
  if (k.c_out() % spec.groups != 0) throw ShapeError("kernel output channels not divisible by groups");
  const int h = (in.height - 1) * spec.stride_h - spec.padding.top - spec.padding.bottom +
                spec.dilation_h * (k.kh() - 1) + 1 + spec.output_padding_h;
  const int w = (in.width - 1) * spec.stride_w - spec.padding.left - spec.padding.right +
                spec.dilation_w * (k.kw() - 1) + 1 + spec.output_padding_w;
  if (h < 1 || w < 1) throw ShapeError("transposed convolution output would be empty");
  return {k.c_in() * spec.groups, h, w};
}

// Visits every (weight, output element, input element) triple of the forward correlation.
template <class Fn>
void visit_taps(const Tensor4& k, const ConvSpec& spec, MapShape in, MapShape out, Fn&& fn) {
  const auto rows = tap_index_map(out.height, in.height, k.kh(), spec.stride_h, spec.dilation_h,
                                  spec.padding.top, spec.padding_mode);
  const auto cols = tap_index_map(out.width, in.width, k.kw(), spec.stride_w, spec.dilation_w,
                                  spec.padding.left, spec.padding_mode);
  const int out_per_group = k.c_out() / spec.groups;
  const int in_per_group = k.c_in();
  for (int o = 0; o < k.c_out(); ++o) {
    const int group = o / out_per_group;
    for (int il = 0; il < in_per_group; ++il) {
      const int ci = group * in_per_group + il;
      for (int ky = 0; ky < k.kh(); ++ky) {
        for (int kx = 0; kx < k.kw(); ++kx) {
          const double w = k(o, il, ky, kx);
          if (w == 0.0) continue;
          for (int oy = 0; oy < out.height; ++oy) {
            const int iy = rows[static_cast<std::size_t>(oy) * k.kh() + ky];
            if (iy < 0) continue;
            for (int ox = 0; ox < out.width; ++ox) {
              const int ix = cols[static_cast<std::size_t>(ox) * k.kw() + kx];
              if (ix < 0) continue;
              fn(w, o, oy, ox, ci, iy, ix);
            }
          }
        }
      }
    }
  }
}

ConvSpec as_forward(ConvSpec spec) {
  spec.transposed = false;
  return spec;
}

}  // namespace

void ConvSpec::validate() const {
  if (stride_h < 1 || stride_w < 1) throw ConfigError("stride must be >= 1");
  if (dilation_h < 1 || dilation_w < 1) throw ConfigError("dilation must be >= 1");
  if (groups < 1) throw ConfigError("groups must be >= 1");
  if (padding.top < 0 || padding.bottom < 0 || padding.left < 0 || padding.right < 0)
    throw ConfigError("padding must be non-negative");
  if (output_padding_h < 0 || output_padding_w < 0 || output_padding_h >= stride_h ||
      output_padding_w >= stride_w)
    throw ConfigError("output padding must lie in [0, stride)");
  if (transposed && padding_mode == PaddingMode::circular)
    throw ConfigError("circular padding is not supported for transposed convolutions");
}

Padding same_padding(int kh, int kw, int dilation_h, int dilation_w) {
  const int th = dilation_h * (kh - 1);
  const int tw = dilation_w * (kw - 1);
  return {th / 2, th - th / 2, tw / 2, tw - tw / 2};
}

Padding full_padding(int kh, int kw, int dilation_h, int dilation_w) {
  const int th = dilation_h * (kh - 1);
  const int tw = dilation_w * (kw - 1);
  return {th, th, tw, tw};
}

MapShape conv_output_shape(const Tensor4& k, const ConvSpec& spec, MapShape in) {
  spec.validate();
  return spec.transposed ? transposed_output_shape(k, spec, in) : forward_output_shape(k, spec, in);
}

FeatureMap conv2d_forward(const FeatureMap& x, const Tensor4& k, const ConvSpec& spec) {
  spec.validate();
  if (spec.transposed) throw ConfigError("conv2d_forward called with a transposed spec");
  const MapShape in = shape_of(x);
  const MapShape out = forward_output_shape(k, spec, in);
  FeatureMap y(out.channels, out.height, out.width);
  visit_taps(k, spec, in, out, [&](double w, int o, int oy, int ox, int ci, int iy, int ix) {
    y(o, oy, ox) += w * x(ci, iy, ix);
  });
  return y;
}

FeatureMap conv2d_adjoint(const FeatureMap& y, const Tensor4& k, const ConvSpec& spec, MapShape in_shape) {
  const ConvSpec fwd = as_forward(spec);
  fwd.validate();
  const MapShape out = forward_output_shape(k, fwd, in_shape);
  if (shape_of(y) != out)
    throw ShapeError("adjoint input " + y.shape_string() + " does not match forward output shape");
  FeatureMap x(in_shape.channels, in_shape.height, in_shape.width);
  visit_taps(k, fwd, in_shape, out, [&](double w, int o, int oy, int ox, int ci, int iy, int ix) {
    x(ci, iy, ix) += w * y(o, oy, ox);
  });
  return x;
}

FeatureMap conv_transpose2d_forward(const FeatureMap& x, const Tensor4& k, const ConvSpec& spec) {
  if (!spec.transposed) throw ConfigError("conv_transpose2d_forward requires spec.transposed = true");
  spec.validate();
  const MapShape out = transposed_output_shape(k, spec, shape_of(x));
  return conv2d_adjoint(x, k, spec, out);
}

FeatureMap apply_conv(const FeatureMap& x, const Tensor4& k, const ConvSpec& spec) {
  return spec.transposed ? conv_transpose2d_forward(x, k, spec) : conv2d_forward(x, k, spec);
}

Tensor4 adjoint_kernel(const Tensor4& k, int groups) {
  if (groups < 1 || k.c_out() % groups != 0) throw ShapeError("adjoint_kernel: groups do not divide c_out");
  const int out_per_group = k.c_out() / groups;
  Tensor4 adj(k.c_in() * groups, out_per_group, k.kh(), k.kw());
  for (int o = 0; o < k.c_out(); ++o) {
    const int group = o / out_per_group;
    const int ol = o % out_per_group;
    for (int il = 0; il < k.c_in(); ++il)
      for (int y = 0; y < k.kh(); ++y)
        for (int x = 0; x < k.kw(); ++x)
          adj(group * k.c_in() + il, ol, k.kh() - 1 - y, k.kw() - 1 - x) = k(o, il, y, x);
  }
  return adj;
}

ConvSpec adjoint_spec(const Tensor4& k, const ConvSpec& spec) {
  spec.validate();
  if (spec.transposed || spec.stride_h != 1 || spec.stride_w != 1)
    throw ConfigError("adjoint_spec requires a stride-1 forward convolution");
  const int eh = spec.dilation_h * (k.kh() - 1);
  const int ew = spec.dilation_w * (k.kw() - 1);
  if (spec.padding.top + spec.padding.bottom != eh || spec.padding.left + spec.padding.right != ew)
    throw ConfigError("adjoint_spec requires size-preserving padding");
  ConvSpec adj = spec;
  adj.padding = {eh - spec.padding.top, eh - spec.padding.bottom, ew - spec.padding.left,
                 ew - spec.padding.right};
  return adj;
}

Eigen::MatrixXd toeplitz_assemble(const Tensor4& k, const ConvSpec& spec, MapShape in_shape,
                                  unsigned threads) {
  const MapShape out = conv_output_shape(k, spec, in_shape);
  // Work on the forward correlation F; a transposed spec is its adjoint F^T.
  const MapShape f_in = spec.transposed ? out : in_shape;
  const MapShape f_out = spec.transposed ? in_shape : out;
  const ConvSpec fwd = as_forward(spec);
  const auto n_cols = static_cast<Eigen::Index>(in_shape.size());
  const auto n_rows = static_cast<Eigen::Index>(out.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_rows, n_cols);

  const auto rows = tap_index_map(f_out.height, f_in.height, k.kh(), fwd.stride_h, fwd.dilation_h, fwd.padding.top,
                                  fwd.padding_mode);
  const auto cols = tap_index_map(f_out.width, f_in.width, k.kw(), fwd.stride_w, fwd.dilation_w, fwd.padding.left,
                                  fwd.padding_mode);
  // inv[t][i]: output positions whose tap t reads input position i.
  auto invert = [](const std::vector<int>& map, int out_len, int in_len, int taps) {
    std::vector<std::vector<std::vector<int>>> inv(static_cast<std::size_t>(taps),
                                                   std::vector<std::vector<int>>(static_cast<std::size_t>(in_len)));
    for (int o = 0; o < out_len; ++o)
      for (int t = 0; t < taps; ++t) {
        const int i = map[static_cast<std::size_t>(o) * taps + t];
        if (i >= 0) inv[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)].push_back(o);
      }
    return inv;
  };
  const auto rows_inv = invert(rows, f_out.height, f_in.height, k.kh());
  const auto cols_inv = invert(cols, f_out.width, f_in.width, k.kw());
  const int out_per_group = k.c_out() / spec.groups;
  const int in_per_group = k.c_in();
  auto f_index = [](MapShape s, int c, int y, int x) {
    return (static_cast<Eigen::Index>(c) * s.height + y) * s.width + x;
  };

  // Column j is the response to a unit impulse at input element j.
  auto fill = [&](Eigen::Index begin, Eigen::Index end) {
    for (Eigen::Index j = begin; j < end; ++j) {
      const MapShape src = spec.transposed ? f_out : f_in;
      const int c = static_cast<int>(j / (static_cast<Eigen::Index>(src.height) * src.width));
      const int y = static_cast<int>((j / src.width) % src.height);
      const int x = static_cast<int>(j % src.width);
      if (!spec.transposed) {
        const int group = c / in_per_group;
        const int il = c % in_per_group;
        for (int ol = 0; ol < out_per_group; ++ol) {
          const int o = group * out_per_group + ol;
          for (int ty = 0; ty < k.kh(); ++ty)
            for (int oy : rows_inv[static_cast<std::size_t>(ty)][static_cast<std::size_t>(y)])
              for (int tx = 0; tx < k.kw(); ++tx)
                for (int ox : cols_inv[static_cast<std::size_t>(tx)][static_cast<std::size_t>(x)])
                  m(f_index(f_out, o, oy, ox), j) += k(o, il, ty, tx);
        }
      } else {
        // Impulse on F's output channel c at (y, x): the response is row (c, y, x) of F.
        const int group = c / out_per_group;
        for (int il = 0; il < in_per_group; ++il) {
          const int ci = group * in_per_group + il;
          for (int ty = 0; ty < k.kh(); ++ty) {
            const int iy = rows[static_cast<std::size_t>(y) * k.kh() + ty];
            if (iy < 0) continue;
            for (int tx = 0; tx < k.kw(); ++tx) {
              const int ix = cols[static_cast<std::size_t>(x) * k.kw() + tx];
              if (ix < 0) continue;
              m(f_index(f_in, ci, iy, ix), j) += k(c, il, ty, tx);
            }
          }
        }
      }
    }
  };

  unsigned workers = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
  workers = static_cast<unsigned>(std::min<Eigen::Index>(workers, std::max<Eigen::Index>(1, n_cols)));
  if (workers <= 1) {
    fill(0, n_cols);
    return m;
  }
  std::vector<std::jthread> pool;
  const Eigen::Index chunk = (n_cols + workers - 1) / workers;
  for (unsigned t = 0; t < workers; ++t) {
    const Eigen::Index begin = t * chunk;
    const Eigen::Index end = std::min(n_cols, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(fill, begin, end);
  }
  pool.clear();  // joins
  return m;
}

}  // namespace orthoconv
