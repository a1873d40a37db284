#include "orthoconv/layers/layers.hpp"

#include <algorithm>
#include <cmath>

#include "orthoconv/core/errors.hpp"
#include "orthoconv/verify/existence.hpp"

namespace orthoconv::layers {

namespace {

void require_existence(const ConvLayerConfig& cfg) {
  const auto verdict = verify::existence_check(cfg);
  if (!verdict.accepted) throw ConfigError("configuration rejected: " + verdict.reason);
}

void add_noise(Matrix& m, double magnitude, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += magnitude * n(rng);
}

// Copies `src` into `dst` with its spatial origin shifted by (dy, dx).
void add_embedded(Tensor4& dst, const Tensor4& src, int dy, int dx) {
  for (int o = 0; o < src.c_out(); ++o)
    for (int i = 0; i < src.c_in(); ++i)
      for (int y = 0; y < src.kh(); ++y)
        for (int x = 0; x < src.kw(); ++x) dst(o, i, y + dy, x + dx) += src(o, i, y, x);
}

Tensor4 matrix_kernel(const Matrix& m) {
  Tensor4 k(static_cast<int>(m.rows()), static_cast<int>(m.cols()), 1, 1);
  for (int o = 0; o < k.c_out(); ++o)
    for (int i = 0; i < k.c_in(); ++i) k(o, i, 0, 0) = m(o, i);
  return k;
}

Tensor4 projector_kernel(const Matrix& u, bool horizontal) {
  const auto c = static_cast<int>(u.rows());
  const Matrix p = u * u.transpose();
  const Matrix q = Matrix::Identity(c, c) - p;
  Tensor4 k(c, c, horizontal ? 1 : 2, horizontal ? 2 : 1);
  for (int o = 0; o < c; ++o) {
    for (int i = 0; i < c; ++i) {
      k(o, i, 0, 0) = p(o, i);
      if (horizontal) {
        k(o, i, 0, 1) = q(o, i);
      } else {
        k(o, i, 1, 0) = q(o, i);
      }
    }
  }
  return k;
}

int input_channels(const Tensor4& k, int groups) { return k.c_in() * groups; }

void check_groups(const Tensor4& k, int groups) {
  if (groups < 1 || k.c_out() % groups != 0) throw ShapeError("groups do not divide the kernel output channels");
}

}  // namespace

// ---------------------------------------------------------------------------------------------

Matrix random_matrix(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double scale = cols > 0 ? 1.0 / std::sqrt(static_cast<double>(cols)) : 1.0;
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = scale * n(rng);
  return m;
}

Tensor4 random_kernel(int c_out, int c_in, int kh, int kw, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor4 k(c_out, c_in, kh, kw);
  const double scale = 1.0 / std::sqrt(static_cast<double>(c_in) * kh * kw);
  for (double& v : k.values()) v = scale * n(rng);
  return k;
}

BcopParams random_bcop_params(int channels, int kernel_size, Rng& rng) {
  BcopParams p;
  p.q = random_matrix(channels, channels, rng);
  for (int j = 0; j < 2 * (kernel_size - 1); ++j) p.projectors.push_back(random_matrix(channels, channels / 2, rng));
  return p;
}

RkoParams random_rko_params(int c_in, int c_out, int stride, Rng& rng) {
  return {random_matrix(c_out, c_in * stride * stride, rng)};
}

AocParams random_aoc_params(const ConvLayerConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.kernel_size < cfg.stride) throw ConfigError("AOC requires kernel_size >= stride");
  const int cin = cfg.kernel_in() / cfg.groups;
  const int cout = cfg.kernel_out() / cfg.groups;
  AocParams p;
  for (int g = 0; g < cfg.groups; ++g) {
    p.bcop.push_back(random_bcop_params(cin, cfg.kernel_size - cfg.stride + 1, rng));
    p.rko.push_back(random_rko_params(cin, cout, cfg.stride, rng));
  }
  return p;
}

SocParams random_soc_params(const ConvLayerConfig& cfg, Rng& rng) {
  cfg.validate();
  const int cin = cfg.kernel_in() / cfg.groups;
  const int cout = cfg.kernel_out() / cfg.groups;
  SocParams p;
  p.kernel = random_kernel(cfg.kernel_in(), cin, cfg.kernel_size, cfg.kernel_size, rng);
  if (cin != cout || cfg.stride != 1) {
    for (int g = 0; g < cfg.groups; ++g) p.rko.push_back(random_rko_params(cin, cout, cfg.stride, rng));
  }
  return p;
}

SllParams random_sll_params(int channels, int kernel_size, Rng& rng, int groups) {
  SllParams p;
  p.kernel = random_kernel(channels, channels / groups, kernel_size, kernel_size, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (int c = 0; c < channels; ++c) {
    p.bias.push_back(0.1 * n(rng));
    p.q.push_back(u(rng));
  }
  return p;
}

void perturb(AocParams& p, double magnitude, Rng& rng) {
  for (auto& b : p.bcop) {
    add_noise(b.q, magnitude, rng);
    for (auto& m : b.projectors) add_noise(m, magnitude, rng);
  }
  for (auto& r : p.rko) add_noise(r.w, magnitude, rng);
}

void perturb(Tensor4& k, double magnitude, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : k.values()) v += magnitude * n(rng);
}

void perturb(SocParams& p, double magnitude, Rng& rng) {
  perturb(p.kernel, magnitude, rng);
  for (auto& r : p.rko) add_noise(r.w, magnitude, rng);
}

void perturb(SllParams& p, double magnitude, Rng& rng) {
  perturb(p.kernel, magnitude, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& b : p.bias) b += magnitude * n(rng);
  for (double& q : p.q) q = std::max(1e-3, q + magnitude * n(rng));
}

// ---------------------------------------------------------------------------------------------

Tensor4 block_conv_fuse(const Tensor4& outer, const Tensor4& inner, int groups) {
  if (groups < 1 || outer.c_out() % groups != 0 || inner.c_out() % groups != 0)
    throw ShapeError("block_conv_fuse: groups do not divide the channel counts");
  if (outer.c_in() * groups != inner.c_out())
    throw ShapeError("block_conv_fuse: outer kernel " + outer.shape_string() + " cannot consume inner kernel " +
                     inner.shape_string());
  const int out_per_group = outer.c_out() / groups;
  const int mid_per_group = outer.c_in();
  Tensor4 fused(outer.c_out(), inner.c_in(), outer.kh() + inner.kh() - 1, outer.kw() + inner.kw() - 1);
  for (int o = 0; o < outer.c_out(); ++o) {
    const int group = o / out_per_group;
    for (int ml = 0; ml < mid_per_group; ++ml) {
      const int m = group * mid_per_group + ml;
      for (int ly = 0; ly < outer.kh(); ++ly) {
        for (int lx = 0; lx < outer.kw(); ++lx) {
          const double a = outer(o, ml, ly, lx);
          if (a == 0.0) continue;
          for (int c = 0; c < inner.c_in(); ++c)
            for (int ky = 0; ky < inner.kh(); ++ky)
              for (int kx = 0; kx < inner.kw(); ++kx) fused(o, c, ly + ky, lx + kx) += a * inner(m, c, ky, kx);
        }
      }
    }
  }
  return fused;
}

Tensor4 stack_groups(const std::vector<Tensor4>& per_group) {
  if (per_group.empty()) throw ShapeError("stack_groups: no groups");
  const Tensor4& first = per_group.front();
  Tensor4 out(first.c_out() * static_cast<int>(per_group.size()), first.c_in(), first.kh(), first.kw());
  for (std::size_t g = 0; g < per_group.size(); ++g) {
    const Tensor4& k = per_group[g];
    if (k.dims() != first.dims()) throw ShapeError("stack_groups: group kernels differ in shape");
    std::copy(k.values().begin(), k.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(g * k.size()));
  }
  return out;
}

Tensor4 group_slice(const Tensor4& k, int groups, int g) {
  check_groups(k, groups);
  const int per = k.c_out() / groups;
  Tensor4 out(per, k.c_in(), k.kh(), k.kw());
  const std::size_t block = out.size();
  std::copy_n(k.values().begin() + static_cast<std::ptrdiff_t>(g * block), block, out.values().begin());
  return out;
}

Matrix semi_orthogonalize(const Matrix& w, const dense::OrthoParams& ortho) {
  if (ortho.method == dense::OrthoMethod::exp && w.rows() != w.cols()) {
    const Eigen::Index n = std::max(w.rows(), w.cols());
    Matrix square = Matrix::Zero(n, n);
    square.topLeftCorner(w.rows(), w.cols()) = w;
    return dense::exp_orthogonalize(square, ortho.exp_terms, ortho.power_iters).topLeftCorner(w.rows(), w.cols());
  }
  return dense::orthogonalize(w, ortho);
}

// ---------------------------------------------------------------------------------------------

Tensor4 bcop_kernel(const BcopParams& params, int c, int k, const dense::OrthoParams& ortho) {
  if (c < 1 || k < 1) throw ShapeError("bcop_kernel: channels and kernel size must be >= 1");
  if (k > 1 && c < 2) throw ShapeError("bcop_kernel: k > 1 needs at least two channels");
  if (params.q.rows() != c || params.q.cols() != c) throw ShapeError("bcop_kernel: Q must be c x c");
  if (static_cast<int>(params.projectors.size()) != 2 * (k - 1))
    throw ShapeError("bcop_kernel: expected " + std::to_string(2 * (k - 1)) + " projector matrices");
  Tensor4 kernel = matrix_kernel(semi_orthogonalize(params.q, ortho));
  for (int j = 0; j < 2 * (k - 1); ++j) {
    const Matrix& w = params.projectors[static_cast<std::size_t>(j)];
    if (w.rows() != c || w.cols() != c / 2) throw ShapeError("bcop_kernel: projector matrices must be c x floor(c/2)");
    kernel = block_conv_fuse(projector_kernel(semi_orthogonalize(w, ortho), j < k - 1), kernel);
  }
  return kernel;
}

Tensor4 rko_kernel(const RkoParams& params, int c_in, int c_out, int s, const dense::OrthoParams& ortho) {
  if (c_in < 1 || c_out < 1 || s < 1) throw ShapeError("rko_kernel: invalid dimensions");
  if (params.w.rows() != c_out || params.w.cols() != c_in * s * s)
    throw ShapeError("rko_kernel: free matrix must be c_out x (c_in * s^2)");
  const Matrix r = semi_orthogonalize(params.w, ortho);
  Tensor4 k(c_out, c_in, s, s);
  for (int o = 0; o < c_out; ++o)
    for (int i = 0; i < c_in; ++i)
      for (int a = 0; a < s; ++a)
        for (int b = 0; b < s; ++b) k(o, i, a, b) = r(o, (i * s + a) * s + b);
  return k;
}

Tensor4 aoc_kernel(const AocParams& params, const ConvLayerConfig& cfg) {
  cfg.validate();
  require_existence(cfg);
  const int g = cfg.groups;
  const int s = cfg.stride;
  if (static_cast<int>(params.bcop.size()) != g || static_cast<int>(params.rko.size()) != g)
    throw ShapeError("aoc_kernel: expected one BCOP and one RKO factor per group");
  const int cin = cfg.kernel_in() / g;
  const int cout = cfg.kernel_out() / g;
  std::vector<Tensor4> per_group;
  for (int grp = 0; grp < g; ++grp) {
    const Tensor4 bcop = bcop_kernel(params.bcop[static_cast<std::size_t>(grp)], cin, cfg.kernel_size - s + 1, cfg.ortho);
    const Tensor4 rko = rko_kernel(params.rko[static_cast<std::size_t>(grp)], cin, cout, s, cfg.ortho);
    per_group.push_back(block_conv_fuse(rko, bcop));
  }
  return stack_groups(per_group);
}

// ---------------------------------------------------------------------------------------------

Tensor4 skew_symmetrize(const Tensor4& k, int groups) {
  check_groups(k, groups);
  if (k.c_out() / groups != k.c_in()) throw ShapeError("skew_symmetrize: kernel must be square within each group");
  const int kh = k.kh() % 2 == 0 ? k.kh() + 1 : k.kh();
  const int kw = k.kw() % 2 == 0 ? k.kw() + 1 : k.kw();
  Tensor4 padded(k.c_out(), k.c_in(), kh, kw);
  add_embedded(padded, k, 0, 0);
  const int per = k.c_in();
  Tensor4 skew(k.c_out(), per, kh, kw);
  for (int a = 0; a < k.c_out(); ++a) {
    const int base = (a / per) * per;
    const int al = a - base;
    for (int bl = 0; bl < per; ++bl)
      for (int y = 0; y < kh; ++y)
        for (int x = 0; x < kw; ++x)
          skew(a, bl, y, x) = 0.5 * (padded(a, bl, y, x) - padded(base + bl, al, kh - 1 - y, kw - 1 - x));
  }
  return skew;
}

std::vector<double> aol_channel_bounds(const Tensor4& k, int groups) {
  check_groups(k, groups);
  const Tensor4 gram = block_conv_fuse(adjoint_kernel(k, groups), k, groups);
  std::vector<double> d(static_cast<std::size_t>(gram.c_out()), 0.0);
  for (int i = 0; i < gram.c_out(); ++i) {
    double sum = 0.0;
    for (int j = 0; j < gram.c_in(); ++j)
      for (int y = 0; y < gram.kh(); ++y)
        for (int x = 0; x < gram.kw(); ++x) sum += std::abs(gram(i, j, y, x));
    d[static_cast<std::size_t>(i)] = sum;
  }
  return d;
}

Tensor4 soc_generator(const Tensor4& free_kernel, int groups) {
  Tensor4 skew = skew_symmetrize(free_kernel, groups);
  const auto d = aol_channel_bounds(skew, groups);
  const double bound = *std::max_element(d.begin(), d.end());
  // A uniform scalar keeps the kernel skew; per-channel AOL scaling would not.
  if (bound > 0.0) skew *= 1.0 / std::sqrt(bound);
  return skew;
}

Tensor4 soc_series_kernel(const Tensor4& generator, int terms, int groups) {
  if (terms < 1) throw ConfigError("soc series needs at least one term");
  check_groups(generator, groups);
  if (generator.kh() % 2 == 0 || generator.kw() % 2 == 0) throw ShapeError("soc generator must have odd size");
  const int kh = terms * (generator.kh() - 1) + 1;
  const int kw = terms * (generator.kw() - 1) + 1;
  const int per = generator.c_in();
  Tensor4 out(generator.c_out(), per, kh, kw);
  for (int o = 0; o < generator.c_out(); ++o) out(o, o % per, kh / 2, kw / 2) = 1.0;
  Tensor4 term = generator;
  for (int j = 1; j <= terms; ++j) {
    if (j > 1) {
      term = block_conv_fuse(generator, term, groups);
      term *= 1.0 / j;
    }
    add_embedded(out, term, (kh - term.kh()) / 2, (kw - term.kw()) / 2);
  }
  return out;
}

FeatureMap soc_implicit_apply(const FeatureMap& x, const Tensor4& generator, int terms, const ConvSpec& spec) {
  if (terms < 1) throw ConfigError("soc series needs at least one term");
  FeatureMap acc = x;
  FeatureMap term = x;
  for (int j = 1; j <= terms; ++j) {
    term = apply_conv(term, generator, spec);
    term *= 1.0 / j;
    acc += term;
  }
  return acc;
}

Tensor4 soc_explicit_kernel(const SocParams& params, const ConvLayerConfig& cfg) {
  cfg.validate();
  require_existence(cfg);
  const int g = cfg.groups;
  const int cin = cfg.kernel_in() / g;
  const int cout = cfg.kernel_out() / g;
  if (params.kernel.c_out() != cfg.kernel_in() || params.kernel.c_in() != cin)
    throw ShapeError("soc_explicit_kernel: free kernel must be square per group on the input channels");
  const Tensor4 series = soc_series_kernel(soc_generator(params.kernel, g), cfg.soc_terms, g);
  if (cin == cout && cfg.stride == 1) return series;
  if (static_cast<int>(params.rko.size()) != g)
    throw ShapeError("soc_explicit_kernel: stride or channel change needs one RKO factor per group");
  std::vector<Tensor4> per_group;
  for (int grp = 0; grp < g; ++grp) {
    const Tensor4 rko = rko_kernel(params.rko[static_cast<std::size_t>(grp)], cin, cout, cfg.stride, cfg.ortho);
    per_group.push_back(block_conv_fuse(rko, group_slice(series, g, grp)));
  }
  return stack_groups(per_group);
}

// ---------------------------------------------------------------------------------------------

Tensor4 aol_rescale(const Tensor4& k, int steps, int groups) {
  if (steps < 1) throw ConfigError("aol_rescale needs steps >= 1");
  check_groups(k, groups);
  Tensor4 out = k;
  const int per_out = k.c_out() / groups;
  for (int step = 0; step < steps; ++step) {
    const auto d = aol_channel_bounds(out, groups);
    for (int o = 0; o < out.c_out(); ++o) {
      const int base = (o / per_out) * out.c_in();
      for (int il = 0; il < out.c_in(); ++il) {
        const double di = d[static_cast<std::size_t>(base + il)];
        if (di <= 0.0) continue;
        const double f = 1.0 / std::sqrt(di);
        for (int y = 0; y < out.kh(); ++y)
          for (int x = 0; x < out.kw(); ++x) out(o, il, y, x) *= f;
      }
    }
  }
  return out;
}

Tensor4 sll_rescale(const Tensor4& k, const std::vector<double>& q, int groups) {
  check_groups(k, groups);
  if (static_cast<int>(q.size()) != k.c_out()) throw ShapeError("sll_rescale: q must have one entry per hidden channel");
  for (double v : q)
    if (!(v > 0.0)) throw ConfigError("sll_rescale: q must be positive");
  const Tensor4 gram = block_conv_fuse(k, adjoint_kernel(k, groups), groups);
  const int per = gram.c_in();
  Tensor4 out = k;
  for (int i = 0; i < gram.c_out(); ++i) {
    const int base = (i / per) * per;
    double t = 0.0;
    for (int jl = 0; jl < per; ++jl) {
      double s = 0.0;
      for (int y = 0; y < gram.kh(); ++y)
        for (int x = 0; x < gram.kw(); ++x) s += std::abs(gram(i, jl, y, x));
      t += s * q[static_cast<std::size_t>(base + jl)] / q[static_cast<std::size_t>(i)];
    }
    if (t <= 0.0) continue;
    const double f = 1.0 / std::sqrt(t);
    for (int c = 0; c < out.c_in(); ++c)
      for (int y = 0; y < out.kh(); ++y)
        for (int x = 0; x < out.kw(); ++x) out(i, c, y, x) *= f;
  }
  return out;
}

double relu(double v) { return v > 0.0 ? v : 0.0; }

ConvSpec circular_same_spec(const Tensor4& k, int dilation, int groups) {
  ConvSpec spec;
  spec.with_dilation(dilation);
  spec.groups = groups;
  spec.padding_mode = PaddingMode::circular;
  spec.padding = same_padding(k.kh(), k.kw(), dilation, dilation);
  return spec;
}

FeatureMap sll_forward(const FeatureMap& x, const Tensor4& k, const std::vector<double>& bias, const ConvSpec& spec,
                       const Activation& sigma) {
  if (spec.transposed || spec.stride_h != 1 || spec.stride_w != 1) throw ConfigError("sll_forward needs a stride-1 spec");
  if (static_cast<int>(bias.size()) != k.c_out()) throw ShapeError("sll_forward: bias must have one entry per hidden channel");
  FeatureMap z = conv2d_forward(x, k, spec);
  for (int c = 0; c < z.channels(); ++c)
    for (int y = 0; y < z.height(); ++y)
      for (int w = 0; w < z.width(); ++w) z(c, y, w) = sigma(z(c, y, w) + bias[static_cast<std::size_t>(c)]);
  FeatureMap back = conv2d_adjoint(z, k, spec, shape_of(x));
  back *= -2.0;
  back += x;
  return back;
}

SllAocKernels fuse_sll_aoc(const Tensor4& k, const Tensor4& k_pre, const Tensor4& k_post, int stride) {
  if (k.c_in() != k_pre.c_out()) throw ShapeError("fuse_sll_aoc: SLL kernel input must match K_pre output channels");
  if (k_post.c_in() != k_pre.c_out()) throw ShapeError("fuse_sll_aoc: K_post input must match the SLL width");
  const ConvSpec pre = circular_same_spec(k_pre);
  const ConvSpec mid = circular_same_spec(k);
  const ConvSpec mid_adj = adjoint_spec(k, mid);
  ConvSpec post = circular_same_spec(k_post);
  post.with_stride(stride);

  auto summed = [](const ConvSpec& outer, const ConvSpec& inner) {
    ConvSpec s = outer;
    s.padding = {outer.padding.top + inner.padding.top, outer.padding.bottom + inner.padding.bottom,
                 outer.padding.left + inner.padding.left, outer.padding.right + inner.padding.right};
    return s;
  };

  SllAocKernels f;
  f.skip = block_conv_fuse(k_post, k_pre);
  f.skip_spec = summed(post, pre);
  f.inner = block_conv_fuse(k, k_pre);
  f.inner_spec = summed(mid, pre);
  f.outer = block_conv_fuse(k_post, adjoint_kernel(k));
  f.outer_spec = summed(post, mid_adj);
  return f;
}

FeatureMap sll_aoc_block(const FeatureMap& x, const SllAocKernels& fused, const std::vector<double>& bias,
                         const Activation& sigma) {
  if (static_cast<int>(bias.size()) != fused.inner.c_out()) throw ShapeError("sll_aoc_block: bias size mismatch");
  FeatureMap z = conv2d_forward(x, fused.inner, fused.inner_spec);
  for (int c = 0; c < z.channels(); ++c)
    for (int y = 0; y < z.height(); ++y)
      for (int w = 0; w < z.width(); ++w) z(c, y, w) = sigma(z(c, y, w) + bias[static_cast<std::size_t>(c)]);
  FeatureMap out = conv2d_forward(x, fused.skip, fused.skip_spec);
  FeatureMap branch = conv2d_forward(z, fused.outer, fused.outer_spec);
  branch *= -2.0;
  out += branch;
  return out;
}

ConvLayerConfig sandwich_config(int c_in, int c_out, int hidden, int kernel_size, const dense::OrthoParams& ortho) {
  ConvLayerConfig cfg;
  cfg.c_in = c_out + c_in;
  cfg.c_out = hidden;
  cfg.kernel_size = kernel_size;
  cfg.padding_mode = PaddingMode::circular;
  cfg.ortho = ortho;
  return cfg;
}

SandwichKernels sandwich_kernels(const AocParams& params, int c_in, int c_out, int hidden, int kernel_size,
                                 const dense::OrthoParams& ortho) {
  if (hidden > c_in + c_out) throw ConfigError("sandwich: hidden width must not exceed c_in + c_out");
  const Tensor4 k = aoc_kernel(params, sandwich_config(c_in, c_out, hidden, kernel_size, ortho));
  SandwichKernels out{Tensor4(hidden, c_out, k.kh(), k.kw()), Tensor4(hidden, c_in, k.kh(), k.kw())};
  for (int o = 0; o < hidden; ++o)
    for (int i = 0; i < c_out + c_in; ++i)
      for (int y = 0; y < k.kh(); ++y)
        for (int x = 0; x < k.kw(); ++x) {
          if (i < c_out) {
            out.a(o, i, y, x) = k(o, i, y, x);
          } else {
            out.b(o, i - c_out, y, x) = k(o, i, y, x);
          }
        }
  return out;
}

FeatureMap sandwich_aoc_forward(const FeatureMap& h, const SandwichKernels& k, const std::vector<double>& d,
                                const std::vector<double>& bias, const ConvSpec& spec, const Activation& sigma) {
  if (k.a.c_out() != k.b.c_out()) throw ShapeError("sandwich: K_A and K_B hidden widths differ");
  const int q = k.b.c_out();
  if (static_cast<int>(d.size()) != q || static_cast<int>(bias.size()) != q)
    throw ShapeError("sandwich: d and b need one entry per hidden channel");
  const double r2 = std::sqrt(2.0);
  FeatureMap u = conv2d_forward(h, k.b, spec);
  for (int c = 0; c < q; ++c) {
    const double psi = std::exp(d[static_cast<std::size_t>(c)]);
    for (int y = 0; y < u.height(); ++y)
      for (int x = 0; x < u.width(); ++x)
        u(c, y, x) = psi * sigma(r2 / psi * u(c, y, x) + bias[static_cast<std::size_t>(c)]);
  }
  FeatureMap out = conv2d_adjoint(u, k.a, spec, {input_channels(k.a, spec.groups), h.height(), h.width()});
  out *= r2;
  return out;
}

}  // namespace orthoconv::layers

namespace orthoconv::layers {

ConvLayer make_aoc_layer(const AocParams& params, const ConvLayerConfig& cfg) {
  Tensor4 k = aoc_kernel(params, cfg);
  ConvSpec spec = layer_spec(cfg, k);
  return {cfg, std::move(k), spec};
}

ConvLayer make_soc_layer(const SocParams& params, const ConvLayerConfig& cfg) {
  Tensor4 k = soc_explicit_kernel(params, cfg);
  ConvSpec spec = layer_spec(cfg, k);
  return {cfg, std::move(k), spec};
}

}  // namespace orthoconv::layers
