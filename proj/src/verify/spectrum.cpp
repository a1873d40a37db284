#include "orthoconv/verify/spectrum.hpp"

#include <fftw3.h>
#define LAPACK_COMPLEX_CPP
#include <lapacke.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <mutex>
#include <random>
#include <string>

#include "orthoconv/core/errors.hpp"
#include "orthoconv/layers/layers.hpp"

namespace orthoconv::verify {

namespace {

using Clock = std::chrono::steady_clock;
using cd = std::complex<double>;

// Descending singular values via LAPACK divide and conquer.
Eigen::VectorXd singular_values(Eigen::MatrixXd m) {
  const lapack_int rows = static_cast<lapack_int>(m.rows()), cols = static_cast<lapack_int>(m.cols());
  Eigen::VectorXd s(std::min(rows, cols));
  if (s.size() == 0) return s;
  double dummy = 0.0;
  const lapack_int info = LAPACKE_dgesdd(LAPACK_COL_MAJOR, 'N', rows, cols, m.data(), std::max<lapack_int>(1, rows),
                                         s.data(), &dummy, 1, &dummy, 1);
  if (info != 0) throw NumericalError("dgesdd failed with info " + std::to_string(info));
  return s;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// FFTW planning is not thread-safe; execution on fresh arrays is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class Fft2 {
 public:
  Fft2(int h, int w, int sign) : size_(static_cast<std::size_t>(h) * w) {
    std::vector<cd> a(size_), b(size_);
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_2d(h, w, reinterpret_cast<fftw_complex*>(a.data()), reinterpret_cast<fftw_complex*>(b.data()),
                             sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!plan_) throw NumericalError("FFTW planning failed");
  }
  Fft2(const Fft2&) = delete;
  Fft2& operator=(const Fft2&) = delete;
  ~Fft2() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }

  void run(std::vector<cd>& in, std::vector<cd>& out) const {
    out.resize(size_);
    fftw_execute_dft(plan_, reinterpret_cast<fftw_complex*>(in.data()), reinterpret_cast<fftw_complex*>(out.data()));
  }

 private:
  std::size_t size_;
  fftw_plan plan_ = nullptr;
};

SpectrumReport finish(SpectrumReport r, Clock::time_point t0) {
  if (!r.all_values.empty()) {
    std::sort(r.all_values.begin(), r.all_values.end(), std::greater<>());
    r.sigma_max = r.all_values.front();
    r.sigma_min = r.all_values.back();
  }
  r.elapsed = seconds_since(t0);
  r.judge();
  return r;
}

Tensor4 dilate(const Tensor4& k, int dh, int dw) {
  if (dh == 1 && dw == 1) return k;
  Tensor4 out(k.c_out(), k.c_in(), dh * (k.kh() - 1) + 1, dw * (k.kw() - 1) + 1);
  for (int o = 0; o < k.c_out(); ++o)
    for (int i = 0; i < k.c_in(); ++i)
      for (int y = 0; y < k.kh(); ++y)
        for (int x = 0; x < k.kw(); ++x) out(o, i, y * dh, x * dw) = k(o, i, y, x);
  return out;
}

// Stride-s correlation on c_in channels == stride-1 correlation on the c_in * sh * sw phases.
Tensor4 polyphase(const Tensor4& k, int sh, int sw) {
  if (sh == 1 && sw == 1) return k;
  const int kh = (k.kh() + sh - 1) / sh;
  const int kw = (k.kw() + sw - 1) / sw;
  Tensor4 out(k.c_out(), k.c_in() * sh * sw, kh, kw);
  for (int o = 0; o < k.c_out(); ++o)
    for (int i = 0; i < k.c_in(); ++i)
      for (int y = 0; y < k.kh(); ++y)
        for (int x = 0; x < k.kw(); ++x) out(o, (i * sh + y % sh) * sw + x % sw, y / sh, x / sw) = k(o, i, y, x);
  return out;
}

double spectral_norm(const Eigen::MatrixXd& m) {
  if (m.rows() == 1 || m.cols() == 1) return m.norm();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

// Upper bound on the spectral norms of a square channel-by-channel tap array summed over taps.
// `taps(i, j, y, x)`. Taps too small to matter contribute their Frobenius norm instead.
template <class Get>
double tap_norm_sum(int c, int lh, int lw, Get&& get) {
  const std::size_t n = static_cast<std::size_t>(lh) * lw;
  std::vector<double> fro(n, 0.0);
  double total = 0.0;
  for (int y = 0; y < lh; ++y)
    for (int x = 0; x < lw; ++x) {
      double s = 0.0;
      for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) {
          const double v = get(i, j, y, x);
          s += v * v;
        }
      fro[static_cast<std::size_t>(y) * lw + x] = std::sqrt(s);
      total += fro[static_cast<std::size_t>(y) * lw + x];
    }
  const double cutoff = 1e-9 * total / static_cast<double>(n);
  Eigen::MatrixXd m(c, c);
  double sum = 0.0;
  for (int y = 0; y < lh; ++y) {
    for (int x = 0; x < lw; ++x) {
      const double f = fro[static_cast<std::size_t>(y) * lw + x];
      if (f <= cutoff) {
        sum += f;
        continue;
      }
      for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = get(i, j, y, x);
      sum += std::min(f, spectral_norm(m));
    }
  }
  return sum;
}

// Smallest n' >= n with no prime factor above 7.
int fft_friendly(int n) {
  for (int m = n;; ++m) {
    int r = m;
    for (int p : {2, 3, 5, 7})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
}

// Drops outer rows and columns whose taps are negligible. Returns the summed Frobenius norm of what was
// removed, which bounds the operator norm of the removed part.
double trim_negligible(Tensor4& k, double rel) {
  const int kh = k.kh(), kw = k.kw();
  std::vector<double> fro(static_cast<std::size_t>(kh) * kw, 0.0);
  double total = 0.0;
  for (int y = 0; y < kh; ++y)
    for (int x = 0; x < kw; ++x) {
      double s = 0.0;
      for (int o = 0; o < k.c_out(); ++o)
        for (int i = 0; i < k.c_in(); ++i) s += k(o, i, y, x) * k(o, i, y, x);
      fro[static_cast<std::size_t>(y) * kw + x] = std::sqrt(s);
      total += std::sqrt(s);
    }
  int y0 = 0, y1 = kh, x0 = 0, x1 = kw;
  auto row = [&](int y) {
    double s = 0.0;
    for (int x = x0; x < x1; ++x) s += fro[static_cast<std::size_t>(y) * kw + x];
    return s;
  };
  auto col = [&](int x) {
    double s = 0.0;
    for (int y = y0; y < y1; ++y) s += fro[static_cast<std::size_t>(y) * kw + x];
    return s;
  };
  const double budget = rel * total;
  double removed = 0.0;
  while (y1 - y0 > 1 || x1 - x0 > 1) {
    const double cand[4] = {y1 - y0 > 1 ? row(y0) : INFINITY, y1 - y0 > 1 ? row(y1 - 1) : INFINITY,
                            x1 - x0 > 1 ? col(x0) : INFINITY, x1 - x0 > 1 ? col(x1 - 1) : INFINITY};
    const int best = static_cast<int>(std::min_element(cand, cand + 4) - cand);
    if (removed + cand[best] > budget) break;
    removed += cand[best];
    if (best == 0) ++y0;
    else if (best == 1) --y1;
    else if (best == 2) ++x0;
    else --x1;
  }
  if (y0 == 0 && y1 == kh && x0 == 0 && x1 == kw) return 0.0;
  Tensor4 out(k.c_out(), k.c_in(), y1 - y0, x1 - x0);
  for (int o = 0; o < k.c_out(); ++o)
    for (int i = 0; i < k.c_in(); ++i)
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) out(o, i, y - y0, x - x0) = k(o, i, y, x);
  k = std::move(out);
  return removed;
}

// Real 2-D transforms on an h-by-w grid; spectra hold h * (w / 2 + 1) entries.
class RealFft2 {
 public:
  RealFft2(int h, int w) : real_(static_cast<std::size_t>(h) * w), complex_(static_cast<std::size_t>(h) * (w / 2 + 1)) {
    std::vector<double> r(real_);
    std::vector<cd> c(complex_);
    std::lock_guard lock(planner_mutex());
    fwd_ = fftw_plan_dft_r2c_2d(h, w, r.data(), reinterpret_cast<fftw_complex*>(c.data()),
                                FFTW_ESTIMATE | FFTW_UNALIGNED);
    bwd_ = fftw_plan_dft_c2r_2d(h, w, reinterpret_cast<fftw_complex*>(c.data()), r.data(),
                                FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!fwd_ || !bwd_) throw NumericalError("FFTW planning failed");
  }
  RealFft2(const RealFft2&) = delete;
  RealFft2& operator=(const RealFft2&) = delete;
  ~RealFft2() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
  }

  std::size_t real_size() const { return real_; }
  std::size_t complex_size() const { return complex_; }
  void forward(std::vector<double>& in, std::vector<cd>& out) const {
    out.resize(complex_);
    fftw_execute_dft_r2c(fwd_, in.data(), reinterpret_cast<fftw_complex*>(out.data()));
  }
  // Destroys `in`.
  void backward(std::vector<cd>& in, std::vector<double>& out) const {
    out.resize(real_);
    fftw_execute_dft_c2r(bwd_, reinterpret_cast<fftw_complex*>(in.data()), out.data());
  }

 private:
  std::size_t real_, complex_;
  fftw_plan fwd_ = nullptr, bwd_ = nullptr;
};

// Taps of a self-adjoint c-by-c block kernel. Only blocks i <= j are stored; block (j, i) is block (i, j)
// reflected through the centre.
struct SymTaps {
  int c = 0, lh = 0, lw = 0;
  std::vector<std::vector<double>> upper;

  std::size_t slot(int i, int j) const {
    return static_cast<std::size_t>(i) * c - static_cast<std::size_t>(i) * (i - 1) / 2 + (j - i);
  }
  double operator()(int i, int j, int y, int x) const {
    if (i > j) return upper[slot(j, i)][static_cast<std::size_t>(lh - 1 - y) * lw + (lw - 1 - x)];
    return upper[slot(i, j)][static_cast<std::size_t>(y) * lw + x];
  }
};

// Self-composition V * V of a self-adjoint block kernel, scaled by 1 / div^2.
SymTaps square_taps(const SymTaps& v, double div) {
  const int c = v.c;
  SymTaps out{c, 2 * v.lh - 1, 2 * v.lw - 1, {}};
  const int nh = fft_friendly(out.lh);
  const int nw = fft_friendly(out.lw);
  const std::size_t blocks = v.upper.size();
  if (blocks * static_cast<std::size_t>(nh) * (nw / 2 + 1) > (std::size_t{1} << 26))
    throw ConfigError("gram_bound: frequency grid too large for this kernel; lower iters");
  RealFft2 fft(nh, nw);
  std::vector<std::vector<cd>> spec(blocks);
  // Taps are centred on the origin so that reflecting a block conjugates its transform.
  auto at = [&](int y, int x, int lh, int lw) {
    const int yy = ((y - (lh - 1) / 2) % nh + nh) % nh;
    const int xx = ((x - (lw - 1) / 2) % nw + nw) % nw;
    return static_cast<std::size_t>(yy) * nw + xx;
  };
  std::vector<double> buf(fft.real_size());
  for (std::size_t p = 0; p < blocks; ++p) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (int y = 0; y < v.lh; ++y)
      for (int x = 0; x < v.lw; ++x) buf[at(y, x, v.lh, v.lw)] = v.upper[p][static_cast<std::size_t>(y) * v.lw + x] / div;
    fft.forward(buf, spec[p]);
  }
  // Block (j, i) of a real self-adjoint kernel has the conjugate transform of block (i, j).
  std::vector<cd> m(static_cast<std::size_t>(c) * c);
  for (std::size_t f = 0; f < fft.complex_size(); ++f) {
    for (int i = 0; i < c; ++i)
      for (int j = i; j < c; ++j) {
        const cd z = spec[out.slot(i, j)][f];
        m[static_cast<std::size_t>(i) * c + j] = z;
        m[static_cast<std::size_t>(j) * c + i] = std::conj(z);
      }
    for (int i = 0; i < c; ++i)
      for (int j = i; j < c; ++j) {
        cd acc{};
        for (int l = 0; l < c; ++l) acc += m[static_cast<std::size_t>(i) * c + l] * m[static_cast<std::size_t>(l) * c + j];
        spec[out.slot(i, j)][f] = acc;
      }
  }
  const double inv = 1.0 / static_cast<double>(fft.real_size());
  out.upper.resize(blocks);
  for (std::size_t p = 0; p < blocks; ++p) {
    fft.backward(spec[p], buf);
    std::vector<cd>().swap(spec[p]);
    auto& taps = out.upper[p];
    taps.resize(static_cast<std::size_t>(out.lh) * out.lw);
    for (int y = 0; y < out.lh; ++y)
      for (int x = 0; x < out.lw; ++x)
        taps[static_cast<std::size_t>(y) * out.lw + x] = buf[at(y, x, out.lh, out.lw)] * inv;
  }
  return out;
}

// Bound sequence of a single ungrouped stride-1 kernel.
std::vector<double> gram_sequence_single(const Tensor4& a, int iters, bool normalize) {
  const bool rows_side = a.c_out() <= a.c_in();
  const Tensor4 adj = adjoint_kernel(a);
  const Tensor4 v1 = rows_side ? layers::block_conv_fuse(a, adj) : layers::block_conv_fuse(adj, a);
  SymTaps v{v1.c_out(), v1.kh(), v1.kw(), {}};
  for (int i = 0; i < v.c; ++i)
    for (int j = i; j < v.c; ++j) {
      std::vector<double> t(static_cast<std::size_t>(v.lh) * v.lw);
      for (int y = 0; y < v.lh; ++y)
        for (int x = 0; x < v.lw; ++x) t[static_cast<std::size_t>(y) * v.lw + x] = v1(i, j, y, x);
      v.upper.push_back(std::move(t));
    }
  std::vector<double> bounds;
  bounds.reserve(static_cast<std::size_t>(iters));

  const double b1 = tap_norm_sum(v.c, v.lh, v.lw, v);
  if (!std::isfinite(b1)) throw NumericalError("gram_bound: non-finite Gram kernel");
  bounds.push_back(std::sqrt(b1));
  if (iters == 1 || b1 == 0.0) {
    bounds.resize(static_cast<std::size_t>(iters), bounds.front());
    return bounds;
  }

  double log_scale = 0.0;
  double b_prev = b1;
  for (int t = 2; t <= iters; ++t) {
    const double div = normalize ? b_prev : 1.0;
    if (normalize) log_scale = 2.0 * (log_scale + std::log(b_prev));
    v = square_taps(v, div);
    const double b = tap_norm_sum(v.c, v.lh, v.lw, v);
    if (!std::isfinite(b) || !std::isfinite(log_scale))
      throw NumericalError("gram_bound: overflow (enable normalization)");
    if (b == 0.0) {
      bounds.push_back(0.0);
      b_prev = 1.0;
      continue;
    }
    bounds.push_back(std::exp((std::log(b) + log_scale) / std::ldexp(1.0, t)));
    b_prev = b;
  }
  return bounds;
}

}  // namespace

const char* to_string(Method m) {
  switch (m) {
    case Method::toeplitz_svd: return "toeplitz_svd";
    case Method::fft_circular: return "fft_circular";
    case Method::gram_bound: return "gram_bound";
    case Method::power_iter: return "power_iter";
    case Method::jacobian: return "jacobian";
  }
  return "?";
}

const char* to_string(Contract c) { return c == Contract::orthogonal ? "orthogonal" : "lipschitz"; }

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::orthogonal: return "orthogonal";
    case Verdict::one_lipschitz: return "one_lipschitz";
    case Verdict::violation: return "violation";
  }
  return "?";
}

void SpectrumReport::judge() {
  const bool upper_ok = std::isfinite(sigma_max) && sigma_max <= 1.0 + tolerance;
  if (contract == Contract::orthogonal && sigma_min) {
    verdict = upper_ok && *sigma_min >= 1.0 - tolerance ? Verdict::orthogonal : Verdict::violation;
  } else {
    verdict = upper_ok ? Verdict::one_lipschitz : Verdict::violation;
  }
}

nlohmann::json to_json(const SpectrumReport& r, ReportFormat fmt) {
  nlohmann::json j;
  j["method"] = to_string(r.method);
  j["contract"] = to_string(r.contract);
  j["sigma_max"] = r.sigma_max;
  j["sigma_min"] = r.sigma_min ? nlohmann::json(*r.sigma_min) : nlohmann::json(nullptr);
  if (fmt.all_values) j["all_values"] = r.all_values;
  j["tolerance"] = r.tolerance;
  j["verdict"] = to_string(r.verdict);
  j["input_shape"] = {r.input_shape.channels, r.input_shape.height, r.input_shape.width};
  if (fmt.elapsed) j["elapsed"] = r.elapsed;
  if (!r.violating_point.empty()) j["violating_point"] = r.violating_point;
  return j;
}

SpectrumReport toeplitz_svd_spectrum(const Tensor4& k, const ConvSpec& spec, MapShape in_shape, Contract contract,
                                     double tol) {
  const auto t0 = Clock::now();
  const Eigen::MatrixXd m = toeplitz_assemble(k, spec, in_shape, 1);
  const Eigen::VectorXd sv = singular_values(m);
  SpectrumReport r;
  r.method = Method::toeplitz_svd;
  r.contract = contract;
  r.tolerance = tol;
  r.input_shape = in_shape;
  r.all_values.assign(sv.data(), sv.data() + sv.size());
  return finish(std::move(r), t0);
}

SpectrumReport fft_circular_spectrum(const Tensor4& k, const ConvSpec& spec, int height, int width, Contract contract,
                                     double tol) {
  const auto t0 = Clock::now();
  spec.validate();
  if (spec.padding_mode != PaddingMode::circular || spec.transposed)
    throw ConfigError("fft_circular_spectrum requires circular padding");
  if (spec.stride_h != 1 || spec.stride_w != 1) throw ConfigError("fft_circular_spectrum requires stride 1");
  if (k.c_out() % spec.groups != 0) throw ShapeError("groups do not divide the kernel output channels");
  if (height < 1 || width < 1) throw ShapeError("fft_circular_spectrum: empty grid");

  const int g = spec.groups;
  const int co = k.c_out() / g;
  const int ci = k.c_in();
  const std::size_t nf = static_cast<std::size_t>(height) * width;
  Fft2 fft(height, width, FFTW_FORWARD);

  SpectrumReport r;
  r.method = Method::fft_circular;
  r.contract = contract;
  r.tolerance = tol;
  r.input_shape = {ci * g, height, width};
  std::vector<cd> buf(nf);
  for (int grp = 0; grp < g; ++grp) {
    std::vector<std::vector<cd>> spectra(static_cast<std::size_t>(co) * ci);
    for (int o = 0; o < co; ++o) {
      for (int i = 0; i < ci; ++i) {
        std::fill(buf.begin(), buf.end(), cd{});
        for (int y = 0; y < k.kh(); ++y)
          for (int x = 0; x < k.kw(); ++x)
            buf[static_cast<std::size_t>((y * spec.dilation_h) % height) * width + (x * spec.dilation_w) % width] +=
                k(grp * co + o, i, y, x);
        fft.run(buf, spectra[static_cast<std::size_t>(o) * ci + i]);
      }
    }
    Eigen::MatrixXcd m(co, ci);
    for (std::size_t f = 0; f < nf; ++f) {
      for (int o = 0; o < co; ++o)
        for (int i = 0; i < ci; ++i) m(o, i) = spectra[static_cast<std::size_t>(o) * ci + i][f];
      Eigen::JacobiSVD<Eigen::MatrixXcd> svd(m);
      const auto& sv = svd.singularValues();
      r.all_values.insert(r.all_values.end(), sv.data(), sv.data() + sv.size());
    }
  }
  return finish(std::move(r), t0);
}

std::vector<double> gram_bound_sequence(const Tensor4& k, const ConvSpec& spec, int iters, bool normalize) {
  if (iters < 1) throw ConfigError("gram_bound needs iters >= 1");
  spec.validate();
  if (k.c_out() % spec.groups != 0) throw ShapeError("groups do not divide the kernel output channels");
  // A transposed layer has the same singular values as its forward kernel.
  // Along an axis with stride 1, dilation splits the operator into copies of the undilated one.
  const int dh = spec.stride_h == 1 ? 1 : spec.dilation_h;
  const int dw = spec.stride_w == 1 ? 1 : spec.dilation_w;
  const Tensor4 expanded = polyphase(dilate(k, dh, dw), spec.stride_h, spec.stride_w);
  std::vector<double> seq(static_cast<std::size_t>(iters), 0.0);
  for (int grp = 0; grp < spec.groups; ++grp) {
    Tensor4 slice = layers::group_slice(expanded, spec.groups, grp);
    const double tail = trim_negligible(slice, 1e-12);
    const auto part = gram_sequence_single(slice, iters, normalize);
    for (std::size_t t = 0; t < seq.size(); ++t) seq[t] = std::max(seq[t], part[t] + tail);
  }
  // Allowance for floating-point rounding in the tap sums and transforms.
  for (double& b : seq) b *= 1.0 + 1e-12;
  return seq;
}

SpectrumReport gram_bound(const Tensor4& k, const ConvSpec& spec, const GramOptions& opts) {
  const auto t0 = Clock::now();
  SpectrumReport r;
  r.method = Method::gram_bound;
  r.contract = Contract::lipschitz;
  r.tolerance = opts.tolerance;
  r.input_shape = {k.c_in() * spec.groups, 0, 0};
  r.sigma_max = gram_bound_sequence(k, spec, opts.iters, opts.normalize).back();
  return finish(std::move(r), t0);
}

namespace {

double column_dot(const FeatureMap& a, const FeatureMap& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

}  // namespace

SpectrumReport operator_power_iteration(const Tensor4& k, const ConvSpec& spec, MapShape in_shape, int iters,
                                        std::uint64_t seed, double tol) {
  const auto t0 = Clock::now();
  if (iters < 1) throw ConfigError("power iteration needs iters >= 1");
  const MapShape out_shape = conv_output_shape(k, spec, in_shape);
  ConvSpec fwd = spec;
  fwd.transposed = false;
  auto apply = [&](const FeatureMap& x) { return apply_conv(x, k, spec); };
  auto adjoint = [&](const FeatureMap& y) {
    return spec.transposed ? conv2d_forward(y, k, fwd) : conv2d_adjoint(y, k, spec, in_shape);
  };
  (void)out_shape;

  // Block power iteration on T^T T with a final Rayleigh-Ritz step; the block widens the
  // effective spectral gap from lambda_2 / lambda_1 to lambda_{b+1} / lambda_1. Dilation and
  // groups split the operator into identical copies, so the top value can repeat several times.
  const auto dim = static_cast<Eigen::Index>(in_shape.size());
  const Eigen::Index b = std::min<Eigen::Index>(16, dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd v(dim, b);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = n(rng);
  FeatureMap x(in_shape.channels, in_shape.height, in_shape.width);
  auto column_of = [&](const FeatureMap& m) { return Eigen::Map<const Eigen::VectorXd>(m.values().data(), dim); };
  auto orthonormalize = [&](Eigen::MatrixXd& m) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    m = qr.householderQ() * Eigen::MatrixXd::Identity(dim, b);
  };
  orthonormalize(v);
  double ritz_prev = -1.0;
  Eigen::MatrixXd w(dim, b);
  for (int t = 0; t < iters; ++t) {
    for (Eigen::Index j = 0; j < b; ++j) {
      std::copy(v.col(j).data(), v.col(j).data() + dim, x.values().data());
      w.col(j) = column_of(adjoint(apply(x)));
    }
    if (w.norm() == 0.0) break;
    // Stop once the leading Ritz value of T^T T no longer moves.
    const Eigen::MatrixXd h = v.transpose() * w;
    const double ritz =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (h + h.transpose()), Eigen::EigenvaluesOnly)
            .eigenvalues()(b - 1);
    v = w;
    orthonormalize(v);
    if (std::abs(ritz - ritz_prev) <= 1e-15 * ritz) break;
    ritz_prev = ritz;
  }
  std::vector<FeatureMap> images;
  for (Eigen::Index j = 0; j < b; ++j) {
    std::copy(v.col(j).data(), v.col(j).data() + dim, x.values().data());
    images.push_back(apply(x));
  }
  Eigen::MatrixXd small(b, b);
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index j = 0; j < b; ++j) small(i, j) = column_dot(images[i], images[j]);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(small, Eigen::EigenvaluesOnly);
  const double sigma = std::sqrt(std::max(0.0, eig.eigenvalues()(b - 1)));

  SpectrumReport r;
  r.method = Method::power_iter;
  r.contract = Contract::lipschitz;
  r.tolerance = tol;
  r.input_shape = in_shape;
  r.sigma_max = sigma;
  return finish(std::move(r), t0);
}

Eigen::MatrixXd finite_difference_jacobian(const MapFn& f, const FeatureMap& x, double step) {
  const FeatureMap y0 = f(x);
  Eigen::MatrixXd j(static_cast<Eigen::Index>(y0.size()), static_cast<Eigen::Index>(x.size()));
  FeatureMap probe = x;
  for (std::size_t c = 0; c < x.size(); ++c) {
    const double base = x.values()[c];
    probe.values()[c] = base + step;
    const FeatureMap plus = f(probe);
    probe.values()[c] = base - step;
    const FeatureMap minus = f(probe);
    probe.values()[c] = base;
    if (plus.size() != y0.size() || minus.size() != y0.size()) throw ShapeError("jacobian: output size changed");
    for (std::size_t r = 0; r < y0.size(); ++r) {
      const double d = (plus.values()[r] - minus.values()[r]) / (2.0 * step);
      if (!std::isfinite(d)) throw NumericalError("jacobian: non-finite output");
      j(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = d;
    }
  }
  return j;
}

SpectrumReport jacobian_spectral_check(const MapFn& f, MapShape in_shape, const JacobianOptions& opts) {
  const auto t0 = Clock::now();
  if (opts.n_points < 1) throw ConfigError("jacobian check needs at least one point");
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> n(0.0, 1.0);

  SpectrumReport r;
  r.method = Method::jacobian;
  r.contract = opts.require_iso ? Contract::orthogonal : Contract::lipschitz;
  r.tolerance = opts.tolerance;
  r.input_shape = in_shape;
  double worst_max = 0.0;
  double worst_min = std::numeric_limits<double>::infinity();
  for (int p = 0; p < opts.n_points; ++p) {
    FeatureMap x(in_shape.channels, in_shape.height, in_shape.width);
    int attempts = 0;
    do {
      for (double& v : x.values()) v = n(rng);
      if (++attempts > 1000) throw NumericalError("jacobian: could not sample an admissible point");
    } while (opts.accept_point && !opts.accept_point(x));

    const Eigen::MatrixXd j = finite_difference_jacobian(f, x, opts.step);
    const Eigen::VectorXd sv = singular_values(j);
    const double smax = sv.size() ? sv(0) : 0.0;
    const double smin = sv.size() ? sv(sv.size() - 1) : 0.0;
    const bool bad = smax > 1.0 + opts.tolerance || (opts.require_iso && smin < 1.0 - opts.tolerance);
    if (bad && r.violating_point.empty()) r.violating_point.assign(x.values().begin(), x.values().end());
    worst_max = std::max(worst_max, smax);
    worst_min = std::min(worst_min, smin);
  }
  r.sigma_max = worst_max;
  r.sigma_min = worst_min;
  return finish(std::move(r), t0);
}

VerificationSetup verification_setup(const layers::ConvLayerConfig& cfg, const Tensor4& kernel, int n) {
  cfg.validate();
  const int s = cfg.stride;
  const int e = cfg.dilation * (kernel.kh() - 1);
  VerificationSetup out{layers::layer_spec(cfg, kernel), {}};
  auto round_up = [s](int v) { return ((v + s - 1) / s) * s; };
  if (cfg.padding_mode == PaddingMode::circular) {
    n = round_up(n);
    out.in_shape = {cfg.c_in, n, n};
    return out;
  }
  const bool isometric = static_cast<long>(kernel.c_out()) >= static_cast<long>(kernel.c_in()) * cfg.groups * s * s;
  const int pad = isometric ? e : 0;
  if (!isometric) n = round_up(std::max(n, e + 1));
  out.spec.padding = {pad, pad, pad, pad};
  out.spec.output_padding_h = out.spec.output_padding_w = 0;
  if (!cfg.transposed) {
    out.in_shape = {cfg.c_in, n, n};
    return out;
  }
  const int h = (n + 2 * pad - e - 1) / s + 1;
  const int op = n - ((h - 1) * s - 2 * pad + e + 1);
  out.spec.output_padding_h = out.spec.output_padding_w = op;
  out.in_shape = {cfg.c_in, h, h};
  return out;
}

}  // namespace orthoconv::verify
