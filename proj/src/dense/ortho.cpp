#include "orthoconv/dense/ortho.hpp"

#include <cmath>
#include <random>
#include <string>

#include "orthoconv/core/errors.hpp"

namespace orthoconv::dense {

namespace {

// Fixed pseudo-random start so that power iteration is deterministic yet generic.
Vector start_vector(Eigen::Index n) {
  std::mt19937_64 rng(0x5eed5eedULL + static_cast<unsigned long long>(n));
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(rng) + 0.25;
  return v.normalized();
}

bool is_tall(const Matrix& w) { return w.rows() >= w.cols(); }

Matrix short_side_gram(const Matrix& q) {
  return is_tall(q) ? Matrix(q.transpose() * q) : Matrix(q * q.transpose());
}

}  // namespace

const char* to_string(OrthoMethod m) {
  switch (m) {
    case OrthoMethod::bjorck: return "bjorck";
    case OrthoMethod::cayley: return "cayley";
    case OrthoMethod::exp: return "exp";
    case OrthoMethod::cholesky: return "cholesky";
    case OrthoMethod::qr: return "qr";
  }
  return "?";
}

OrthoMethod ortho_method_from_string(const std::string& name) {
  for (auto m : {OrthoMethod::bjorck, OrthoMethod::cayley, OrthoMethod::exp, OrthoMethod::cholesky,
                 OrthoMethod::qr}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("unknown orthogonalization method '" + name + "'");
}

void OrthoParams::validate() const {
  if (!(beta > 0.0 && beta <= 0.5)) throw ConfigError("beta must lie in (0, 1/2]");
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (exp_terms < 1) throw ConfigError("exp_terms must be >= 1");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (power_iters < 1) throw ConfigError("power_iters must be >= 1");
  if (!(tolerance > 0.0)) throw ConfigError("tolerance must be > 0");
}

double power_iteration_norm(const Matrix& w, int iters, PowerIterationCache* cache) {
  if (iters < 1) throw ConfigError("power iteration needs at least one step");
  if (w.size() == 0 || w.cwiseAbs().maxCoeff() == 0.0) throw NumericalError("power iteration on a zero matrix");
  Vector v = (cache && cache->right.size() == w.cols() && cache->right.norm() > 0.0)
                 ? Vector(cache->right.normalized())
                 : start_vector(w.cols());
  for (int t = 0; t < iters; ++t) {
    Vector next = w.transpose() * (w * v);
    double n = next.norm();
    if (n == 0.0) {
      // Start landed in the null space; restart from a generic vector.
      v = start_vector(w.cols());
      next = w.transpose() * (w * v);
      n = next.norm();
      if (n == 0.0) throw NumericalError("power iteration collapsed to zero");
    }
    v = next / n;
  }
  if (cache) cache->right = v;
  return (w * v).norm();
}

SpectralNormResult spectral_normalize(const Matrix& w, int power_iters, PowerIterationCache* cache) {
  const double sigma = power_iteration_norm(w, power_iters, cache);
  return {w / sigma, sigma};
}

double orthogonality_residual(const Matrix& q) {
  const Matrix g = short_side_gram(q);
  return (g - Matrix::Identity(g.rows(), g.cols())).norm();
}

BjorckTrace bjorck_trace(const Matrix& w, const OrthoParams& params, PowerIterationCache* cache) {
  params.validate();
  BjorckTrace trace;
  trace.q = params.pre_normalize ? spectral_normalize(w, params.power_iters, cache).normalized : w;
  trace.residuals.reserve(static_cast<std::size_t>(params.iterations) + 1);
  trace.residuals.push_back(orthogonality_residual(trace.q));
  const double b = params.beta;
  for (int t = 0; t < params.iterations; ++t) {
    Matrix& q = trace.q;
    if (is_tall(q)) {
      q = (1.0 + b) * q - b * (q * (q.transpose() * q));
    } else {
      q = (1.0 + b) * q - b * ((q * q.transpose()) * q);
    }
    trace.residuals.push_back(orthogonality_residual(q));
  }
  return trace;
}

Matrix bjorck_orthogonalize(const Matrix& w, const OrthoParams& params, PowerIterationCache* cache) {
  BjorckTrace trace = bjorck_trace(w, params, cache);
  const double residual = trace.residuals.back();
  if (!(residual <= params.tolerance))
    throw ConvergenceError("Björck did not converge in " + std::to_string(params.iterations) + " iterations",
                           residual);
  return std::move(trace.q);
}

Matrix cayley_augmented(const Matrix& w) {
  const Eigen::Index m = w.rows();
  const Eigen::Index c = w.cols();
  if (m < c) throw ShapeError("cayley_augmented expects a tall matrix (rows >= cols)");
  const Matrix u = w.topRows(c);
  const Matrix v = w.bottomRows(m - c);
  const Matrix eye = Matrix::Identity(c, c);
  // Not skew when V is non-empty; the V^T V term is what makes the stacked blocks orthonormal.
  const Matrix a = u - u.transpose() + v.transpose() * v;
  const LuDecomposition lu(eye + a);
  const Matrix b = lu.inverse();
  Matrix out(m, c);
  out.topRows(c) = b * (eye - a);
  if (m > c) out.bottomRows(m - c) = -2.0 * v * b;
  return out;
}

Matrix exp_orthogonalize(const Matrix& w, int terms, int power_iters) {
  if (w.rows() != w.cols()) throw ShapeError("exp_orthogonalize requires a square matrix");
  if (terms < 1) throw ConfigError("exp_orthogonalize needs at least one series term");
  const Eigen::Index c = w.rows();
  const Matrix a = w - w.transpose();
  const Matrix eye = Matrix::Identity(c, c);
  if (a.cwiseAbs().maxCoeff() == 0.0) return eye;
  const Matrix a_hat = a / power_iteration_norm(a, power_iters);
  Matrix out = eye;
  Matrix term = eye;
  for (int k = 1; k <= terms; ++k) {
    term = (term * a_hat) / static_cast<double>(k);
    out += term;
  }
  return out;
}

Matrix cholesky_orthogonalize(const Matrix& w, double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("cholesky_orthogonalize needs epsilon > 0");
  if (w.rows() > w.cols()) throw ShapeError("cholesky_orthogonalize expects rows <= cols");
  const Matrix gram = w * w.transpose() + epsilon * Matrix::Identity(w.rows(), w.rows());
  return forward_substitute(cholesky_factor(gram), w);
}

QrResult mgs_qr(const Matrix& w) {
  const Eigen::Index m = w.rows();
  const Eigen::Index c = w.cols();
  if (m < c) throw ShapeError("mgs_qr expects rows >= cols");
  QrResult out{Matrix::Zero(m, c), Matrix::Zero(c, c)};
  for (Eigen::Index j = 0; j < c; ++j) {
    Vector v = w.col(j);
    const double col_norm = v.norm();
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index i = 0; i < j; ++i) {
        const double r = out.q.col(i).dot(v);
        out.r(i, j) += r;
        v -= r * out.q.col(i);
      }
    }
    const double rjj = v.norm();
    if (col_norm == 0.0 || !(rjj > 1e-12 * col_norm))
      throw NumericalError("mgs_qr: rank-deficient input (zero pivot at column " + std::to_string(j) + ")");
    out.r(j, j) = rjj;
    out.q.col(j) = v / rjj;
  }
  // Gram-Schmidt pivots are norms, so sign(diag(R)) is already +1 and Q needs no flip.
  return out;
}

Matrix orthogonalize(const Matrix& w, const OrthoParams& params, PowerIterationCache* cache) {
  params.validate();
  switch (params.method) {
    case OrthoMethod::bjorck:
      return bjorck_orthogonalize(w, params, cache);
    case OrthoMethod::qr:
      return is_tall(w) ? mgs_qr(w).q : Matrix(mgs_qr(w.transpose()).q.transpose());
    case OrthoMethod::cholesky:
      return is_tall(w) && w.rows() != w.cols()
                 ? Matrix(cholesky_orthogonalize(w.transpose(), params.epsilon).transpose())
                 : cholesky_orthogonalize(w, params.epsilon);
    case OrthoMethod::cayley:
      return is_tall(w) ? cayley_augmented(w) : Matrix(cayley_augmented(w.transpose()).transpose());
    case OrthoMethod::exp:
      return exp_orthogonalize(w, params.exp_terms, params.power_iters);
  }
  throw ConfigError("unhandled orthogonalization method");
}

LuDecomposition::LuDecomposition(const Matrix& a) : lu_(a), perm_(static_cast<std::size_t>(a.rows())) {
  if (a.rows() != a.cols()) throw ShapeError("LU requires a square matrix");
  const Eigen::Index n = a.rows();
  for (Eigen::Index i = 0; i < n; ++i) perm_[static_cast<std::size_t>(i)] = i;
  const double scale = a.cwiseAbs().maxCoeff();
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Index pivot = k;
    for (Eigen::Index i = k + 1; i < n; ++i)
      if (std::abs(lu_(i, k)) > std::abs(lu_(pivot, k))) pivot = i;
    if (!(std::abs(lu_(pivot, k)) > 1e-14 * scale)) throw NumericalError("LU: singular matrix");
    if (pivot != k) {
      lu_.row(k).swap(lu_.row(pivot));
      std::swap(perm_[static_cast<std::size_t>(k)], perm_[static_cast<std::size_t>(pivot)]);
    }
    for (Eigen::Index i = k + 1; i < n; ++i) {
      lu_(i, k) /= lu_(k, k);
      const double f = lu_(i, k);
      if (f != 0.0) lu_.row(i).tail(n - k - 1) -= f * lu_.row(k).tail(n - k - 1);
    }
  }
}

Matrix LuDecomposition::solve(const Matrix& rhs) const {
  const Eigen::Index n = lu_.rows();
  if (rhs.rows() != n) throw ShapeError("LU solve: right-hand side has the wrong row count");
  Matrix x(n, rhs.cols());
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = rhs.row(perm_[static_cast<std::size_t>(i)]);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < i; ++k) x.row(i) -= lu_(i, k) * x.row(k);
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    for (Eigen::Index k = i + 1; k < n; ++k) x.row(i) -= lu_(i, k) * x.row(k);
    x.row(i) /= lu_(i, i);
  }
  return x;
}

Matrix LuDecomposition::inverse() const { return solve(Matrix::Identity(lu_.rows(), lu_.rows())); }

Matrix cholesky_factor(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("Cholesky requires a square matrix");
  const Eigen::Index n = a.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > 0.0)) throw NumericalError("Cholesky: matrix is not positive definite");
    l(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i)
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
  }
  return l;
}

Matrix forward_substitute(const Matrix& lower, const Matrix& rhs) {
  const Eigen::Index n = lower.rows();
  if (lower.cols() != n || rhs.rows() != n) throw ShapeError("forward_substitute: shape mismatch");
  Matrix x = rhs;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < i; ++k) x.row(i) -= lower(i, k) * x.row(k);
    if (lower(i, i) == 0.0) throw NumericalError("forward_substitute: zero diagonal");
    x.row(i) /= lower(i, i);
  }
  return x;
}

}  // namespace orthoconv::dense
