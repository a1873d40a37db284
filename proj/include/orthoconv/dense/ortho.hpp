#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace orthoconv::dense {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class OrthoMethod { bjorck, cayley, exp, cholesky, qr };

const char* to_string(OrthoMethod m);
OrthoMethod ortho_method_from_string(const std::string& name);

/// Orthogonalization settings shared by dense layers and kernel constructions.
struct OrthoParams {
  OrthoMethod method = OrthoMethod::bjorck;
  double beta = 0.5;       // Björck step, in (0, 1/2]
  int iterations = 25;     // Björck iterations (fixed count)
  int exp_terms = 12;      // truncation order of the exponential series
  double epsilon = 1e-6;   // Cholesky Gram regularizer
  bool pre_normalize = true;  // spectral normalization before Björck
  int power_iters = 10;
  double tolerance = 1e-5;  // Björck acceptance on ||Gram - I||_F

  void validate() const;
};

/// Caller-owned warm start for repeated power iterations on the same weight slot.
struct PowerIterationCache {
  Vector right;  // last right singular vector estimate
};

struct SpectralNormResult {
  Matrix normalized;
  double sigma = 0.0;
};

/// Largest singular value by power iteration on W^T W.
double power_iteration_norm(const Matrix& w, int iters, PowerIterationCache* cache = nullptr);

/// W / sigma_hat with sigma_hat the power-iteration estimate. Throws NumericalError on W = 0.
SpectralNormResult spectral_normalize(const Matrix& w, int power_iters,
                                      PowerIterationCache* cache = nullptr);

/// ||G - I||_F where G is the Gram matrix on the short side of `q`.
double orthogonality_residual(const Matrix& q);

struct BjorckTrace {
  Matrix q;
  std::vector<double> residuals;  // residual before the first step, then after each step
};

/// Runs exactly params.iterations Björck steps W <- (1 + b) W - b W W^T W and records residuals.
BjorckTrace bjorck_trace(const Matrix& w, const OrthoParams& params = {},
                         PowerIterationCache* cache = nullptr);

/// Björck projection; throws ConvergenceError if the final residual exceeds params.tolerance.
Matrix bjorck_orthogonalize(const Matrix& w, const OrthoParams& params = {},
                            PowerIterationCache* cache = nullptr);

/// Augmented Cayley transform of a tall M x C matrix (M >= C); columns come out orthonormal.
Matrix cayley_augmented(const Matrix& w);

/// Truncated exponential of the normalized skew part of a square matrix. Lands in SO(C).
Matrix exp_orthogonalize(const Matrix& w, int terms, int power_iters = 10);

/// L^{-1} W with L L^T = W W^T + eps I. Rows of the result are orthonormal up to O(eps).
Matrix cholesky_orthogonalize(const Matrix& w, double epsilon);

struct QrResult {
  Matrix q;
  Matrix r;
};

/// Modified Gram-Schmidt (with one re-orthogonalization sweep) for M x C, M >= C, full column
/// rank. diag(R) > 0.
QrResult mgs_qr(const Matrix& w);

/// Dispatches on params.method. Rectangular inputs become semi-orthogonal on their short side;
/// exp accepts square inputs only. pre_normalize applies to Björck.
Matrix orthogonalize(const Matrix& w, const OrthoParams& params, PowerIterationCache* cache = nullptr);

// In-library dense solvers.

/// LU with partial pivoting.
class LuDecomposition {
 public:
  explicit LuDecomposition(const Matrix& a);
  Matrix solve(const Matrix& rhs) const;
  Matrix inverse() const;

 private:
  Matrix lu_;
  std::vector<Eigen::Index> perm_;
};

/// Lower-triangular L with L L^T = a. Throws NumericalError if a is not positive definite.
Matrix cholesky_factor(const Matrix& a);

/// Solves L X = B for lower-triangular L.
Matrix forward_substitute(const Matrix& lower, const Matrix& rhs);

}  // namespace orthoconv::dense
