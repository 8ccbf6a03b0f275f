#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace gplfm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Raised when a factorization or solve fails beyond repair; step is the time
// index where it happened (-1 when not applicable).
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what, int step_index = -1)
      : std::runtime_error(what), step(step_index) {}
  int step;
};

inline MatrixXd symmetrize(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

// Cholesky with one jitter retry (+1e-10 * trace/n on the diagonal); throws
// NumericalError if the retry also fails.
Eigen::LLT<MatrixXd> safe_llt(const MatrixXd& a, int step_index = -1);

// Symmetric PSD square root via eigendecomposition; negative eigenvalues are
// clamped to zero.
MatrixXd psd_sqrt(const MatrixXd& a);

// expm(a) via Eigen's scaling-and-squaring Pade approximant.
MatrixXd expm(const MatrixXd& a);

// ZOH discretization of dx = (A x + B v) dt for piecewise-constant v: returns
// (F, G) with F = expm(A h) and G = (integral_0^h expm(A s) ds) B, computed via
// the block exponential of [[A, B], [0, 0]] so singular A is fine.
std::pair<MatrixXd, MatrixXd> zoh_input_matrix(const MatrixXd& a, const MatrixXd& b, double h);

// Van Loan construction of the discrete process noise for dx = A x dt + dW,
// E[dW dW'] = Qc dt: returns Qd = integral_0^h expm(A s) Qc expm(A s)' ds.
MatrixXd van_loan_qd(const MatrixXd& a, const MatrixXd& qc, double h);

// Solves A X + X A' + Q = 0 for the stationary covariance of a stable system
// (vectorized Kronecker solve; intended for small matrices).
MatrixXd lyapunov_stationary(const MatrixXd& a, const MatrixXd& q);

}  // namespace gplfm
