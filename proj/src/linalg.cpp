#include "gplfm/linalg.hpp"

#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

namespace gplfm {

Eigen::LLT<MatrixXd> safe_llt(const MatrixXd& a, int step_index) {
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  const double jitter = 1e-10 * a.trace() / static_cast<double>(a.rows());
  MatrixXd bumped = a;
  bumped.diagonal().array() += jitter;
  llt.compute(bumped);
  if (llt.info() == Eigen::Success) return llt;
  throw NumericalError("Cholesky factorization failed after jitter retry", step_index);
}

MatrixXd psd_sqrt(const MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(a));
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

MatrixXd expm(const MatrixXd& a) { return a.exp(); }

std::pair<MatrixXd, MatrixXd> zoh_input_matrix(const MatrixXd& a, const MatrixXd& b, double h) {
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.cols();
  MatrixXd blk = MatrixXd::Zero(n + m, n + m);
  blk.topLeftCorner(n, n) = a;
  blk.topRightCorner(n, m) = b;
  MatrixXd e = expm(blk * h);
  return {e.topLeftCorner(n, n), e.topRightCorner(n, m)};
}

MatrixXd van_loan_qd(const MatrixXd& a, const MatrixXd& qc, double h) {
  const Eigen::Index n = a.rows();
  MatrixXd blk = MatrixXd::Zero(2 * n, 2 * n);
  blk.topLeftCorner(n, n) = -a;
  blk.topRightCorner(n, n) = qc;
  blk.bottomRightCorner(n, n) = a.transpose();
  MatrixXd e = expm(blk * h);
  MatrixXd f2 = e.bottomRightCorner(n, n);  // expm(A' h)
  MatrixXd g1 = e.topRightCorner(n, n);
  return symmetrize(f2.transpose() * g1);
}

MatrixXd lyapunov_stationary(const MatrixXd& a, const MatrixXd& q) {
  const Eigen::Index n = a.rows();
  MatrixXd eye = MatrixXd::Identity(n, n);
  MatrixXd lhs = Eigen::kroneckerProduct(eye, a).eval() + Eigen::kroneckerProduct(a, eye).eval();
  VectorXd rhs = Eigen::Map<const VectorXd>(q.data(), n * n);
  VectorXd x = lhs.fullPivLu().solve(-rhs);
  MatrixXd p = Eigen::Map<const MatrixXd>(x.data(), n, n);
  return symmetrize(p);
}

}  // namespace gplfm
