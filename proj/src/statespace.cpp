#include "gplfm/statespace.hpp"

namespace gplfm {

void PhysicalParams::validate() const {
  const int n = dof_count();
  auto check_square = [&](const MatrixXd& m, const char* name) {
    if (m.rows() != n || m.cols() != n)
      throw std::invalid_argument(std::string(name) + " must be " + std::to_string(n) + "x" +
                                  std::to_string(n));
  };
  check_square(mass, "mass");
  check_square(damping, "damping");
  check_square(stiffness, "stiffness");
  if (lf_influence.rows() != n) throw std::invalid_argument("lf_influence must have n rows");
  if (lf_influence.cols() < 1) throw std::invalid_argument("lf_influence needs >= 1 column");
  if (force_influence.rows() != n && force_influence.cols() > 0)
    throw std::invalid_argument("force_influence must have n rows");
  Eigen::LLT<MatrixXd> llt(symmetrize(mass));
  if (llt.info() != Eigen::Success) throw std::invalid_argument("mass matrix must be SPD");
}

VectorXd GpHyperparams::to_log_vector() const {
  VectorXd v(2 * alpha.size());
  v.head(alpha.size()) = alpha.array().log();
  v.tail(ell.size()) = ell.array().log();
  return v;
}

GpHyperparams GpHyperparams::from_log_vector(const VectorXd& v) {
  const Eigen::Index p = v.size() / 2;
  GpHyperparams theta;
  theta.alpha = v.head(p).array().exp();
  theta.ell = v.tail(p).array().exp();
  return theta;
}

ContinuousSSM build_nominal_ssm(const PhysicalParams& params, const OutputSpec& outputs,
                                const MatrixXd& meas_noise_cov) {
  params.validate();
  const int n = params.dof_count();
  const int n_p = params.lf_count();
  const int n_u = params.input_count();
  const int n_y = static_cast<int>(outputs.size());
  if (meas_noise_cov.rows() != n_y || meas_noise_cov.cols() != n_y)
    throw std::invalid_argument("meas_noise_cov must be n_y x n_y");

  const MatrixXd minv_k = params.mass.llt().solve(params.stiffness);
  const MatrixXd minv_c = params.mass.llt().solve(params.damping);
  const MatrixXd minv_sp = params.mass.llt().solve(params.lf_influence);
  const MatrixXd minv_su =
      n_u > 0 ? MatrixXd(params.mass.llt().solve(params.force_influence)) : MatrixXd::Zero(n, 0);

  ContinuousSSM ssm;
  ssm.a_c = MatrixXd::Zero(2 * n, 2 * n);
  ssm.a_c.topRightCorner(n, n) = MatrixXd::Identity(n, n);
  ssm.a_c.bottomLeftCorner(n, n) = -minv_k;
  ssm.a_c.bottomRightCorner(n, n) = -minv_c;

  ssm.b_pc = MatrixXd::Zero(2 * n, n_p);
  ssm.b_pc.bottomRows(n) = -minv_sp;

  ssm.b_uc = MatrixXd::Zero(2 * n, n_u);
  if (n_u > 0) ssm.b_uc.bottomRows(n) = minv_su;

  ssm.b_gc = MatrixXd::Zero(2 * n, 1);
  ssm.b_gc.bottomRows(n) = -VectorXd::Ones(n);

  ssm.h = MatrixXd::Zero(n_y, 2 * n);
  ssm.j_p = MatrixXd::Zero(n_y, n_p);
  ssm.j_u = MatrixXd::Zero(n_y, n_u);
  for (int i = 0; i < n_y; ++i) {
    const auto& ch = outputs[i];
    if (ch.dof < 0 || ch.dof >= n) throw std::invalid_argument("output channel dof out of range");
    switch (ch.kind) {
      case ChannelKind::displacement:
        ssm.h(i, ch.dof) = 1.0;
        break;
      case ChannelKind::velocity:
        ssm.h(i, n + ch.dof) = 1.0;
        break;
      case ChannelKind::acceleration:
        ssm.h.row(i).head(n) = -minv_k.row(ch.dof);
        ssm.h.row(i).tail(n) = -minv_c.row(ch.dof);
        ssm.j_p.row(i) = -minv_sp.row(ch.dof);
        if (n_u > 0) ssm.j_u.row(i) = minv_su.row(ch.dof);
        break;
    }
  }
  ssm.meas_noise_cov = meas_noise_cov;
  return ssm;
}

AugmentedSSM augment_with_gp(const ContinuousSSM& ssm, const GpHyperparams& theta, double jitter) {
  const int n_p = ssm.lf_count();
  if (theta.alpha.size() != n_p || theta.ell.size() != n_p)
    throw std::invalid_argument("hyperparameter count must match latent force count");
  if ((theta.alpha.array() <= 0).any() || (theta.ell.array() <= 0).any())
    throw std::invalid_argument("GP hyperparameters must be positive");
  const int n2 = ssm.state_dim();

  AugmentedSSM aug;
  aug.n_struct = n2;
  aug.n_latent = n_p;
  const int d = n2 + n_p;

  aug.f_c = MatrixXd::Zero(d, d);
  aug.f_c.topLeftCorner(n2, n2) = ssm.a_c;
  aug.f_c.topRightCorner(n2, n_p) = ssm.b_pc;
  aug.f_c.bottomRightCorner(n_p, n_p) = (-theta.ell.array().inverse()).matrix().asDiagonal();

  aug.b_uc = MatrixXd::Zero(d, ssm.b_uc.cols());
  aug.b_uc.topRows(n2) = ssm.b_uc;
  aug.b_gc = MatrixXd::Zero(d, 1);
  aug.b_gc.topRows(n2) = ssm.b_gc;

  aug.q_c = MatrixXd::Zero(d, d);
  aug.q_c.topLeftCorner(n2, n2) = jitter * MatrixXd::Identity(n2, n2);
  aug.q_c.bottomRightCorner(n_p, n_p) =
      (2.0 * theta.alpha.array() / theta.ell.array()).matrix().asDiagonal();

  aug.h_a = MatrixXd::Zero(ssm.output_dim(), d);
  aug.h_a.leftCols(n2) = ssm.h;
  aug.h_a.rightCols(n_p) = ssm.j_p;
  aug.j_u = ssm.j_u;
  aug.meas_noise_cov = ssm.meas_noise_cov;
  return aug;
}

DiscreteSSM discretize(const AugmentedSSM& ssm, double dt) {
  if (!(dt > 0)) throw std::invalid_argument("dt must be positive");
  DiscreteSSM d;
  d.dt = dt;
  d.n_struct = ssm.n_struct;
  d.n_latent = ssm.n_latent;

  const int n_in = static_cast<int>(ssm.b_uc.cols());
  MatrixXd b_all(ssm.state_dim(), n_in + 1);
  if (n_in > 0) b_all.leftCols(n_in) = ssm.b_uc;
  b_all.rightCols(1) = ssm.b_gc;
  auto [f_d, g] = zoh_input_matrix(ssm.f_c, b_all, dt);
  d.f_d = f_d;
  d.b_ud = g.leftCols(n_in);
  d.b_gd = g.rightCols(1);
  d.q_d = van_loan_qd(ssm.f_c, ssm.q_c, dt);
  d.h_a = ssm.h_a;
  d.j_u = ssm.j_u;
  d.meas_noise_cov = ssm.meas_noise_cov;
  return d;
}

}  // namespace gplfm
