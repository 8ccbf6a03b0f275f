#include "gplfm/bnn.hpp"

#include <cmath>
#include <numeric>

#include "gplfm/rng.hpp"

namespace gplfm {

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double softplus_inv(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Layout {
  std::vector<int> sizes;
  std::vector<int> w_off, b_off;  // per layer l = 1..L, stored at index l-1
  int total = 0;
};

Layout make_layout(const BnnTopology& t) {
  Layout lay;
  lay.sizes = t.layer_sizes();
  int off = 0;
  for (size_t l = 1; l < lay.sizes.size(); ++l) {
    lay.w_off.push_back(off);
    off += lay.sizes[l] * lay.sizes[l - 1];
    lay.b_off.push_back(off);
    off += lay.sizes[l];
  }
  lay.total = off;
  return lay;
}

using ConstMat = Eigen::Map<const MatrixXd>;
using ConstVec = Eigen::Map<const VectorXd>;

struct Workspace {
  std::vector<VectorXd> a;  // activations, a[0] = input
  std::vector<VectorXd> z;  // preactivations, z[0] unused
};

void forward_pass(const BnnTopology& t, const Layout& lay, const double* w, const VectorXd& x,
                  Workspace& ws) {
  const int layers = static_cast<int>(lay.sizes.size()) - 1;
  ws.a.resize(layers + 1);
  ws.z.resize(layers + 1);
  ws.a[0] = x;
  for (int l = 1; l <= layers; ++l) {
    ConstMat wl(w + lay.w_off[l - 1], lay.sizes[l], lay.sizes[l - 1]);
    ConstVec bl(w + lay.b_off[l - 1], lay.sizes[l]);
    ws.z[l] = wl * ws.a[l - 1] + bl;
    if (l == layers) {
      ws.a[l] = ws.z[l];  // linear head
    } else if (t.activation == Activation::relu) {
      ws.a[l] = ws.z[l].cwiseMax(0.0);
    } else {
      ws.a[l] = ws.z[l].array().tanh();
    }
  }
}

void backward_pass(const BnnTopology& t, const Layout& lay, const double* w, const Workspace& ws,
                   const VectorXd& grad_out, double coeff, double* grad) {
  const int layers = static_cast<int>(lay.sizes.size()) - 1;
  VectorXd g = grad_out;
  for (int l = layers; l >= 1; --l) {
    if (l < layers) {
      if (t.activation == Activation::relu) {
        g = (ws.z[l].array() > 0.0).select(g, 0.0);
      } else {
        g = g.cwiseProduct((1.0 - ws.a[l].array().square()).matrix());
      }
    }
    Eigen::Map<MatrixXd> gw(grad + lay.w_off[l - 1], lay.sizes[l], lay.sizes[l - 1]);
    Eigen::Map<VectorXd> gb(grad + lay.b_off[l - 1], lay.sizes[l]);
    gw.noalias() += coeff * g * ws.a[l - 1].transpose();
    gb.noalias() += coeff * g;
    if (l > 1) {
      ConstMat wl(w + lay.w_off[l - 1], lay.sizes[l], lay.sizes[l - 1]);
      g = wl.transpose() * g;
    }
  }
}

BnnOutput parse_output(const BnnTopology& t, const VectorXd& raw) {
  BnnOutput out;
  out.mean = raw.head(t.target_dim);
  out.chol = MatrixXd::Zero(t.target_dim, t.target_dim);
  int idx = t.target_dim;
  for (int i = 0; i < t.target_dim; ++i) {
    for (int j = 0; j < i; ++j) out.chol(i, j) = raw(idx++);
    out.chol(i, i) = softplus(raw(idx++));
  }
  return out;
}

// NLL and its gradient with respect to the raw head outputs.
double nll_grad_out(const BnnTopology& t, const VectorXd& raw, const VectorXd& eta,
                    VectorXd* grad_out) {
  const BnnOutput out = parse_output(t, raw);
  const int d = t.target_dim;
  const VectorXd r = eta - out.mean;
  const VectorXd a = out.chol.triangularView<Eigen::Lower>().solve(r);
  const double nll = 0.5 * a.squaredNorm() + out.chol.diagonal().array().log().sum() +
                     0.5 * d * std::log(2.0 * M_PI);
  if (grad_out) {
    const VectorXd b = out.chol.transpose().triangularView<Eigen::Upper>().solve(a);
    grad_out->resize(raw.size());
    grad_out->head(d) = -b;
    int idx = d;
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < i; ++j) (*grad_out)(idx++) = -b(i) * a(j);
      const double gl = -b(i) * a(i) + 1.0 / out.chol(i, i);
      (*grad_out)(idx) = gl * logistic(raw(idx));
      ++idx;
    }
  }
  return nll;
}

}  // namespace

std::vector<int> BnnTopology::layer_sizes() const {
  std::vector<int> sizes;
  sizes.push_back(input_dim);
  for (int h : hidden) sizes.push_back(h);
  sizes.push_back(output_dim());
  return sizes;
}

int BnnTopology::param_count() const { return make_layout(*this).total; }

VectorXd VariationalParams::sigma_q() const {
  return rho_q.unaryExpr([](double r) { return softplus(r); });
}

Normalization fit_normalization(const MatrixXd& inputs) {
  Normalization norm;
  norm.shift = inputs.colwise().mean();
  const MatrixXd centered = inputs.rowwise() - norm.shift.transpose();
  norm.scale = (centered.array().square().colwise().mean()).sqrt();
  for (Eigen::Index i = 0; i < norm.scale.size(); ++i)
    if (norm.scale(i) < 1e-300) norm.scale(i) = 1.0;
  return norm;
}

MapDataset make_map_dataset(const MatrixXd& raw_inputs, const MatrixXd& targets) {
  if (raw_inputs.rows() != targets.rows())
    throw std::invalid_argument("input/target row counts differ");
  MapDataset ds;
  ds.normalization = fit_normalization(raw_inputs);
  ds.inputs = (raw_inputs.rowwise() - ds.normalization.shift.transpose()).array().rowwise() /
              ds.normalization.scale.transpose().array();
  ds.targets = targets;
  return ds;
}

BnnOutput forward(const BnnTopology& topology, const VectorXd& weights, const VectorXd& x) {
  const Layout lay = make_layout(topology);
  if (weights.size() != lay.total) throw std::invalid_argument("weight vector size mismatch");
  if (x.size() != topology.input_dim) throw std::invalid_argument("input size mismatch");
  Workspace ws;
  forward_pass(topology, lay, weights.data(), x, ws);
  return parse_output(topology, ws.a.back());
}

double gaussian_nll(const BnnOutput& out, const VectorXd& eta) {
  const VectorXd r = eta - out.mean;
  const VectorXd a = out.chol.triangularView<Eigen::Lower>().solve(r);
  return 0.5 * a.squaredNorm() + out.chol.diagonal().array().log().sum() +
         0.5 * eta.size() * std::log(2.0 * M_PI);
}

double kl_divergence(const VariationalParams& vp) {
  const VectorXd sigma = vp.sigma_q();
  return (-sigma.array().log() + 0.5 * (sigma.array().square() + vp.mu_q.array().square()) - 0.5)
      .sum();
}

ElboParts elbo_minibatch(const VariationalParams& vp, const BnnTopology& topology,
                         const MapDataset& data, const std::vector<int>& batch, int mc_samples,
                         uint64_t seed, VectorXd* grad_mu, VectorXd* grad_rho) {
  const Layout lay = make_layout(topology);
  const int p = lay.total;
  if (vp.mu_q.size() != p || vp.rho_q.size() != p)
    throw std::invalid_argument("variational parameter size mismatch");
  const int bsz = static_cast<int>(batch.size());
  const int n_data = data.size();
  const VectorXd sigma = vp.sigma_q();

  RandomStream rs(seed);
  VectorXd gmu_acc, grho_acc;
  if (grad_mu) {
    gmu_acc = VectorXd::Zero(p);
    grho_acc = VectorXd::Zero(p);
  }

  double data_sum = 0.0;
  Workspace ws;
  VectorXd eps(p), w(p), g_out, g_s(p);
  for (int s = 0; s < mc_samples; ++s) {
    for (int i = 0; i < p; ++i) eps(i) = rs.gaussian();
    w = vp.mu_q + sigma.cwiseProduct(eps);
    if (grad_mu) g_s.setZero();
    for (int b : batch) {
      forward_pass(topology, lay, w.data(), data.inputs.row(b).transpose(), ws);
      data_sum += nll_grad_out(topology, ws.a.back(), data.targets.row(b).transpose(),
                               grad_mu ? &g_out : nullptr);
      if (grad_mu) backward_pass(topology, lay, w.data(), ws, g_out, 1.0, g_s.data());
    }
    if (grad_mu) {
      gmu_acc += g_s;
      grho_acc += g_s.cwiseProduct(eps);
    }
  }

  ElboParts parts;
  parts.data_term = data_sum / (bsz * mc_samples);
  parts.kl_term = kl_divergence(vp) / n_data;
  parts.loss = parts.data_term + parts.kl_term;

  if (grad_mu) {
    const VectorXd dsig = vp.rho_q.unaryExpr([](double r) { return logistic(r); });
    *grad_mu = gmu_acc / (bsz * mc_samples) + vp.mu_q / n_data;
    *grad_rho = grho_acc.cwiseProduct(dsig) / (bsz * mc_samples) +
                (sigma - sigma.cwiseInverse()).cwiseProduct(dsig) / n_data;
  }
  return parts;
}

VariationalParams init_variational(const BnnTopology& topology, const TrainConfig& config) {
  const Layout lay = make_layout(topology);
  VariationalParams vp;
  vp.mu_q = VectorXd::Zero(lay.total);
  vp.rho_q = VectorXd::Constant(lay.total, softplus_inv(config.init_sigma));
  RandomStream rs(mix_seed(config.seed, 0x696e6974));
  for (size_t l = 1; l < lay.sizes.size(); ++l) {
    const double std = config.init_mu_std / std::sqrt(static_cast<double>(lay.sizes[l - 1]));
    const int n_w = lay.sizes[l] * lay.sizes[l - 1];
    for (int i = 0; i < n_w; ++i) vp.mu_q(lay.w_off[l - 1] + i) = std * rs.gaussian();
  }
  return vp;
}

TrainResult train_bnn(const MapDataset& data, const BnnTopology& topology,
                      const TrainConfig& config) {
  if (data.inputs.cols() != topology.input_dim || data.targets.cols() != topology.target_dim)
    throw std::invalid_argument("dataset does not match topology");
  const int n = data.size();
  const int p = topology.param_count();

  TrainResult res;
  res.vp = init_variational(topology, config);

  // Adam over the stacked (mu, rho) vector
  VectorXd m = VectorXd::Zero(2 * p), v = VectorXd::Zero(2 * p);
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  long step = 0;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  VectorXd gmu, grho;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    RandomStream shuffle_rs(mix_seed(config.seed, 0x65700000ull + epoch));
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rs.below(static_cast<uint64_t>(i) + 1)]);

    double epoch_total = 0.0;
    int batch_index = 0;
    for (int start = 0; start < n; start += config.batch_size, ++batch_index) {
      const int bsz = std::min(config.batch_size, n - start);
      std::vector<int> batch(order.begin() + start, order.begin() + start + bsz);
      const uint64_t bseed =
          mix_seed(config.seed, 0x62000000ull + 100000ull * epoch + batch_index);
      const ElboParts parts =
          elbo_minibatch(res.vp, topology, data, batch, config.mc_samples, bseed, &gmu, &grho);
      epoch_total += bsz * parts.data_term + bsz * parts.kl_term;

      ++step;
      const double corr1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double corr2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (int i = 0; i < 2 * p; ++i) {
        const double g = i < p ? gmu(i) : grho(i - p);
        m(i) = beta1 * m(i) + (1.0 - beta1) * g;
        v(i) = beta2 * v(i) + (1.0 - beta2) * g * g;
        const double delta =
            config.learning_rate * (m(i) / corr1) / (std::sqrt(v(i) / corr2) + adam_eps);
        if (i < p)
          res.vp.mu_q(i) -= delta;
        else
          res.vp.rho_q(i - p) -= delta;
      }
    }

    res.epoch_loss.push_back(epoch_total);
    res.epochs = epoch + 1;
    if (epoch >= 1) {
      const double prev = res.epoch_loss[epoch - 1];
      if (std::abs(epoch_total - prev) <= config.epsilon * std::abs(prev) + 1e-300) {
        res.converged = true;
        break;
      }
    }
  }
  return res;
}

MatrixXd sample_weights(const VariationalParams& vp, int count, uint64_t seed) {
  const int p = static_cast<int>(vp.mu_q.size());
  const VectorXd sigma = vp.sigma_q();
  RandomStream rs(mix_seed(seed, 0x656e73));
  MatrixXd w(count, p);
  for (int s = 0; s < count; ++s)
    for (int i = 0; i < p; ++i) w(s, i) = vp.mu_q(i) + sigma(i) * rs.gaussian();
  return w;
}

PredictiveGaussian ensemble_predictive(const BnnModel& model, const MatrixXd& ensemble,
                                       const VectorXd& x_raw) {
  const int s_count = static_cast<int>(ensemble.rows());
  const int d = model.topology.target_dim;
  const VectorXd x = model.normalization.apply(x_raw);

  MatrixXd means(s_count, d);
  MatrixXd within = MatrixXd::Zero(d, d);
  for (int s = 0; s < s_count; ++s) {
    const BnnOutput out = forward(model.topology, ensemble.row(s).transpose(), x);
    means.row(s) = out.mean;
    within += out.covariance();
  }
  within /= s_count;

  PredictiveGaussian pred;
  pred.mean = means.colwise().mean();
  const MatrixXd centered = means.rowwise() - pred.mean.transpose();
  pred.cov = symmetrize(within + centered.transpose() * centered / s_count);
  return pred;
}

PredictiveGaussian posterior_predictive(const BnnModel& model, const VectorXd& x_raw,
                                        int mc_samples, uint64_t seed) {
  return ensemble_predictive(model, sample_weights(model.vp, mc_samples, seed), x_raw);
}

}  // namespace gplfm
