#include "diffrisk/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "diffrisk/error.hpp"
#include "diffrisk/topology.hpp"

namespace diffrisk {

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

Vector vec(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != v.size()) {
    throw DimensionMismatch("unvec: size mismatch");
  }
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

double spectral_radius(const Matrix& m) {
  if (m.size() == 0) {
    return 0.0;
  }
  Eigen::EigenSolver<Matrix> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

double norm1(const Matrix& m) { return m.cwiseAbs().colwise().sum().maxCoeff(); }

double min_column_sum(const Matrix& m) { return m.cwiseAbs().colwise().sum().minCoeff(); }

RvEstimate estimate_rv(const RiskModel& model, VectorRef w_ref, const Matrix& c, const DataSource& env, Rng& rng,
                       std::size_t n_draws, std::size_t gradient_batch) {
  if (c.rows() != c.cols()) {
    throw DimensionMismatch("estimate_rv: C must be square");
  }
  if (n_draws < 2) {
    throw ValidationError("estimate_rv: at least two draws required");
  }
  const auto m = static_cast<Eigen::Index>(model.dim());
  const auto n = c.rows();
  const Vector mean_grad = true_gradient(model, w_ref, env, rng, gradient_batch).mean;
  constexpr std::size_t kBatches = 20;
  const std::size_t per_batch = std::max<std::size_t>(1, n_draws / kBatches);
  Matrix total = Matrix::Zero(m * n, m * n);
  Matrix batch = Matrix::Zero(m * n, m * n);
  std::vector<double> batch_norms;
  Matrix v(m, n);
  Vector h(m);
  std::size_t in_batch = 0;
  for (std::size_t draw = 0; draw < n_draws; ++draw) {
    for (Eigen::Index l = 0; l < n; ++l) {
      double y = 0.0;
      env.draw(rng, h, y);
      v.col(l) = -mean_grad;
      accumulate_gradient(model, w_ref, h, y, 1.0, v.col(l));
    }
    const Matrix g_blocks = v * c;  // column k is sum_l c_lk v_l
    const Eigen::Map<const Vector> g(g_blocks.data(), m * n);
    batch.selfadjointView<Eigen::Lower>().rankUpdate(g);
    if (++in_batch == per_batch || draw + 1 == n_draws) {
      Matrix full = batch.selfadjointView<Eigen::Lower>();
      total += full;
      batch_norms.push_back((full / static_cast<double>(in_batch)).norm());
      batch.setZero();
      in_batch = 0;
    }
  }
  RvEstimate out;
  out.rv = total / static_cast<double>(n_draws);
  out.rv = 0.5 * (out.rv + out.rv.transpose()).eval();
  if (batch_norms.size() > 1) {
    double mean = 0.0;
    for (double x : batch_norms) {
      mean += x;
    }
    mean /= static_cast<double>(batch_norms.size());
    double ss = 0.0;
    for (double x : batch_norms) {
      ss += (x - mean) * (x - mean);
    }
    const double k = static_cast<double>(batch_norms.size());
    out.frobenius_stderr = std::sqrt(ss / (k - 1.0) / k);
  }
  return out;
}

Matrix rv_from_node_covariances(const Matrix& c, const std::vector<Matrix>& node_rv) {
  const auto n = c.rows();
  if (c.cols() != n || static_cast<Eigen::Index>(node_rv.size()) != n || n == 0) {
    throw DimensionMismatch("rv_from_node_covariances: need one covariance per node and a square C");
  }
  const auto m = node_rv.front().rows();
  Matrix rv = Matrix::Zero(m * n, m * n);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index kk = 0; kk < n; ++kk) {
      for (Eigen::Index l = 0; l < n; ++l) {
        const double w = c(l, k) * c(l, kk);
        if (w != 0.0) {
          rv.block(k * m, kk * m, m, m) += w * node_rv[static_cast<std::size_t>(l)];
        }
      }
    }
  }
  return rv;
}

Matrix table1_weighting(Weighting selector, const std::vector<Matrix>& hessians, std::size_t n_nodes,
                        std::size_t dim, std::optional<std::size_t> k) {
  const auto n = static_cast<Eigen::Index>(n_nodes);
  const auto m = static_cast<Eigen::Index>(dim);
  const bool per_node = selector == Weighting::node_er || selector == Weighting::node_mse;
  if (per_node && !k) {
    throw MissingNodeIndex("table1_weighting: node index required for a per-node weighting");
  }
  if (per_node && *k >= n_nodes) {
    throw ValidationError("table1_weighting: node index out of range");
  }
  const bool hessian_weighted = selector == Weighting::node_er || selector == Weighting::network_er;
  if (hessian_weighted && hessians.size() != n_nodes) {
    throw MissingHessian("table1_weighting: one Hessian per node is required");
  }
  Matrix t = Matrix::Zero(m * n, m * n);
  auto block = [&](std::size_t j) -> Matrix {
    if (hessian_weighted) {
      const Matrix& h = hessians[j];
      if (h.rows() != m || h.cols() != m) {
        throw DimensionMismatch("table1_weighting: Hessian size differs from the dimension");
      }
      return 0.5 * h;
    }
    return Matrix::Identity(m, m);
  };
  if (per_node) {
    const auto kk = static_cast<Eigen::Index>(*k);
    t.block(kk * m, kk * m, m, m) = block(*k);
  } else {
    for (std::size_t j = 0; j < n_nodes; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      t.block(jj * m, jj * m, m, m) = block(j) / static_cast<double>(n_nodes);
    }
  }
  return t;
}

namespace {

void check_inputs(const SteadyStateInputs& in, Eigen::Index& n, Eigen::Index& m) {
  n = in.a1.rows();
  if (n == 0 || in.a1.cols() != n || in.a2.rows() != n || in.a2.cols() != n || in.c.rows() != n ||
      in.c.cols() != n) {
    throw DimensionMismatch("steady_state_er: A1, A2 and C must be N x N");
  }
  if (static_cast<Eigen::Index>(in.hessians.size()) != n) {
    throw MissingHessian("steady_state_er: one Hessian per node is required");
  }
  m = in.hessians.front().rows();
  for (const auto& h : in.hessians) {
    if (h.rows() != m || h.cols() != m) {
      throw DimensionMismatch("steady_state_er: Hessians must all be M x M");
    }
  }
  if (in.rv.rows() != n * m || in.rv.cols() != n * m || in.weighting.rows() != n * m ||
      in.weighting.cols() != n * m) {
    throw DimensionMismatch("steady_state_er: R_v and T must be NM x NM");
  }
  if (!(in.mu > 0.0)) {
    throw ValidationError("steady_state_er: step size must be positive");
  }
}

}  // namespace

Matrix transfer_matrix(const SteadyStateInputs& in) {
  Eigen::Index n = 0;
  Eigen::Index m = 0;
  check_inputs(in, n, m);
  const Matrix im = Matrix::Identity(m, m);
  Matrix d = Matrix::Zero(n * m, n * m);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index l = 0; l < n; ++l) {
      if (in.c(l, k) != 0.0) {
        d.block(k * m, k * m, m, m) += in.c(l, k) * in.hessians[static_cast<std::size_t>(l)];
      }
    }
  }
  const Matrix a1 = kron(in.a1, im);
  const Matrix a2 = kron(in.a2, im);
  return a2.transpose() * (Matrix::Identity(n * m, n * m) - in.mu * d) * a1.transpose();
}

SteadyStateResult steady_state_er(const SteadyStateInputs& in, SolveMethod method) {
  Eigen::Index n = 0;
  Eigen::Index m = 0;
  check_inputs(in, n, m);
  const Matrix b = transfer_matrix(in);
  SteadyStateResult out;
  out.spectral_radius = spectral_radius(b);
  if (!(out.spectral_radius < 1.0)) {
    throw UnstableB("steady_state_er: transfer matrix has spectral radius " + std::to_string(out.spectral_radius) +
                        " (must be below one)",
                    out.spectral_radius);
  }
  const auto nm = n * m;
  const Matrix rv = 0.5 * (in.rv + in.rv.transpose());
  const Matrix a2 = kron(in.a2, Matrix::Identity(m, m));
  const Matrix y = in.mu * in.mu * (a2.transpose() * rv * a2);
  if (method == SolveMethod::automatic) {
    method = static_cast<std::size_t>(nm) <= kDenseSolveLimit ? SolveMethod::dense : SolveMethod::series;
  }
  out.method = method;
  if (method == SolveMethod::dense) {
    const Matrix bt = b.transpose();
    Matrix lhs = -kron(bt, bt);
    lhs.diagonal().array() += 1.0;
    const Vector x = lhs.partialPivLu().solve(vec(in.weighting));
    out.value = vec(y).dot(x);
    return out;
  }
  // P_J = sum_{j<J} B^j Y B^j', doubled until the remaining factor is negligible.
  Matrix p = y;
  Matrix bk = b;
  std::size_t terms = 1;
  double factor = bk.squaredNorm();
  for (int it = 0; it < 64 && factor > 1e-18; ++it) {
    p += bk * p * bk.transpose();
    bk = (bk * bk).eval();
    terms *= 2;
    factor = bk.squaredNorm();
  }
  out.series_terms = terms;
  out.value = (in.weighting * p).trace();
  // tail = Tr(T B^J P B^J') <= |T|_2 |B^J|^2 Tr(P) and Tr(P) <= Tr(P_J) / (1 - |B^J|^2)
  if (factor < 1.0) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (in.weighting + in.weighting.transpose()),
                                              Eigen::EigenvaluesOnly);
    const double t_norm = eig.eigenvalues().cwiseAbs().maxCoeff();
    out.tail_bound = t_norm * factor * p.trace() / (1.0 - factor);
  } else {
    out.tail_bound = std::numeric_limits<double>::infinity();
  }
  return out;
}

double scalar_steady_state_er(double mu, double d, double r, double t) {
  const double a = 1.0 - mu * d;
  return mu * mu * r * t / (1.0 - a * a);
}

NoiseConstants make_noise_constants(double alpha, double sigma_v2, double q_trace, const Matrix& c) {
  if (alpha < 0.0 || sigma_v2 < 0.0 || q_trace < 0.0) {
    throw ValidationError("noise constants must be nonnegative");
  }
  NoiseConstants nc;
  nc.alpha = alpha;
  nc.sigma_v2 = sigma_v2;
  nc.q_trace = q_trace;
  nc.c_norm1 = norm1(c);
  nc.c_star = min_column_sum(c);
  return nc;
}

double steady_state_mu_limit(double lambda_min, double lambda_max, double alpha) {
  return std::min(2.0 * lambda_max / (lambda_max * lambda_max + alpha),
                  2.0 * lambda_min / (lambda_min * lambda_min + alpha));
}

double tracking_mu_limit(const NoiseConstants& nc, double lambda_min, double lambda_max) {
  return 2.0 * lambda_min * nc.c_star / (nc.c_norm1 * nc.c_norm1 * (lambda_max * lambda_max + nc.alpha));
}

RegimeValue epsilon_bound(const NoiseConstants& nc, double lambda_min, double lambda_max, double mu) {
  RegimeValue out;
  out.mu_limit = steady_state_mu_limit(lambda_min, lambda_max, nc.alpha);
  out.in_regime = mu > 0.0 && mu < out.mu_limit;
  out.value = 0.25 * nc.sigma_v2 * (lambda_max / lambda_min) * mu;
  return out;
}

double simplified_er(double mu, double rv_trace, std::size_t n_nodes) {
  if (rv_trace < 0.0) {
    throw ValidationError("simplified_er: trace must be nonnegative");
  }
  if (n_nodes == 0) {
    throw ValidationError("simplified_er: at least one node required");
  }
  return mu * rv_trace / (4.0 * static_cast<double>(n_nodes));
}

TrackingBound tracking_bound(const NoiseConstants& nc, double lambda_min, double lambda_max, double mu,
                             std::size_t dim) {
  if (!(mu > 0.0)) {
    throw ValidationError("tracking_bound: step size must be positive");
  }
  TrackingBound out;
  const double denom = 4.0 * lambda_min * nc.c_star;
  out.steady = nc.c_norm1 * nc.c_norm1 * nc.sigma_v2 * lambda_max * mu / denom;
  out.tracking = nc.q_trace * lambda_max / (denom * mu);
  out.constant = static_cast<double>(dim) * lambda_max * nc.q_trace / 2.0;
  out.total = out.steady + out.tracking + out.constant;
  out.mu_limit = tracking_mu_limit(nc, lambda_min, lambda_max);
  out.in_regime = mu < out.mu_limit;
  return out;
}

double optimal_mu(const NoiseConstants& nc) {
  if (!(nc.sigma_v2 > 0.0) || !(nc.q_trace > 0.0)) {
    throw ZeroNoise("optimal_mu: both sigma_v^2 and Tr(Q) must be positive for an interior minimizer");
  }
  return std::sqrt(nc.q_trace / (nc.c_norm1 * nc.c_norm1 * nc.sigma_v2));
}

double recursion_beta(const NoiseConstants& nc, double lambda_min, double lambda_max, double mu) {
  return 1.0 - 2.0 * mu * lambda_min * nc.c_star +
         mu * mu * (lambda_max * lambda_max + nc.alpha) * nc.c_norm1 * nc.c_norm1;
}

RecursionBound recursion_bound_trace(const NoiseConstants& nc, double lambda_min, double lambda_max, double mu,
                                     double w0_bound, std::size_t horizon) {
  RecursionBound out;
  out.beta = recursion_beta(nc, lambda_min, lambda_max, mu);
  const double drive = nc.c_norm1 * nc.c_norm1 * nc.sigma_v2 * mu * mu + nc.q_trace;
  out.series.resize(horizon);
  double b = w0_bound;
  for (std::size_t i = 0; i < horizon; ++i) {
    b = out.beta * b + drive;
    out.series[i] = b;
  }
  out.convergent = out.beta < 1.0;
  out.limit = out.convergent ? drive / (1.0 - out.beta) : std::numeric_limits<double>::infinity();
  return out;
}

OrderingResult ordering_check(const Matrix& a, const std::vector<Matrix>& hessians, const Matrix& rv, double mu,
                              const Matrix& weighting) {
  if (!check_doubly_stochastic(a, 1e-10)) {
    throw AssumptionViolation("ordering_check: A must be doubly stochastic");
  }
  if (hessians.empty()) {
    throw MissingHessian("ordering_check: Hessians required");
  }
  for (const auto& h : hessians) {
    if (h.rows() != hessians.front().rows() || (h - hessians.front()).cwiseAbs().maxCoeff() > 1e-8) {
      throw AssumptionViolation("ordering_check: node Hessians must be identical");
    }
  }
  const auto n = a.rows();
  const Matrix id = Matrix::Identity(n, n);
  SteadyStateInputs in;
  in.c = id;
  in.hessians = hessians;
  in.rv = rv;
  in.mu = mu;
  in.weighting = weighting;
  OrderingResult out;
  in.a1 = id;
  in.a2 = a;
  out.atc = steady_state_er(in).value;
  in.a1 = a;
  in.a2 = id;
  out.cta = steady_state_er(in).value;
  in.a1 = id;
  in.a2 = id;
  out.independent = steady_state_er(in).value;
  out.holds = out.atc <= out.cta + kOrderingSlack && out.cta <= out.independent + kOrderingSlack;
  return out;
}

NoiseFit fit_noise_constants(const RiskModel& model, VectorRef w_ref, const DataSource& env, Rng& rng,
                             const std::vector<Vector>& points, std::size_t draws, std::size_t gradient_batch) {
  if (points.size() < 2) {
    throw ValidationError("fit_noise_constants: at least two points required");
  }
  NoiseFit fit;
  const auto m = static_cast<Eigen::Index>(model.dim());
  Vector h(m);
  Vector v(m);
  for (const auto& w : points) {
    const Vector g = true_gradient(model, w, env, rng, gradient_batch).mean;
    double power = 0.0;
    for (std::size_t j = 0; j < draws; ++j) {
      double y = 0.0;
      env.draw(rng, h, y);
      v = -g;
      accumulate_gradient(model, w, h, y, 1.0, v);
      power += v.squaredNorm();
    }
    fit.distance_sq.push_back((w_ref - w).squaredNorm());
    fit.noise_power.push_back(power / static_cast<double>(draws));
  }
  // slope by least squares, then the smallest floor that covers every grid point
  const auto k = static_cast<Eigen::Index>(points.size());
  const Eigen::Map<const Vector> x(fit.distance_sq.data(), k);
  const Eigen::Map<const Vector> p(fit.noise_power.data(), k);
  const double xm = x.mean();
  const double pm = p.mean();
  const double sxx = (x.array() - xm).square().sum();
  fit.alpha = sxx > 0.0 ? std::max(0.0, ((x.array() - xm) * (p.array() - pm)).sum() / sxx) : 0.0;
  fit.sigma_v2 = std::max(0.0, (p - fit.alpha * x).maxCoeff());
  return fit;
}

}  // namespace diffrisk
