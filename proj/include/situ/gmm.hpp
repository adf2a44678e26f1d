// Gaussian mixture model: EM fitting, BIC scoring, block conditioning
// (Gaussian mixture regression), density evaluation, and sampling.
#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>

#include "situ/common.hpp"

namespace situ::gmm {

// Full-covariance Gaussian with cached Cholesky factor.
class Gaussian {
 public:
  Gaussian() = default;
  Gaussian(VectorXd mean, MatrixXd cov) { set(std::move(mean), std::move(cov)); }

  // Symmetrizes and clamps eigenvalues to the covariance floor.
  void set(VectorXd mean, MatrixXd cov) {
    if (cov.rows() != cov.cols() || cov.rows() != mean.size())
      throw std::invalid_argument("Gaussian: mean/cov dimension mismatch");
    mean_ = std::move(mean);
    MatrixXd sym = 0.5 * (cov + cov.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym);
    VectorXd ev = es.eigenvalues().cwiseMax(kCovFloor);
    cov_ = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    cov_ = 0.5 * (cov_ + cov_.transpose());
    llt_.compute(cov_);
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < cov_.rows(); ++i)
      log_det += 2.0 * std::log(llt_.matrixL()(i, i));
    log_norm_ = -0.5 * (mean_.size() * std::log(2.0 * M_PI) + log_det);
  }

  const VectorXd& mean() const { return mean_; }
  const MatrixXd& cov() const { return cov_; }
  Eigen::Index dim() const { return mean_.size(); }

  double log_density(const VectorXd& x) const {
    VectorXd d = x - mean_;
    VectorXd w = llt_.matrixL().solve(d);
    return log_norm_ - 0.5 * w.squaredNorm();
  }

  // mean + L z for standard-normal z
  VectorXd draw(Rng& rng) const {
    VectorXd z(mean_.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
    return mean_ + MatrixXd(llt_.matrixL()) * z;
  }

 private:
  VectorXd mean_;
  MatrixXd cov_;
  Eigen::LLT<MatrixXd> llt_;
  double log_norm_ = 0.0;
};

struct GmmParams {
  VectorXd weights;
  std::vector<Gaussian> components;

  int n_components() const { return static_cast<int>(components.size()); }
  int dim() const { return components.empty() ? 0 : static_cast<int>(components[0].dim()); }

  void validate() const {
    if (components.empty()) throw std::invalid_argument("GmmParams: no components");
    if (weights.size() != n_components())
      throw std::invalid_argument("GmmParams: weight count mismatch");
    if (std::abs(weights.sum() - 1.0) > 1e-9)
      throw std::invalid_argument("GmmParams: weights do not sum to 1");
    if (weights.minCoeff() < 0.0)
      throw std::invalid_argument("GmmParams: negative weight");
  }
};

// Index split of the joint vector into a conditioning block (state/environment)
// and a predicted block (actions).
struct BlockPartition {
  std::vector<int> se_indices;
  std::vector<int> a_indices;

  void validate(int dim) const {
    std::vector<char> seen(dim, 0);
    for (int i : se_indices) {
      if (i < 0 || i >= dim || seen[i]) throw std::invalid_argument("BlockPartition: bad se index");
      seen[i] = 1;
    }
    for (int i : a_indices) {
      if (i < 0 || i >= dim || seen[i]) throw std::invalid_argument("BlockPartition: bad a index");
      seen[i] = 1;
    }
    if (static_cast<int>(se_indices.size() + a_indices.size()) != dim)
      throw std::invalid_argument("BlockPartition: blocks do not cover all dimensions");
  }
};

inline double log_density(const GmmParams& model, const VectorXd& x) {
  VectorXd terms(model.n_components());
  for (int g = 0; g < model.n_components(); ++g)
    terms[g] = std::log(model.weights[g]) + model.components[g].log_density(x);
  return log_sum_exp(terms);
}

inline double data_log_likelihood(const GmmParams& model, const MatrixXd& data) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < data.rows(); ++r)
    total += log_density(model, data.row(r).transpose());
  return total;
}

// k-means++-style seeding: first mean uniform, later means weighted by
// squared distance to the nearest chosen mean.
inline std::vector<VectorXd> seed_means(const MatrixXd& data, int k, Rng& rng) {
  std::vector<VectorXd> means;
  means.push_back(data.row(static_cast<Eigen::Index>(rng.index(data.rows()))).transpose());
  VectorXd d2 = VectorXd::Constant(data.rows(), std::numeric_limits<double>::infinity());
  while (static_cast<int>(means.size()) < k) {
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
      double d = (data.row(r).transpose() - means.back()).squaredNorm();
      d2[r] = std::min(d2[r], d);
    }
    double total = d2.sum();
    if (total <= 0.0) {
      means.push_back(data.row(static_cast<Eigen::Index>(rng.index(data.rows()))).transpose());
      continue;
    }
    double u = rng.uniform() * total;
    Eigen::Index pick = 0;
    double acc = 0.0;
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
      acc += d2[r];
      if (u <= acc) { pick = r; break; }
      pick = r;
    }
    means.push_back(data.row(pick).transpose());
  }
  return means;
}

inline GmmParams init_params(const MatrixXd& data, int k, Rng& rng) {
  const int d = static_cast<int>(data.cols());
  VectorXd mean = data.colwise().mean().transpose();
  double scale = 0.0;
  for (int j = 0; j < d; ++j) {
    VectorXd col = data.col(j);
    scale += (col.array() - mean[j]).square().mean();
  }
  scale = std::max(scale / d, kCovFloor);
  MatrixXd cov0 = scale * MatrixXd::Identity(d, d);

  GmmParams p;
  p.weights = VectorXd::Constant(k, 1.0 / k);
  for (const VectorXd& m : seed_means(data, k, rng)) p.components.emplace_back(m, cov0);
  return p;
}

inline std::pair<GmmParams, FitReport> em_fit(const MatrixXd& data, int n_components,
                                              const TrainConfig& config,
                                              std::uint64_t seed) {
  if (data.rows() == 0) throw std::invalid_argument("em_fit: empty data");
  if (n_components < 1) throw std::invalid_argument("em_fit: n_components must be >= 1");
  if (data.rows() < n_components)
    throw std::invalid_argument("em_fit: fewer samples than components");
  if (!data.allFinite()) throw std::invalid_argument("em_fit: non-finite data");

  Rng rng(seed);
  GmmParams model = init_params(data, n_components, rng);
  FitReport report;

  const Eigen::Index n = data.rows();
  const int k = n_components;
  double prev_ll = -std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < config.max_iter; ++iter) {
    // E-step: log responsibilities
    MatrixXd log_resp(n, k);
    for (Eigen::Index r = 0; r < n; ++r) {
      VectorXd x = data.row(r).transpose();
      for (int g = 0; g < k; ++g)
        log_resp(r, g) = std::log(model.weights[g]) + model.components[g].log_density(x);
    }
    double ll = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      double lse = log_sum_exp(log_resp.row(r).transpose());
      ll += lse;
      log_resp.row(r).array() -= lse;
    }
    report.log_likelihood_trace.push_back(ll);
    report.iterations = iter + 1;

    // M-step
    MatrixXd resp = log_resp.array().exp();
    for (int g = 0; g < k; ++g) {
      double mass = resp.col(g).sum();
      if (mass < 1e-10) {
        Eigen::Index pick = static_cast<Eigen::Index>(rng.index(n));
        model.components[g].set(data.row(pick).transpose(),
                                model.components[g].cov());
        model.weights[g] = 1.0 / n;
        report.events.push_back("component " + std::to_string(g) +
                                " collapsed; re-seeded at data point " + std::to_string(pick));
        continue;
      }
      VectorXd mu = (data.transpose() * resp.col(g)) / mass;
      MatrixXd cov = MatrixXd::Zero(data.cols(), data.cols());
      for (Eigen::Index r = 0; r < n; ++r) {
        VectorXd d = data.row(r).transpose() - mu;
        cov.noalias() += resp(r, g) * d * d.transpose();
      }
      cov /= mass;
      cov += kCovFloor * MatrixXd::Identity(data.cols(), data.cols());
      model.components[g].set(mu, cov);
      model.weights[g] = mass / n;
    }
    model.weights /= model.weights.sum();

    if (iter > 0) {
      double denom = std::max(std::abs(prev_ll), 1e-12);
      if ((ll - prev_ll) / denom < config.tol) {
        report.converged = true;
        break;
      }
    }
    prev_ll = ll;
  }
  return {model, report};
}

inline int free_parameter_count(int n_components, int dim) {
  return (n_components - 1) + n_components * (dim + dim * (dim + 1) / 2);
}

// 2 ln L - p ln n; larger is better.
inline double bic_score(const GmmParams& model, const MatrixXd& data) {
  if (data.rows() == 0) throw std::invalid_argument("bic_score: empty data");
  if (data.cols() != model.dim()) throw std::invalid_argument("bic_score: dimension mismatch");
  double ll = data_log_likelihood(model, data);
  int p = free_parameter_count(model.n_components(), model.dim());
  return 2.0 * ll - p * std::log(static_cast<double>(data.rows()));
}

// Gaussian mixture regression: condition the joint mixture on the SE block.
// Falls back to the prior weights when the conditional weights vanish.
inline GmmParams condition(const GmmParams& model, const BlockPartition& part,
                           const VectorXd& se_value,
                           std::vector<std::string>* events = nullptr) {
  part.validate(model.dim());
  const int ns = static_cast<int>(part.se_indices.size());
  const int na = static_cast<int>(part.a_indices.size());
  if (se_value.size() != ns)
    throw std::invalid_argument("condition: se_value dimension mismatch");

  GmmParams out;
  VectorXd log_w(model.n_components());
  for (int g = 0; g < model.n_components(); ++g) {
    const VectorXd& mu = model.components[g].mean();
    const MatrixXd& sigma = model.components[g].cov();

    VectorXd mu_se(ns), mu_a(na);
    MatrixXd s_se(ns, ns), s_a(na, na), s_ase(na, ns);
    for (int i = 0; i < ns; ++i) {
      mu_se[i] = mu[part.se_indices[i]];
      for (int j = 0; j < ns; ++j) s_se(i, j) = sigma(part.se_indices[i], part.se_indices[j]);
    }
    for (int i = 0; i < na; ++i) {
      mu_a[i] = mu[part.a_indices[i]];
      for (int j = 0; j < na; ++j) s_a(i, j) = sigma(part.a_indices[i], part.a_indices[j]);
      for (int j = 0; j < ns; ++j) s_ase(i, j) = sigma(part.a_indices[i], part.se_indices[j]);
    }

    Eigen::LLT<MatrixXd> llt(s_se);
    MatrixXd gain = llt.solve(s_ase.transpose()).transpose();  // Sigma_a,se Sigma_se^-1
    VectorXd cond_mean = mu_a + gain * (se_value - mu_se);
    MatrixXd cond_cov = s_a - gain * s_ase.transpose();
    out.components.emplace_back(cond_mean, cond_cov);

    Gaussian marginal(mu_se, s_se);
    log_w[g] = std::log(model.weights[g]) + marginal.log_density(se_value);
  }

  double lse = log_sum_exp(log_w);
  if (!std::isfinite(lse)) {
    out.weights = model.weights;
    if (events)
      events->push_back("condition: zero conditional weight, falling back to prior");
  } else {
    out.weights = (log_w.array() - lse).exp();
    out.weights /= out.weights.sum();
  }
  return out;
}

inline int sample_component(const GmmParams& model, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (int g = 0; g < model.n_components(); ++g) {
    acc += model.weights[g];
    if (u <= acc) return g;
  }
  return model.n_components() - 1;
}

inline MatrixXd sample(const GmmParams& model, int n, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("sample: negative count");
  Rng rng(seed);
  MatrixXd out(n, model.dim());
  for (int r = 0; r < n; ++r)
    out.row(r) = model.components[sample_component(model, rng)].draw(rng).transpose();
  return out;
}

}  // namespace situ::gmm
