// Gaussian-emission hidden Markov model: forward-algorithm likelihood,
// Baum-Welch estimation, and BIC-driven state-count selection.
#pragma once

#include <span>

#include "situ/gmm.hpp"

namespace situ::hmm {

using gmm::Gaussian;

struct ObservationSequence {
  MatrixXd values;  // T x feature_dim
  double dt = 0.1;

  Eigen::Index length() const { return values.rows(); }
  Eigen::Index feature_dim() const { return values.cols(); }

  void validate() const {
    if (values.rows() < 1) throw std::invalid_argument("ObservationSequence: empty");
    if (!values.allFinite())
      throw std::invalid_argument("ObservationSequence: non-finite observation");
  }
};

struct HmmParams {
  VectorXd initial;               // length n_states
  MatrixXd transition;            // n_states x n_states, row-stochastic
  std::vector<Gaussian> emissions;

  int n_states() const { return static_cast<int>(emissions.size()); }
  int feature_dim() const {
    return emissions.empty() ? 0 : static_cast<int>(emissions[0].dim());
  }

  void validate() const {
    const int n = n_states();
    if (n < 1) throw std::invalid_argument("HmmParams: no states");
    if (initial.size() != n || transition.rows() != n || transition.cols() != n)
      throw std::invalid_argument("HmmParams: shape mismatch");
    if (std::abs(initial.sum() - 1.0) > 1e-9 || initial.minCoeff() < 0.0)
      throw std::invalid_argument("HmmParams: initial is not a distribution");
    for (int i = 0; i < n; ++i) {
      if (std::abs(transition.row(i).sum() - 1.0) > 1e-9 || transition.row(i).minCoeff() < 0.0)
        throw std::invalid_argument("HmmParams: transition row is not a distribution");
    }
  }
};

namespace detail {

// Emission log-densities for every (step, state) pair.
inline MatrixXd emission_log_probs(const HmmParams& model, const MatrixXd& obs) {
  MatrixXd logb(obs.rows(), model.n_states());
  for (Eigen::Index t = 0; t < obs.rows(); ++t) {
    VectorXd x = obs.row(t).transpose();
    for (int s = 0; s < model.n_states(); ++s)
      logb(t, s) = model.emissions[s].log_density(x);
  }
  return logb;
}

struct ScaledForward {
  MatrixXd alpha;       // scaled forward variables
  VectorXd log_scale;   // per-step log normalizers
  double log_likelihood = 0.0;
};

inline ScaledForward forward_pass(const HmmParams& model, const MatrixXd& logb) {
  const Eigen::Index T = logb.rows();
  const int n = model.n_states();
  ScaledForward fw;
  fw.alpha.resize(T, n);
  fw.log_scale.resize(T);

  // Factor out the max emission log-density per step before exponentiating.
  for (Eigen::Index t = 0; t < T; ++t) {
    double bmax = logb.row(t).maxCoeff();
    VectorXd b = (logb.row(t).array() - bmax).exp();
    VectorXd a(n);
    if (t == 0) {
      a = model.initial.cwiseProduct(b);
    } else {
      a = (fw.alpha.row(t - 1) * model.transition).transpose().cwiseProduct(b);
    }
    double c = a.sum();
    if (c <= 0.0 || !std::isfinite(c)) {
      // All mass vanished; fall back to a tiny uniform to keep recursion alive.
      a.setConstant(1.0 / n);
      c = 1.0;
      bmax += std::log(std::numeric_limits<double>::min());
    }
    fw.alpha.row(t) = (a / c).transpose();
    fw.log_scale[t] = std::log(c) + bmax;
  }
  fw.log_likelihood = fw.log_scale.sum();
  return fw;
}

inline MatrixXd backward_pass(const HmmParams& model, const MatrixXd& logb,
                              const ScaledForward& fw) {
  const Eigen::Index T = logb.rows();
  const int n = model.n_states();
  MatrixXd beta(T, n);
  beta.row(T - 1).setOnes();
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    double bmax = logb.row(t + 1).maxCoeff();
    VectorXd b = (logb.row(t + 1).array() - bmax).exp();
    VectorXd next = beta.row(t + 1).transpose().cwiseProduct(b);
    beta.row(t) = (model.transition * next).transpose();
    // Rescale with the forward normalizer so alpha.*beta stays O(1).
    double c = std::exp(fw.log_scale[t + 1] - bmax);
    if (c > 0.0 && std::isfinite(c)) beta.row(t) /= c;
  }
  return beta;
}

}  // namespace detail

inline double forward_log_likelihood(const HmmParams& model, const ObservationSequence& seq) {
  model.validate();
  seq.validate();
  if (seq.feature_dim() != model.feature_dim())
    throw std::invalid_argument("forward_log_likelihood: feature dimension mismatch");
  MatrixXd logb = detail::emission_log_probs(model, seq.values);
  return detail::forward_pass(model, logb).log_likelihood;
}

inline HmmParams init_params(std::span<const ObservationSequence> seqs, int n_states,
                             const TrainConfig& config, int* init_iterations = nullptr) {
  Eigen::Index total = 0;
  for (const auto& s : seqs) total += s.length();
  MatrixXd pooled(total, seqs[0].feature_dim());
  Eigen::Index r = 0;
  for (const auto& s : seqs) {
    pooled.middleRows(r, s.length()) = s.values;
    r += s.length();
  }

  // Emissions from a GMM over pooled observations; start matrices uniform
  // plus seeded jitter, renormalized.
  TrainConfig gmm_cfg = config;
  auto [mixture, rep] = gmm::em_fit(pooled, n_states, gmm_cfg, config.seed);
  if (init_iterations) *init_iterations = rep.iterations;

  HmmParams model;
  model.emissions = mixture.components;
  Rng rng(mix_seed(config.seed, 0x1717));
  const int n = n_states;
  model.initial.resize(n);
  model.transition.resize(n, n);
  for (int i = 0; i < n; ++i)
    model.initial[i] = 1.0 / n + 1e-2 * rng.uniform();
  model.initial /= model.initial.sum();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) model.transition(i, j) = 1.0 / n + 1e-2 * rng.uniform();
    model.transition.row(i) /= model.transition.row(i).sum();
  }
  return model;
}

inline std::pair<HmmParams, FitReport> baum_welch_refine(
    HmmParams model, std::span<const ObservationSequence> seqs, const TrainConfig& config) {
  if (seqs.empty()) throw std::invalid_argument("baum_welch: empty sequence list");
  for (const auto& s : seqs) {
    s.validate();
    if (s.feature_dim() != model.feature_dim())
      throw std::invalid_argument("baum_welch: feature dimension mismatch");
  }
  model.validate();

  const int n = model.n_states();
  const int d = model.feature_dim();
  FitReport report;
  double prev_ll = -std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < config.max_iter; ++iter) {
    VectorXd init_acc = VectorXd::Zero(n);
    MatrixXd trans_acc = MatrixXd::Zero(n, n);
    VectorXd gamma_acc = VectorXd::Zero(n);
    MatrixXd mean_acc = MatrixXd::Zero(n, d);
    std::vector<MatrixXd> cov_acc(n, MatrixXd::Zero(d, d));
    double total_ll = 0.0;

    for (const auto& seq : seqs) {
      const Eigen::Index T = seq.length();
      MatrixXd logb = detail::emission_log_probs(model, seq.values);
      auto fw = detail::forward_pass(model, logb);
      MatrixXd beta = detail::backward_pass(model, logb, fw);
      total_ll += fw.log_likelihood;

      // gamma_t(i) proportional to alpha_t(i) beta_t(i)
      MatrixXd gamma = fw.alpha.cwiseProduct(beta);
      for (Eigen::Index t = 0; t < T; ++t) {
        double s = gamma.row(t).sum();
        if (s > 0.0) gamma.row(t) /= s;
      }

      init_acc += gamma.row(0).transpose();
      for (Eigen::Index t = 0; t < T; ++t) {
        VectorXd x = seq.values.row(t).transpose();
        gamma_acc += gamma.row(t).transpose();
        mean_acc += gamma.row(t).transpose() * x.transpose();
        for (int i = 0; i < n; ++i)
          cov_acc[i].noalias() += gamma(t, i) * x * x.transpose();
      }

      // xi accumulation
      for (Eigen::Index t = 0; t + 1 < T; ++t) {
        double bmax = logb.row(t + 1).maxCoeff();
        VectorXd b = (logb.row(t + 1).array() - bmax).exp();
        MatrixXd xi = (fw.alpha.row(t).transpose() *
                       (b.cwiseProduct(beta.row(t + 1).transpose())).transpose())
                          .cwiseProduct(model.transition);
        double s = xi.sum();
        if (s > 0.0) trans_acc += xi / s;
      }
    }

    report.log_likelihood_trace.push_back(total_ll);
    report.iterations = iter + 1;

    // M-step; distributions floored away from exact zero so the scaled
    // forward recursion never loses all mass on far-from-model windows.
    model.initial = (init_acc / init_acc.sum()).array() + 1e-12;
    model.initial /= model.initial.sum();
    for (int i = 0; i < n; ++i) {
      double row = trans_acc.row(i).sum();
      if (row > 0.0)
        model.transition.row(i) = (trans_acc.row(i) / row).array() + 1e-12;
      else
        model.transition.row(i).setConstant(1.0 / n);
      model.transition.row(i) /= model.transition.row(i).sum();
    }
    for (int i = 0; i < n; ++i) {
      double mass = std::max(gamma_acc[i], 1e-300);
      VectorXd mu = mean_acc.row(i).transpose() / mass;
      MatrixXd cov = cov_acc[i] / mass - mu * mu.transpose();
      cov += kCovFloor * MatrixXd::Identity(d, d);
      model.emissions[i].set(mu, cov);
    }

    if (iter > 0) {
      double denom = std::max(std::abs(prev_ll), 1e-12);
      if ((total_ll - prev_ll) / denom < config.tol) {
        report.converged = true;
        break;
      }
    }
    prev_ll = total_ll;
  }
  return {std::move(model), report};
}

inline std::pair<HmmParams, FitReport> baum_welch_fit(
    std::span<const ObservationSequence> seqs, int n_states, const TrainConfig& config) {
  if (seqs.empty()) throw std::invalid_argument("baum_welch_fit: empty sequence list");
  if (n_states < 1) throw std::invalid_argument("baum_welch_fit: n_states must be >= 1");
  Eigen::Index total = 0;
  for (const auto& s : seqs) {
    s.validate();
    total += s.length();
  }
  if (total < n_states)
    throw std::invalid_argument("baum_welch_fit: fewer observations than states");

  int init_iters = 0;
  HmmParams init = init_params(seqs, n_states, config, &init_iters);
  FitReport init_only;
  init_only.init_iterations = init_iters;
  if (config.max_iter == 0) return {std::move(init), init_only};
  auto [model, report] = baum_welch_refine(std::move(init), seqs, config);
  report.init_iterations = init_iters;
  return {std::move(model), std::move(report)};
}

// Picks the candidate whose GMM fit maximizes the BIC score; ties and
// near-ties resolve toward the smaller count. Candidates whose fit throws
// are skipped.
inline int select_state_count(const MatrixXd& pooled, int lo, int hi,
                              const TrainConfig& config) {
  if (lo < 1 || hi < lo) throw std::invalid_argument("select_state_count: bad range");
  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int k = lo; k <= hi; ++k) {
    try {
      auto [mixture, rep] = gmm::em_fit(pooled, k, config, config.seed);
      double score = gmm::bic_score(mixture, pooled);
      if (score > best_score) {
        best_score = score;
        best = k;
      }
    } catch (const std::exception&) {
      continue;
    }
  }
  if (best < 0) throw std::runtime_error("select_state_count: every candidate failed");
  return best;
}

}  // namespace situ::hmm
