// Reference classifiers (single-layer HMM, QDA) and recognition-quality
// metrics, aligned step-for-step with the two-layer model's output.
#pragma once

#include "situ/tlhmm.hpp"

namespace situ::baselines {

using scenario::Event;
using scenario::Situation;
using tlhmm::PosteriorSeries;

// Single HMM per situation over raw features; inference is a softmax over
// sliding-window forward log-likelihoods. The window length equals the
// two-layer model's effective history (T1 + T2 - 1) so no classifier sees
// more data than another.
struct SingleHmmClassifier {
  std::vector<hmm::HmmParams> per_situation;
  std::vector<Situation> labels;
  int window = 19;
  VectorXd prior;
};

inline SingleHmmClassifier fit_single_hmm_classifier(const std::vector<Event>& dataset,
                                                     const tlhmm::TlhmmConfig& config) {
  SingleHmmClassifier clf;
  clf.window = config.t1 + config.t2 - 1;
  std::vector<Situation> situations = {Situation::main_yields, Situation::merge_yields};
  std::uint64_t stream = 0x51;
  for (Situation situation : situations) {
    std::vector<hmm::ObservationSequence> seqs;
    for (const Event& ev : dataset) {
      if (ev.situation != situation) continue;
      seqs.push_back(scenario::extract_features(ev).raw);
    }
    if (seqs.empty())
      throw std::invalid_argument(std::string("fit_single_hmm_classifier: no events for '") +
                                  scenario::situation_name(situation) + "'");
    auto [params, report] = tlhmm::detail::fit_one(seqs, config, mix_seed(config.em.seed, stream++));
    clf.per_situation.push_back(std::move(params));
    clf.labels.push_back(situation);
  }
  clf.prior = VectorXd::Constant(clf.labels.size(), 1.0 / clf.labels.size());
  return clf;
}

inline PosteriorSeries infer(const SingleHmmClassifier& clf, const hmm::ObservationSequence& raw) {
  const int T = static_cast<int>(raw.length());
  if (T < clf.window)
    throw std::invalid_argument("infer: sequence shorter than the classifier window");
  const int n_out = T - clf.window + 1;
  const int h = static_cast<int>(clf.per_situation.size());

  PosteriorSeries out;
  out.probabilities.resize(n_out, h);
  for (int j = 0; j < n_out; ++j) {
    hmm::ObservationSequence win{raw.values.middleRows(j, clf.window), raw.dt};
    VectorXd lls(h);
    for (int i = 0; i < h; ++i) lls[i] = hmm::forward_log_likelihood(clf.per_situation[i], win);
    out.probabilities.row(j) = tlhmm::softmax_posterior(lls, clf.prior).transpose();
    out.times.push_back(clf.window - 1 + j);
  }
  return out;
}

// Per-class full-covariance Gaussian over flattened raw-feature windows.
struct QdaClassifier {
  std::vector<gmm::Gaussian> per_situation;
  std::vector<Situation> labels;
  int window = 19;
  VectorXd prior;
};

namespace detail {

inline MatrixXd flatten_windows(const hmm::ObservationSequence& raw, int window) {
  const int T = static_cast<int>(raw.length());
  const int d = static_cast<int>(raw.feature_dim());
  const int n = T - window + 1;
  MatrixXd out(n, window * d);
  for (int j = 0; j < n; ++j)
    for (int t = 0; t < window; ++t)
      out.block(j, t * d, 1, d) = raw.values.row(j + t);
  return out;
}

}  // namespace detail

inline QdaClassifier fit_qda_classifier(const std::vector<Event>& dataset, int window,
                                        double shrinkage = 0.1) {
  QdaClassifier clf;
  clf.window = window;
  std::vector<Situation> situations = {Situation::main_yields, Situation::merge_yields};
  for (Situation situation : situations) {
    std::vector<MatrixXd> chunks;
    Eigen::Index rows = 0;
    for (const Event& ev : dataset) {
      if (ev.situation != situation) continue;
      auto raw = scenario::extract_features(ev).raw;
      if (raw.length() < window) continue;
      chunks.push_back(detail::flatten_windows(raw, window));
      rows += chunks.back().rows();
    }
    if (rows == 0)
      throw std::invalid_argument(std::string("fit_qda_classifier: no windows for '") +
                                  scenario::situation_name(situation) + "'");
    MatrixXd data(rows, chunks[0].cols());
    Eigen::Index r = 0;
    for (const auto& c : chunks) {
      data.middleRows(r, c.rows()) = c;
      r += c.rows();
    }

    VectorXd mu = data.colwise().mean().transpose();
    MatrixXd centered = data.rowwise() - mu.transpose();
    MatrixXd cov = centered.transpose() * centered / std::max<Eigen::Index>(rows - 1, 1);
    // Always shrink toward the diagonal: overlapping windows of derived
    // kinematic features are exactly collinear (finite-difference identities),
    // so the sample covariance is rank-deficient at any sample count.
    MatrixXd diag = cov.diagonal().asDiagonal();
    cov = (1.0 - shrinkage) * cov + shrinkage * diag;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
    if (es.eigenvalues().minCoeff() < 1e-12)
      throw std::runtime_error(std::string("fit_qda_classifier: singular covariance for class '") +
                               scenario::situation_name(situation) + "' despite shrinkage");
    clf.per_situation.emplace_back(mu, cov);
    clf.labels.push_back(situation);
  }
  clf.prior = VectorXd::Constant(clf.labels.size(), 1.0 / clf.labels.size());
  return clf;
}

inline PosteriorSeries infer(const QdaClassifier& clf, const hmm::ObservationSequence& raw) {
  const int T = static_cast<int>(raw.length());
  if (T < clf.window)
    throw std::invalid_argument("infer: sequence shorter than the classifier window");
  MatrixXd windows = detail::flatten_windows(raw, clf.window);
  const int h = static_cast<int>(clf.per_situation.size());

  PosteriorSeries out;
  out.probabilities.resize(windows.rows(), h);
  for (Eigen::Index j = 0; j < windows.rows(); ++j) {
    VectorXd lls(h);
    for (int i = 0; i < h; ++i)
      lls[i] = clf.per_situation[i].log_density(windows.row(j).transpose());
    out.probabilities.row(j) = tlhmm::softmax_posterior(lls, clf.prior).transpose();
    out.times.push_back(clf.window - 1 + static_cast<int>(j));
  }
  return out;
}

struct EventRecognition {
  bool correct_final = false;
  std::optional<int> earliest_step;      // step at which the true-class probability
                                         // exceeds theta and never drops below again
  std::optional<double> fluctuation;     // total variation after the first theta-crossing
};

struct RecognitionMetrics {
  double final_accuracy = 0.0;
  double mean_earliest = 0.0;   // over events with a finite earliest step
  int never_count = 0;          // events whose probability never settles above theta
  double mean_fluctuation = 0.0;
  std::vector<EventRecognition> per_event;
};

inline EventRecognition evaluate_event(const PosteriorSeries& series, int true_class,
                                       double theta) {
  EventRecognition rec;
  const Eigen::Index n = series.probabilities.rows();
  VectorXd p = series.probabilities.col(true_class);
  Eigen::Index final_best;
  series.probabilities.row(n - 1).maxCoeff(&final_best);
  rec.correct_final = (static_cast<int>(final_best) == true_class);

  // earliest settled crossing
  for (Eigen::Index i = 0; i < n; ++i) {
    if (p[i] > theta) {
      bool settled = true;
      for (Eigen::Index j = i + 1; j < n; ++j)
        if (p[j] < theta) { settled = false; break; }
      if (settled) {
        rec.earliest_step = series.times[i];
        break;
      }
    }
  }

  // total variation after the first crossing (settled or not)
  for (Eigen::Index i = 0; i < n; ++i) {
    if (p[i] > theta) {
      double tv = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) tv += std::abs(p[j] - p[j - 1]);
      rec.fluctuation = tv;
      break;
    }
  }
  return rec;
}

inline RecognitionMetrics evaluate(const std::vector<PosteriorSeries>& posteriors,
                                   const std::vector<int>& truth, double theta = 0.7) {
  if (posteriors.size() != truth.size())
    throw std::invalid_argument("evaluate: posterior/label count mismatch");
  if (!(theta > 0.5 && theta < 1.0))
    throw std::invalid_argument("evaluate: theta must be in (0.5, 1)");

  RecognitionMetrics m;
  int correct = 0;
  double earliest_sum = 0.0;
  int earliest_n = 0;
  double fluct_sum = 0.0;
  int fluct_n = 0;
  for (std::size_t e = 0; e < posteriors.size(); ++e) {
    EventRecognition rec = evaluate_event(posteriors[e], truth[e], theta);
    correct += rec.correct_final ? 1 : 0;
    if (rec.earliest_step) {
      earliest_sum += *rec.earliest_step;
      ++earliest_n;
    } else {
      ++m.never_count;
    }
    if (rec.fluctuation) {
      fluct_sum += *rec.fluctuation;
      ++fluct_n;
    }
    m.per_event.push_back(rec);
  }
  m.final_accuracy = posteriors.empty() ? 0.0 : static_cast<double>(correct) / posteriors.size();
  m.mean_earliest = earliest_n > 0 ? earliest_sum / earliest_n
                                   : std::numeric_limits<double>::infinity();
  m.mean_fluctuation = fluct_n > 0 ? fluct_sum / fluct_n : 0.0;
  return m;
}

}  // namespace situ::baselines
