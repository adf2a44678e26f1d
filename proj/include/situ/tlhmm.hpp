// Two-layer HMM cascade: sliding-window meta features, layered training,
// bottom-up inference with a softmax posterior, and the virtual-to-real
// transfer workflow.
#pragma once

#include "situ/scenario.hpp"

namespace situ::tlhmm {

using scenario::Event;
using scenario::Situation;

enum class MetaMode { vector, matrix };

inline const char* meta_mode_name(MetaMode m) {
  return m == MetaMode::vector ? "vector" : "matrix";
}

inline MetaMode meta_mode_from_name(const std::string& s) {
  if (s == "vector") return MetaMode::vector;
  if (s == "matrix") return MetaMode::matrix;
  throw std::invalid_argument("unknown meta mode: " + s);
}

// One first-layer model slot: which stage it covers and which situations'
// segments it trains on (the Ambiguity stage is shared by both).
struct RosterEntry {
  std::string name;  // e.g. "HMM-1-2"
  int stage = 0;
  std::vector<Situation> situations;
};

struct Roster {
  std::vector<RosterEntry> layer1;
  std::vector<Situation> layer2;  // one situation per second-layer model
};

// The merging case study roster: a shared Ambiguity model, per-situation
// Preparation/Merging/Car-following models, and one second-layer model per
// situation.
inline Roster merging_roster() {
  Roster r;
  r.layer1.push_back({"HMM-1-1", 0, {Situation::main_yields, Situation::merge_yields}});
  r.layer1.push_back({"HMM-1-2", 1, {Situation::main_yields}});
  r.layer1.push_back({"HMM-1-3", 2, {Situation::main_yields}});
  r.layer1.push_back({"HMM-1-4", 3, {Situation::main_yields}});
  r.layer1.push_back({"HMM-1-5", 1, {Situation::merge_yields}});
  r.layer1.push_back({"HMM-1-6", 2, {Situation::merge_yields}});
  r.layer1.push_back({"HMM-1-7", 3, {Situation::merge_yields}});
  r.layer2 = {Situation::main_yields, Situation::merge_yields};
  return r;
}

struct TlhmmModel {
  std::vector<hmm::HmmParams> layer1;
  std::vector<RosterEntry> layer1_labels;
  std::vector<hmm::HmmParams> layer2;
  std::vector<Situation> layer2_labels;
  int t1 = 10;
  int t2 = 10;
  MetaMode meta_mode = MetaMode::vector;
  VectorXd prior;  // over situations

  int num_layer1() const { return static_cast<int>(layer1.size()); }
  int num_situations() const { return static_cast<int>(layer2.size()); }

  int meta_dim() const {
    return meta_mode == MetaMode::vector ? num_layer1() : num_layer1() * t1;
  }

  void validate() const {
    if (layer1.empty() || layer2.size() < 2)
      throw std::invalid_argument("TlhmmModel: need >=1 layer-1 and >=2 layer-2 models");
    if (std::abs(prior.sum() - 1.0) > 1e-9)
      throw std::invalid_argument("TlhmmModel: prior does not sum to 1");
    for (const auto& m : layer2)
      if (m.feature_dim() != meta_dim())
        throw std::invalid_argument("TlhmmModel: layer-2 feature dim inconsistent with (l, meta_mode, T1)");
  }
};

struct MetaFeatureSequence {
  MatrixXd values;       // (T - T1 + 1) rows
  int origin_offset = 0; // raw index of the first step with a full window
};

// Row at step k holds the length-normalized window log-likelihood of every
// first-layer model. Matrix mode additionally includes every sub-window
// length t = 1..T1 (flattened model-major).
inline MetaFeatureSequence build_meta_features(const std::vector<hmm::HmmParams>& layer1,
                                               const hmm::ObservationSequence& raw, int t1,
                                               MetaMode mode) {
  raw.validate();
  const int T = static_cast<int>(raw.length());
  if (T < t1)
    throw std::invalid_argument("build_meta_features: sequence length " + std::to_string(T) +
                                " is below the minimum window length " + std::to_string(t1));
  const int l = static_cast<int>(layer1.size());
  const int rows = T - t1 + 1;
  const int cols = mode == MetaMode::vector ? l : l * t1;

  MetaFeatureSequence out;
  out.origin_offset = t1 - 1;
  out.values.resize(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const int end = r + t1;  // exclusive; window ends at raw step end-1
    for (int i = 0; i < l; ++i) {
      if (mode == MetaMode::vector) {
        hmm::ObservationSequence win{raw.values.middleRows(r, t1), raw.dt};
        out.values(r, i) = hmm::forward_log_likelihood(layer1[i], win) / t1;
      } else {
        for (int t = 1; t <= t1; ++t) {
          hmm::ObservationSequence win{raw.values.middleRows(end - t, t), raw.dt};
          out.values(r, i * t1 + (t - 1)) = hmm::forward_log_likelihood(layer1[i], win) / t;
        }
      }
    }
  }
  return out;
}

inline VectorXd softmax_posterior(const VectorXd& log_liks, const VectorXd& prior) {
  if (log_liks.size() != prior.size())
    throw std::invalid_argument("softmax_posterior: size mismatch");
  double m = log_liks.maxCoeff();
  VectorXd p = prior.array() * (log_liks.array() - m).exp();
  return p / p.sum();
}

struct PosteriorSeries {
  std::vector<int> times;      // raw-sequence step indices
  MatrixXd probabilities;      // one row per time, one column per situation
};

inline int min_raw_length(const TlhmmModel& model) { return model.t1 + model.t2 - 1; }

inline PosteriorSeries infer(const TlhmmModel& model, const hmm::ObservationSequence& raw) {
  model.validate();
  const int T = static_cast<int>(raw.length());
  if (T < min_raw_length(model))
    throw std::invalid_argument("infer: sequence length " + std::to_string(T) +
                                " is below the minimum " + std::to_string(min_raw_length(model)));

  MetaFeatureSequence meta = build_meta_features(model.layer1, raw, model.t1, model.meta_mode);
  const int meta_rows = static_cast<int>(meta.values.rows());
  const int n_out = meta_rows - model.t2 + 1;
  const int h = model.num_situations();

  PosteriorSeries out;
  out.probabilities.resize(n_out, h);
  out.times.reserve(n_out);
  for (int j = 0; j < n_out; ++j) {
    VectorXd lls(h);
    hmm::ObservationSequence win{meta.values.middleRows(j, model.t2), raw.dt};
    for (int i = 0; i < h; ++i) lls[i] = hmm::forward_log_likelihood(model.layer2[i], win);
    out.probabilities.row(j) = softmax_posterior(lls, model.prior).transpose();
    out.times.push_back(meta.origin_offset + model.t2 - 1 + j);
  }
  return out;
}

struct TlhmmConfig {
  TrainConfig em;           // per-HMM Baum-Welch settings; em.seed is the master seed
  int t1 = 10;
  int t2 = 10;
  MetaMode meta_mode = MetaMode::vector;
  int state_lo = 1;         // BIC state-count search range
  int state_hi = 4;
  int fixed_states = 0;     // >0 bypasses the BIC search
  int min_segments = 1;
};

struct TrainedReports {
  std::vector<FitReport> layer1;
  std::vector<FitReport> layer2;

  // Total EM effort spent on the second layer, counting both the from-scratch
  // initialization fit (zero when starting from pretrained parameters) and the
  // Baum-Welch refinement.
  int layer2_iterations() const {
    int total = 0;
    for (const auto& r : layer2) total += r.total_iterations();
    return total;
  }
};

namespace detail {

inline std::vector<hmm::ObservationSequence> stage_segments(const std::vector<Event>& dataset,
                                                            const RosterEntry& entry) {
  std::vector<hmm::ObservationSequence> segs;
  for (const Event& ev : dataset) {
    if (!ev.has_boundaries) continue;
    bool wanted = false;
    for (Situation s : entry.situations) wanted |= (s == ev.situation);
    if (!wanted) continue;
    auto features = scenario::extract_features(ev);
    auto [lo, hi] = ev.stage_range(entry.stage);
    if (hi - lo < 1) continue;
    segs.push_back({features.raw.values.middleRows(lo, hi - lo), ev.dt});
  }
  return segs;
}

inline MatrixXd pool(const std::vector<hmm::ObservationSequence>& seqs) {
  Eigen::Index total = 0;
  for (const auto& s : seqs) total += s.length();
  MatrixXd pooled(total, seqs[0].feature_dim());
  Eigen::Index r = 0;
  for (const auto& s : seqs) {
    pooled.middleRows(r, s.length()) = s.values;
    r += s.length();
  }
  return pooled;
}

inline std::pair<hmm::HmmParams, FitReport> fit_one(
    const std::vector<hmm::ObservationSequence>& seqs, const TlhmmConfig& config,
    std::uint64_t model_seed) {
  TrainConfig em = config.em;
  em.seed = model_seed;
  int n_states = config.fixed_states;
  if (n_states <= 0)
    n_states = hmm::select_state_count(pool(seqs), config.state_lo, config.state_hi, em);
  return hmm::baum_welch_fit(seqs, n_states, em);
}

inline std::vector<hmm::ObservationSequence> meta_sequences(
    const std::vector<hmm::HmmParams>& layer1, const std::vector<Event>& dataset,
    Situation situation, int t1, MetaMode mode) {
  std::vector<hmm::ObservationSequence> seqs;
  for (const Event& ev : dataset) {
    if (ev.situation != situation) continue;
    auto features = scenario::extract_features(ev);
    if (features.raw.length() < t1) continue;
    MetaFeatureSequence meta = build_meta_features(layer1, features.raw, t1, mode);
    seqs.push_back({std::move(meta.values), ev.dt});
  }
  return seqs;
}

}  // namespace detail

inline std::pair<TlhmmModel, TrainedReports> train(const std::vector<Event>& dataset,
                                                   const Roster& roster,
                                                   const TlhmmConfig& config) {
  TlhmmModel model;
  model.t1 = config.t1;
  model.t2 = config.t2;
  model.meta_mode = config.meta_mode;
  model.layer1_labels = roster.layer1;
  model.layer2_labels = roster.layer2;
  model.prior = VectorXd::Constant(roster.layer2.size(), 1.0 / roster.layer2.size());

  TrainedReports reports;
  std::uint64_t stream = 0;
  for (const RosterEntry& entry : roster.layer1) {
    auto segs = detail::stage_segments(dataset, entry);
    if (static_cast<int>(segs.size()) < config.min_segments)
      throw std::invalid_argument("train: roster entry '" + entry.name + "' has " +
                                  std::to_string(segs.size()) + " segments, needs " +
                                  std::to_string(config.min_segments));
    auto [params, report] = detail::fit_one(segs, config, mix_seed(config.em.seed, stream++));
    model.layer1.push_back(std::move(params));
    reports.layer1.push_back(std::move(report));
  }

  for (Situation situation : roster.layer2) {
    auto seqs = detail::meta_sequences(model.layer1, dataset, situation, config.t1,
                                       config.meta_mode);
    if (static_cast<int>(seqs.size()) < config.min_segments)
      throw std::invalid_argument(std::string("train: no meta-feature sequences for situation '") +
                                  scenario::situation_name(situation) + "'");
    auto [params, report] = detail::fit_one(seqs, config, mix_seed(config.em.seed, stream++));
    model.layer2.push_back(std::move(params));
    reports.layer2.push_back(std::move(report));
  }

  model.validate();
  return {std::move(model), std::move(reports)};
}

enum class TransferMode { frozen, finetune, scratch };

inline const char* transfer_mode_name(TransferMode m) {
  switch (m) {
    case TransferMode::frozen: return "frozen";
    case TransferMode::finetune: return "finetune";
    default: return "scratch";
  }
}

// Layer 1 is always retrained on the target domain. Layer 2 is copied
// (frozen), refined from the pretrained parameters (finetune), or trained
// from a fresh initialization (scratch).
inline std::pair<TlhmmModel, TrainedReports> transfer(const TlhmmModel& pretrained,
                                                      const std::vector<Event>& target_dataset,
                                                      TransferMode mode,
                                                      const TlhmmConfig& config) {
  Roster roster;
  roster.layer1 = pretrained.layer1_labels;
  roster.layer2 = pretrained.layer2_labels;

  TlhmmModel model;
  model.t1 = config.t1;
  model.t2 = config.t2;
  model.meta_mode = config.meta_mode;
  model.layer1_labels = roster.layer1;
  model.layer2_labels = roster.layer2;
  model.prior = pretrained.prior;

  TrainedReports reports;
  std::uint64_t stream = 0;
  for (const RosterEntry& entry : roster.layer1) {
    auto segs = detail::stage_segments(target_dataset, entry);
    if (static_cast<int>(segs.size()) < config.min_segments)
      throw std::invalid_argument("transfer: roster entry '" + entry.name +
                                  "' has too few target segments");
    auto [params, report] = detail::fit_one(segs, config, mix_seed(config.em.seed, stream++));
    model.layer1.push_back(std::move(params));
    reports.layer1.push_back(std::move(report));
  }

  if (mode != TransferMode::scratch) {
    if (pretrained.meta_mode != config.meta_mode || pretrained.t1 != config.t1 ||
        pretrained.meta_dim() != model.meta_dim())
      throw std::invalid_argument(
          "transfer: pretrained layer-2 dimension does not match the target meta features "
          "(l or meta_mode differs); use scratch mode");
  }

  for (std::size_t j = 0; j < roster.layer2.size(); ++j) {
    Situation situation = roster.layer2[j];
    auto seqs = detail::meta_sequences(model.layer1, target_dataset, situation, config.t1,
                                       config.meta_mode);
    if (seqs.empty())
      throw std::invalid_argument(std::string("transfer: no target meta sequences for '") +
                                  scenario::situation_name(situation) + "'");
    switch (mode) {
      case TransferMode::frozen:
        model.layer2.push_back(pretrained.layer2[j]);
        reports.layer2.push_back(FitReport{});
        break;
      case TransferMode::finetune: {
        TrainConfig em = config.em;
        em.seed = mix_seed(config.em.seed, stream++);
        auto [params, report] = hmm::baum_welch_refine(pretrained.layer2[j], seqs, em);
        model.layer2.push_back(std::move(params));
        reports.layer2.push_back(std::move(report));
        break;
      }
      case TransferMode::scratch: {
        auto [params, report] = detail::fit_one(seqs, config, mix_seed(config.em.seed, stream++));
        model.layer2.push_back(std::move(params));
        reports.layer2.push_back(std::move(report));
        break;
      }
    }
  }

  model.validate();
  return {std::move(model), std::move(reports)};
}

}  // namespace situ::tlhmm
