// Interactive scene evolution: per-situation conditional action sampling,
// kinematic propagation, Monte-Carlo rollouts, and occupancy heatmaps.
#pragma once

#include <optional>

#include "situ/gmm.hpp"

namespace situ::scene {

// Two-vehicle scene snapshot. Agent 1 is the main-lane car, agent 2 the
// merging car; x lateral, y longitudinal. Accelerations are derived from
// consecutive velocities, never sampled directly.
struct SceneState {
  double y1 = 0, y2 = 0;      // longitudinal positions (m)
  double x1 = 0, x2 = 0;      // lateral positions (m)
  double d1 = 0;              // lateral distance |x1 - x2| (m)
  double vy1 = 0, vy2 = 0;    // longitudinal velocities (m/s)
  double ay1 = 0, ay2 = 0;    // longitudinal accelerations (m/s^2)
  bool has_lead = false;
  double lead_y = 0, lead_vy = 0;

  // Table-style state feature stack fed to the situation GMMs.
  VectorXd se_vector() const {
    VectorXd v(has_lead ? 9 : 7);
    v << y1, y2, d1, vy1, vy2, ay1, ay2;
    if (has_lead) {
      v[7] = lead_y;
      v[8] = lead_vy;
    }
    return v;
  }

  bool finite() const {
    return std::isfinite(y1) && std::isfinite(y2) && std::isfinite(x1) &&
           std::isfinite(x2) && std::isfinite(vy1) && std::isfinite(vy2) &&
           std::isfinite(ay1) && std::isfinite(ay2);
  }
};

struct SceneAction {
  double dx1 = 0, dx2 = 0;          // lateral displacement over one step (m)
  double vy1_next = 0, vy2_next = 0; // next-step longitudinal velocities (m/s)

  VectorXd vector() const {
    VectorXd v(4);
    v << dx1, dx2, vy1_next, vy2_next;
    return v;
  }

  static SceneAction from_vector(const VectorXd& v) {
    if (v.size() != 4) throw std::invalid_argument("SceneAction: expected 4 values");
    return {v[0], v[1], v[2], v[3]};
  }
};

// One action model per situation.
struct SituationActionModel {
  gmm::GmmParams mixture;
  gmm::BlockPartition partition;
};

struct TrajectoryEnsemble {
  std::vector<std::vector<SceneState>> samples;  // each of length horizon+1
  std::vector<int> situation_of_sample;
  std::vector<bool> truncated;  // sample hit a non-finite state mid-rollout
  double dt = 0.1;
};

struct GridSpec {
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  double cell_dx = 0.1, cell_dy = 0.1;

  int nx() const { return static_cast<int>(std::ceil((x_max - x_min) / cell_dx)); }
  int ny() const { return static_cast<int>(std::ceil((y_max - y_min) / cell_dy)); }
};

struct OccupancyGrid {
  GridSpec spec;
  std::vector<MatrixXd> counts;  // per agent, ny x nx
  long clamped = 0;              // deposits clamped onto boundary cells
  bool normalized = false;
};

inline std::pair<SceneAction, int> sample_action(
    const std::vector<SituationActionModel>& models, const VectorXd& posterior,
    const SceneState& state, std::uint64_t seed,
    std::vector<std::string>* events = nullptr) {
  if (posterior.size() != static_cast<Eigen::Index>(models.size()))
    throw std::invalid_argument("sample_action: posterior/model count mismatch");
  if (std::abs(posterior.sum() - 1.0) > 1e-6 || posterior.minCoeff() < 0.0)
    throw std::invalid_argument("sample_action: posterior is not a distribution");

  Rng rng(seed);
  double u = rng.uniform();
  int situation = static_cast<int>(models.size()) - 1;
  double acc = 0.0;
  for (int i = 0; i < posterior.size(); ++i) {
    acc += posterior[i];
    if (u <= acc) { situation = i; break; }
  }

  const auto& m = models[situation];
  gmm::GmmParams conditional = gmm::condition(m.mixture, m.partition, state.se_vector(), events);
  VectorXd a = conditional.components[gmm::sample_component(conditional, rng)].draw(rng);
  return {SceneAction::from_vector(a), situation};
}

// Dirac transition kernel: the sampled action fully determines the next state.
inline SceneState propagate(const SceneState& state, const SceneAction& action, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("propagate: dt must be positive");
  SceneState next = state;
  next.x1 = state.x1 + action.dx1;
  next.x2 = state.x2 + action.dx2;
  next.vy1 = action.vy1_next;
  next.vy2 = action.vy2_next;
  next.y1 = state.y1 + 0.5 * (state.vy1 + action.vy1_next) * dt;  // trapezoidal
  next.y2 = state.y2 + 0.5 * (state.vy2 + action.vy2_next) * dt;
  next.ay1 = (action.vy1_next - state.vy1) / dt;
  next.ay2 = (action.vy2_next - state.vy2) / dt;
  next.d1 = std::abs(next.x1 - next.x2);
  if (state.has_lead) next.lead_y = state.lead_y + state.lead_vy * dt;
  return next;
}

// Each sample draws its situation once at step 0, then alternates action
// sampling (with that fixed situation) and propagation.
inline TrajectoryEnsemble rollout(const std::vector<SituationActionModel>& models,
                                  const VectorXd& posterior, const SceneState& initial,
                                  int horizon, int n_samples, double dt,
                                  std::uint64_t seed,
                                  std::vector<std::string>* events = nullptr) {
  if (horizon < 1) throw std::invalid_argument("rollout: horizon must be >= 1");
  if (n_samples < 1) throw std::invalid_argument("rollout: n_samples must be >= 1");

  TrajectoryEnsemble ens;
  ens.dt = dt;
  ens.samples.reserve(n_samples);
  for (int s = 0; s < n_samples; ++s) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(s)));
    double u = rng.uniform();
    int situation = static_cast<int>(models.size()) - 1;
    double acc = 0.0;
    for (int i = 0; i < posterior.size(); ++i) {
      acc += posterior[i];
      if (u <= acc) { situation = i; break; }
    }
    VectorXd one_hot = VectorXd::Zero(models.size());
    one_hot[situation] = 1.0;

    std::vector<SceneState> traj;
    traj.reserve(horizon + 1);
    traj.push_back(initial);
    bool truncated = false;
    for (int k = 0; k < horizon; ++k) {
      auto [action, idx] =
          sample_action(models, one_hot, traj.back(),
                        mix_seed(seed, (static_cast<std::uint64_t>(s) << 20) + k + 1), events);
      SceneState next = propagate(traj.back(), action, dt);
      if (!next.finite()) {
        truncated = true;
        if (events)
          events->push_back("rollout: sample " + std::to_string(s) +
                            " truncated at step " + std::to_string(k + 1));
        break;
      }
      traj.push_back(next);
    }
    ens.samples.push_back(std::move(traj));
    ens.situation_of_sample.push_back(situation);
    ens.truncated.push_back(truncated);
  }
  return ens;
}

// Deposits one count per agent per sample per step (the initial state is not
// deposited). Out-of-range points land in boundary cells and are tallied.
inline OccupancyGrid occupancy_heatmap(const TrajectoryEnsemble& ens, const GridSpec& spec,
                                       bool normalize = false) {
  if (spec.cell_dx <= 0.0 || spec.cell_dy <= 0.0)
    throw std::invalid_argument("occupancy_heatmap: zero-area cells");
  OccupancyGrid grid;
  grid.spec = spec;
  grid.counts.assign(2, MatrixXd::Zero(spec.ny(), spec.nx()));

  auto deposit = [&](int agent, double x, double y) {
    int cx = static_cast<int>(std::floor((x - spec.x_min) / spec.cell_dx));
    int cy = static_cast<int>(std::floor((y - spec.y_min) / spec.cell_dy));
    if (cx < 0 || cx >= spec.nx() || cy < 0 || cy >= spec.ny()) ++grid.clamped;
    cx = std::clamp(cx, 0, spec.nx() - 1);
    cy = std::clamp(cy, 0, spec.ny() - 1);
    grid.counts[agent](cy, cx) += 1.0;
  };

  for (const auto& traj : ens.samples) {
    for (std::size_t k = 1; k < traj.size(); ++k) {
      deposit(0, traj[k].x1, traj[k].y1);
      deposit(1, traj[k].x2, traj[k].y2);
    }
  }
  if (normalize) {
    for (auto& c : grid.counts) {
      double total = c.sum();
      if (total > 0.0) c /= total;
    }
    grid.normalized = true;
  }
  return grid;
}

// Per-step position mean and covariance of one agent across samples.
struct StepStats {
  Eigen::Vector2d mean;
  Eigen::Matrix2d cov;
  int count = 0;
};

inline std::vector<StepStats> ensemble_position_stats(const TrajectoryEnsemble& ens, int agent) {
  std::size_t horizon = 0;
  for (const auto& t : ens.samples) horizon = std::max(horizon, t.size());
  std::vector<StepStats> stats(horizon);
  for (std::size_t k = 0; k < horizon; ++k) {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    int n = 0;
    for (const auto& t : ens.samples) {
      if (k >= t.size()) continue;
      mean += Eigen::Vector2d(agent == 0 ? t[k].x1 : t[k].x2,
                              agent == 0 ? t[k].y1 : t[k].y2);
      ++n;
    }
    if (n == 0) continue;
    mean /= n;
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& t : ens.samples) {
      if (k >= t.size()) continue;
      Eigen::Vector2d p(agent == 0 ? t[k].x1 : t[k].x2,
                        agent == 0 ? t[k].y1 : t[k].y2);
      cov += (p - mean) * (p - mean).transpose();
    }
    cov /= std::max(n - 1, 1);
    stats[k] = {mean, cov, n};
  }
  return stats;
}

}  // namespace situ::scene
