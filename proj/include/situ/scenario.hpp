// Synthetic ramp-merging events with ground-truth situation and stage labels,
// measurement-noise injection, Kalman smoothing, CSV ingestion, and
// feature/action extraction.
#pragma once

#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "situ/hmm.hpp"
#include "situ/scene.hpp"

namespace situ::scenario {

enum class Situation { main_yields = 0, merge_yields = 1 };

inline const char* situation_name(Situation s) {
  return s == Situation::main_yields ? "main_yields" : "merge_yields";
}

inline Situation situation_from_name(const std::string& name) {
  if (name == "main_yields") return Situation::main_yields;
  if (name == "merge_yields") return Situation::merge_yields;
  throw std::invalid_argument("unknown situation label: " + name);
}

struct AgentSeries {
  std::vector<double> x, y, vy;

  std::size_t length() const { return y.size(); }
  bool consistent() const { return x.size() == y.size() && vy.size() == y.size(); }
};

// Stage indices: 0 Ambiguity, 1 Preparation, 2 Merging, 3 Car following.
inline constexpr int kNumStages = 4;
inline const char* stage_name(int stage) {
  static const char* names[] = {"Ambiguity", "Preparation", "Merging", "CarFollowing"};
  return names[stage];
}

struct Event {
  std::string id;
  double dt = 0.1;
  AgentSeries main_car;   // agent in the main lane
  AgentSeries merge_car;  // agent on the ramp
  std::optional<AgentSeries> lead_car;
  Situation situation = Situation::main_yields;
  std::array<int, 3> stage_boundaries{};  // start indices of stages 1..3
  bool has_boundaries = false;

  std::size_t length() const { return main_car.length(); }

  void validate() const {
    const std::size_t T = length();
    if (T < 2) throw std::invalid_argument("Event: too short");
    if (!main_car.consistent() || merge_car.length() != T || !merge_car.consistent())
      throw std::invalid_argument("Event: agent series lengths differ");
    if (lead_car && (lead_car->length() != T || !lead_car->consistent()))
      throw std::invalid_argument("Event: leading-car series length differs");
    if (has_boundaries) {
      if (!(0 < stage_boundaries[0] && stage_boundaries[0] < stage_boundaries[1] &&
            stage_boundaries[1] < stage_boundaries[2] &&
            stage_boundaries[2] < static_cast<int>(T)))
        throw std::invalid_argument("Event: stage boundaries not strictly increasing/interior");
    }
    bool merge_ahead = merge_car.y.back() > main_car.y.back();
    if (merge_ahead != (situation == Situation::main_yields))
      throw std::invalid_argument("Event: situation label inconsistent with final ordering");
  }

  // [stage start, stage end) in step indices
  std::pair<int, int> stage_range(int stage) const {
    if (!has_boundaries) throw std::invalid_argument("Event: no stage boundaries");
    int b0 = stage_boundaries[0], b1 = stage_boundaries[1], b2 = stage_boundaries[2];
    int T = static_cast<int>(length());
    switch (stage) {
      case 0: return {0, b0};
      case 1: return {b0, b1};
      case 2: return {b1, b2};
      case 3: return {b2, T};
      default: throw std::invalid_argument("Event: bad stage index");
    }
  }
};

struct Range {
  double lo = 0, hi = 0;
  double draw(Rng& rng) const { return rng.uniform(lo, hi); }
};

struct GeneratorParams {
  double dt = 0.1;
  Range main_speed{22.0, 30.0};       // m/s
  Range merge_speed{20.0, 28.0};      // m/s
  Range initial_offset{-3.0, 3.0};    // y_main - y_merge at t=0 (m)
  Range ambiguity_s{2.0, 3.5};
  Range preparation_s{2.5, 4.0};
  Range merging_s{1.5, 2.5};
  Range following_s{2.0, 3.5};
  Range yield_decel{1.8, 2.8};        // m/s^2, magnitude
  Range pass_accel{0.5, 1.2};         // m/s^2
  double accel_noise = 0.25;          // m/s^2, behavior noise
  double lateral_noise = 0.01;        // m per step
  double lane_width = 3.5;            // m; merge lane sits at x = -lane_width
  double desired_gap = 10.0;          // m, car-following target
  bool with_lead = false;
  Range lead_gap{25.0, 40.0};         // m ahead of the main car

  void validate() const {
    auto ok = [](const Range& r) { return r.hi >= r.lo; };
    if (!(dt > 0) || !ok(main_speed) || !ok(merge_speed) || !ok(ambiguity_s) ||
        !ok(preparation_s) || !ok(merging_s) || !ok(following_s) || !ok(yield_decel) ||
        !ok(pass_accel) || !(lane_width > 0) || main_speed.lo <= 0 || merge_speed.lo <= 0)
      throw std::invalid_argument("GeneratorParams: empty or non-physical range");
  }
};

namespace detail {

struct Profile {
  std::vector<double> v, y;
};

// Trapezoidal integration so extracted (state, action) pairs replay exactly
// through scene::propagate.
inline void step(Profile& p, double accel, double dt) {
  double v_next = std::max(p.v.back() + accel * dt, 1.0);
  p.y.push_back(p.y.back() + 0.5 * (p.v.back() + v_next) * dt);
  p.v.push_back(v_next);
}

}  // namespace detail

inline Event generate_event(Situation situation, const GeneratorParams& params,
                            std::uint64_t seed) {
  params.validate();
  const double dt = params.dt;

  for (int attempt = 0; attempt < 8; ++attempt) {
    Rng rng(mix_seed(seed, 0x5ce0 + attempt));

    int n_amb = std::max(2, static_cast<int>(std::lround(params.ambiguity_s.draw(rng) / dt)));
    int n_prep = std::max(2, static_cast<int>(std::lround(params.preparation_s.draw(rng) / dt)));
    int n_merge = std::max(2, static_cast<int>(std::lround(params.merging_s.draw(rng) / dt)));
    int n_follow = std::max(2, static_cast<int>(std::lround(params.following_s.draw(rng) / dt)));

    double v_main0 = params.main_speed.draw(rng);
    double v_merge0 = params.merge_speed.draw(rng);
    double offset0 = params.initial_offset.draw(rng);
    // Stronger deceleration on each retry until the ordering flips.
    double decel = params.yield_decel.draw(rng) * (1.0 + 0.4 * attempt);
    double accel = params.pass_accel.draw(rng);

    detail::Profile main_p{{v_main0}, {offset0}};
    detail::Profile merge_p{{v_merge0}, {0.0}};

    const bool main_is_yielder = (situation == Situation::main_yields);
    auto noise = [&] { return params.accel_noise * rng.normal(); };

    for (int k = 0; k < n_amb; ++k) {
      detail::step(main_p, noise(), dt);
      detail::step(merge_p, noise(), dt);
    }
    for (int k = 0; k < n_prep + n_merge; ++k) {
      double relax = (k < n_prep) ? 1.0 : 0.4;  // ease off during the merge itself
      double a_yield = -decel * relax + noise();
      double a_pass = accel * relax + noise();
      detail::step(main_p, main_is_yielder ? a_yield : a_pass, dt);
      detail::step(merge_p, main_is_yielder ? a_pass : a_yield, dt);
    }
    // Car following: the yielder tracks the passer with a simple gap law.
    detail::Profile& leader = main_is_yielder ? merge_p : main_p;
    detail::Profile& follower = main_is_yielder ? main_p : merge_p;
    for (int k = 0; k < n_follow; ++k) {
      detail::step(leader, noise(), dt);
      double gap = leader.y[leader.y.size() - 2] - follower.y.back();
      double a = 0.15 * (gap - params.desired_gap) +
                 0.6 * (leader.v[leader.v.size() - 2] - follower.v.back());
      detail::step(follower, a + noise(), dt);
    }

    bool merge_ahead = merge_p.y.back() > main_p.y.back();
    if (merge_ahead != main_is_yielder) continue;  // retry with stronger yielding

    const int T = static_cast<int>(main_p.y.size());
    Event ev;
    ev.id = std::string(situation_name(situation)) + "_" + std::to_string(seed);
    ev.dt = dt;
    ev.situation = situation;
    ev.has_boundaries = true;
    ev.stage_boundaries = {n_amb, n_amb + n_prep, n_amb + n_prep + n_merge};

    ev.main_car.y = std::move(main_p.y);
    ev.main_car.vy = std::move(main_p.v);
    ev.merge_car.y = std::move(merge_p.y);
    ev.merge_car.vy = std::move(merge_p.v);

    // Lateral tracks: main lane at x = 0, ramp at x = -lane_width with a
    // smooth cosine cut-in during the Merging stage.
    ev.main_car.x.assign(T, 0.0);
    ev.merge_car.x.assign(T, -params.lane_width);
    int m0 = ev.stage_boundaries[1], m1 = ev.stage_boundaries[2];
    for (int k = 0; k < T; ++k) {
      if (k >= m1) {
        ev.merge_car.x[k] = 0.0;
      } else if (k >= m0) {
        double s = static_cast<double>(k - m0) / (m1 - m0);
        ev.merge_car.x[k] = -params.lane_width * 0.5 * (1.0 + std::cos(M_PI * s));
      }
      ev.main_car.x[k] += params.lateral_noise * rng.normal();
      ev.merge_car.x[k] += params.lateral_noise * rng.normal();
    }

    if (params.with_lead) {
      AgentSeries lead;
      double gap0 = params.lead_gap.draw(rng);
      double v_lead = v_main0 + rng.uniform(-1.0, 1.0);
      detail::Profile lead_p{{v_lead}, {offset0 + gap0}};
      for (int k = 1; k < T; ++k) detail::step(lead_p, noise() * 0.5, dt);
      lead.y = std::move(lead_p.y);
      lead.vy = std::move(lead_p.v);
      lead.x.assign(T, 0.0);
      ev.lead_car = std::move(lead);
    }

    ev.validate();
    return ev;
  }
  throw std::runtime_error("generate_event: could not realize the requested situation");
}

inline Event add_noise(const Event& event, double sigma_pos, double sigma_vel,
                       std::uint64_t seed) {
  if (sigma_pos < 0 || sigma_vel < 0) throw std::invalid_argument("add_noise: negative sigma");
  Rng rng(seed);
  Event out = event;
  auto perturb = [&](AgentSeries& a) {
    for (std::size_t k = 0; k < a.length(); ++k) {
      a.x[k] += sigma_pos * rng.normal();
      a.y[k] += sigma_pos * rng.normal();
      a.vy[k] += sigma_vel * rng.normal();
    }
  };
  perturb(out.main_car);
  perturb(out.merge_car);
  if (out.lead_car) perturb(*out.lead_car);
  return out;
}

struct SmootherConfig {
  double process_accel_sd = 1.0;  // m/s^2
  double meas_pos_sd = 0.5;       // m
  double meas_vel_sd = 0.5;       // m/s
};

namespace detail {

// Constant-velocity Kalman filter along one axis, followed by an RTS
// backward pass. Measurements are positions, plus velocities when given.
inline void kalman_smooth_axis(std::vector<double>& pos, std::vector<double>* vel,
                               double dt, const SmootherConfig& cfg) {
  const int T = static_cast<int>(pos.size());
  using Mat2 = Eigen::Matrix2d;
  using Vec2 = Eigen::Vector2d;
  Mat2 F;
  F << 1, dt, 0, 1;
  double q = cfg.process_accel_sd * cfg.process_accel_sd;
  Mat2 Q;
  Q << 0.25 * dt * dt * dt * dt * q, 0.5 * dt * dt * dt * q,
       0.5 * dt * dt * dt * q, dt * dt * q;

  std::vector<Vec2> x_pred(T), x_filt(T);
  std::vector<Mat2> p_pred(T), p_filt(T);

  double v0 = vel ? (*vel)[0] : (T > 1 ? (pos[1] - pos[0]) / dt : 0.0);
  Vec2 x(pos[0], v0);
  Mat2 P = Mat2::Identity() * 1.0;

  for (int k = 0; k < T; ++k) {
    if (k > 0) {
      x = F * x;
      P = F * P * F.transpose() + Q;
    }
    x_pred[k] = x;
    p_pred[k] = P;

    if (vel) {
      Mat2 H = Mat2::Identity();
      Mat2 R = Mat2::Zero();
      R(0, 0) = cfg.meas_pos_sd * cfg.meas_pos_sd;
      R(1, 1) = cfg.meas_vel_sd * cfg.meas_vel_sd;
      Vec2 z(pos[k], (*vel)[k]);
      Mat2 S = H * P * H.transpose() + R;
      Mat2 K = P * H.transpose() * S.inverse();
      x = x + K * (z - H * x);
      P = (Mat2::Identity() - K * H) * P;
    } else {
      Eigen::RowVector2d H(1, 0);
      double S = (H * P * H.transpose())(0) + cfg.meas_pos_sd * cfg.meas_pos_sd;
      Vec2 K = P * H.transpose() / S;
      x = x + K * (pos[k] - (H * x)(0));
      P = (Mat2::Identity() - K * H) * P;
    }
    x_filt[k] = x;
    p_filt[k] = P;
  }

  // RTS backward pass
  Vec2 xs = x_filt[T - 1];
  Mat2 Ps = p_filt[T - 1];
  pos[T - 1] = xs[0];
  if (vel) (*vel)[T - 1] = xs[1];
  for (int k = T - 2; k >= 0; --k) {
    Mat2 G = p_filt[k] * F.transpose() * p_pred[k + 1].inverse();
    xs = x_filt[k] + G * (xs - x_pred[k + 1]);
    Ps = p_filt[k] + G * (Ps - p_pred[k + 1]) * G.transpose();
    pos[k] = xs[0];
    if (vel) (*vel)[k] = xs[1];
  }
}

}  // namespace detail

inline AgentSeries ekf_smooth(const AgentSeries& series, double dt, const SmootherConfig& cfg) {
  if (series.length() < 2) throw std::invalid_argument("ekf_smooth: need at least 2 steps");
  for (std::size_t k = 0; k < series.length(); ++k) {
    if (!std::isfinite(series.x[k]) || !std::isfinite(series.y[k]) ||
        !std::isfinite(series.vy[k]))
      throw std::invalid_argument("ekf_smooth: non-finite input");
  }
  AgentSeries out = series;
  detail::kalman_smooth_axis(out.y, &out.vy, dt, cfg);
  detail::kalman_smooth_axis(out.x, nullptr, dt, cfg);
  return out;
}

inline Event smooth_event(const Event& event, const SmootherConfig& cfg) {
  Event out = event;
  out.main_car = ekf_smooth(event.main_car, event.dt, cfg);
  out.merge_car = ekf_smooth(event.merge_car, event.dt, cfg);
  if (event.lead_car) out.lead_car = ekf_smooth(*event.lead_car, event.dt, cfg);
  return out;
}

// Central-difference acceleration, one-sided at the ends.
inline std::vector<double> finite_diff_accel(const std::vector<double>& v, double dt) {
  const int T = static_cast<int>(v.size());
  std::vector<double> a(T, 0.0);
  if (T < 2) return a;
  a[0] = (v[1] - v[0]) / dt;
  a[T - 1] = (v[T - 1] - v[T - 2]) / dt;
  for (int k = 1; k + 1 < T; ++k) a[k] = (v[k + 1] - v[k - 1]) / (2.0 * dt);
  return a;
}

inline scene::SceneState state_at(const Event& event, int k,
                                  const std::vector<double>& a1,
                                  const std::vector<double>& a2) {
  scene::SceneState s;
  s.y1 = event.main_car.y[k];
  s.y2 = event.merge_car.y[k];
  s.x1 = event.main_car.x[k];
  s.x2 = event.merge_car.x[k];
  s.d1 = std::abs(s.x1 - s.x2);
  s.vy1 = event.main_car.vy[k];
  s.vy2 = event.merge_car.vy[k];
  s.ay1 = a1[k];
  s.ay2 = a2[k];
  if (event.lead_car) {
    s.has_lead = true;
    s.lead_y = event.lead_car->y[k];
    s.lead_vy = event.lead_car->vy[k];
  }
  return s;
}

inline scene::SceneState state_at(const Event& event, int k) {
  auto a1 = finite_diff_accel(event.main_car.vy, event.dt);
  auto a2 = finite_diff_accel(event.merge_car.vy, event.dt);
  return state_at(event, k, a1, a2);
}

struct ExtractedFeatures {
  hmm::ObservationSequence raw;  // one row per step, Table schema
  std::vector<std::pair<scene::SceneState, scene::SceneAction>> pairs;
};

inline ExtractedFeatures extract_features(const Event& event) {
  event.validate();
  const int T = static_cast<int>(event.length());
  auto a1 = finite_diff_accel(event.main_car.vy, event.dt);
  auto a2 = finite_diff_accel(event.merge_car.vy, event.dt);

  const int dim = event.lead_car ? 9 : 7;
  ExtractedFeatures out;
  out.raw.dt = event.dt;
  out.raw.values.resize(T, dim);
  for (int k = 0; k < T; ++k)
    out.raw.values.row(k) = state_at(event, k, a1, a2).se_vector().transpose();

  out.pairs.reserve(T - 1);
  for (int k = 0; k + 1 < T; ++k) {
    scene::SceneAction act;
    act.dx1 = event.main_car.x[k + 1] - event.main_car.x[k];
    act.dx2 = event.merge_car.x[k + 1] - event.merge_car.x[k];
    act.vy1_next = event.main_car.vy[k + 1];
    act.vy2_next = event.merge_car.vy[k + 1];
    out.pairs.emplace_back(state_at(event, k, a1, a2), act);
  }
  return out;
}

// --- CSV interchange ------------------------------------------------------

inline void save_event_csv(const Event& event, std::ostream& os) {
  os << "event_id,agent,frame,x,y,vy\n";
  char buf[256];
  auto dump = [&](const char* agent, const AgentSeries& a) {
    for (std::size_t k = 0; k < a.length(); ++k) {
      std::snprintf(buf, sizeof(buf), "%s,%s,%zu,%.17g,%.17g,%.17g\n", event.id.c_str(),
                    agent, k, a.x[k], a.y[k], a.vy[k]);
      os << buf;
    }
  };
  dump("main", event.main_car);
  dump("merge", event.merge_car);
  if (event.lead_car) dump("lead", *event.lead_car);
}

inline void save_event_csv(const Event& event, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  save_event_csv(event, os);
}

struct ColumnMap {
  std::string event_id = "event_id";
  std::string agent = "agent";
  std::string frame = "frame";
  std::string x = "x";
  std::string y = "y";
  std::string vy = "vy";  // optional in the file
  std::string main_agent = "main";
  std::string merge_agent = "merge";
  std::string lead_agent = "lead";
};

struct LoadResult {
  std::vector<Event> events;
  std::vector<std::string> diagnostics;  // one entry per rejected event
};

inline LoadResult load_events_csv(std::istream& is, const ColumnMap& map, double dt) {
  std::string header;
  if (!std::getline(is, header)) throw std::invalid_argument("load_events_csv: empty file");

  std::vector<std::string> cols;
  {
    std::stringstream ss(header);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
  }
  auto col_index = [&](const std::string& name, bool required) {
    for (std::size_t i = 0; i < cols.size(); ++i)
      if (cols[i] == name) return static_cast<int>(i);
    if (required) throw std::invalid_argument("load_events_csv: missing column " + name);
    return -1;
  };
  int ci_event = col_index(map.event_id, true);
  int ci_agent = col_index(map.agent, true);
  int ci_frame = col_index(map.frame, true);
  int ci_x = col_index(map.x, true);
  int ci_y = col_index(map.y, true);
  int ci_vy = col_index(map.vy, false);

  struct Row {
    long frame;
    double x, y, vy;
    bool has_vy;
  };
  // event id -> agent -> rows, insertion-ordered by event
  std::vector<std::string> event_order;
  std::map<std::string, std::map<std::string, std::vector<Row>>> table;

  std::string line;
  long line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) f.push_back(c);
    int needed = std::max({ci_event, ci_agent, ci_frame, ci_x, ci_y, ci_vy});
    if (static_cast<int>(f.size()) <= needed)
      throw std::invalid_argument("load_events_csv: short row at line " +
                                  std::to_string(line_no));
    Row r;
    r.frame = std::stol(f[ci_frame]);
    r.x = std::stod(f[ci_x]);
    r.y = std::stod(f[ci_y]);
    r.has_vy = ci_vy >= 0;
    r.vy = r.has_vy ? std::stod(f[ci_vy]) : 0.0;
    const std::string& eid = f[ci_event];
    if (!table.count(eid)) event_order.push_back(eid);
    table[eid][f[ci_agent]].push_back(r);
  }

  LoadResult result;
  for (const std::string& eid : event_order) {
    auto& agents = table[eid];
    try {
      auto build = [&](const std::string& name) {
        if (!agents.count(name))
          throw std::invalid_argument("missing agent '" + name + "'");
        auto& rows = agents[name];
        AgentSeries s;
        for (std::size_t k = 0; k < rows.size(); ++k) {
          if (k > 0 && rows[k].frame <= rows[k - 1].frame)
            throw std::invalid_argument("non-monotone frames for agent '" + name + "'");
          s.x.push_back(rows[k].x);
          s.y.push_back(rows[k].y);
          s.vy.push_back(rows[k].vy);
        }
        if (!rows.empty() && !rows[0].has_vy) {
          // velocities by finite differences of positions
          s.vy = finite_diff_accel(s.y, dt);  // d/dt of positions
        }
        return s;
      };
      Event ev;
      ev.id = eid;
      ev.dt = dt;
      ev.main_car = build(map.main_agent);
      ev.merge_car = build(map.merge_agent);
      if (agents.count(map.lead_agent)) ev.lead_car = build(map.lead_agent);
      std::size_t T = ev.main_car.length();
      if (ev.merge_car.length() != T || (ev.lead_car && ev.lead_car->length() != T))
        throw std::invalid_argument("ragged agent series");
      // Loaded events carry no boundaries or label; infer the label from the
      // final ordering so the event is at least evaluable.
      ev.situation = ev.merge_car.y.back() > ev.main_car.y.back()
                         ? Situation::main_yields
                         : Situation::merge_yields;
      ev.has_boundaries = false;
      ev.validate();
      result.events.push_back(std::move(ev));
    } catch (const std::exception& e) {
      result.diagnostics.push_back("event " + eid + ": " + e.what());
    }
  }
  return result;
}

inline LoadResult load_events_csv(const std::string& path, const ColumnMap& map, double dt) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  return load_events_csv(is, map, dt);
}

}  // namespace situ::scenario
