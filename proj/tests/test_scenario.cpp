#include <catch2/catch_amalgamated.hpp>

#include <situ/scenario.hpp>

#include <sstream>

using namespace situ;
using scenario::Event;
using scenario::GeneratorParams;
using scenario::Situation;
using Catch::Approx;

TEST_CASE("generate_event: label matches the constructed final ordering") {
  GeneratorParams params;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto main_ev = scenario::generate_event(Situation::main_yields, params, seed);
    CHECK(main_ev.merge_car.y.back() > main_ev.main_car.y.back());

    auto merge_ev = scenario::generate_event(Situation::merge_yields, params, seed);
    CHECK(merge_ev.main_car.y.back() > merge_ev.merge_car.y.back());
    // the yielding merge car dips below its ambiguity mean speed
    double amb_mean = 0.0;
    int n_amb = merge_ev.stage_boundaries[0];
    for (int k = 0; k < n_amb; ++k) amb_mean += merge_ev.merge_car.vy[k];
    amb_mean /= n_amb;
    double min_prep = 1e9;
    for (int k = merge_ev.stage_boundaries[0]; k < merge_ev.stage_boundaries[1]; ++k)
      min_prep = std::min(min_prep, merge_ev.merge_car.vy[k]);
    CHECK(min_prep < amb_mean);
  }
}

TEST_CASE("generate_event: event invariants hold over many seeds and params") {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    Rng rng(mix_seed(seed, 0xabc));
    GeneratorParams params;
    params.main_speed = {18.0 + 8.0 * rng.uniform(), 28.0 + 6.0 * rng.uniform()};
    params.merge_speed = {16.0 + 8.0 * rng.uniform(), 26.0 + 6.0 * rng.uniform()};
    params.accel_noise = 0.1 + 0.4 * rng.uniform();
    Situation situation = seed % 2 == 0 ? Situation::main_yields : Situation::merge_yields;
    auto ev = scenario::generate_event(situation, params, seed);
    CHECK_NOTHROW(ev.validate());
    auto features = scenario::extract_features(ev);
    CHECK(features.raw.values.allFinite());
    CHECK(features.raw.values.col(2).minCoeff() >= 0.0);  // d1
  }
}

TEST_CASE("generate_event: seeded determinism and balanced 128-event roster") {
  GeneratorParams params;
  auto a = scenario::generate_event(Situation::main_yields, params, 17);
  auto b = scenario::generate_event(Situation::main_yields, params, 17);
  CHECK(a.main_car.y == b.main_car.y);
  CHECK(a.merge_car.x == b.merge_car.x);

  int mains = 0;
  for (std::uint64_t seed = 0; seed < 128; ++seed) {
    Situation s = seed % 2 == 0 ? Situation::main_yields : Situation::merge_yields;
    if (scenario::generate_event(s, params, seed).situation == Situation::main_yields) ++mains;
  }
  CHECK(mains == 64);
}

TEST_CASE("generate_event: infeasible params rejected") {
  GeneratorParams params;
  params.main_speed = {30.0, 20.0};  // empty range
  CHECK_THROWS_AS(scenario::generate_event(Situation::main_yields, params, 0),
                  std::invalid_argument);
}

TEST_CASE("add_noise: sigma 0 is the identity, fixed seed repeats") {
  auto ev = scenario::generate_event(Situation::main_yields, GeneratorParams{}, 3);
  auto clean = scenario::add_noise(ev, 0.0, 0.0, 5);
  CHECK(clean.main_car.y == ev.main_car.y);

  auto n1 = scenario::add_noise(ev, 0.4, 0.2, 5);
  auto n2 = scenario::add_noise(ev, 0.4, 0.2, 5);
  CHECK(n1.merge_car.y == n2.merge_car.y);
  CHECK(n1.stage_boundaries == ev.stage_boundaries);
  CHECK(n1.situation == ev.situation);
}

TEST_CASE("add_noise: empirical std close to sigma") {
  auto ev = scenario::generate_event(Situation::main_yields, GeneratorParams{}, 3);
  double sigma = 0.5;
  double sum2 = 0.0;
  long count = 0;
  for (std::uint64_t seed = 0; count < 100000; ++seed) {
    auto noisy = scenario::add_noise(ev, sigma, 0.0, seed);
    for (std::size_t k = 0; k < ev.length(); ++k) {
      double d = noisy.main_car.y[k] - ev.main_car.y[k];
      sum2 += d * d;
      ++count;
    }
  }
  double emp = std::sqrt(sum2 / count);
  CHECK(emp == Approx(sigma).epsilon(0.02));
}

TEST_CASE("ekf_smooth: noiseless constant velocity is reproduced after burn-in") {
  scenario::AgentSeries s;
  double dt = 0.1;
  for (int k = 0; k < 60; ++k) {
    s.y.push_back(10.0 * k * dt);
    s.vy.push_back(10.0);
    s.x.push_back(0.0);
  }
  auto out = scenario::ekf_smooth(s, dt, scenario::SmootherConfig{});
  for (int k = 5; k < 60; ++k) CHECK(std::abs(out.y[k] - s.y[k]) < 1e-6);
}

TEST_CASE("ekf_smooth: reduces RMSE on noisy constant-velocity tracks, every trial") {
  double dt = 0.1;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(trial);
    scenario::AgentSeries clean, noisy;
    for (int k = 0; k < 80; ++k) {
      double y = 12.0 * k * dt;
      clean.y.push_back(y);
      clean.vy.push_back(12.0);
      clean.x.push_back(0.0);
      noisy.y.push_back(y + 0.5 * rng.normal());
      noisy.vy.push_back(12.0 + 0.5 * rng.normal());
      noisy.x.push_back(0.0);
    }
    auto smoothed = scenario::ekf_smooth(noisy, dt, scenario::SmootherConfig{});
    double raw_se = 0.0, smooth_se = 0.0;
    for (int k = 0; k < 80; ++k) {
      raw_se += std::pow(noisy.y[k] - clean.y[k], 2);
      smooth_se += std::pow(smoothed.y[k] - clean.y[k], 2);
    }
    CHECK(smooth_se < raw_se);
  }
}

TEST_CASE("ekf_smooth: length-2 input survives, non-finite rejected") {
  scenario::AgentSeries s;
  s.y = {0.0, 1.0};
  s.vy = {10.0, 10.0};
  s.x = {0.0, 0.0};
  auto out = scenario::ekf_smooth(s, 0.1, scenario::SmootherConfig{});
  CHECK(out.y.size() == 2);

  s.y[1] = std::nan("");
  CHECK_THROWS_AS(scenario::ekf_smooth(s, 0.1, scenario::SmootherConfig{}),
                  std::invalid_argument);
}

namespace {

Event hand_built_event() {
  // 4-step fixture with trapezoid-consistent positions
  Event ev;
  ev.id = "fixture";
  ev.dt = 0.1;
  ev.situation = Situation::main_yields;
  ev.has_boundaries = false;
  ev.main_car.vy = {10.0, 10.0, 12.0, 12.0};
  ev.main_car.y = {0.0, 1.0, 2.1, 3.3};
  ev.main_car.x = {0.0, 0.0, 0.1, 0.1};
  ev.merge_car.vy = {8.0, 8.0, 8.0, 20.0};
  ev.merge_car.y = {1.0, 1.8, 2.6, 4.0};
  ev.merge_car.x = {-3.5, -3.0, -2.0, 0.0};
  return ev;
}

}  // namespace

TEST_CASE("extract_features: hand-built fixture matches manual arithmetic") {
  Event ev = hand_built_event();
  auto out = scenario::extract_features(ev);
  REQUIRE(out.raw.values.rows() == 4);
  REQUIRE(out.raw.values.cols() == 7);

  // step 1: y1=1.0, y2=1.8, d1=|0-(-3)|=3, vy1=10, vy2=8
  CHECK(out.raw.values(1, 0) == Approx(1.0));
  CHECK(out.raw.values(1, 1) == Approx(1.8));
  CHECK(out.raw.values(1, 2) == Approx(3.0));
  CHECK(out.raw.values(1, 3) == Approx(10.0));
  CHECK(out.raw.values(1, 4) == Approx(8.0));
  // central-difference accelerations at step 1: (12-10)/0.2 = 10; (8-8)/0.2 = 0
  CHECK(out.raw.values(1, 5) == Approx(10.0));
  CHECK(out.raw.values(1, 6) == Approx(0.0));
  // one-sided at step 0: (10-10)/0.1 = 0; (8-8)/0.1 = 0
  CHECK(out.raw.values(0, 5) == Approx(0.0));
  // one-sided at the last step: (12-12)/0.1 = 0; (20-8)/0.1 = 120
  CHECK(out.raw.values(3, 6) == Approx(120.0));

  REQUIRE(out.pairs.size() == 3);
  CHECK(out.pairs[1].second.dx1 == Approx(0.1));
  CHECK(out.pairs[1].second.dx2 == Approx(1.0));
  CHECK(out.pairs[1].second.vy1_next == Approx(12.0));
  CHECK(out.pairs[1].second.vy2_next == Approx(8.0));
}

TEST_CASE("extract_features: uniform motion has zero acceleration columns") {
  Event ev;
  ev.id = "uniform";
  ev.dt = 0.1;
  ev.situation = Situation::merge_yields;
  for (int k = 0; k < 10; ++k) {
    ev.main_car.y.push_back(2.0 + 1.5 * k * 0.1);
    ev.main_car.vy.push_back(1.5);
    ev.main_car.x.push_back(0.0);
    ev.merge_car.y.push_back(1.0 * k * 0.1);
    ev.merge_car.vy.push_back(1.0);
    ev.merge_car.x.push_back(-3.5);
  }
  auto out = scenario::extract_features(ev);
  CHECK(out.raw.values.col(5).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(out.raw.values.col(6).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("extract_features: propagate replays extracted pairs") {
  auto ev = scenario::generate_event(Situation::main_yields, GeneratorParams{}, 9);
  auto out = scenario::extract_features(ev);
  for (std::size_t k = 0; k + 1 < out.pairs.size(); ++k) {
    auto next = scene::propagate(out.pairs[k].first, out.pairs[k].second, ev.dt);
    CHECK(std::abs(next.y1 - out.pairs[k + 1].first.y1) < 1e-6);
    CHECK(std::abs(next.y2 - out.pairs[k + 1].first.y2) < 1e-6);
    CHECK(std::abs(next.x1 - out.pairs[k + 1].first.x1) < 1e-6);
    CHECK(std::abs(next.x2 - out.pairs[k + 1].first.x2) < 1e-6);
    CHECK(std::abs(next.vy1 - out.pairs[k + 1].first.vy1) < 1e-6);
    CHECK(std::abs(next.vy2 - out.pairs[k + 1].first.vy2) < 1e-6);
  }
}

TEST_CASE("csv: export and reload round-trips exactly") {
  auto ev = scenario::generate_event(Situation::main_yields, GeneratorParams{}, 21);
  std::stringstream ss;
  scenario::save_event_csv(ev, ss);
  auto loaded = scenario::load_events_csv(ss, scenario::ColumnMap{}, ev.dt);
  REQUIRE(loaded.events.size() == 1);
  REQUIRE(loaded.diagnostics.empty());
  const Event& back = loaded.events[0];
  REQUIRE(back.length() == ev.length());
  for (std::size_t k = 0; k < ev.length(); ++k) {
    CHECK(back.main_car.y[k] == Approx(ev.main_car.y[k]).margin(1e-9));
    CHECK(back.merge_car.x[k] == Approx(ev.merge_car.x[k]).margin(1e-9));
    CHECK(back.main_car.vy[k] == Approx(ev.main_car.vy[k]).margin(1e-9));
  }
}

TEST_CASE("csv: one malformed event among three yields two events and a diagnostic") {
  std::stringstream ss;
  ss << "event_id,agent,frame,x,y,vy\n";
  auto emit = [&](const std::string& id, const std::string& agent, int frame, double y) {
    ss << id << "," << agent << "," << frame << ",0.0," << y << ",10.0\n";
  };
  for (const std::string& id : {"a", "b", "c"}) {
    for (int k = 0; k < 5; ++k) {
      emit(id, "main", k, 1.0 + k);
      if (!(id == "b" && k == 3)) emit(id, "merge", k, 0.5 + k);  // b is ragged
    }
  }
  auto loaded = scenario::load_events_csv(ss, scenario::ColumnMap{}, 0.1);
  CHECK(loaded.events.size() == 2);
  REQUIRE(loaded.diagnostics.size() == 1);
  CHECK(loaded.diagnostics[0].find("b") != std::string::npos);
}

TEST_CASE("csv: velocities reconstructed from positions when absent") {
  std::stringstream ss;
  ss << "event_id,agent,frame,x,y\n";
  for (int k = 0; k < 20; ++k) {
    ss << "e,main," << k << ",0.0," << 1.0 * k << "\n";
    ss << "e,merge," << k << ",-3.5," << 0.9 * k << "\n";
  }
  auto loaded = scenario::load_events_csv(ss, scenario::ColumnMap{}, 0.1);
  REQUIRE(loaded.events.size() == 1);
  for (double v : loaded.events[0].main_car.vy) CHECK(v == Approx(10.0).margin(1e-6));
}
