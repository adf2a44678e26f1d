#include <catch2/catch_amalgamated.hpp>

#include <situ/scene.hpp>

using namespace situ;
using scene::SceneAction;
using scene::SceneState;
using Catch::Approx;

namespace {

// Joint [se | a] model over dim 11 with independent action block.
scene::SituationActionModel make_model(const VectorXd& action_mean, double action_var) {
  scene::SituationActionModel m;
  m.mixture.weights = VectorXd::Ones(1);
  VectorXd mu = VectorXd::Zero(11);
  mu.segment(7, 4) = action_mean;
  MatrixXd cov = MatrixXd::Identity(11, 11);
  cov.block(7, 7, 4, 4) *= action_var;
  m.mixture.components.emplace_back(mu, cov);
  m.partition.se_indices = {0, 1, 2, 3, 4, 5, 6};
  m.partition.a_indices = {7, 8, 9, 10};
  return m;
}

VectorXd delta_action(double dx1, double dx2, double v1, double v2) {
  VectorXd a(4);
  a << dx1, dx2, v1, v2;
  return a;
}

}  // namespace

TEST_CASE("propagate: uniform motion") {
  SceneState s;
  s.y1 = 5.0;
  s.vy1 = 3.0;
  s.vy2 = 2.0;
  s.y2 = 1.0;
  SceneAction a{0.0, 0.0, 3.0, 2.0};
  auto next = scene::propagate(s, a, 0.1);
  CHECK(next.y1 == Approx(5.3).margin(1e-12));
  CHECK(next.y2 == Approx(1.2).margin(1e-12));
  CHECK(next.ay1 == Approx(0.0).margin(1e-12));
  CHECK(next.x1 == Approx(0.0).margin(1e-12));
}

TEST_CASE("propagate: trapezoidal velocity change arithmetic") {
  SceneState s;  // vy = 0
  SceneAction a{0.0, 0.0, 2.0, 0.0};
  auto next = scene::propagate(s, a, 0.1);
  CHECK(next.y1 == Approx(0.1).margin(1e-12));
  CHECK(next.ay1 == Approx(20.0).margin(1e-12));
}

TEST_CASE("propagate: mirrored lateral actions keep d1 constant") {
  SceneState s;
  s.x1 = 0.0;
  s.x2 = -3.5;
  s.d1 = 3.5;
  SceneAction a{0.25, 0.25, 0.0, 0.0};
  auto next = scene::propagate(s, a, 0.1);
  CHECK(next.d1 == Approx(3.5).margin(1e-12));
}

TEST_CASE("propagate: velocity and position invert algebraically") {
  SceneState s;
  s.y1 = 2.0;
  s.vy1 = 4.0;
  SceneAction a{0.1, -0.1, 6.0, 1.0};
  double dt = 0.1;
  auto next = scene::propagate(s, a, dt);
  // recover the previous state from (next, action)
  double vy1_old = 2.0 * (next.y1 - s.y1) / dt - next.vy1;
  CHECK(vy1_old == Approx(s.vy1).margin(1e-12));
  CHECK(next.x1 - a.dx1 == Approx(s.x1).margin(1e-12));
}

TEST_CASE("sample_action: degenerate posterior always picks that situation") {
  std::vector<scene::SituationActionModel> models = {make_model(delta_action(0, 0, 1, 1), 1.0),
                                                     make_model(delta_action(9, 9, 9, 9), 1.0)};
  VectorXd posterior(2);
  posterior << 1.0, 0.0;
  SceneState s;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto [action, idx] = scene::sample_action(models, posterior, s, seed);
    CHECK(idx == 0);
  }
}

TEST_CASE("sample_action: zero cross-covariance action stats match the marginal") {
  VectorXd mu_a = delta_action(0.5, -0.5, 10.0, 8.0);
  std::vector<scene::SituationActionModel> models = {make_model(mu_a, 1.0)};
  VectorXd posterior = VectorXd::Ones(1);
  SceneState s;
  s.y1 = 100.0;  // far from the SE mean; must not matter

  const int n = 10000;
  VectorXd sum = VectorXd::Zero(4);
  for (int i = 0; i < n; ++i) {
    auto [action, idx] = scene::sample_action(models, posterior, s, 1000 + i);
    sum += action.vector();
  }
  VectorXd emp = sum / n;
  double se = 1.0 / std::sqrt(static_cast<double>(n));
  for (int d = 0; d < 4; ++d) CHECK(std::abs(emp[d] - mu_a[d]) < 5.0 * se);
}

TEST_CASE("sample_action: half-half posterior over identical models matches either") {
  auto m = make_model(delta_action(0, 0, 5, 5), 1.0);
  std::vector<scene::SituationActionModel> two = {m, m};
  std::vector<scene::SituationActionModel> one = {m};
  VectorXd p2(2), p1(1);
  p2 << 0.5, 0.5;
  p1 << 1.0;
  SceneState s;

  const int n = 10000;
  std::vector<double> a_mix, a_one;
  for (int i = 0; i < n; ++i) {
    a_mix.push_back(scene::sample_action(two, p2, s, 50000 + i).first.vy1_next);
    a_one.push_back(scene::sample_action(one, p1, s, 90000 + i).first.vy1_next);
  }
  std::sort(a_mix.begin(), a_mix.end());
  std::sort(a_one.begin(), a_one.end());
  // two-sample KS statistic
  double ks = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a_mix.size() && j < a_one.size()) {
    if (a_mix[i] <= a_one[j]) ++i;
    else ++j;
    ks = std::max(ks, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / n));
  }
  CHECK(ks < 0.02);
}

TEST_CASE("rollout: horizon 1 gives exactly one transition") {
  std::vector<scene::SituationActionModel> models = {make_model(delta_action(0, 0, 1, 1), 0.01)};
  VectorXd posterior = VectorXd::Ones(1);
  auto ens = scene::rollout(models, posterior, SceneState{}, 1, 10, 0.1, 7);
  CHECK(ens.samples.size() == 10);
  for (const auto& t : ens.samples) CHECK(t.size() == 2);
}

TEST_CASE("rollout: delta-like action model collapses to one trajectory") {
  std::vector<scene::SituationActionModel> models = {
      make_model(delta_action(0.01, 0.02, 10.0, 9.0), kCovFloor)};
  VectorXd posterior = VectorXd::Ones(1);
  SceneState init;
  init.vy1 = 10.0;
  init.vy2 = 9.0;
  auto ens = scene::rollout(models, posterior, init, 20, 50, 0.1, 3);
  const auto& ref = ens.samples[0];
  for (const auto& t : ens.samples) {
    for (std::size_t k = 0; k < t.size(); ++k) {
      CHECK(std::abs(t[k].y1 - ref[k].y1) < 0.05);
      CHECK(std::abs(t[k].x2 - ref[k].x2) < 0.05);
    }
  }
}

TEST_CASE("rollout: concentrated posterior equals the single-situation rollout") {
  std::vector<scene::SituationActionModel> models = {make_model(delta_action(0, 0, 10, 9), 0.5),
                                                     make_model(delta_action(0, 0, 1, 1), 0.5)};
  VectorXd concentrated(2), single(1);
  concentrated << 1.0, 0.0;
  single << 1.0;
  std::vector<scene::SituationActionModel> only = {models[0]};
  auto a = scene::rollout(models, concentrated, SceneState{}, 10, 100, 0.1, 11);
  auto b = scene::rollout(only, single, SceneState{}, 10, 100, 0.1, 11);
  for (int s : a.situation_of_sample) CHECK(s == 0);
  for (std::size_t s = 0; s < a.samples.size(); ++s)
    for (std::size_t k = 0; k < a.samples[s].size(); ++k)
      CHECK(a.samples[s][k].y1 == Approx(b.samples[s][k].y1).margin(1e-12));
}

TEST_CASE("rollout: seeded determinism") {
  std::vector<scene::SituationActionModel> models = {make_model(delta_action(0, 0, 5, 5), 1.0)};
  VectorXd posterior = VectorXd::Ones(1);
  auto a = scene::rollout(models, posterior, SceneState{}, 5, 20, 0.1, 99);
  auto b = scene::rollout(models, posterior, SceneState{}, 5, 20, 0.1, 99);
  for (std::size_t s = 0; s < a.samples.size(); ++s)
    for (std::size_t k = 0; k < a.samples[s].size(); ++k)
      CHECK(a.samples[s][k].y2 == b.samples[s][k].y2);
}

TEST_CASE("rollout: doubling sample count moves per-step means by little") {
  std::vector<scene::SituationActionModel> models = {make_model(delta_action(0, 0, 10, 9), 0.5)};
  VectorXd posterior = VectorXd::Ones(1);
  SceneState init;
  init.vy1 = 10.0;
  auto a = scene::rollout(models, posterior, init, 10, 10000, 0.1, 5);
  auto b = scene::rollout(models, posterior, init, 10, 20000, 0.1, 6);
  auto sa = scene::ensemble_position_stats(a, 0);
  auto sb = scene::ensemble_position_stats(b, 0);
  for (std::size_t k = 1; k < sa.size(); ++k) {
    double se = std::sqrt(sa[k].cov(1, 1) / sa[k].count + sb[k].cov(1, 1) / sb[k].count);
    CHECK(std::abs(sa[k].mean[1] - sb[k].mean[1]) < 3.0 * std::max(se, 1e-9));
  }
}

TEST_CASE("heatmap: deterministic sample deposits one count per step") {
  std::vector<scene::SituationActionModel> models = {
      make_model(delta_action(0.0, 0.0, 10.0, 9.0), kCovFloor)};
  VectorXd posterior = VectorXd::Ones(1);
  SceneState init;
  init.vy1 = 10.0;
  init.vy2 = 9.0;
  init.x2 = -3.5;
  auto ens = scene::rollout(models, posterior, init, 5, 1, 0.1, 1);
  scene::GridSpec spec{-5.0, 5.0, -1.0, 7.0, 0.5, 0.5};
  auto grid = scene::occupancy_heatmap(ens, spec);
  CHECK(grid.counts[0].sum() == Approx(5.0));
  CHECK(grid.counts[1].sum() == Approx(5.0));

  auto norm = scene::occupancy_heatmap(ens, spec, true);
  CHECK(norm.counts[0].sum() == Approx(1.0).margin(1e-9));
  CHECK(norm.counts[1].sum() == Approx(1.0).margin(1e-9));
}

TEST_CASE("heatmap: zero-area cells rejected") {
  scene::TrajectoryEnsemble ens;
  scene::GridSpec spec;
  spec.cell_dx = 0.0;
  CHECK_THROWS_AS(scene::occupancy_heatmap(ens, spec), std::invalid_argument);
}

TEST_CASE("heatmap: isotropic Gaussian cloud matches analytic cell integrals") {
  // Build an ensemble whose step-1 positions are N(0, I) draws.
  Rng rng(17);
  scene::TrajectoryEnsemble ens;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    scene::SceneState a, b;
    b.x1 = rng.normal();
    b.y1 = rng.normal();
    b.x2 = rng.normal();
    b.y2 = rng.normal();
    ens.samples.push_back({a, b});
    ens.situation_of_sample.push_back(0);
    ens.truncated.push_back(false);
  }
  scene::GridSpec spec{-6.0, 6.0, -6.0, 6.0, 1.0, 1.0};
  auto grid = scene::occupancy_heatmap(ens, spec, true);
  auto phi = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  double sup_err = 0.0;
  for (int r = 0; r < spec.ny(); ++r) {
    for (int c = 0; c < spec.nx(); ++c) {
      double px = phi(spec.x_min + (c + 1) * spec.cell_dx) - phi(spec.x_min + c * spec.cell_dx);
      double py = phi(spec.y_min + (r + 1) * spec.cell_dy) - phi(spec.y_min + r * spec.cell_dy);
      sup_err = std::max(sup_err, std::abs(grid.counts[0](r, c) - px * py));
    }
  }
  CHECK(sup_err < 0.01);
}
