// Command-line front end: dataset generation, training, inference,
// prediction rollout, transfer experiments, and evaluation reports.
#include <CLI11.hpp>

#include <situ/io.hpp>

#include <iostream>

using namespace situ;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Ctx {
  std::map<std::string, std::string> cfg;       // file values + flag overrides
  std::map<std::string, std::string> effective; // every key actually consulted
  fs::path out;
  bool verbose = false;
  std::vector<std::string> files;               // run-relative outputs

  std::string get(const std::string& key, const std::string& fallback) {
    auto it = cfg.find(key);
    std::string v = it == cfg.end() ? fallback : it->second;
    effective[key] = v;
    return v;
  }
  long geti(const std::string& key, long fallback) {
    return std::stol(get(key, std::to_string(fallback)));
  }
  double getd(const std::string& key, double fallback) {
    return std::stod(get(key, io::fmt(fallback)));
  }
  std::uint64_t getu(const std::string& key, std::uint64_t fallback) {
    return std::stoull(get(key, std::to_string(fallback)));
  }
  bool getb(const std::string& key, bool fallback) {
    std::string v = get(key, fallback ? "1" : "0");
    return v == "1" || v == "true" || v == "yes";
  }

  std::ofstream open(const std::string& name) {
    std::ofstream os(out / name);
    if (!os) throw std::runtime_error("cannot write " + (out / name).string());
    files.push_back(name);
    return os;
  }
  void note_file(const std::string& name) { files.push_back(name); }
};

void load_config_file(Ctx& ctx, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config file " + path);
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto strip = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    std::string t = strip(line);
    if (t.empty()) continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                  ": expected key=value");
    ctx.cfg[strip(t.substr(0, eq))] = strip(t.substr(eq + 1));
  }
}

void apply_overrides(Ctx& ctx, const std::vector<std::string>& sets) {
  for (const std::string& s : sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    ctx.cfg[s.substr(0, eq)] = s.substr(eq + 1);
  }
}

std::string default_run_dir(const std::string& command) {
  std::time_t now = std::time(nullptr);
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", std::localtime(&now));
  return "run-" + command + "-" + buf;
}

// Echoed into every run directory so a run can be reproduced from its output.
void finish_run(Ctx& ctx, const std::string& command) {
  {
    std::ofstream os(ctx.out / "config.txt");
    os << "command = " << command << "\n";
    for (const auto& [k, v] : ctx.effective) os << k << " = " << v << "\n";
  }
  ctx.files.push_back("config.txt");
  std::sort(ctx.files.begin(), ctx.files.end());
  json manifest;
  manifest["command"] = command;
  manifest["files"] = ctx.files;
  io::write_json(manifest, ctx.out / "manifest.json");
}

// --- dataset on disk -------------------------------------------------------

struct Dataset {
  double dt = 0.1;
  std::vector<scenario::Event> events;
  std::vector<int> split;  // 0 = train, 1 = test
};

std::vector<scenario::Event> subset(const Dataset& ds, int which) {
  std::vector<scenario::Event> out;
  for (std::size_t i = 0; i < ds.events.size(); ++i)
    if (ds.split[i] == which) out.push_back(ds.events[i]);
  return out;
}

Dataset load_dataset(const fs::path& dir) {
  json j = io::read_json(dir / "dataset.json");
  Dataset ds;
  ds.dt = j.at("dt").get<double>();
  for (const auto& e : j.at("events")) {
    auto result = scenario::load_events_csv((dir / e.at("file").get<std::string>()).string(),
                                            scenario::ColumnMap{}, ds.dt);
    if (result.events.size() != 1)
      throw std::runtime_error("dataset: expected one event per file in " +
                               e.at("file").get<std::string>() +
                               (result.diagnostics.empty() ? "" : ": " + result.diagnostics[0]));
    scenario::Event ev = std::move(result.events[0]);
    ev.situation = scenario::situation_from_name(e.at("situation"));
    if (e.contains("stage_boundaries")) {
      auto b = e.at("stage_boundaries").get<std::vector<int>>();
      ev.stage_boundaries = {b[0], b[1], b[2]};
      ev.has_boundaries = true;
    }
    ev.validate();
    ds.events.push_back(std::move(ev));
    ds.split.push_back(e.at("split") == "test" ? 1 : 0);
  }
  return ds;
}

scenario::GeneratorParams generator_params(Ctx& ctx) {
  scenario::GeneratorParams p;
  p.dt = ctx.getd("dt", p.dt);
  p.main_speed = {ctx.getd("main_speed_lo", p.main_speed.lo),
                  ctx.getd("main_speed_hi", p.main_speed.hi)};
  p.merge_speed = {ctx.getd("merge_speed_lo", p.merge_speed.lo),
                   ctx.getd("merge_speed_hi", p.merge_speed.hi)};
  p.initial_offset = {ctx.getd("initial_offset_lo", p.initial_offset.lo),
                      ctx.getd("initial_offset_hi", p.initial_offset.hi)};
  p.yield_decel = {ctx.getd("yield_decel_lo", p.yield_decel.lo),
                   ctx.getd("yield_decel_hi", p.yield_decel.hi)};
  p.pass_accel = {ctx.getd("pass_accel_lo", p.pass_accel.lo),
                  ctx.getd("pass_accel_hi", p.pass_accel.hi)};
  p.accel_noise = ctx.getd("accel_noise", p.accel_noise);
  p.lateral_noise = ctx.getd("lateral_noise", p.lateral_noise);
  p.lane_width = ctx.getd("lane_width", p.lane_width);
  p.desired_gap = ctx.getd("desired_gap", p.desired_gap);
  p.with_lead = ctx.getb("with_lead", p.with_lead);
  p.lead_gap = {ctx.getd("lead_gap_lo", p.lead_gap.lo), ctx.getd("lead_gap_hi", p.lead_gap.hi)};
  return p;
}

tlhmm::TlhmmConfig tlhmm_config(Ctx& ctx, std::uint64_t seed) {
  tlhmm::TlhmmConfig tc;
  tc.em.seed = seed;
  tc.em.max_iter = static_cast<int>(ctx.geti("max_iter", 100));
  tc.em.tol = ctx.getd("tol", tc.em.tol);
  tc.t1 = static_cast<int>(ctx.geti("t1", tc.t1));
  tc.t2 = static_cast<int>(ctx.geti("t2", tc.t2));
  tc.meta_mode = tlhmm::meta_mode_from_name(ctx.get("meta_mode", "vector"));
  tc.state_lo = static_cast<int>(ctx.geti("state_lo", 1));
  tc.state_hi = static_cast<int>(ctx.geti("state_hi", 2));
  tc.fixed_states = static_cast<int>(ctx.geti("fixed_states", 0));
  return tc;
}

std::vector<scene::SituationActionModel> fit_scene_models(
    const tlhmm::TlhmmModel& model, const std::vector<scenario::Event>& train,
    int components, const TrainConfig& em, std::uint64_t seed) {
  std::vector<scene::SituationActionModel> out;
  for (std::size_t j = 0; j < model.layer2_labels.size(); ++j) {
    std::vector<VectorXd> rows;
    for (const auto& ev : train) {
      if (ev.situation != model.layer2_labels[j]) continue;
      for (const auto& [state, action] : scenario::extract_features(ev).pairs) {
        VectorXd se = state.se_vector();
        VectorXd a = action.vector();
        VectorXd joint(se.size() + a.size());
        joint << se, a;
        rows.push_back(std::move(joint));
      }
    }
    if (rows.empty())
      throw std::runtime_error(std::string("no state/action pairs for situation '") +
                               scenario::situation_name(model.layer2_labels[j]) + "'");
    MatrixXd data(rows.size(), rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r) data.row(r) = rows[r].transpose();

    scene::SituationActionModel sm;
    TrainConfig cfg = em;
    cfg.seed = mix_seed(seed, 0xac70 + j);
    auto [mixture, report] = gmm::em_fit(data, components, cfg, cfg.seed);
    sm.mixture = std::move(mixture);
    const int se_dim = static_cast<int>(rows[0].size()) - 4;
    for (int i = 0; i < se_dim; ++i) sm.partition.se_indices.push_back(i);
    for (int i = se_dim; i < se_dim + 4; ++i) sm.partition.a_indices.push_back(i);
    out.push_back(std::move(sm));
  }
  return out;
}

json fit_report_json(const std::vector<FitReport>& reports,
                     const std::vector<std::string>& names) {
  json arr = json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    json r;
    r["name"] = names[i];
    r["iterations"] = reports[i].iterations;
    r["converged"] = reports[i].converged;
    if (!reports[i].log_likelihood_trace.empty())
      r["final_log_likelihood"] = reports[i].log_likelihood_trace.back();
    arr.push_back(r);
  }
  return arr;
}

// --- commands --------------------------------------------------------------

int cmd_generate(Ctx& ctx) {
  const long n = ctx.geti("n_events", 128);
  const double split = ctx.getd("split", 0.8);
  const std::uint64_t seed = ctx.getu("seed", 0);
  if (n < 0 || split < 0.0 || split > 1.0)
    throw std::invalid_argument("generate: need n_events >= 0 and split in [0,1]");
  scenario::GeneratorParams params = generator_params(ctx);
  const double noise_pos = ctx.getd("noise_pos", 0.0);
  const double noise_vel = ctx.getd("noise_vel", 0.0);
  const bool smooth = ctx.getb("smooth", false);

  // rounding toward train: 128 * 0.8 -> 102 train / 26 test
  const long n_train = std::lround(n * split);
  std::vector<int> order(n);
  for (long i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  Rng shuffle_rng(mix_seed(seed, 0x5711));
  for (long i = n - 1; i > 0; --i)
    std::swap(order[i], order[shuffle_rng.index(static_cast<std::size_t>(i) + 1)]);
  std::vector<int> split_of(n, 1);
  for (long r = 0; r < n_train; ++r) split_of[order[r]] = 0;

  if (n > 0) fs::create_directories(ctx.out / "events");
  json events = json::array();
  for (long i = 0; i < n; ++i) {
    scenario::Situation s = i % 2 == 0 ? scenario::Situation::main_yields
                                       : scenario::Situation::merge_yields;
    scenario::Event ev = scenario::generate_event(s, params, mix_seed(seed, 1000 + i));
    char id[32];
    std::snprintf(id, sizeof(id), "ev_%03ld", i);
    ev.id = id;
    if (noise_pos > 0.0 || noise_vel > 0.0) {
      scenario::Event noisy =
          scenario::add_noise(ev, noise_pos, noise_vel, mix_seed(seed, 7000 + i));
      if (smooth) noisy = scenario::smooth_event(noisy, scenario::SmootherConfig{});
      // keep the clean label and boundaries; drop the event only if the noise
      // flipped the final ordering
      try {
        noisy.validate();
        ev = std::move(noisy);
      } catch (const std::exception&) {
        if (ctx.verbose) std::cerr << ev.id << ": noise flipped the outcome, kept clean\n";
      }
    }
    std::string file = std::string("events/") + id + ".csv";
    scenario::save_event_csv(ev, (ctx.out / file).string());
    ctx.note_file(file);
    events.push_back({{"id", ev.id},
                      {"file", file},
                      {"situation", scenario::situation_name(ev.situation)},
                      {"split", split_of[i] == 0 ? "train" : "test"},
                      {"stage_boundaries", std::vector<int>{ev.stage_boundaries[0],
                                                            ev.stage_boundaries[1],
                                                            ev.stage_boundaries[2]}}});
  }
  json ds;
  ds["dt"] = params.dt;
  ds["n_train"] = n_train;
  ds["n_test"] = n - n_train;
  ds["events"] = events;
  io::write_json(ds, ctx.out / "dataset.json");
  ctx.note_file("dataset.json");
  if (ctx.verbose)
    std::cerr << "generated " << n << " events (" << n_train << " train / " << n - n_train
              << " test)\n";
  return 0;
}

int cmd_train(Ctx& ctx) {
  const std::uint64_t seed = ctx.getu("seed", 0);
  Dataset ds = load_dataset(ctx.get("data", "."));
  auto train_events = subset(ds, 0);
  if (train_events.empty()) throw std::runtime_error("train: dataset has no train split");

  tlhmm::TlhmmConfig tc = tlhmm_config(ctx, seed);
  auto [model, reports] = tlhmm::train(train_events, tlhmm::merging_roster(), tc);

  io::Bundle bundle;
  bundle.model = std::move(model);
  const bool with_lead = train_events[0].lead_car.has_value();
  bundle.feature_schema = io::state_schema(with_lead);
  bundle.scene_models =
      fit_scene_models(bundle.model, train_events,
                       static_cast<int>(ctx.geti("scene_components", 2)), tc.em, seed);
  io::save_bundle(bundle, ctx.out / "bundle");
  for (const auto& entry : fs::directory_iterator(ctx.out / "bundle"))
    ctx.note_file("bundle/" + entry.path().filename().string());

  json report;
  std::vector<std::string> l1_names, l2_names;
  for (const auto& e : bundle.model.layer1_labels) l1_names.push_back(e.name);
  for (auto s : bundle.model.layer2_labels) l2_names.push_back(scenario::situation_name(s));
  report["layer1"] = fit_report_json(reports.layer1, l1_names);
  report["layer2"] = fit_report_json(reports.layer2, l2_names);
  report["layer2_total_iterations"] = reports.layer2_iterations();
  json states = json::array();
  for (const auto& m : bundle.model.layer1) states.push_back(m.n_states());
  report["layer1_states"] = states;
  io::write_json(report, ctx.out / "report.json");
  ctx.note_file("report.json");
  return 0;
}

struct LoadedBundle {
  io::Bundle bundle;
  Dataset ds;
};

LoadedBundle load_bundle_and_data(Ctx& ctx) {
  LoadedBundle lb;
  lb.bundle = io::load_bundle(ctx.get("bundle", "bundle"));
  lb.ds = load_dataset(ctx.get("data", "."));
  return lb;
}

int event_index(const Dataset& ds, const std::string& id) {
  for (std::size_t i = 0; i < ds.events.size(); ++i)
    if (ds.events[i].id == id) return static_cast<int>(i);
  throw std::invalid_argument("unknown event id '" + id + "'");
}

int cmd_infer(Ctx& ctx, bool with_baselines, bool allow_train,
              const std::string& event_list) {
  const std::uint64_t seed = ctx.getu("seed", 0);
  auto [bundle, ds] = load_bundle_and_data(ctx);

  std::vector<int> requested;
  if (!event_list.empty()) {
    std::stringstream ss(event_list);
    std::string id;
    while (std::getline(ss, id, ',')) requested.push_back(event_index(ds, id));
  } else {
    for (std::size_t i = 0; i < ds.events.size(); ++i)
      if (ds.split[i] == 1) requested.push_back(static_cast<int>(i));
  }

  baselines::SingleHmmClassifier shc;
  baselines::QdaClassifier qda;
  if (with_baselines) {
    auto train_events = subset(ds, 0);
    tlhmm::TlhmmConfig tc = tlhmm_config(ctx, seed);
    tc.t1 = bundle.model.t1;
    tc.t2 = bundle.model.t2;
    shc = baselines::fit_single_hmm_classifier(train_events, tc);
    qda = baselines::fit_qda_classifier(train_events, tc.t1 + tc.t2 - 1);
  }

  json processed = json::array();
  json refused = json::array();
  json failed = json::array();
  for (int idx : requested) {
    const scenario::Event& ev = ds.events[idx];
    if (ds.split[idx] == 0 && !allow_train) {
      std::cerr << ev.id << ": train-split event refused (use --allow-train)\n";
      refused.push_back(ev.id);
      continue;
    }
    try {
      auto raw = scenario::extract_features(ev).raw;
      auto series = tlhmm::infer(bundle.model, raw);
      auto os = ctx.open("posteriors_" + ev.id + ".csv");
      io::save_posteriors_csv(series, bundle.model.layer2_labels, ds.dt, os);

      if (with_baselines) {
        auto ph = baselines::infer(shc, raw);
        auto pq = baselines::infer(qda, raw);
        auto bs = ctx.open("baselines_" + ev.id + ".csv");
        bs << "step,time_s";
        for (const char* m : {"tlhmm", "hmm", "qda"})
          for (auto s : bundle.model.layer2_labels)
            bs << "," << m << ":" << scenario::situation_name(s);
        bs << "\n";
        for (Eigen::Index r = 0; r < series.probabilities.rows(); ++r) {
          bs << series.times[r] << "," << io::fmt(series.times[r] * ds.dt);
          for (const auto* p : {&series, &ph, &pq})
            for (Eigen::Index c = 0; c < p->probabilities.cols(); ++c)
              bs << "," << io::fmt(p->probabilities(r, c));
          bs << "\n";
        }
      }
      processed.push_back(ev.id);
    } catch (const std::exception& ex) {
      std::cerr << ev.id << ": " << ex.what() << "\n";
      failed.push_back(json{{"id", ev.id}, {"error", ex.what()}});
    }
  }

  json summary;
  summary["processed"] = processed;
  summary["refused"] = refused;
  summary["failed"] = failed;
  io::write_json(summary, ctx.out / "summary.json");
  ctx.note_file("summary.json");
  return refused.empty() && failed.empty() ? 0 : 1;
}

int cmd_rollout(Ctx& ctx, const std::string& event_id) {
  const std::uint64_t seed = ctx.getu("seed", 0);
  auto [bundle, ds] = load_bundle_and_data(ctx);

  int idx = -1;
  if (!event_id.empty()) {
    idx = event_index(ds, event_id);
  } else {
    for (std::size_t i = 0; i < ds.events.size() && idx < 0; ++i)
      if (ds.split[i] == 1) idx = static_cast<int>(i);
    if (idx < 0) throw std::runtime_error("rollout: dataset has no test event");
  }
  const scenario::Event& ev = ds.events[idx];
  const int T = static_cast<int>(ev.length());

  const int horizon = static_cast<int>(ctx.geti("horizon", 30));
  const int n_samples = static_cast<int>(ctx.geti("n_samples", 1000));
  const int min_step = tlhmm::min_raw_length(bundle.model) - 1;
  int at_step = static_cast<int>(
      ctx.geti("at_step", std::max<long>(min_step, T - 1 - horizon)));
  if (at_step < min_step || at_step >= T)
    throw std::invalid_argument("rollout: at_step " + std::to_string(at_step) +
                                " outside the inferable range [" + std::to_string(min_step) +
                                ", " + std::to_string(T - 1) + ")");

  auto raw = scenario::extract_features(ev).raw;
  auto series = tlhmm::infer(bundle.model, raw);
  VectorXd posterior = series.probabilities.row(at_step - min_step).transpose();
  scene::SceneState init = scenario::state_at(ev, at_step);

  auto ens = scene::rollout(bundle.scene_models, posterior, init, horizon, n_samples, ds.dt,
                            mix_seed(seed, 0x0110));
  {
    auto os = ctx.open("ensemble.csv");
    io::save_ensemble_csv(ens, os);
  }
  {
    // ground-truth overlay, identical in format to the dataset event file
    auto os = ctx.open("truth.csv");
    scenario::save_event_csv(ev, os);
  }
  {
    auto os = ctx.open("stats.csv");
    os << "step,agent,mean_x,mean_y,cov_xx,cov_xy,cov_yy,count\n";
    const char* names[] = {"main", "merge"};
    for (int agent = 0; agent < 2; ++agent) {
      auto stats = scene::ensemble_position_stats(ens, agent);
      for (std::size_t k = 0; k < stats.size(); ++k)
        os << k << "," << names[agent] << "," << io::fmt(stats[k].mean[0]) << ","
           << io::fmt(stats[k].mean[1]) << "," << io::fmt(stats[k].cov(0, 0)) << ","
           << io::fmt(stats[k].cov(0, 1)) << "," << io::fmt(stats[k].cov(1, 1)) << ","
           << stats[k].count << "\n";
    }
  }

  // Auto grid around the initial scene; diverging samples are clamped onto
  // the boundary cells by the heatmap itself.
  scene::GridSpec spec;
  double pad = 2.0;
  double x_lo = std::min(init.x1, init.x2), x_hi = std::max(init.x1, init.x2);
  double y_lo = std::min(init.y1, init.y2), y_hi = std::max(init.y1, init.y2);
  double reach = horizon * ds.dt * std::max({std::abs(init.vy1), std::abs(init.vy2), 1.0});
  spec.x_min = ctx.getd("grid_x_min", x_lo - 2.0 * pad - 4.0);
  spec.x_max = ctx.getd("grid_x_max", x_hi + 2.0 * pad + 4.0);
  spec.y_min = ctx.getd("grid_y_min", y_lo - pad);
  spec.y_max = ctx.getd("grid_y_max", y_hi + 1.5 * reach + pad);
  spec.cell_dx = ctx.getd("grid_cell_dx", 0.5);
  spec.cell_dy = ctx.getd("grid_cell_dy", 0.5);
  auto grid = scene::occupancy_heatmap(ens, spec, ctx.getb("normalize", true));
  {
    auto os = ctx.open("heatmap.csv");
    io::save_heatmap_csv(grid, os);
  }

  json summary;
  summary["event"] = ev.id;
  summary["at_step"] = at_step;
  summary["horizon"] = horizon;
  summary["n_samples"] = n_samples;
  summary["dt"] = ds.dt;
  summary["posterior"] = io::to_json(posterior);
  summary["truncated_samples"] =
      static_cast<int>(std::count(ens.truncated.begin(), ens.truncated.end(), true));
  io::write_json(summary, ctx.out / "summary.json");
  ctx.note_file("summary.json");
  return 0;
}

int cmd_evaluate(Ctx& ctx) {
  const std::uint64_t seed = ctx.getu("seed", 0);
  const double theta = ctx.getd("theta", 0.7);
  auto [bundle, ds] = load_bundle_and_data(ctx);
  auto train_events = subset(ds, 0);
  auto test_events = subset(ds, 1);
  if (test_events.empty()) throw std::runtime_error("evaluate: dataset has no test split");

  tlhmm::TlhmmConfig tc = tlhmm_config(ctx, seed);
  tc.t1 = bundle.model.t1;
  tc.t2 = bundle.model.t2;
  auto shc = baselines::fit_single_hmm_classifier(train_events, tc);
  auto qda = baselines::fit_qda_classifier(train_events, tc.t1 + tc.t2 - 1);

  std::vector<tlhmm::PosteriorSeries> pt, ph, pq;
  std::vector<int> truth;
  std::vector<std::string> ids;
  for (const auto& ev : test_events) {
    auto raw = scenario::extract_features(ev).raw;
    pt.push_back(tlhmm::infer(bundle.model, raw));
    ph.push_back(baselines::infer(shc, raw));
    pq.push_back(baselines::infer(qda, raw));
    int cls = -1;
    for (std::size_t j = 0; j < bundle.model.layer2_labels.size(); ++j)
      if (bundle.model.layer2_labels[j] == ev.situation) cls = static_cast<int>(j);
    truth.push_back(cls);
    ids.push_back(ev.id);
  }

  std::map<std::string, baselines::RecognitionMetrics> by_model;
  by_model["tlhmm"] = baselines::evaluate(pt, truth, theta);
  by_model["single_hmm"] = baselines::evaluate(ph, truth, theta);
  by_model["qda"] = baselines::evaluate(pq, truth, theta);

  {
    auto os = ctx.open("metrics.csv");
    io::save_metrics_csv(by_model, ids, os);
  }
  json summary = io::metrics_summary_json(by_model, theta);
  summary["n_train"] = train_events.size();
  summary["n_test"] = test_events.size();
  io::write_json(summary, ctx.out / "summary.json");
  ctx.note_file("summary.json");
  return 0;
}

int cmd_transfer(Ctx& ctx) {
  const std::uint64_t seed = ctx.getu("seed", 0);
  const double theta = ctx.getd("theta", 0.7);
  Dataset source = load_dataset(ctx.get("source_data", "source"));
  Dataset target = load_dataset(ctx.get("target_data", "target"));
  auto source_train = subset(source, 0);
  auto target_train = subset(target, 0);
  auto target_test = subset(target, 1);
  if (source_train.empty() || target_train.empty())
    throw std::runtime_error("transfer: both datasets need a train split");

  tlhmm::TlhmmConfig tc = tlhmm_config(ctx, seed);
  auto [pretrained, pre_reports] = tlhmm::train(source_train, tlhmm::merging_roster(), tc);

  auto scene_models = fit_scene_models(
      pretrained, target_train, static_cast<int>(ctx.geti("scene_components", 2)), tc.em, seed);
  const bool with_lead = target_train[0].lead_car.has_value();

  json report;
  report["pretrain_layer2_iterations"] = pre_reports.layer2_iterations();
  using tlhmm::TransferMode;
  for (TransferMode mode : {TransferMode::frozen, TransferMode::finetune, TransferMode::scratch}) {
    const std::string name = tlhmm::transfer_mode_name(mode);
    auto [model, reports] = tlhmm::transfer(pretrained, target_train, mode, tc);

    io::Bundle bundle;
    bundle.model = std::move(model);
    bundle.scene_models = scene_models;
    bundle.feature_schema = io::state_schema(with_lead);
    io::save_bundle(bundle, ctx.out / name);
    for (const auto& entry : fs::directory_iterator(ctx.out / name))
      ctx.note_file(name + "/" + entry.path().filename().string());

    int correct = 0;
    for (const auto& ev : target_test) {
      auto series = tlhmm::infer(bundle.model, scenario::extract_features(ev).raw);
      Eigen::Index best;
      series.probabilities.row(series.probabilities.rows() - 1).maxCoeff(&best);
      if (bundle.model.layer2_labels[best] == ev.situation) ++correct;
    }

    json m;
    m["layer2_iterations"] = reports.layer2_iterations();
    json per = json::array();
    for (const auto& r : reports.layer2)
      per.push_back(json{{"refine", r.iterations}, {"init", r.init_iterations}});
    m["layer2_iterations_per_model"] = per;
    m["final_accuracy"] =
        target_test.empty() ? 0.0 : static_cast<double>(correct) / target_test.size();
    m["theta"] = theta;
    report["modes"][name] = m;
  }
  io::write_json(report, ctx.out / "report.json");
  ctx.note_file("report.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-vehicle interaction recognition and prediction"};
  app.require_subcommand(1);

  struct Common {
    std::string config;
    std::string out;
    std::vector<std::string> sets;
    bool verbose = false;
    std::optional<std::uint64_t> seed;
  };
  std::map<std::string, Common> common;
  std::map<std::string, CLI::App*> subs;
  for (const char* name :
       {"generate", "train", "infer", "rollout", "transfer", "evaluate"}) {
    CLI::App* sub = app.add_subcommand(name);
    Common& c = common[name];
    sub->add_option("--config", c.config, "flat key=value config file");
    sub->add_option("--out", c.out, "run output directory");
    sub->add_option("--set", c.sets, "override a config value (key=value)")
        ->take_all();
    sub->add_option("--seed", c.seed, "master seed (overrides config)");
    sub->add_flag("--verbose", c.verbose, "chatty progress output");
    subs[name] = sub;
  }
  bool with_baselines = false, allow_train = false;
  std::string infer_events, rollout_event;
  subs["infer"]->add_flag("--baselines", with_baselines,
                          "also emit single-HMM and QDA posterior columns");
  subs["infer"]->add_flag("--allow-train", allow_train, "permit train-split events");
  subs["infer"]->add_option("--events", infer_events, "comma-separated event ids");
  subs["rollout"]->add_option("--event", rollout_event, "event id to roll out");

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands()[0]->get_name();
  Common& c = common[command];

  try {
    Ctx ctx;
    if (!c.config.empty()) load_config_file(ctx, c.config);
    apply_overrides(ctx, c.sets);
    if (c.seed) ctx.cfg["seed"] = std::to_string(*c.seed);
    ctx.verbose = c.verbose;
    ctx.out = c.out.empty() ? default_run_dir(command) : c.out;
    fs::create_directories(ctx.out);

    int rc = 0;
    if (command == "generate") rc = cmd_generate(ctx);
    else if (command == "train") rc = cmd_train(ctx);
    else if (command == "infer") rc = cmd_infer(ctx, with_baselines, allow_train, infer_events);
    else if (command == "rollout") rc = cmd_rollout(ctx, rollout_event);
    else if (command == "transfer") rc = cmd_transfer(ctx);
    else if (command == "evaluate") rc = cmd_evaluate(ctx);
    finish_run(ctx, command);
    return rc;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
}
