// Model bundles and data files: JSON model serialization, posterior /
// ensemble / heatmap / metrics CSV export.
#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "situ/baselines.hpp"

namespace situ::io {

using nlohmann::json;
namespace fs = std::filesystem;

inline json to_json(const VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline json to_json(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline VectorXd vector_from_json(const json& a) {
  VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
  return v;
}

inline MatrixXd matrix_from_json(const json& a) {
  if (a.empty()) return MatrixXd(0, 0);
  MatrixXd m(a.size(), a[0].size());
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t c = 0; c < a[r].size(); ++c) m(r, c) = a[r][c].get<double>();
  return m;
}

// --- HMM ------------------------------------------------------------------

inline json hmm_to_json(const hmm::HmmParams& model,
                        const std::vector<std::string>& schema = {}) {
  json j;
  j["n_states"] = model.n_states();
  j["feature_dim"] = model.feature_dim();
  if (!schema.empty()) j["feature_schema"] = schema;
  j["initial"] = to_json(model.initial);
  j["transition"] = to_json(model.transition);
  json em = json::array();
  for (const auto& g : model.emissions)
    em.push_back({{"mean", to_json(g.mean())}, {"cov", to_json(g.cov())}});
  j["emissions"] = em;
  return j;
}

inline hmm::HmmParams hmm_from_json(const json& j) {
  hmm::HmmParams model;
  model.initial = vector_from_json(j.at("initial"));
  model.transition = matrix_from_json(j.at("transition"));
  for (const auto& e : j.at("emissions"))
    model.emissions.emplace_back(vector_from_json(e.at("mean")),
                                 matrix_from_json(e.at("cov")));
  model.validate();
  return model;
}

// --- GMM ------------------------------------------------------------------

inline json gmm_to_json(const gmm::GmmParams& model, const gmm::BlockPartition& part,
                        const std::vector<std::string>& schema) {
  json j;
  j["n_components"] = model.n_components();
  j["dim"] = model.dim();
  j["weights"] = to_json(model.weights);
  json comps = json::array();
  for (const auto& g : model.components)
    comps.push_back({{"mean", to_json(g.mean())}, {"cov", to_json(g.cov())}});
  j["components"] = comps;
  j["se_indices"] = part.se_indices;
  j["a_indices"] = part.a_indices;
  j["schema"] = schema;
  return j;
}

inline std::tuple<gmm::GmmParams, gmm::BlockPartition, std::vector<std::string>> gmm_from_json(
    const json& j) {
  gmm::GmmParams model;
  model.weights = vector_from_json(j.at("weights"));
  for (const auto& c : j.at("components"))
    model.components.emplace_back(vector_from_json(c.at("mean")),
                                  matrix_from_json(c.at("cov")));
  model.validate();
  gmm::BlockPartition part;
  part.se_indices = j.at("se_indices").get<std::vector<int>>();
  part.a_indices = j.at("a_indices").get<std::vector<int>>();
  part.validate(model.dim());
  std::vector<std::string> schema = j.value("schema", std::vector<std::string>{});
  return {std::move(model), std::move(part), std::move(schema)};
}

inline void write_json(const json& j, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

inline json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  json j;
  is >> j;
  return j;
}

// --- Model bundle ---------------------------------------------------------

inline std::vector<std::string> state_schema(bool with_lead) {
  std::vector<std::string> s = {"y1", "y2", "d1", "vy1", "vy2", "ay1", "ay2"};
  if (with_lead) {
    s.push_back("lead_y");
    s.push_back("lead_vy");
  }
  return s;
}

inline std::vector<std::string> action_schema() {
  return {"dx1", "dx2", "vy1_next", "vy2_next"};
}

struct Bundle {
  tlhmm::TlhmmModel model;
  std::vector<scene::SituationActionModel> scene_models;  // ordered as layer2_labels
  std::vector<std::string> feature_schema;
};

inline void save_bundle(const Bundle& bundle, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["t1"] = bundle.model.t1;
  manifest["t2"] = bundle.model.t2;
  manifest["meta_mode"] = tlhmm::meta_mode_name(bundle.model.meta_mode);
  manifest["prior"] = to_json(bundle.model.prior);
  manifest["feature_schema"] = bundle.feature_schema;

  json l1 = json::array();
  for (std::size_t i = 0; i < bundle.model.layer1.size(); ++i) {
    const auto& entry = bundle.model.layer1_labels[i];
    std::string file = "layer1_" + entry.name + ".json";
    json situations = json::array();
    for (auto s : entry.situations) situations.push_back(scenario::situation_name(s));
    l1.push_back({{"name", entry.name},
                  {"stage", entry.stage},
                  {"situations", situations},
                  {"file", file}});
    write_json(hmm_to_json(bundle.model.layer1[i], bundle.feature_schema), dir / file);
  }
  manifest["layer1"] = l1;

  json l2 = json::array();
  for (std::size_t j = 0; j < bundle.model.layer2.size(); ++j) {
    std::string label = scenario::situation_name(bundle.model.layer2_labels[j]);
    std::string file = "layer2_" + label + ".json";
    l2.push_back({{"situation", label}, {"file", file}});
    write_json(hmm_to_json(bundle.model.layer2[j]), dir / file);
  }
  manifest["layer2"] = l2;

  json sm = json::array();
  for (std::size_t j = 0; j < bundle.scene_models.size(); ++j) {
    std::string label = scenario::situation_name(bundle.model.layer2_labels[j]);
    std::string file = "scene_" + label + ".json";
    sm.push_back({{"situation", label}, {"file", file}});
    std::vector<std::string> joint = bundle.feature_schema;
    for (const auto& a : action_schema()) joint.push_back(a);
    write_json(gmm_to_json(bundle.scene_models[j].mixture, bundle.scene_models[j].partition,
                           joint),
               dir / file);
  }
  manifest["scene_models"] = sm;

  write_json(manifest, dir / "manifest.json");
}

inline Bundle load_bundle(const fs::path& dir) {
  json manifest = read_json(dir / "manifest.json");
  Bundle bundle;
  bundle.model.t1 = manifest.at("t1").get<int>();
  bundle.model.t2 = manifest.at("t2").get<int>();
  bundle.model.meta_mode = tlhmm::meta_mode_from_name(manifest.at("meta_mode"));
  bundle.model.prior = vector_from_json(manifest.at("prior"));
  bundle.feature_schema = manifest.at("feature_schema").get<std::vector<std::string>>();

  for (const auto& e : manifest.at("layer1")) {
    tlhmm::RosterEntry entry;
    entry.name = e.at("name");
    entry.stage = e.at("stage");
    for (const auto& s : e.at("situations"))
      entry.situations.push_back(scenario::situation_from_name(s));
    bundle.model.layer1_labels.push_back(entry);
    bundle.model.layer1.push_back(hmm_from_json(read_json(dir / e.at("file").get<std::string>())));
  }
  for (const auto& e : manifest.at("layer2")) {
    bundle.model.layer2_labels.push_back(
        scenario::situation_from_name(e.at("situation")));
    bundle.model.layer2.push_back(hmm_from_json(read_json(dir / e.at("file").get<std::string>())));
  }
  for (const auto& e : manifest.at("scene_models")) {
    auto [mixture, part, schema] = gmm_from_json(read_json(dir / e.at("file").get<std::string>()));
    bundle.scene_models.push_back({std::move(mixture), std::move(part)});
  }
  bundle.model.validate();
  return bundle;
}

// --- CSV exports ----------------------------------------------------------

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void save_posteriors_csv(const tlhmm::PosteriorSeries& series,
                                const std::vector<scenario::Situation>& labels, double dt,
                                std::ostream& os) {
  os << "step,time_s";
  for (auto s : labels) os << "," << scenario::situation_name(s);
  os << "\n";
  for (Eigen::Index r = 0; r < series.probabilities.rows(); ++r) {
    os << series.times[r] << "," << fmt(series.times[r] * dt);
    for (Eigen::Index c = 0; c < series.probabilities.cols(); ++c)
      os << "," << fmt(series.probabilities(r, c));
    os << "\n";
  }
}

inline tlhmm::PosteriorSeries load_posteriors_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("posterior csv: empty");
  int n_cols = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
  int h = n_cols - 2;
  std::vector<int> times;
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string c;
    std::getline(ss, c, ',');
    times.push_back(std::stoi(c));
    std::getline(ss, c, ',');  // time_s, redundant
    std::vector<double> p;
    while (std::getline(ss, c, ',')) p.push_back(std::stod(c));
    if (static_cast<int>(p.size()) != h)
      throw std::invalid_argument("posterior csv: ragged row");
    rows.push_back(std::move(p));
  }
  tlhmm::PosteriorSeries out;
  out.times = std::move(times);
  out.probabilities.resize(rows.size(), h);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < h; ++c) out.probabilities(r, c) = rows[r][c];
  return out;
}

inline void save_ensemble_csv(const scene::TrajectoryEnsemble& ens, std::ostream& os) {
  os << "sample,step,agent,situation,x,y,vy\n";
  for (std::size_t s = 0; s < ens.samples.size(); ++s) {
    const auto& traj = ens.samples[s];
    for (std::size_t k = 0; k < traj.size(); ++k) {
      os << s << "," << k << ",main," << ens.situation_of_sample[s] << ","
         << fmt(traj[k].x1) << "," << fmt(traj[k].y1) << "," << fmt(traj[k].vy1) << "\n";
      os << s << "," << k << ",merge," << ens.situation_of_sample[s] << ","
         << fmt(traj[k].x2) << "," << fmt(traj[k].y2) << "," << fmt(traj[k].vy2) << "\n";
    }
  }
}

// Grid-spec header line, then one dense row-major line per agent row.
inline void save_heatmap_csv(const scene::OccupancyGrid& grid, std::ostream& os) {
  os << "x_min,x_max,y_min,y_max,cell_dx,cell_dy,nx,ny,clamped,normalized\n";
  const auto& s = grid.spec;
  os << fmt(s.x_min) << "," << fmt(s.x_max) << "," << fmt(s.y_min) << "," << fmt(s.y_max)
     << "," << fmt(s.cell_dx) << "," << fmt(s.cell_dy) << "," << s.nx() << "," << s.ny()
     << "," << grid.clamped << "," << (grid.normalized ? 1 : 0) << "\n";
  os << "agent,row,values\n";
  const char* names[] = {"main", "merge"};
  for (std::size_t a = 0; a < grid.counts.size(); ++a) {
    for (Eigen::Index r = 0; r < grid.counts[a].rows(); ++r) {
      os << names[a] << "," << r;
      for (Eigen::Index c = 0; c < grid.counts[a].cols(); ++c)
        os << "," << fmt(grid.counts[a](r, c));
      os << "\n";
    }
  }
}

inline void save_metrics_csv(const std::map<std::string, baselines::RecognitionMetrics>& by_model,
                             const std::vector<std::string>& event_ids, std::ostream& os) {
  os << "model,event_id,correct_final,earliest_step,fluctuation\n";
  for (const auto& [name, metrics] : by_model) {
    for (std::size_t e = 0; e < metrics.per_event.size(); ++e) {
      const auto& rec = metrics.per_event[e];
      os << name << "," << event_ids[e] << "," << (rec.correct_final ? 1 : 0) << ",";
      if (rec.earliest_step) os << *rec.earliest_step;
      else os << "inf";
      os << ",";
      if (rec.fluctuation) os << fmt(*rec.fluctuation);
      os << "\n";
    }
  }
}

inline json metrics_summary_json(
    const std::map<std::string, baselines::RecognitionMetrics>& by_model, double theta) {
  json j;
  j["theta"] = theta;
  for (const auto& [name, m] : by_model) {
    j["models"][name] = {{"final_accuracy", m.final_accuracy},
                         {"mean_earliest_step",
                          std::isfinite(m.mean_earliest) ? json(m.mean_earliest) : json("inf")},
                         {"never_settled_count", m.never_count},
                         {"mean_fluctuation", m.mean_fluctuation},
                         {"n_events", m.per_event.size()}};
  }
  return j;
}

}  // namespace situ::io
