#include "polarloc/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "polarloc/error.hpp"
#include "polarloc/text.hpp"

namespace polarloc::pipeline {

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

void write_text(const fs::path& path, const std::string& content) {
  auto os = open_out(path);
  os << content;
  if (!os) throw IoError("write failed for " + path.string());
}

std::string scan_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scans/%06zu.pscn", i);
  return buf;
}

}  // namespace

void write_run_config(const fs::path& dir, const Json& config) {
  ensure_dir(dir);
  write_text(dir / "config.json", config.dump(2) + "\n");
}

Json read_run_config(const fs::path& dir) {
  std::ifstream is(dir / "config.json");
  if (!is) throw IoError("cannot open " + (dir / "config.json").string());
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "config.json").string() + ": " + e.what(), 0);
  }
}

std::uint64_t default_seed(std::uint64_t fallback) {
  const char* env = std::getenv("POLARLOC_SEED");
  if (env == nullptr || *env == '\0') return fallback;
  std::uint64_t v = 0;
  if (!text::parse_number(env, v)) throw ConfigError(std::string("POLARLOC_SEED is not an unsigned integer: ") + env);
  return v;
}

// ---- Datasets --------------------------------------------------------------

Dataset simulate_dataset(const sim::World& world, const sim::Trajectory& trajectory,
                         const sim::SensorParams& sensor, std::uint64_t seed, const fs::path& out_dir,
                         const Json& run_config) {
  if (trajectory.empty()) throw ConfigError("simulate: trajectory has no poses");
  sim::validate(world);
  Dataset ds{trajectory, sim::render_trajectory(world, trajectory, sensor, seed)};
  ensure_dir(out_dir / "scans");
  std::vector<radar::IndexEntry> index;
  for (std::size_t i = 0; i < ds.scans.size(); ++i) {
    const std::string name = scan_name(i);
    radar::save_scan(ds.scans[i], out_dir / name);
    index.push_back({name, trajectory.poses[i].id});
  }
  radar::write_index(index, out_dir / "index.csv");
  sim::save_trajectory(trajectory, out_dir / "poses.csv");
  write_run_config(out_dir, run_config);
  return ds;
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.trajectory = sim::load_trajectory(dir / "poses.csv");
  const auto index = radar::read_index(dir / "index.csv");
  if (index.size() != ds.trajectory.size()) {
    throw FormatError(dir.string() + ": index.csv lists " + std::to_string(index.size()) + " scans but poses.csv has " +
                          std::to_string(ds.trajectory.size()) + " poses",
                      0);
  }
  ds.scans.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i].pose_id != ds.trajectory.poses[i].id) {
      throw FormatError(dir.string() + ": index.csv row " + std::to_string(i + 1) + " has pose id " +
                            std::to_string(index[i].pose_id) + ", poses.csv has " +
                            std::to_string(ds.trajectory.poses[i].id),
                        0);
    }
    ds.scans.push_back(radar::load_scan(dir / index[i].filename));
  }
  return ds;
}

std::vector<radar::NetworkInput> preprocess_all(const std::vector<radar::PolarScan>& scans,
                                                const Preprocessing& prep) {
  std::vector<radar::NetworkInput> out;
  out.reserve(scans.size());
  for (const auto& s : scans) out.push_back(radar::preprocess(s, prep.crop_to, prep.width_factor));
  return out;
}

// ---- Scenario --------------------------------------------------------------

Scenario make_scenario(std::uint64_t seed, double spacing) {
  Scenario s;
  s.world = sim::make_desk_world(s.world_config, seed);
  // Offsets and start points differ so no two traversals share a pose.
  s.train_first = sim::make_loop_traversal(s.world_config, 0.0, 0.0, spacing, 0);
  s.train_second = sim::make_loop_traversal(s.world_config, 1.5, 0.37, spacing, 10000);
  s.map = sim::make_loop_traversal(s.world_config, -1.0, 0.61, spacing, 20000);
  s.query = sim::make_loop_traversal(s.world_config, 2.0, 0.13, spacing, 30000);
  return s;
}

void write_scenario(const Scenario& s, const fs::path& out_dir, const Json& run_config) {
  ensure_dir(out_dir);
  sim::save_world(s.world, out_dir / "world.txt");
  sim::save_trajectory(s.train_first, out_dir / "train_first.csv");
  sim::save_trajectory(s.train_second, out_dir / "train_second.csv");
  sim::save_trajectory(s.map, out_dir / "map.csv");
  sim::save_trajectory(s.query, out_dir / "query.csv");
  write_run_config(out_dir, run_config);
}

// ---- Training --------------------------------------------------------------

TrainResult train_model(const Dataset& first, const Dataset& second,
                        const std::optional<std::pair<Dataset, Dataset>>& validation,
                        const TrainOptions& options, const fs::path& out_dir, const Json& run_config,
                        const std::function<void(const train::StepStats&)>& on_step) {
  model::validate(options.net);
  ensure_dir(out_dir);
  const train::GroundTruthGraph graph =
      train::build_gt_graph(first.trajectory, second.trajectory, options.r_pos, options.r_neg);
  auto inputs = preprocess_all(first.scans, options.prep);
  const auto second_inputs = preprocess_all(second.scans, options.prep);
  inputs.insert(inputs.end(), second_inputs.begin(), second_inputs.end());

  train::TrainState state = train::make_train_state(model::init_params(options.net, options.seed), options.hp,
                                                    sim::derive_seed(options.seed, 1));
  TrainResult result;

  std::optional<train::GroundTruthGraph> val_graph;
  std::vector<radar::NetworkInput> val_inputs;
  if (validation) {
    val_graph = train::build_gt_graph(validation->first.trajectory, validation->second.trajectory, options.r_pos,
                                      options.r_neg);
    val_inputs = preprocess_all(validation->first.scans, options.prep);
    const auto more = preprocess_all(validation->second.scans, options.prep);
    val_inputs.insert(val_inputs.end(), more.begin(), more.end());
  }
  auto record_validation = [&](std::size_t step) {
    if (!val_graph) return;
    result.validation.push_back({step, train::distance_ratio(state.params, *val_graph, val_inputs)});
  };
  record_validation(0);

  auto log = open_out(out_dir / "train_log.csv");
  train::write_log_header(log);
  train::run_training(state, graph, inputs, options.loop, [&](const train::StepStats& s) {
    train::write_log_row(log, s);
    if (on_step) on_step(s);
    const std::size_t done = s.step + 1;
    if (options.validation_every > 0 && done % options.validation_every == 0 && done != options.loop.steps) {
      record_validation(done);
    }
  });
  if (options.loop.steps > 0) record_validation(options.loop.steps);
  if (!log) throw IoError("write failed for " + (out_dir / "train_log.csv").string());

  model::save_checkpoint(state.params, out_dir / "checkpoint.pmdl");
  if (val_graph) {
    auto os = open_out(out_dir / "validation.csv");
    os << "step,ratio\n";
    for (const auto& v : result.validation) os << v.step << ',' << text::format_double(v.ratio) << '\n';
  }
  write_run_config(out_dir, run_config);
  result.params = std::move(state.params);
  return result;
}

// ---- Mapping and localisation ---------------------------------------------

std::vector<index::MapRecord> embed_dataset(const model::ModelParams& params, const Dataset& dataset,
                                            const Preprocessing& prep, std::optional<std::uint64_t> perturb_seed) {
  std::mt19937_64 rng(perturb_seed.value_or(0));
  std::vector<index::MapRecord> out;
  out.reserve(dataset.scans.size());
  for (std::size_t i = 0; i < dataset.scans.size(); ++i) {
    const auto& scan = dataset.scans[i];
    radar::NetworkInput in;
    if (perturb_seed) {
      std::uniform_int_distribution<std::size_t> shift(0, scan.azimuth_count - 1);
      in = radar::preprocess(radar::roll_azimuth(scan, static_cast<std::ptrdiff_t>(shift(rng))), prep.crop_to,
                             prep.width_factor);
    } else {
      in = radar::preprocess(scan, prep.crop_to, prep.width_factor);
    }
    const auto& tp = dataset.trajectory.poses[i];
    out.push_back({tp.id, tp.pose, tp.timestamp_ns, model::forward(params, in)});
  }
  return out;
}

sim::Trajectory trajectory_of(const std::vector<index::MapRecord>& records) {
  sim::Trajectory t;
  for (const auto& r : records) t.poses.push_back({r.place_id, r.pose, r.timestamp_ns});
  sim::recompute_distances(t);
  return t;
}

Metrics evaluate(const std::vector<index::MapRecord>& map, const std::vector<index::MapRecord>& queries,
                 const EvaluateOptions& options, const fs::path& out_dir, const Json& run_config) {
  if (map.empty() || queries.empty()) throw ConfigError("evaluate: map and queries must be non-empty");
  if (map.front().embedding.dim() != queries.front().embedding.dim()) {
    throw ConfigError("evaluate: map embeddings have dimension " + std::to_string(map.front().embedding.dim()) +
                      ", queries have " + std::to_string(queries.front().embedding.dim()));
  }
  if (options.top_n.empty() && !options.radius) throw ConfigError("evaluate: need top-N values or a radius");
  const train::GroundTruthGraph graph =
      train::build_gt_graph(trajectory_of(map), trajectory_of(queries), options.r_pos, options.r_neg);
  std::vector<EmbeddingVector> map_emb, query_emb;
  for (const auto& r : map) map_emb.push_back(r.embedding);
  for (const auto& r : queries) query_emb.push_back(r.embedding);

  Metrics m;
  m.curve = eval::pr_sweep(eval::distance_matrix(query_emb, map_emb), graph, options.threshold_count);
  m.summary = eval::summarise(m.curve);

  const index::EmbeddingIndex idx = index::build_from_map(map);
  for (std::size_t n : options.top_n) {
    if (n < 1 || n > idx.size()) {
      throw ConfigError("evaluate: top-N value " + std::to_string(n) + " outside [1, " + std::to_string(idx.size()) +
                        "]");
    }
    m.topn.push_back({n, eval::topn_localise(idx, query_emb, graph, n).summary});
  }
  m.trace = options.radius ? eval::ball_localise(idx, query_emb, graph, *options.radius)
                           : eval::topn_localise(idx, query_emb, graph, options.top_n.front());
  m.dropout = eval::dropout_histogram(m.trace.trace, options.dropout_edges);

  ensure_dir(out_dir);
  eval::write_pr_curve_csv(m.curve, out_dir / "pr_curve.csv");
  eval::write_summary_csv(m.summary, out_dir / "summary.csv");
  eval::write_topn_csv(m.topn, out_dir / "topn.csv");
  eval::write_dropout_csv(m.dropout, out_dir / "dropout.csv");
  eval::write_trace_csv(m.trace.trace, out_dir / "trace.csv");
  write_run_config(out_dir, run_config);
  return m;
}

// ---- Plots -----------------------------------------------------------------

namespace {

constexpr double kWidth = 480, kHeight = 360, kLeft = 60, kRight = 20, kTop = 30, kBottom = 50;
constexpr double kPlotW = kWidth - kLeft - kRight, kPlotH = kHeight - kTop - kBottom;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

double px(double unit_x) { return kLeft + unit_x * kPlotW; }
double py(double unit_y) { return kTop + (1.0 - unit_y) * kPlotH; }

void svg_open(std::ostringstream& os, const std::string& title, const std::string& xlabel, const std::string& ylabel) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << fmt(kWidth / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << title
     << "</text>\n";
  os << "<line x1=\"" << fmt(px(0)) << "\" y1=\"" << fmt(py(0)) << "\" x2=\"" << fmt(px(1)) << "\" y2=\""
     << fmt(py(0)) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << fmt(px(0)) << "\" y1=\"" << fmt(py(0)) << "\" x2=\"" << fmt(px(0)) << "\" y2=\""
     << fmt(py(1)) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = i / 4.0;
    os << "<text x=\"" << fmt(px(0) - 6) << "\" y=\"" << fmt(py(v) + 4) << "\" text-anchor=\"end\">" << fmt(v)
       << "</text>\n";
  }
  os << "<text x=\"" << fmt(px(0.5)) << "\" y=\"" << fmt(kHeight - 10) << "\" text-anchor=\"middle\">" << xlabel
     << "</text>\n";
  os << "<text x=\"16\" y=\"" << fmt(py(0.5)) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << fmt(py(0.5)) << ")\">" << ylabel << "</text>\n";
}

void bars(std::ostringstream& os, const std::vector<std::pair<std::string, double>>& values) {
  const double slot = 1.0 / static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x0 = (static_cast<double>(i) + 0.15) * slot;
    const double h = std::clamp(values[i].second, 0.0, 1.0);
    os << "<rect x=\"" << fmt(px(x0)) << "\" y=\"" << fmt(py(h)) << "\" width=\"" << fmt(0.7 * slot * kPlotW)
       << "\" height=\"" << fmt(h * kPlotH) << "\" fill=\"steelblue\"/>\n";
    os << "<text x=\"" << fmt(px((static_cast<double>(i) + 0.5) * slot)) << "\" y=\"" << fmt(py(0) + 14)
       << "\" text-anchor=\"middle\">" << values[i].first << "</text>\n";
  }
}

}  // namespace

std::string pr_curve_svg(const eval::PRCurve& curve) {
  if (curve.recall.empty() || curve.recall.size() != curve.precision.size()) {
    throw EvaluationError("cannot plot an empty precision-recall curve");
  }
  std::ostringstream os;
  svg_open(os, "Precision-recall", "recall", "precision");
  for (int i = 1; i <= 4; ++i) {
    os << "<text x=\"" << fmt(px(i / 4.0)) << "\" y=\"" << fmt(py(0) + 14) << "\" text-anchor=\"middle\">"
       << fmt(i / 4.0) << "</text>\n";
  }
  os << "<polyline fill=\"none\" stroke=\"crimson\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < curve.recall.size(); ++i) {
    if (i) os << ' ';
    os << fmt(px(curve.recall[i])) << ',' << fmt(py(curve.precision[i]));
  }
  os << "\"/>\n</svg>\n";
  return os.str();
}

std::string topn_svg(const std::vector<eval::TopNRow>& rows) {
  if (rows.empty()) throw EvaluationError("cannot plot an empty top-N table");
  std::ostringstream os;
  svg_open(os, "Frames correctly localised", "N", "fraction of frames");
  std::vector<std::pair<std::string, double>> v;
  for (const auto& r : rows) v.emplace_back(std::to_string(r.n), r.summary.frames_correctly_localised);
  bars(os, v);
  os << "</svg>\n";
  return os.str();
}

std::string dropout_svg(const std::vector<eval::DropoutRow>& rows) {
  if (rows.empty()) throw EvaluationError("cannot plot an empty drop-out histogram");
  std::ostringstream os;
  svg_open(os, "Drop-out distance", "failure length up to (m)", "fraction of failures");
  std::vector<std::pair<std::string, double>> v;
  for (const auto& r : rows) v.emplace_back(r.bin_edge, r.fraction);
  bars(os, v);
  os << "</svg>\n";
  return os.str();
}

void plot_metrics(const fs::path& metrics_dir, const fs::path& out_dir, const Json& run_config) {
  const auto curve = eval::read_pr_curve_csv(metrics_dir / "pr_curve.csv");
  const auto topn = eval::read_topn_csv(metrics_dir / "topn.csv");
  const auto dropout = eval::read_dropout_csv(metrics_dir / "dropout.csv");
  const std::string pr = pr_curve_svg(curve), tn = topn_svg(topn), dr = dropout_svg(dropout);
  ensure_dir(out_dir);
  write_text(out_dir / "pr_curve.svg", pr);
  write_text(out_dir / "topn.svg", tn);
  write_text(out_dir / "dropout.svg", dr);
  write_run_config(out_dir, run_config);
}

}  // namespace polarloc::pipeline
