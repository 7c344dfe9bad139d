#pragma once

// File-level pipeline stages behind the command-line tool. Every stage reads
// its inputs from disk, writes its outputs into one directory and leaves a
// config.json there describing the call that produced it.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "polarloc/eval.hpp"
#include "polarloc/index.hpp"
#include "polarloc/model.hpp"
#include "polarloc/radar.hpp"
#include "polarloc/simulate.hpp"
#include "polarloc/train.hpp"

namespace polarloc::pipeline {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

/// Writes `config` as <dir>/config.json (creating dir).
void write_run_config(const fs::path& dir, const Json& config);
Json read_run_config(const fs::path& dir);

/// Seed used when none is given: $POLARLOC_SEED if set, else `fallback`.
std::uint64_t default_seed(std::uint64_t fallback = 1);

// ---- Datasets --------------------------------------------------------------
//   <dir>/scans/NNNNNN.pscn, <dir>/index.csv, <dir>/poses.csv, <dir>/config.json

struct Dataset {
  sim::Trajectory trajectory;
  std::vector<radar::PolarScan> scans;  // aligned with trajectory.poses
};

/// Renders every pose and writes the dataset. Throws ConfigError on an empty
/// trajectory.
Dataset simulate_dataset(const sim::World& world, const sim::Trajectory& trajectory,
                         const sim::SensorParams& sensor, std::uint64_t seed, const fs::path& out_dir,
                         const Json& run_config = Json::object());

/// Throws FormatError when index.csv and poses.csv disagree.
Dataset load_dataset(const fs::path& dir);

struct Preprocessing {
  std::size_t crop_to = 256;
  std::size_t width_factor = 8;
};

std::vector<radar::NetworkInput> preprocess_all(const std::vector<radar::PolarScan>& scans,
                                                const Preprocessing& prep);

// ---- Scenario --------------------------------------------------------------

/// Desk-scale world plus four traversals of its loop: two for training and
/// two held out (map and query).
struct Scenario {
  sim::DeskWorldConfig world_config;
  sim::World world;
  sim::Trajectory train_first, train_second, map, query;
};

Scenario make_scenario(std::uint64_t seed, double spacing = 2.5);

/// world.txt plus one trajectory CSV per traversal.
void write_scenario(const Scenario& s, const fs::path& out_dir, const Json& run_config);

// ---- Training --------------------------------------------------------------

struct TrainOptions {
  model::NetConfig net;
  train::Hyperparams hp;
  train::TrainLoopConfig loop;
  Preprocessing prep;
  double r_pos = 25.0;
  double r_neg = 50.0;
  std::uint64_t seed = 1;
  /// Validation ratio is logged every this many steps (0: only first and last).
  std::size_t validation_every = 0;
};

struct ValidationPoint {
  std::size_t step = 0;
  double ratio = 0.0;
};

struct TrainResult {
  model::ModelParams params;
  std::vector<ValidationPoint> validation;  // empty without a validation pair
};

/// Trains on the (first, second) pair and writes checkpoint.pmdl,
/// train_log.csv and, with a validation pair, validation.csv
/// (step,ratio). `validation` holds (first, second) datasets.
TrainResult train_model(const Dataset& first, const Dataset& second,
                        const std::optional<std::pair<Dataset, Dataset>>& validation,
                        const TrainOptions& options, const fs::path& out_dir,
                        const Json& run_config = Json::object(),
                        const std::function<void(const train::StepStats&)>& on_step = {});

// ---- Mapping and localisation ---------------------------------------------

std::vector<index::MapRecord> embed_dataset(const model::ModelParams& params, const Dataset& dataset,
                                            const Preprocessing& prep,
                                            std::optional<std::uint64_t> perturb_seed = std::nullopt);

/// Trajectory implied by a map database (ids, poses, timestamps in order).
sim::Trajectory trajectory_of(const std::vector<index::MapRecord>& records);

struct EvaluateOptions {
  double r_pos = 25.0;
  double r_neg = 50.0;
  std::size_t threshold_count = 127;
  std::vector<std::size_t> top_n{1, 5, 10, 25};
  /// Candidate retrieval for the trace and drop-out histogram: ball search
  /// at this radius when set, top-N with the first top_n value otherwise.
  std::optional<double> radius;
  std::vector<double> dropout_edges = eval::default_dropout_edges();
};

struct Metrics {
  eval::PRCurve curve;
  eval::PRSummary summary;
  std::vector<eval::TopNRow> topn;
  eval::LocalisationResult trace;
  eval::DropoutHistogram dropout;
};

/// Writes pr_curve.csv, summary.csv, topn.csv, dropout.csv and trace.csv.
Metrics evaluate(const std::vector<index::MapRecord>& map, const std::vector<index::MapRecord>& queries,
                 const EvaluateOptions& options, const fs::path& out_dir,
                 const Json& run_config = Json::object());

// ---- Plots -----------------------------------------------------------------

/// pr_curve.svg, topn.svg and dropout.svg from the CSVs in `metrics_dir`.
void plot_metrics(const fs::path& metrics_dir, const fs::path& out_dir, const Json& run_config = Json::object());

std::string pr_curve_svg(const eval::PRCurve& curve);
std::string topn_svg(const std::vector<eval::TopNRow>& rows);
std::string dropout_svg(const std::vector<eval::DropoutRow>& rows);

}  // namespace polarloc::pipeline
