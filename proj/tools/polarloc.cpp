// polarloc: simulate radar datasets, train the embedding network, build
// maps, localise query runs and produce metric tables and plots.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "polarloc/error.hpp"
#include "polarloc/pipeline.hpp"
#include "polarloc/text.hpp"

using namespace polarloc;
using pipeline::Json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct PrepFlags {
  std::size_t crop_to = 256;
  std::size_t width_factor = 8;

  void add(CLI::App* app) {
    app->add_option("--crop", crop_to, "Range bins kept before downsampling")->capture_default_str();
    app->add_option("--width-factor", width_factor, "Range bins averaged into one input column")
        ->capture_default_str();
  }
  pipeline::Preprocessing get() const { return {crop_to, width_factor}; }
  Json json() const { return {{"crop_to", crop_to}, {"width_factor", width_factor}}; }
};

struct EvalFlags {
  double r_pos = 25.0;
  double r_neg = 50.0;
  std::size_t thresholds = 127;
  std::vector<std::size_t> top_n{1, 5, 10, 25};
  double radius = -1.0;

  void add(CLI::App* app) {
    app->add_option("--r-pos", r_pos, "True-positive radius (m)")->capture_default_str();
    app->add_option("--r-neg", r_neg, "True-negative radius (m)")->capture_default_str();
    app->add_option("--thresholds", thresholds, "Points on the precision-recall sweep")->capture_default_str();
    app->add_option("--top-n", top_n, "Candidate counts for the top-N table")->delimiter(',')->capture_default_str();
    app->add_option("--radius", radius, "Embedding-distance ball radius for the trace (default: top-N)");
  }
  pipeline::EvaluateOptions get() const {
    pipeline::EvaluateOptions o;
    o.r_pos = r_pos;
    o.r_neg = r_neg;
    o.threshold_count = thresholds;
    o.top_n = top_n;
    if (radius >= 0.0) o.radius = radius;
    return o;
  }
  Json json() const {
    Json j{{"r_pos", r_pos}, {"r_neg", r_neg}, {"thresholds", thresholds}, {"top_n", top_n}};
    if (radius >= 0.0) j["radius"] = radius;
    return j;
  }
};

std::vector<std::size_t> parse_channels(const std::string& s) {
  std::vector<std::size_t> out;
  for (auto part : text::split(s, ',')) {
    std::size_t v = 0;
    if (!text::parse_number(part, v) || v == 0) throw ConfigError("bad channel list '" + s + "'");
    out.push_back(v);
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Rotation-invariant radar place recognition"};
  app.require_subcommand(1);
  std::uint64_t seed = pipeline::default_seed();

  // scenario
  auto* scenario = app.add_subcommand("scenario", "Write a desk-scale world and four loop traversals");
  std::string scenario_out;
  double scenario_spacing = 2.5;
  scenario->add_option("--out", scenario_out, "Output directory")->required();
  scenario->add_option("--spacing", scenario_spacing, "Metres between poses")->capture_default_str();
  scenario->add_option("--seed", seed, "World seed (default $POLARLOC_SEED or 1)");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Render a scan dataset along a trajectory");
  std::string world_path, trajectory_path, simulate_out;
  sim::SensorParams sensor;
  simulate->add_option("--world", world_path, "World description file")->required();
  simulate->add_option("--trajectory", trajectory_path, "Trajectory CSV")->required();
  simulate->add_option("--out", simulate_out, "Dataset directory")->required();
  simulate->add_option("--azimuths", sensor.azimuth_count, "Azimuths per scan")->capture_default_str();
  simulate->add_option("--bins", sensor.bin_count, "Range bins per azimuth")->capture_default_str();
  simulate->add_option("--range-resolution", sensor.range_resolution, "Metres per bin")->capture_default_str();
  simulate->add_option("--seed", seed, "Noise seed (default $POLARLOC_SEED or 1)");

  // train
  auto* trainc = app.add_subcommand("train", "Train the embedding network on two overlapping runs");
  std::string first_dir, second_dir, val_first_dir, val_second_dir, train_out;
  std::string variant = "invariant", optimizer = "sgd", mining = "semi-hard", channels = "8,16,32";
  pipeline::TrainOptions topt;
  PrepFlags train_prep;
  trainc->add_option("--first", first_dir, "First training dataset")->required();
  trainc->add_option("--second", second_dir, "Second training dataset")->required();
  trainc->add_option("--val-first", val_first_dir, "First validation dataset");
  trainc->add_option("--val-second", val_second_dir, "Second validation dataset");
  trainc->add_option("--out", train_out, "Output directory")->required();
  trainc->add_option("--steps", topt.loop.steps, "Optimisation steps")->capture_default_str();
  trainc->add_option("--variant", variant, "invariant | baseline")->capture_default_str();
  trainc->add_option("--optimizer", optimizer, "sgd | adam")->capture_default_str();
  trainc->add_option("--mining", mining, "semi-hard | hardest")->capture_default_str();
  trainc->add_option("--margin", topt.hp.margin, "Triplet margin")->capture_default_str();
  trainc->add_option("--lr-start", topt.hp.lr_start, "Initial learning rate")->capture_default_str();
  trainc->add_option("--lr-end", topt.hp.lr_end, "Final learning rate")->capture_default_str();
  trainc->add_option("--lr-decay-steps", topt.hp.lr_decay_steps, "Steps of linear decay")->capture_default_str();
  trainc->add_option("--clip-norm", topt.hp.clip_norm, "Global gradient norm limit")->capture_default_str();
  trainc->add_option("--weight-reg", topt.hp.weight_reg, "L2 weight regularisation")->capture_default_str();
  trainc->add_option("--anchors", topt.loop.batch.anchors, "Anchors per batch")->capture_default_str();
  trainc->add_option("--positives", topt.loop.batch.positives_per_anchor, "Positives per anchor")
      ->capture_default_str();
  trainc->add_option("--negatives", topt.loop.batch.negatives, "Shared negatives per batch")->capture_default_str();
  trainc->add_option("--sensing-range", topt.loop.batch.sensing_range, "Sensor horizon (m)")->capture_default_str();
  trainc->add_option("--channels", channels, "Channels per conv stage")->capture_default_str();
  trainc->add_option("--convs-per-stage", topt.net.convs_per_stage, "Convolutions per stage")->capture_default_str();
  trainc->add_option("--clusters", topt.net.vlad_clusters, "NetVLAD clusters")->capture_default_str();
  trainc->add_option("--output-dim", topt.net.output_dim, "Embedding dimension")->capture_default_str();
  trainc->add_flag("--aggregate-before-pool", topt.net.aggregate_before_azimuth_pool,
                   "Aggregate all positions instead of max-pooling azimuth first");
  trainc->add_option("--r-pos", topt.r_pos, "True-positive radius (m)")->capture_default_str();
  trainc->add_option("--r-neg", topt.r_neg, "True-negative radius (m)")->capture_default_str();
  trainc->add_option("--validation-every", topt.validation_every, "Steps between validation ratios")
      ->capture_default_str();
  trainc->add_option("--seed", seed, "Initialisation and sampling seed (default $POLARLOC_SEED or 1)");
  train_prep.add(trainc);

  // map
  auto* mapc = app.add_subcommand("map", "Embed a reference run into a map database");
  std::string checkpoint, map_dataset, map_out;
  PrepFlags map_prep;
  mapc->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  mapc->add_option("--dataset", map_dataset, "Reference dataset")->required();
  mapc->add_option("--out", map_out, "Output directory (map.pmap)")->required();
  map_prep.add(mapc);

  // localise
  auto* localise = app.add_subcommand("localise", "Localise a query run against a map database");
  std::string loc_checkpoint, loc_map, loc_queries, loc_out;
  bool perturb = false;
  PrepFlags loc_prep;
  EvalFlags loc_eval;
  localise->add_option("--checkpoint", loc_checkpoint, "Model checkpoint")->required();
  localise->add_option("--map", loc_map, "Map database")->required();
  localise->add_option("--queries", loc_queries, "Query dataset")->required();
  localise->add_option("--out", loc_out, "Output directory")->required();
  localise->add_flag("--perturb-rotation", perturb, "Roll every query scan by a random azimuth shift");
  localise->add_option("--seed", seed, "Perturbation seed (default $POLARLOC_SEED or 1)");
  loc_prep.add(localise);
  loc_eval.add(localise);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Metrics from a map database and a query database");
  std::string ev_map, ev_queries, ev_out;
  EvalFlags ev_flags;
  evaluate->add_option("--map", ev_map, "Map database")->required();
  evaluate->add_option("--queries", ev_queries, "Query embedding database")->required();
  evaluate->add_option("--out", ev_out, "Output directory")->required();
  ev_flags.add(evaluate);

  // plot
  auto* plot = app.add_subcommand("plot", "SVG plots from metric CSVs");
  std::string plot_in, plot_out;
  plot->add_option("--metrics", plot_in, "Directory with pr_curve.csv, topn.csv, dropout.csv")
      ->required();
  plot->add_option("--out", plot_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (scenario->parsed()) {
    const auto s = pipeline::make_scenario(seed, scenario_spacing);
    pipeline::write_scenario(s, scenario_out, Json{{"command", "scenario"}, {"seed", seed}, {"spacing", scenario_spacing}});
    std::cout << "wrote world.txt and 4 trajectories (" << s.map.size() << " poses each) to " << scenario_out << '\n';
  } else if (simulate->parsed()) {
    const sim::World world = sim::load_world(world_path);
    const sim::Trajectory traj = sim::load_trajectory(trajectory_path);
    const Json cfg{{"command", "simulate"},
                   {"world", world_path},
                   {"trajectory", trajectory_path},
                   {"azimuths", sensor.azimuth_count},
                   {"bins", sensor.bin_count},
                   {"range_resolution", sensor.range_resolution},
                   {"seed", seed}};
    const auto ds = pipeline::simulate_dataset(world, traj, sensor, seed, simulate_out, cfg);
    std::cout << "wrote " << ds.scans.size() << " scans to " << simulate_out << '\n';
  } else if (trainc->parsed()) {
    topt.net.variant = model::parse_variant(variant);
    topt.net.stage_channels = parse_channels(channels);
    topt.hp.optimizer = train::parse_optimizer(optimizer);
    topt.hp.mining = train::parse_mining(mining);
    topt.prep = train_prep.get();
    topt.seed = seed;
    if (val_first_dir.empty() != val_second_dir.empty()) {
      throw ConfigError("--val-first and --val-second must be given together");
    }
    std::optional<std::pair<pipeline::Dataset, pipeline::Dataset>> val;
    if (!val_first_dir.empty()) val.emplace(pipeline::load_dataset(val_first_dir), pipeline::load_dataset(val_second_dir));
    const Json cfg{{"command", "train"},
                   {"first", first_dir},
                   {"second", second_dir},
                   {"val_first", val_first_dir},
                   {"val_second", val_second_dir},
                   {"steps", topt.loop.steps},
                   {"variant", variant},
                   {"optimizer", optimizer},
                   {"mining", mining},
                   {"margin", topt.hp.margin},
                   {"lr_start", topt.hp.lr_start},
                   {"lr_end", topt.hp.lr_end},
                   {"lr_decay_steps", topt.hp.lr_decay_steps},
                   {"clip_norm", topt.hp.clip_norm},
                   {"weight_reg", topt.hp.weight_reg},
                   {"anchors", topt.loop.batch.anchors},
                   {"positives", topt.loop.batch.positives_per_anchor},
                   {"negatives", topt.loop.batch.negatives},
                   {"sensing_range", topt.loop.batch.sensing_range},
                   {"channels", topt.net.stage_channels},
                   {"convs_per_stage", topt.net.convs_per_stage},
                   {"clusters", topt.net.vlad_clusters},
                   {"output_dim", topt.net.output_dim},
                   {"aggregate_before_pool", topt.net.aggregate_before_azimuth_pool},
                   {"r_pos", topt.r_pos},
                   {"r_neg", topt.r_neg},
                   {"validation_every", topt.validation_every},
                   {"preprocessing", train_prep.json()},
                   {"seed", seed}};
    const auto result = pipeline::train_model(pipeline::load_dataset(first_dir), pipeline::load_dataset(second_dir),
                                              val, topt, train_out, cfg);
    std::cout << "trained " << topt.loop.steps << " steps; checkpoint in " << train_out << '\n';
    if (!result.validation.empty()) {
      std::cout << "validation ratio " << result.validation.front().ratio << " -> " << result.validation.back().ratio
                << '\n';
    }
  } else if (mapc->parsed()) {
    const auto params = model::load_checkpoint(checkpoint);
    const auto records = pipeline::embed_dataset(params, pipeline::load_dataset(map_dataset), map_prep.get());
    std::filesystem::create_directories(map_out);
    index::save_map(records, std::filesystem::path(map_out) / "map.pmap");
    pipeline::write_run_config(map_out, Json{{"command", "map"},
                                             {"checkpoint", checkpoint},
                                             {"dataset", map_dataset},
                                             {"preprocessing", map_prep.json()}});
    std::cout << "wrote " << records.size() << " map records to " << map_out << '\n';
  } else if (localise->parsed()) {
    const auto params = model::load_checkpoint(loc_checkpoint);
    const auto map = index::load_map(loc_map);
    const auto queries = pipeline::embed_dataset(params, pipeline::load_dataset(loc_queries), loc_prep.get(),
                                                 perturb ? std::optional<std::uint64_t>(seed) : std::nullopt);
    std::filesystem::create_directories(loc_out);
    index::save_map(queries, std::filesystem::path(loc_out) / "queries.pmap");
    Json cfg{{"command", "localise"},
             {"checkpoint", loc_checkpoint},
             {"map", loc_map},
             {"queries", loc_queries},
             {"perturb_rotation", perturb},
             {"seed", seed},
             {"preprocessing", loc_prep.json()},
             {"evaluation", loc_eval.json()}};
    const auto m = pipeline::evaluate(map, queries, loc_eval.get(), loc_out, cfg);
    std::cout << "auc " << m.summary.auc << "  max F1 " << m.summary.max_f1 << "  frames correct (N="
              << loc_eval.top_n.front() << ") " << m.topn.front().summary.frames_correctly_localised << '\n';
  } else if (evaluate->parsed()) {
    const auto m = pipeline::evaluate(
        index::load_map(ev_map), index::load_map(ev_queries), ev_flags.get(), ev_out,
        Json{{"command", "evaluate"}, {"map", ev_map}, {"queries", ev_queries}, {"evaluation", ev_flags.json()}});
    std::cout << "auc " << m.summary.auc << "  max F1 " << m.summary.max_f1 << '\n';
  } else if (plot->parsed()) {
    pipeline::plot_metrics(plot_in, plot_out, Json{{"command", "plot"}, {"metrics", plot_in}});
    std::cout << "wrote pr_curve.svg, topn.svg, dropout.svg to " << plot_out << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DegenerateVectorError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
