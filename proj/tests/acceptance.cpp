// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 255).

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "polarloc/error.hpp"
#include "polarloc/eval.hpp"
#include "polarloc/gradcheck.hpp"
#include "polarloc/index.hpp"
#include "polarloc/model.hpp"
#include "polarloc/numerics.hpp"
#include "polarloc/pipeline.hpp"
#include "polarloc/radar.hpp"
#include "polarloc/simulate.hpp"
#include "polarloc/train.hpp"

using namespace polarloc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

FeatureMap random_map(std::size_t a, std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                      double hi = 1.0) {
  FeatureMap m(a, r, c);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : m.values()) v = u(rng);
  return m;
}

numerics::ConvKernel random_kernel(std::size_t k, std::size_t cin, std::size_t cout, std::mt19937_64& rng) {
  numerics::ConvKernel kernel(k, k, cin, cout);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (double& w : kernel.weights) w = u(rng);
  for (double& b : kernel.bias) b = u(rng);
  return kernel;
}

sim::World random_world(std::mt19937_64& rng, std::size_t n) {
  sim::World w;
  std::uniform_real_distribution<double> pos(-50.0, 50.0), refl(0.1, 1.0), rad(0.2, 3.0);
  for (std::size_t i = 0; i < n; ++i) w.landmarks.push_back({pos(rng), pos(rng), refl(rng), rad(rng)});
  return w;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---- 1 --------------------------------------------------------------------

Outcome equivariance() {
  std::mt19937_64 rng(101);
  const sim::SensorParams sensor{};
  const double step = 2.0 * M_PI / static_cast<double>(sensor.azimuth_count);
  std::size_t render_checks = 0, layer_checks = 0, embed_checks = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const sim::World w = random_world(rng, 60);
    std::uniform_real_distribution<double> xy(-30.0, 30.0), yaw(-M_PI, M_PI);
    std::uniform_int_distribution<int> k(-200, 200);
    const sim::Pose2 p{xy(rng), xy(rng), yaw(rng)};
    const radar::PolarScan base = sim::render_scan(w, p, sensor);
    for (int j = 0; j < 5; ++j) {
      const int kk = k(rng);
      const radar::PolarScan turned = sim::render_scan(w, {p.x, p.y, p.yaw + kk * step}, sensor);
      if (!(turned == radar::roll_azimuth(base, -kk))) return {false, "render roll mismatch, k=" + std::to_string(kk)};
      ++render_checks;
    }
  }

  for (int trial = 0; trial < 20; ++trial) {
    const FeatureMap x = random_map(32, 12, 3, rng);
    const numerics::ConvKernel kernel = random_kernel(3, 3, 4, rng);
    std::uniform_int_distribution<int> m(-20, 20);
    const int s = m(rng);
    const FeatureMap x1 = roll_azimuth(x, s);
    const FeatureMap x2 = roll_azimuth(x, 2 * s);
    using numerics::Stride;
    const std::vector<std::pair<std::string, bool>> results{
        {"conv", numerics::conv2d_cylindrical(x1, kernel) == roll_azimuth(numerics::conv2d_cylindrical(x, kernel), s)},
        {"conv/2", numerics::conv2d_cylindrical(x2, kernel, Stride{2, 2}) ==
                       roll_azimuth(numerics::conv2d_cylindrical(x, kernel, Stride{2, 2}), s)},
        {"maxpool", numerics::maxpool_cylindrical(x1, {2, 2}).output ==
                        roll_azimuth(numerics::maxpool_cylindrical(x, {2, 2}).output, s)},
        {"blurpool", numerics::blurpool(x2, 7, 1.0) == roll_azimuth(numerics::blurpool(x, 7, 1.0), s)},
        {"relu", numerics::relu(x1) == roll_azimuth(numerics::relu(x), s)},
        {"azimuth_maxpool", numerics::azimuth_maxpool(x1).output == numerics::azimuth_maxpool(x).output},
    };
    for (const auto& [name, ok] : results) {
      if (!ok) return {false, name + " not roll equivariant, shift " + std::to_string(s)};
      ++layer_checks;
    }
  }

  double worst = 0.0;
  const model::NetConfig cfg;
  const std::size_t S = cfg.azimuth_stride();
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const model::ModelParams params = model::init_params(cfg, 500 + seed);
    const sim::World w = random_world(rng, 80);
    const radar::NetworkInput in = radar::preprocess(sim::render_scan(w, {1.0, -2.0, 0.4}, sensor), 256, 8);
    const EmbeddingVector e = model::forward(params, in);
    for (std::size_t m = 1; m < in.data.azimuth_len() / S; ++m) {
      const EmbeddingVector r = model::forward(params, {roll_azimuth(in.data, static_cast<std::ptrdiff_t>(m * S))});
      worst = std::max(worst, max_abs_diff(e.values, r.values));
      ++embed_checks;
    }
  }
  const bool ok = worst < 1e-6;
  return {ok, std::to_string(render_checks) + " render rolls, " + std::to_string(layer_checks) + " layer rolls, " +
                  std::to_string(embed_checks) + " embedding rolls (max diff " + fmt("%.2e", worst) + ")"};
}

// ---- 2 --------------------------------------------------------------------

Outcome gradients() {
  using namespace numerics;
  std::mt19937_64 rng(202);
  std::vector<GradCheckReport> reports;
  const FeatureMap probe = random_map(12, 10, 3, rng);
  const ConvKernel kernel = random_kernel(3, 3, 4, rng);

  for (Stride s : {Stride{1, 1}, Stride{2, 2}}) {
    reports.push_back(finite_diff_check(
        {"conv" + std::to_string(s.azimuth), [&](const FeatureMap& x) { return conv2d_cylindrical(x, kernel, s); },
         [&](const FeatureMap& x, const FeatureMap& g) { return conv2d_cylindrical_backward(x, kernel, g, s).input; }},
        probe, 1e-5, 120, 1));
  }
  {
    const FeatureMap g = random_map(12, 10, 4, rng);
    auto loss = [&](std::span<const double> w) {
      ConvKernel k = kernel;
      std::copy(w.begin(), w.end(), k.weights.begin());
      const FeatureMap out = conv2d_cylindrical(probe, k);
      return std::inner_product(out.values().begin(), out.values().end(), g.values().begin(), 0.0);
    };
    const auto grads = conv2d_cylindrical_backward(probe, kernel, g);
    reports.push_back(check_gradient("conv.weights", loss, kernel.weights, grads.weights, 1e-5, 108, 2));
  }
  reports.push_back(finite_diff_check(
      {"blurpool", [](const FeatureMap& x) { return blurpool(x, 7, 1.0); },
       [](const FeatureMap& x, const FeatureMap& g) { return blurpool_backward(x, 7, 1.0, g); }},
      probe, 1e-5, 120, 3));
  reports.push_back(finite_diff_check(
      {"maxpool", [](const FeatureMap& x) { return maxpool_cylindrical(x, {2, 2}).output; },
       [](const FeatureMap& x, const FeatureMap& g) { return pool_backward(x, maxpool_cylindrical(x, {2, 2}), g); }},
      probe, 1e-6, 120, 4));
  reports.push_back(finite_diff_check(
      {"azimuth_maxpool", [](const FeatureMap& x) { return azimuth_maxpool(x).output; },
       [](const FeatureMap& x, const FeatureMap& g) { return pool_backward(x, azimuth_maxpool(x), g); }},
      probe, 1e-6, 120, 5));
  {
    FeatureMap away = probe;  // keep probes off the kink
    for (double& v : away.values()) v += v >= 0 ? 0.05 : -0.05;
    reports.push_back(finite_diff_check({"relu", [](const FeatureMap& x) { return relu(x); },
                                         [](const FeatureMap& x, const FeatureMap& g) { return relu_backward(x, g); }},
                                        away, 1e-6, 120, 6));
  }
  {
    const FeatureMap w = random_map(1, 1, probe.size(), rng);
    auto f = [&](std::span<const double> x) {
      const auto y = l2_normalize(x);
      return std::inner_product(y.begin(), y.end(), w.values().begin(), 0.0);
    };
    reports.push_back(check_gradient("l2_normalize", f, probe.values(), l2_normalize_backward(probe.values(), w.values()),
                                     1e-6, 120, 7));
  }

  model::NetConfig small;
  small.stage_channels = {3, 4};
  small.convs_per_stage = 1;
  small.vlad_clusters = 3;
  small.output_dim = 6;
  const model::ModelParams sp = model::init_params(small, 31);
  {
    const FeatureMap desc = random_map(5, 4, 4, rng);
    const FeatureMap w = random_map(1, 1, sp.vlad.clusters * sp.vlad.dim, rng);
    const model::VladForward fwd = model::netvlad(desc, sp.vlad);
    const model::VladGrads g = model::netvlad_backward(desc, sp.vlad, fwd, w.values());
    auto f_desc = [&](std::span<const double> x) {
      FeatureMap d = desc;
      std::copy(x.begin(), x.end(), d.values().begin());
      const auto v = model::netvlad_vector(d, sp.vlad);
      return std::inner_product(v.begin(), v.end(), w.values().begin(), 0.0);
    };
    reports.push_back(check_gradient("netvlad.input", f_desc, desc.values(), g.descriptors.values(), 1e-6, 80, 8));
    auto f_params = [&](std::span<const double> x) {
      model::VladParams p = sp.vlad;
      const std::size_t n = p.centres.size(), m = p.assign_weights.size();
      std::copy(x.begin(), x.begin() + n, p.centres.begin());
      std::copy(x.begin() + n, x.begin() + n + m, p.assign_weights.begin());
      std::copy(x.begin() + n + m, x.end(), p.assign_bias.begin());
      const auto v = model::netvlad_vector(desc, p);
      return std::inner_product(v.begin(), v.end(), w.values().begin(), 0.0);
    };
    std::vector<double> flat, grad;
    for (const auto* v : {&sp.vlad.centres, &sp.vlad.assign_weights, &sp.vlad.assign_bias}) flat.insert(flat.end(), v->begin(), v->end());
    for (const auto* v : {&g.params.centres, &g.params.assign_weights, &g.params.assign_bias}) grad.insert(grad.end(), v->begin(), v->end());
    reports.push_back(check_gradient("netvlad.params", f_params, flat, grad, 1e-6, 40, 9));
  }
  {
    const FeatureMap d = random_map(1, 1, sp.projection.cols, rng);
    const FeatureMap w = random_map(1, 1, sp.projection.rows, rng);
    const model::ProjectForward fwd = model::project(d.values(), sp.projection);
    const model::ProjectGrads g = model::project_backward(d.values(), sp.projection, fwd, w.values());
    auto f_in = [&](std::span<const double> x) {
      const auto e = model::project(x, sp.projection).embedding.values;
      return std::inner_product(e.begin(), e.end(), w.values().begin(), 0.0);
    };
    reports.push_back(check_gradient("projection.input", f_in, d.values(), g.descriptor, 1e-6, 12, 10));
    auto f_m = [&](std::span<const double> x) {
      model::Projection p = sp.projection;
      std::copy(x.begin(), x.end(), p.matrix.begin());
      const auto e = model::project(d.values(), p).embedding.values;
      return std::inner_product(e.begin(), e.end(), w.values().begin(), 0.0);
    };
    reports.push_back(check_gradient("projection.matrix", f_m, sp.projection.matrix, g.matrix, 1e-6, 72, 11));
  }

  // End-to-end triplet loss over a sampled batch, both variants.
  const sim::DeskWorldConfig desk;
  const sim::World world = sim::make_desk_world(desk, 3);
  const sim::Trajectory a = sim::make_loop_traversal(desk, 0.0, 0.0, 10.0, 0);
  const sim::Trajectory b = sim::make_loop_traversal(desk, 1.0, 0.3, 10.0, 1000);
  const train::GroundTruthGraph graph = train::build_gt_graph(a, b, 25.0, 50.0);
  std::vector<radar::NetworkInput> inputs;
  for (const auto* t : {&a, &b}) {
    for (const auto& scan : sim::render_trajectory(world, *t, sim::SensorParams{}, 1)) inputs.push_back(radar::preprocess(scan, 256, 8));
  }
  for (model::Variant v : {model::Variant::Invariant, model::Variant::Baseline}) {
    model::NetConfig cfg = small;
    cfg.variant = v;
    model::ModelParams p = model::init_params(cfg, 41);
    // Zero init biases put empty-input positions exactly on the ReLU kink.
    std::uniform_real_distribution<double> jitter(-0.05, 0.05);
    for (auto& k : p.convs) {
      for (double& b : k.bias) b = jitter(rng);
    }
    train::Hyperparams hp;
    hp.weight_reg = 1e-3;
    std::mt19937_64 batch_rng(12);
    const train::TripletBatch batch = train::sample_batch(graph, train::BatchConfig{}, batch_rng);
    const auto members = batch.members();
    std::vector<radar::NetworkInput> member_inputs;
    for (std::size_t m : members) member_inputs.push_back(inputs[m]);
    const auto triplets = train::mine_triplets(train::embed_all(p, member_inputs), batch, train::Mining::Hardest).triplets;
    const train::BatchGradient bg = train::batch_gradient(p, hp, inputs, members, triplets);
    auto f = [&](std::span<const double> flat) {
      model::ModelParams q = p;
      model::unflatten(flat, q);
      return train::batch_gradient(q, hp, inputs, members, triplets).loss;
    };
    reports.push_back(check_gradient(std::string("triplet.") + model::to_string(v), f, model::flatten(p),
                                     model::flatten(bg.grads), 1e-6, 120, 13));
  }

  double worst = 0.0;
  std::size_t probes = 0;
  std::string worst_name;
  for (const auto& r : reports) {
    probes += r.probe_count;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.op_name;
    }
  }
  return {worst < 1e-4, std::to_string(reports.size()) + " checks, " + std::to_string(probes) +
                            " probes, max rel error " + fmt("%.2e", worst) + " (" + worst_name + ")"};
}

// ---- 3 --------------------------------------------------------------------

Outcome index_oracle() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<std::size_t> npts(1, 300), dim(1, 16);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::size_t compared = 0;
  for (int instance = 0; instance < 1000; ++instance) {
    const std::size_t n = npts(rng), d = dim(rng);
    std::vector<index::IndexedPoint> pts(n);
    std::uniform_int_distribution<int> coarse(-3, 3);
    const bool duplicates = instance % 5 == 0;  // lattice points force ties
    for (std::size_t i = 0; i < n; ++i) {
      pts[i].place_id = 1000 + i;
      pts[i].embedding.values.resize(d);
      for (double& v : pts[i].embedding.values) v = duplicates ? coarse(rng) * 0.25 : u(rng);
    }
    const auto idx = index::EmbeddingIndex::build(pts, 1 + instance % 9);
    for (int qn = 0; qn < 3; ++qn) {
      EmbeddingVector qv;
      qv.values.resize(d);
      for (double& v : qv.values) v = duplicates ? coarse(rng) * 0.25 : u(rng);
      const std::size_t k = 1 + rng() % n;
      if (idx.knn(qv, k) != index::brute_force_knn(pts, qv, k)) return {false, "knn mismatch in instance " + std::to_string(instance)};
      const double radius = std::abs(u(rng)) * std::sqrt(static_cast<double>(d));
      if (idx.ball(qv, radius) != index::brute_force_ball(pts, qv, radius)) return {false, "ball mismatch in instance " + std::to_string(instance)};
      compared += 2;
    }
  }
  return {true, "1000 instances, " + std::to_string(compared) + " queries identical to linear scan"};
}

// ---- 4 --------------------------------------------------------------------

Outcome metric_formulas() {
  std::vector<std::string> failures;
  const double f2 = eval::f_beta(1.0, 0.5, 2.0), f05 = eval::f_beta(1.0, 0.5, 0.5);
  if (std::abs(f2 - 0.5556) > 5e-5) failures.push_back("F2 " + fmt("%.6f", f2));
  if (std::abs(f05 - 0.8333) > 5e-5) failures.push_back("F0.5 " + fmt("%.6f", f05));

  // Perfectly separated embeddings: each query sits on its own map place.
  sim::Trajectory map, queries;
  std::vector<EmbeddingVector> me, qe;
  for (std::uint64_t i = 0; i < 12; ++i) {
    const double x = 100.0 * static_cast<double>(i);
    map.poses.push_back({i, {x, 0.0, 0.0}, static_cast<std::int64_t>(i)});
    queries.poses.push_back({100 + i, {x + 3.0, 0.0, 0.0}, static_cast<std::int64_t>(i)});
    EmbeddingVector e;
    e.values.assign(12, 0.0);
    e.values[i] = 1.0;
    me.push_back(e);
    e.values[i] = 0.99;
    e.values[(i + 1) % 12] = std::sqrt(1.0 - 0.99 * 0.99);
    qe.push_back(e);
  }
  sim::recompute_distances(map);
  sim::recompute_distances(queries);
  const auto graph = train::build_gt_graph(map, queries, 25.0, 50.0);
  const auto dm = eval::distance_matrix(qe, me);
  const eval::PRCurve curve = eval::pr_sweep(dm, graph, 127);
  const auto [lo, hi] = std::minmax_element(dm.values.begin(), dm.values.end());
  if (curve.thresholds.size() != 127) failures.push_back(std::to_string(curve.thresholds.size()) + " thresholds");
  if (curve.thresholds.front() != *lo || curve.thresholds.back() != *hi) failures.push_back("threshold span");
  const double area = eval::auc(curve);
  if (std::abs(area - 1.0) > 1e-9) failures.push_back("AUC " + fmt("%.12f", area));

  if (!failures.empty()) {
    std::string d;
    for (const auto& f : failures) d += (d.empty() ? "" : "; ") + f;
    return {false, d};
  }
  return {true, "F2 " + fmt("%.4f", f2) + ", F0.5 " + fmt("%.4f", f05) + ", 127 thresholds over [" + fmt("%.4f", *lo) +
                    ", " + fmt("%.4f", *hi) + "], AUC " + fmt("%.12f", area)};
}

// ---- 5 and 6 ----------------------------------------------------------------

struct RotationResult {
  double upright = 0.0, rolled = 0.0;
  std::vector<pipeline::ValidationPoint> validation;
};

struct DeskRun {
  fs::path dir;
  std::size_t steps = 5000;
  std::uint64_t seed = 17;
  RotationResult invariant, baseline;
  bool done = false;
  std::string error;
  double seconds = 0.0;
};

pipeline::TrainOptions desk_train_options(model::Variant v, const DeskRun& run) {
  pipeline::TrainOptions o;
  o.net.variant = v;
  o.hp.optimizer = train::Optimizer::Adam;
  o.hp.lr_start = 3e-4;
  o.hp.lr_end = 1.5e-5;
  o.loop.steps = run.steps;
  o.loop.batch.positives_per_anchor = 3;
  o.seed = run.seed;
  o.validation_every = 500;
  return o;
}

void desk_experiment(DeskRun& run) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const pipeline::Scenario sc = pipeline::make_scenario(run.seed);
    pipeline::write_scenario(sc, run.dir / "scenario", {{"seed", run.seed}});
    const sim::SensorParams sensor{};
    auto sim_run = [&](const sim::Trajectory& t, const char* name, std::uint64_t salt) {
      return pipeline::simulate_dataset(sc.world, t, sensor, sim::derive_seed(run.seed, salt), run.dir / name);
    };
    const auto first = sim_run(sc.train_first, "train_first", 1);
    const auto second = sim_run(sc.train_second, "train_second", 2);
    const auto map = sim_run(sc.map, "map", 3);
    const auto query = sim_run(sc.query, "query", 4);
    const pipeline::Preprocessing prep;
    for (model::Variant v : {model::Variant::Invariant, model::Variant::Baseline}) {
      const std::string name = model::to_string(v);
      RotationResult& out = v == model::Variant::Invariant ? run.invariant : run.baseline;
      const auto opts = desk_train_options(v, run);
      const auto trained = pipeline::train_model(first, second, std::make_pair(map, query), opts, run.dir / ("train_" + name));
      out.validation = trained.validation;
      const auto map_db = pipeline::embed_dataset(trained.params, map, prep);
      const auto upright = pipeline::embed_dataset(trained.params, query, prep);
      const auto rolled = pipeline::embed_dataset(trained.params, query, prep, sim::derive_seed(run.seed, 99));
      const pipeline::EvaluateOptions eo;
      out.upright = pipeline::evaluate(map_db, upright, eo, run.dir / ("eval_" + name + "_upright")).summary.max_f1;
      out.rolled = pipeline::evaluate(map_db, rolled, eo, run.dir / ("eval_" + name + "_rolled")).summary.max_f1;
    }
    run.done = true;
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome rotation_robustness(const DeskRun& run) {
  if (!run.done) return {false, "desk experiment failed: " + run.error};
  const double inv_gap = std::abs(run.invariant.upright - run.invariant.rolled);
  const double base_drop = run.baseline.upright - run.baseline.rolled;
  const bool ok = inv_gap <= 0.02 && base_drop >= 0.10;
  return {ok, "invariant max-F1 " + fmt("%.3f", run.invariant.upright) + " upright / " + fmt("%.3f", run.invariant.rolled) +
                  " rolled (gap " + fmt("%.3f", inv_gap) + " <= 0.02); baseline " + fmt("%.3f", run.baseline.upright) +
                  " / " + fmt("%.3f", run.baseline.rolled) + " (drop " + fmt("%.3f", base_drop) + " >= 0.10); " +
                  std::to_string(run.steps) + " steps, " + fmt("%.0f", run.seconds) + " s"};
}

Outcome metric_space(const DeskRun& run) {
  if (!run.done) return {false, "desk experiment failed: " + run.error};
  const auto& v = run.invariant.validation;
  if (v.size() < 2) return {false, "no validation ratios recorded"};
  const double start = v.front().ratio, end = v.back().ratio;
  const double decrease = (start - end) / start;
  return {decrease >= 0.20, "validation d_ap/d_an " + fmt("%.4f", start) + " -> " + fmt("%.4f", end) + " (" +
                                fmt("%.1f", 100.0 * decrease) + "% decrease, need >= 20%; baseline " +
                                fmt("%.4f", run.baseline.validation.front().ratio) + " -> " +
                                fmt("%.4f", run.baseline.validation.back().ratio) + ")"};
}

// ---- 7 --------------------------------------------------------------------

Outcome dropout_accounting() {
  // Correct flags and odometric distances along a query run. Hand enumeration
  // of failure streaks (sum of the failed frames' distances):
  //   frames 1-2   : 1.5 + 2.0       = 3.5
  //   frame 4      : 3.75            = 3.75
  //   frames 6-9   : 2 + 2 + 2 + 1.5 = 7.5
  //   frames 11-15 : 5 x 2.5         = 12.5
  //   frames 17-18 : 20 + 15         = 35
  //   frame 20     : 1.0 (trailing)  = 1.0
  const std::vector<std::pair<bool, double>> run{
      {true, 0.0},  {false, 1.5}, {false, 2.0}, {true, 1.0},  {false, 3.75}, {true, 2.0},  {false, 2.0},
      {false, 2.0}, {false, 2.0}, {false, 1.5}, {true, 1.0},  {false, 2.5},  {false, 2.5}, {false, 2.5},
      {false, 2.5}, {false, 2.5}, {true, 1.0},  {false, 20.0}, {false, 15.0}, {true, 1.0}, {false, 1.0}};
  eval::LocalisationTrace trace;
  for (std::size_t i = 0; i < run.size(); ++i) {
    eval::FrameResult f;
    f.query_pose_id = i;
    f.correctly_localised = run[i].first;
    f.odometric_distance = run[i].second;
    trace.frames.push_back(f);
  }
  const auto h = eval::dropout_histogram(trace, eval::default_dropout_edges());
  // Edges 3.75, 7.5, ..., 30 plus overflow: (0,3.75] holds 3.5, 3.75, 1.0;
  // (3.75,7.5] holds 7.5; (11.25,15] holds 12.5; overflow holds 35.
  const std::vector<double> lengths{3.5, 3.75, 7.5, 12.5, 35.0, 1.0};
  const std::vector<std::size_t> counts{3, 1, 0, 1, 0, 0, 0, 0, 1};
  std::vector<double> fractions;
  for (std::size_t c : counts) fractions.push_back(static_cast<double>(c) / 6.0);
  const bool ok = h.failure_lengths == lengths && h.counts == counts && h.fractions == fractions && h.max_failure == 35.0;
  return {ok, ok ? "6 failure streaks, 9 bins and max failure 35 m match hand enumeration"
                 : "histogram differs from hand enumeration"};
}

// ---- 8 --------------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + POLARLOC_CLI_PATH + "\" " + args + " >>\"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome reproducibility(const fs::path& work) {
  auto q = [](const fs::path& p) { return "\"" + p.string() + "\""; };
  for (const char* run : {"run_a", "run_b"}) {
    const fs::path d = work / "repro" / run;
    fs::remove_all(d);
    fs::create_directories(d);
    const fs::path log = d / "log.txt";
    const std::vector<std::string> steps{
        "scenario --seed 23 --out " + q(d / "scenario"),
        "simulate --world " + q(d / "scenario" / "world.txt") + " --trajectory " + q(d / "scenario" / "train_first.csv") + " --seed 23 --out " + q(d / "first"),
        "simulate --world " + q(d / "scenario" / "world.txt") + " --trajectory " + q(d / "scenario" / "train_second.csv") + " --seed 24 --out " + q(d / "second"),
        "simulate --world " + q(d / "scenario" / "world.txt") + " --trajectory " + q(d / "scenario" / "map.csv") + " --seed 25 --out " + q(d / "map_scans"),
        "simulate --world " + q(d / "scenario" / "world.txt") + " --trajectory " + q(d / "scenario" / "query.csv") + " --seed 26 --out " + q(d / "query_scans"),
        "train --first " + q(d / "first") + " --second " + q(d / "second") + " --optimizer adam --steps 25 --seed 23 --out " + q(d / "model"),
        "map --checkpoint " + q(d / "model" / "checkpoint.pmdl") + " --dataset " + q(d / "map_scans") + " --out " + q(d / "map"),
        "localise --checkpoint " + q(d / "model" / "checkpoint.pmdl") + " --map " + q(d / "map" / "map.pmap") + " --queries " + q(d / "query_scans") + " --perturb-rotation --seed 23 --out " + q(d / "metrics"),
        "plot --metrics " + q(d / "metrics") + " --out " + q(d / "plots")};
    for (const auto& s : steps) {
      if (const int rc = run_cli(s, log); rc != 0) return {false, std::string(run) + ": '" + s.substr(0, s.find(' ')) + "' exited " + std::to_string(rc)};
    }
  }
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(work / "repro" / "run_a" / "metrics")) {
    if (entry.path().extension() != ".csv") continue;
    const fs::path other = work / "repro" / "run_b" / "metrics" / entry.path().filename();
    if (slurp(entry.path()) != slurp(other)) return {false, entry.path().filename().string() + " differs"};
    ++compared;
  }
  for (const char* svg : {"pr_curve.svg", "topn.svg", "dropout.svg"}) {
    if (slurp(work / "repro" / "run_a" / "plots" / svg) != slurp(work / "repro" / "run_b" / "plots" / svg)) return {false, std::string(svg) + " differs"};
  }
  return {compared >= 5, std::to_string(compared) + " metric CSVs and 3 plots byte-identical across two seeded runs"};
}

Outcome guarded(const std::function<Outcome()>& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"polarloc acceptance suite"};
  DeskRun desk;
  fs::path work = fs::temp_directory_path() / "polarloc_acceptance";
  std::vector<int> only;
  app.add_option("--work-dir", work, "Directory for generated artefacts");
  app.add_option("--steps", desk.steps, "Training steps for the desk experiment")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);
  desk.dir = work / "desk";

  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
  if (wanted(5) || wanted(6)) desk_experiment(desk);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"exact equivariance", equivariance},
      {"gradient checks", gradients},
      {"index oracle", index_oracle},
      {"metric formulas", metric_formulas},
      {"rotation robustness", [&] { return rotation_robustness(desk); }},
      {"metric-space enforcement", [&] { return metric_space(desk); }},
      {"drop-out accounting", dropout_accounting},
      {"reproducibility", [&] { return reproducibility(work); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!wanted(number)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    const Outcome o = guarded(criteria[i].second);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += o.pass ? 0 : 1;
    std::cout << "criterion " << number << " [" << criteria[i].first << "]: " << (o.pass ? "PASS" : "FAIL") << " | "
              << o.detail << " | " << fmt("%.1f", secs) << " s" << std::endl;
  }
  return std::min(failed, 255);
}
