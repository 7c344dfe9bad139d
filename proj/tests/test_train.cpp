#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "polarloc/error.hpp"
#include "polarloc/gradcheck.hpp"
#include "polarloc/train.hpp"

using namespace polarloc;
using namespace polarloc::train;

namespace {

sim::Trajectory single(std::uint64_t id, double x, double y) {
  sim::Trajectory t;
  t.poses.push_back({id, {x, y, 0.0}, 0});
  sim::recompute_distances(t);
  return t;
}

EmbeddingVector scalar(double v) { return EmbeddingVector{{v}}; }

struct SmallRun {
  sim::DeskWorldConfig world_cfg;
  sim::Trajectory a, b;
  GroundTruthGraph graph;
  std::vector<radar::NetworkInput> inputs;

  SmallRun() {
    const sim::World w = sim::make_desk_world(world_cfg, 1);
    a = sim::make_loop_traversal(world_cfg, 0.0, 0.0, 10.0, 0);
    b = sim::make_loop_traversal(world_cfg, 1.0, 0.3, 10.0, 1000);
    graph = build_gt_graph(a, b, 25.0, 50.0);
    for (const auto* t : {&a, &b}) {
      for (const auto& s : sim::render_trajectory(w, *t, sim::SensorParams{}, 3)) {
        inputs.push_back(radar::preprocess(s, 256, 8));
      }
    }
  }
};

const SmallRun& small_run() {
  static const SmallRun run;
  return run;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("ground truth graph classes") {
  const GroundTruthGraph pos = build_gt_graph(single(0, 0, 0), single(1, 10, 0), 25, 50);
  CHECK(pos.relation(0, 1) == PairRelation::Positive);
  CHECK(pos.positive_pairs.size() == 1);
  const GroundTruthGraph neg = build_gt_graph(single(0, 0, 0), single(1, 0, 60), 25, 50);
  CHECK(neg.relation(0, 1) == PairRelation::Negative);
  CHECK(neg.relation(1, 0) == PairRelation::Negative);
  const GroundTruthGraph dc = build_gt_graph(single(0, 0, 0), single(1, 30, 0), 25, 50);
  CHECK(dc.relation(0, 1) == PairRelation::DontCare);
  CHECK(dc.positive_pairs.empty());
  CHECK(dc.negative_pairs.empty());
  CHECK_THROWS_AS(build_gt_graph(single(0, 0, 0), single(1, 0, 0), 50, 25), ConfigError);
  CHECK_THROWS_AS(build_gt_graph(sim::Trajectory{}, single(1, 0, 0), 25, 50), ConfigError);
}

TEST_CASE("graph covers intra and cross pairs") {
  const auto& run = small_run();
  const auto& g = run.graph;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    for (std::size_t j = i + 1; j < g.nodes.size(); ++j) {
      const double d = sim::planar_distance(g.nodes[i].pose, g.nodes[j].pose);
      pos += d <= 25.0;
      neg += d >= 50.0;
    }
  }
  CHECK(g.positive_pairs.size() == pos);
  CHECK(g.negative_pairs.size() == neg);
}

TEST_CASE("batches respect the sensing horizon") {
  const auto& g = small_run().graph;
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const TripletBatch b = sample_batch(g, BatchConfig{}, rng);
    REQUIRE(b.anchors.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = i + 1; j < 3; ++j) CHECK(g.planar_distance(b.anchors[i], b.anchors[j]) > 128.0);
      for (std::size_t p : b.positives[i]) CHECK(g.planar_distance(b.anchors[i], p) <= 25.0);
      REQUIRE(b.negatives[i].size() >= 4);
      for (std::size_t k = 0; k < b.negatives[i].size(); ++k) {
        const std::size_t n = b.negatives[i][k];
        CHECK(g.planar_distance(b.anchors[i], n) >= 50.0);
        if (k < 4) {
          CHECK(b.negatives[i][k] == b.negatives[0][k]);
          for (std::size_t a : b.anchors) CHECK(g.planar_distance(a, n) >= 50.0);
        }
      }
    }
    const auto m = b.members();
    CHECK(std::set<std::size_t>(m.begin(), m.end()).size() == m.size());
  }
  BatchConfig one;
  one.anchors = 1;
  const TripletBatch single = sample_batch(g, one, rng);
  CHECK(single.anchors.size() == 1);
  CHECK(single.negatives[0].size() == 4);
  BatchConfig shared_only;
  shared_only.in_batch_negatives = false;
  for (const auto& n : sample_batch(g, shared_only, rng).negatives) CHECK(n.size() == 4);
}

TEST_CASE("infeasible anchor counts are reported") {
  sim::DeskWorldConfig small;
  small.loop_radius = 32.0;  // about 200 m of loop
  const auto a = sim::make_loop_traversal(small, 0.0, 0.0, 5.0, 0);
  const auto b = sim::make_loop_traversal(small, 0.5, 0.5, 5.0, 500);
  const GroundTruthGraph g = build_gt_graph(a, b, 25, 50);
  BatchConfig cfg;
  cfg.anchors = 50;
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(sample_batch(g, cfg, rng), SamplingExhaustedError);
}

TEST_CASE("triplet loss") {
  CHECK(triplet_loss(0.0, 1.0, 0.2) == 0.0);
  CHECK(triplet_loss(0.7, 0.7, 0.2) == doctest::Approx(0.2));
  CHECK(triplet_loss(0.8, 0.6, 0.2) == doctest::Approx(0.64 - 0.36 + 0.2));
  CHECK(triplet_loss(0.3, 0.5, 0.1) == 0.0);
}

TEST_CASE("mining") {
  TripletBatch b;
  b.anchors = {0};
  b.positives = {{1}};
  b.negatives = {{2, 3}};
  // anchor at 0, positive 0.6 away, negatives 0.5 and 0.9 away
  const std::vector<EmbeddingVector> e{scalar(0.0), scalar(0.6), scalar(-0.5), scalar(0.9)};
  CHECK(mine_triplets(e, b, Mining::SemiHard).triplets == std::vector<Triplet>{{0, 1, 3}});
  CHECK(mine_triplets(e, b, Mining::Hardest).triplets == std::vector<Triplet>{{0, 1, 2}});
  const std::vector<EmbeddingVector> close{scalar(0.0), scalar(0.6), scalar(-0.5), scalar(0.4)};
  CHECK(mine_triplets(close, b, Mining::SemiHard).triplets == std::vector<Triplet>{{0, 1, 3}});

  TripletBatch lonely;
  lonely.anchors = {0, 1};
  lonely.positives = {{2}, {}};
  lonely.negatives = {{3}, {3}};
  const std::vector<EmbeddingVector> e2{scalar(0), scalar(5), scalar(0.1), scalar(1)};
  const auto r = mine_triplets(e2, lonely, Mining::SemiHard);
  CHECK(r.triplets.size() == 1);
  CHECK(r.skipped_anchors == 1);
}

TEST_CASE("learning rate schedule") {
  const Hyperparams hp;
  CHECK(lr_schedule(hp, 0) == 1e-4);
  CHECK(lr_schedule(hp, 5000) == 5e-6);
  CHECK(lr_schedule(hp, 9000) == 5e-6);
  CHECK(lr_schedule(hp, 2500) == doctest::Approx(5.25e-5).epsilon(1e-12));
  for (std::size_t s = 1; s < 6000; s += 7) {
    CHECK(lr_schedule(hp, s) <= lr_schedule(hp, s - 1));
    CHECK(lr_schedule(hp, s) >= 5e-6);
  }
}

TEST_CASE("gradient clipping") {
  model::NetConfig cfg;
  cfg.stage_channels = {2};
  cfg.vlad_clusters = 2;
  cfg.output_dim = 2;
  model::ModelParams g = model::zeros_like(model::init_params(cfg, 1));
  g.projection.matrix[1] = 160.0;
  CHECK(clip_gradients(g, 80.0) == 160.0);
  CHECK(g.projection.matrix[1] == 80.0);
  CHECK(global_norm(g) <= 80.0 + 1e-9);
  g.projection.matrix[1] = 3.0;
  CHECK(clip_gradients(g, 80.0) == 3.0);
  CHECK(g.projection.matrix[1] == 3.0);
}

TEST_CASE("zero-loss step only applies weight decay") {
  const auto& run = small_run();
  Hyperparams hp;
  hp.margin = -10.0;  // every triplet is satisfied
  TrainState st = make_train_state(model::init_params(model::NetConfig{}, 3), hp, 5);
  const model::ModelParams before = st.params;
  std::mt19937_64 rng(2);
  const TripletBatch batch = sample_batch(run.graph, BatchConfig{}, rng);
  const StepStats s = train_step(st, batch, run.inputs);
  CHECK(s.active_triplets == 0);
  CHECK(st.step == 1);
  const double lr = lr_schedule(hp, 0);
  model::ModelParams expected = before;
  model::for_each_tensor(expected, [&](std::vector<double>& t, bool regularised) {
    if (!regularised) return;
    for (double& w : t) w -= lr * 2.0 * hp.weight_reg * w;
  });
  const auto a = model::flatten(st.params), b = model::flatten(expected);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst < 1e-18);
  CHECK(s.loss == doctest::Approx(hp.weight_reg * regularisation_energy(before)).epsilon(1e-12));
}

TEST_CASE("training steps are deterministic") {
  const auto& run = small_run();
  for (Optimizer opt : {Optimizer::Sgd, Optimizer::Adam}) {
    Hyperparams hp;
    hp.optimizer = opt;
    TrainState a = make_train_state(model::init_params(model::NetConfig{}, 6), hp, 7);
    TrainState b = a;
    TrainLoopConfig loop;
    loop.steps = 3;
    std::vector<double> la, lb;
    run_training(a, run.graph, run.inputs, loop, [&](const StepStats& s) { la.push_back(s.loss); });
    run_training(b, run.graph, run.inputs, loop, [&](const StepStats& s) { lb.push_back(s.loss); });
    CHECK(la == lb);
    CHECK(a.params == b.params);
    CHECK(a.step == 3);
    CHECK_FALSE(a.params == model::init_params(model::NetConfig{}, 6));
  }
}

TEST_CASE("batch gradient matches finite differences") {
  const auto& run = small_run();
  model::NetConfig cfg;
  cfg.stage_channels = {3, 4};
  cfg.convs_per_stage = 1;
  cfg.vlad_clusters = 3;
  cfg.output_dim = 6;
  const model::ModelParams p = model::init_params(cfg, 8);
  Hyperparams hp;
  hp.weight_reg = 1e-3;
  std::mt19937_64 rng(9);
  const TripletBatch batch = sample_batch(run.graph, BatchConfig{}, rng);
  const auto members = batch.members();
  const auto emb = embed_all(p, [&] {
    std::vector<radar::NetworkInput> v;
    for (std::size_t m : members) v.push_back(run.inputs[m]);
    return v;
  }());
  const auto triplets = mine_triplets(emb, batch, Mining::Hardest).triplets;
  const BatchGradient bg = batch_gradient(p, hp, run.inputs, members, triplets);
  auto f = [&](std::span<const double> flat) {
    model::ModelParams q = p;
    model::unflatten(flat, q);
    return batch_gradient(q, hp, run.inputs, members, triplets).loss;
  };
  const auto report =
      numerics::check_gradient("triplet", f, model::flatten(p), model::flatten(bg.grads), 1e-6, 100, 4);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("training log rows") {
  std::ostringstream os;
  write_log_header(os);
  StepStats s;
  s.step = 4;
  s.lr = 1e-4;
  s.loss = 0.25;
  s.active_triplets = 2;
  s.grad_norm_preclip = 1.5;
  write_log_row(os, s);
  CHECK(os.str() == "step,lr,loss,active_triplets,grad_norm_preclip\n4,1e-04,0.25,2,1.5\n");
}

TEST_CASE("optimiser names") {
  CHECK(parse_optimizer("adam") == Optimizer::Adam);
  CHECK(parse_mining("hardest") == Mining::Hardest);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), ConfigError);
}

}  // TEST_SUITE
