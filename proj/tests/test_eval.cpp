#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "polarloc/error.hpp"
#include "polarloc/eval.hpp"

using namespace polarloc;
using namespace polarloc::eval;

namespace {

sim::Trajectory along_x(std::initializer_list<double> xs, std::uint64_t first_id) {
  sim::Trajectory t;
  std::uint64_t id = first_id;
  std::int64_t ts = 0;
  for (double x : xs) t.poses.push_back({id++, {x, 0.0, 0.0}, ts += 1000});
  sim::recompute_distances(t);
  return t;
}

std::vector<EmbeddingVector> scalars(std::initializer_list<double> v) {
  std::vector<EmbeddingVector> out;
  for (double x : v) out.push_back({{x}});
  return out;
}

FrameResult frame(bool ok, double odo) {
  FrameResult f;
  f.correctly_localised = ok;
  f.odometric_distance = odo;
  return f;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("verdicts") {
  CHECK(classify(25.0, 25, 50) == MatchVerdict::TruePositive);
  CHECK(classify(30.0, 25, 50) == MatchVerdict::DontCare);
  CHECK(classify(50.0, 25, 50) == MatchVerdict::TrueNegativeViolation);
}

TEST_CASE("f-scores") {
  CHECK(f_beta(0.5, 0.5, 1.0) == doctest::Approx(0.5));
  CHECK(f_beta(1.0, 0.5, 2.0) == doctest::Approx(5.0 * 0.5 / 4.5));
  CHECK(f_beta(1.0, 0.5, 2.0) == doctest::Approx(0.5556).epsilon(1e-4));
  CHECK(f_beta(1.0, 0.5, 0.5) == doctest::Approx(1.25 * 0.5 / 0.75));
  CHECK(f_beta(1.0, 0.5, 0.5) == doctest::Approx(0.8333).epsilon(1e-4));
  CHECK(f_beta(0.0, 0.0, 1.0) == 0.0);
  CHECK(f_beta(0.7, 0.0, 2.0) == 0.0);
  CHECK(f_beta(0.0, 0.4, 0.5) == 0.0);
  CHECK(f_beta(0.3, 0.8, 1.0) == doctest::Approx(f_beta(0.8, 0.3, 1.0)));
  CHECK_THROWS_AS(f_beta(0.5, 0.5, 0.0), ConfigError);
}

TEST_CASE("two by two sweep by hand") {
  // map at x = 0 and 100, queries at 5 (near map 0) and 110 (near map 1)
  const auto g = train::build_gt_graph(along_x({0, 100}, 0), along_x({5, 110}, 10), 25, 50);
  DistanceMatrix dm{2, 2, {0.25, 1.25, 0.75, 0.5}};
  const PRCurve c = pr_sweep(dm, g, 5);
  CHECK(c.thresholds == std::vector<double>{0.25, 0.5, 0.75, 1.0, 1.25});
  // t=0.25 {q0m0 tp}; 0.5 adds q1m1 tp; 0.75 adds q1m0 tn; 1.25 adds q0m1 tn
  CHECK(c.precision == std::vector<double>{1.0, 1.0, 2.0 / 3.0, 2.0 / 3.0, 0.5});
  CHECK(c.recall == std::vector<double>{0.5, 1.0, 1.0, 1.0, 1.0});
}

TEST_CASE("don't-care pairs leave precision alone") {
  const auto g = train::build_gt_graph(along_x({0, 30}, 0), along_x({0}, 10), 25, 50);
  DistanceMatrix dm{1, 2, {0.5, 0.1}};
  const PRCurve c = pr_sweep(dm, g, 2);
  // t=0.1 retrieves only the 30 m pair: nothing counted, so 0/0 -> 1
  CHECK(c.precision[0] == 1.0);
  CHECK(c.recall[0] == 0.0);
  CHECK(c.precision[1] == 1.0);
  CHECK(c.recall[1] == 1.0);
}

TEST_CASE("sweep shape and errors") {
  const auto g = train::build_gt_graph(along_x({0, 100, 200}, 0), along_x({1, 99, 205}, 10), 25, 50);
  DistanceMatrix dm{3, 3, {0.1, 0.9, 1.3, 0.8, 0.2, 1.1, 1.4, 1.0, 0.3}};
  const PRCurve c = pr_sweep(dm, g);
  REQUIRE(c.thresholds.size() == 127);
  CHECK(c.thresholds.front() == 0.1);
  CHECK(c.thresholds.back() == 1.4);
  for (std::size_t i = 1; i < 127; ++i) {
    CHECK(c.thresholds[i] > c.thresholds[i - 1]);
    CHECK(c.recall[i] >= c.recall[i - 1]);
  }
  // perfect separation: every positive closer than every negative
  CHECK(std::abs(auc(c) - 1.0) < 1e-9);
  CHECK(summarise(c).max_f1 == doctest::Approx(1.0));

  const auto none = train::build_gt_graph(along_x({0}, 0), along_x({100}, 10), 25, 50);
  CHECK_THROWS_AS(pr_sweep(DistanceMatrix{1, 1, {0.5}}, none), EvaluationError);
  CHECK_THROWS_AS(pr_sweep(DistanceMatrix{3, 3, std::vector<double>(9, 0.5)}, g), EvaluationError);
}

TEST_CASE("area under the curve") {
  CHECK(auc(PRCurve{{}, {1, 1, 1}, {0, 0.5, 1}}) == doctest::Approx(1.0));
  CHECK(auc(PRCurve{{}, {0.5, 0.5, 0.5}, {0, 0.5, 1}}) == doctest::Approx(0.5));
  // recall 0.2, 0.5, 1.0 with precision 1.0, 0.8, 0.4, extended flat to recall 0
  const double want = 0.2 * 1.0 + 0.3 * (1.0 + 0.8) / 2 + 0.5 * (0.8 + 0.4) / 2;
  CHECK(auc(PRCurve{{}, {0.4, 1.0, 0.8}, {1.0, 0.2, 0.5}}) == doctest::Approx(want));
  // duplicate recall keeps the best precision
  CHECK(auc(PRCurve{{}, {0.2, 1.0, 1.0}, {1.0, 1.0, 0.0}}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(auc(PRCurve{{}, {1.0}, {1.0}}), EvaluationError);
}

TEST_CASE("top-N localisation by hand") {
  const auto map_traj = along_x({0, 30, 60, 90}, 0);
  const auto query_traj = along_x({0, 45, 150}, 100);
  const auto g = train::build_gt_graph(map_traj, query_traj, 25, 50);
  const auto map_emb = scalars({0, 1, 2, 3});
  std::vector<index::IndexedPoint> pts;
  for (std::size_t i = 0; i < 4; ++i) pts.push_back({map_emb[i], map_traj.poses[i].id});
  const auto idx = index::EmbeddingIndex::build(pts);
  const auto queries = scalars({0.1, 3.0, 1.4});
  const LocalisationResult r = topn_localise(idx, queries, g, 2);
  // q0: m0 tp, m1 dc | q1: m3 dc, m2 tp | q2: m1 tn, m2 tn
  REQUIRE(r.trace.frames.size() == 3);
  CHECK(r.trace.frames[0].candidates[0].verdict == MatchVerdict::TruePositive);
  CHECK(r.trace.frames[0].candidates[1].verdict == MatchVerdict::DontCare);
  CHECK(r.trace.frames[1].candidates[0].place_id == 3);
  CHECK(r.trace.frames[2].candidates[1].verdict == MatchVerdict::TrueNegativeViolation);
  CHECK(r.summary.frames_correctly_localised == doctest::Approx(2.0 / 3.0));
  CHECK(r.summary.precision == doctest::Approx(0.5));
  CHECK(r.summary.recall == doctest::Approx(2.0 / 3.0));
  CHECK(r.trace.frames[1].odometric_distance == 45.0);

  const LocalisationResult all = topn_localise(idx, queries, g, 4);
  const LocalisationResult ball = ball_localise(idx, queries, g, INFINITY);
  CHECK(all.summary.recall == ball.summary.recall);
  CHECK(all.summary.recall == 1.0);
  CHECK(ball_localise(idx, queries, g, 0.0).summary.recall == 0.0);
}

TEST_CASE("self localisation") {
  const auto t = along_x({0, 40, 80, 120, 160}, 0);
  const auto g = train::build_gt_graph(t, t, 25, 50);
  const auto emb = scalars({0.0, 0.3, 0.6, 0.9, 1.2});
  std::vector<index::IndexedPoint> pts;
  for (std::size_t i = 0; i < 5; ++i) pts.push_back({emb[i], t.poses[i].id});
  const auto r = topn_localise(index::EmbeddingIndex::build(pts), emb, g, 1);
  CHECK(r.summary.frames_correctly_localised == 1.0);
}

TEST_CASE("drop-out histogram") {
  const auto edges = default_dropout_edges();
  CHECK(edges.size() == 8);
  CHECK(edges[0] == 3.75);
  CHECK(edges[7] == 30.0);

  LocalisationTrace all_ok{{frame(true, 1), frame(true, 1)}};
  const auto h0 = dropout_histogram(all_ok, edges);
  CHECK(h0.failure_lengths.empty());
  CHECK(h0.max_failure == 0.0);
  for (double f : h0.fractions) CHECK(f == 0.0);

  LocalisationTrace three{{frame(true, 0), frame(false, 1.25), frame(false, 1.25), frame(false, 1.25), frame(true, 1.25)}};
  const auto h1 = dropout_histogram(three, edges);
  CHECK(h1.failure_lengths == std::vector<double>{3.75});
  CHECK(h1.counts[0] == 1);
  CHECK(h1.fractions[0] == 1.0);
  CHECK(h1.max_failure == 3.75);

  LocalisationTrace alt;
  for (int i = 0; i < 10; ++i) alt.frames.push_back(frame(i % 2 == 0, 2.0));
  const auto h2 = dropout_histogram(alt, edges);
  CHECK(h2.failure_lengths == std::vector<double>(5, 2.0));
  CHECK(h2.fractions[0] == 1.0);
  CHECK(h2.max_failure == 2.0);

  LocalisationTrace mixed{{frame(false, 2), frame(false, 2), frame(true, 2), frame(false, 40), frame(true, 1),
                           frame(false, 5), frame(false, 2.5)}};
  const auto h3 = dropout_histogram(mixed, edges);
  CHECK(h3.failure_lengths == std::vector<double>{4, 40, 7.5});
  CHECK(h3.counts[1] == 2);      // (3.75, 7.5]
  CHECK(h3.counts.back() == 1);  // overflow
  CHECK(h3.fractions[1] == doctest::Approx(2.0 / 3.0));
  CHECK(h3.max_failure == 40.0);
}

TEST_CASE("metric CSV round trips") {
  const auto dir = std::filesystem::temp_directory_path() / "polarloc_eval_test";
  std::filesystem::create_directories(dir);
  const PRCurve c{{0.1, 0.2}, {1.0, 0.75}, {0.5, 1.0}};
  write_pr_curve_csv(c, dir / "pr.csv");
  const PRCurve back = read_pr_curve_csv(dir / "pr.csv");
  CHECK(back.thresholds == c.thresholds);
  CHECK(back.precision == c.precision);
  CHECK(back.recall == c.recall);
  const std::vector<TopNRow> rows{{1, {0.9, 0.8, 0.3}}, {5, {0.95, 0.6, 0.7}}};
  write_topn_csv(rows, dir / "topn.csv");
  const auto rb = read_topn_csv(dir / "topn.csv");
  REQUIRE(rb.size() == 2);
  CHECK(rb[1].n == 5);
  CHECK(rb[1].summary.recall == 0.7);
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
