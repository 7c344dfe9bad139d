#pragma once

// Localisation metrics. Conventions that the raw definitions leave open:
//  * precision counts only retrievals that are true positives (<= r_pos) or
//    true negatives (>= r_neg); retrievals in the band between the radii are
//    ignored, and 0/0 precision is 1.
//  * PR-sweep recall is over (query, map) positive pairs; frames correctly
//    localised is over query frames.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "polarloc/embedding.hpp"
#include "polarloc/index.hpp"
#include "polarloc/train.hpp"

namespace polarloc::eval {

enum class MatchVerdict { TruePositive, TrueNegativeViolation, DontCare };

const char* to_string(MatchVerdict v) noexcept;

/// Verdict for a planar separation.
MatchVerdict classify(double planar_distance, double r_pos, double r_neg) noexcept;

/// Row-major query x map embedding distances.
struct DistanceMatrix {
  std::size_t queries = 0;
  std::size_t map = 0;
  std::vector<double> values;

  double at(std::size_t q, std::size_t m) const noexcept { return values[q * map + m]; }
};

DistanceMatrix distance_matrix(std::span<const EmbeddingVector> queries,
                               std::span<const EmbeddingVector> map);

/// The truth graph for evaluation is build_gt_graph(map, queries, ...): map
/// entries are sequence 0 and queries are sequence 1, both in order.
struct LocalisationTruth {
  const train::GroundTruthGraph* graph = nullptr;

  MatchVerdict verdict(std::size_t query, std::size_t map_entry) const noexcept;
  std::size_t positive_pairs() const noexcept;
  std::size_t queries() const noexcept { return graph->second_size(); }
  std::size_t map_size() const noexcept { return graph->first_size; }
};

struct PRCurve {
  std::vector<double> thresholds;
  std::vector<double> precision;
  std::vector<double> recall;
};

/// Thresholds are linearly spaced over [min, max] of the matrix; at threshold
/// t every pair with distance <= t is retrieved.
PRCurve pr_sweep(const DistanceMatrix& distances, const train::GroundTruthGraph& truth,
                 std::size_t threshold_count = 127);

/// (1 + b^2) p r / (b^2 p + r), 0 when p = r = 0.
double f_beta(double precision, double recall, double beta);

/// Trapezoidal area under precision over recall. Points are sorted by recall,
/// duplicate recalls keep their highest precision, and the curve is extended
/// flat to recall 0. Clipped to [0, 1].
double auc(const PRCurve& curve);

struct PRSummary {
  double auc = 0.0;
  double max_f1 = 0.0;
  double max_f05 = 0.0;
  double max_f2 = 0.0;
  double max_f1_threshold = 0.0;
};

PRSummary summarise(const PRCurve& curve);

struct Candidate {
  std::uint64_t place_id = 0;
  std::size_t map_entry = 0;
  double distance = 0.0;
  MatchVerdict verdict = MatchVerdict::DontCare;
};

struct FrameResult {
  std::uint64_t query_pose_id = 0;
  std::vector<Candidate> candidates;
  bool correctly_localised = false;
  double odometric_distance = 0.0;  // metres since the previous query frame
};

struct LocalisationTrace {
  std::vector<FrameResult> frames;
};

struct LocalisationSummary {
  double frames_correctly_localised = 0.0;
  double precision = 1.0;
  double recall = 0.0;
};

struct LocalisationResult {
  LocalisationTrace trace;
  LocalisationSummary summary;
};

/// Index place ids must be the map trajectory's pose ids.
LocalisationResult topn_localise(const index::EmbeddingIndex& index,
                                 std::span<const EmbeddingVector> queries,
                                 const train::GroundTruthGraph& truth, std::size_t n);

LocalisationResult ball_localise(const index::EmbeddingIndex& index,
                                 std::span<const EmbeddingVector> queries,
                                 const train::GroundTruthGraph& truth, double radius);

/// Summary statistics over an already classified trace.
LocalisationSummary summarise(const LocalisationTrace& trace, std::size_t positive_pairs);

struct DropoutHistogram {
  std::vector<double> bin_edges;         // upper edges, ascending
  std::vector<std::size_t> counts;       // bin i holds (edge[i-1], edge[i]]; last is overflow
  std::vector<double> fractions;         // counts / failures
  std::vector<double> failure_lengths;   // one per failure streak, in order
  double max_failure = 0.0;
};

std::vector<double> default_dropout_edges(std::size_t bins = 8, double width = 3.75);

/// A failure is a maximal run of frames that were not correctly localised;
/// its length is the sum of the run's odometric distances.
DropoutHistogram dropout_histogram(const LocalisationTrace& trace, const std::vector<double>& bin_edges);

// ---- CSV output ------------------------------------------------------------

void write_pr_curve_csv(const PRCurve& curve, const std::filesystem::path& path);
PRCurve read_pr_curve_csv(const std::filesystem::path& path);
void write_summary_csv(const PRSummary& s, const std::filesystem::path& path);

struct TopNRow {
  std::size_t n = 0;
  LocalisationSummary summary;
};

void write_topn_csv(const std::vector<TopNRow>& rows, const std::filesystem::path& path);
std::vector<TopNRow> read_topn_csv(const std::filesystem::path& path);
void write_dropout_csv(const DropoutHistogram& h, const std::filesystem::path& path);

struct DropoutRow {
  std::string bin_edge;
  double fraction = 0.0;
};
std::vector<DropoutRow> read_dropout_csv(const std::filesystem::path& path);

void write_trace_csv(const LocalisationTrace& trace, const std::filesystem::path& path);

}  // namespace polarloc::eval
