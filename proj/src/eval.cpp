#include "polarloc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "polarloc/error.hpp"
#include "polarloc/text.hpp"

namespace polarloc::eval {

const char* to_string(MatchVerdict v) noexcept {
  switch (v) {
    case MatchVerdict::TruePositive: return "tp";
    case MatchVerdict::TrueNegativeViolation: return "tn";
    case MatchVerdict::DontCare: return "dc";
  }
  return "?";
}

MatchVerdict classify(double d, double r_pos, double r_neg) noexcept {
  if (d <= r_pos) return MatchVerdict::TruePositive;
  if (d >= r_neg) return MatchVerdict::TrueNegativeViolation;
  return MatchVerdict::DontCare;
}

MatchVerdict LocalisationTruth::verdict(std::size_t query, std::size_t map_entry) const noexcept {
  return classify(graph->planar_distance(map_entry, graph->second_node(query)), graph->r_pos,
                  graph->r_neg);
}

std::size_t LocalisationTruth::positive_pairs() const noexcept {
  std::size_t n = 0;
  for (std::size_t q = 0; q < queries(); ++q) {
    for (std::size_t m = 0; m < map_size(); ++m) {
      if (verdict(q, m) == MatchVerdict::TruePositive) ++n;
    }
  }
  return n;
}

DistanceMatrix distance_matrix(std::span<const EmbeddingVector> queries,
                               std::span<const EmbeddingVector> map) {
  DistanceMatrix dm{queries.size(), map.size(), std::vector<double>(queries.size() * map.size())};
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t m = 0; m < map.size(); ++m) dm.values[q * map.size() + m] = distance(queries[q], map[m]);
  }
  return dm;
}

PRCurve pr_sweep(const DistanceMatrix& distances, const train::GroundTruthGraph& truth,
                 std::size_t threshold_count) {
  const LocalisationTruth lt{&truth};
  if (distances.queries != lt.queries() || distances.map != lt.map_size() ||
      distances.values.size() != distances.queries * distances.map) {
    throw EvaluationError("pr_sweep: distance matrix does not match the ground truth");
  }
  if (threshold_count < 2) throw ConfigError("pr_sweep: need at least 2 thresholds");
  if (distances.values.empty()) throw EvaluationError("pr_sweep: empty distance matrix");

  struct Pair {
    double d;
    MatchVerdict v;
  };
  std::vector<Pair> pairs;
  pairs.reserve(distances.values.size());
  std::size_t positives = 0;
  for (std::size_t q = 0; q < distances.queries; ++q) {
    for (std::size_t m = 0; m < distances.map; ++m) {
      const double d = distances.at(q, m);
      if (!std::isfinite(d)) throw EvaluationError("pr_sweep: non-finite distance");
      const MatchVerdict v = lt.verdict(q, m);
      if (v == MatchVerdict::TruePositive) ++positives;
      pairs.push_back({d, v});
    }
  }
  if (positives == 0) throw EvaluationError("pr_sweep: ground truth has no positive pairs");
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.d < b.d; });
  const double lo = pairs.front().d;
  const double hi = pairs.back().d;
  if (!(hi > lo)) throw EvaluationError("pr_sweep: all distances are equal, thresholds degenerate");

  PRCurve curve;
  std::size_t next = 0, tp = 0, tn = 0;
  for (std::size_t i = 0; i < threshold_count; ++i) {
    const double t = i + 1 == threshold_count
                         ? hi
                         : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(threshold_count - 1);
    while (next < pairs.size() && pairs[next].d <= t) {
      if (pairs[next].v == MatchVerdict::TruePositive) ++tp;
      else if (pairs[next].v == MatchVerdict::TrueNegativeViolation) ++tn;
      ++next;
    }
    curve.thresholds.push_back(t);
    curve.precision.push_back(tp + tn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + tn));
    curve.recall.push_back(static_cast<double>(tp) / static_cast<double>(positives));
  }
  return curve;
}

double f_beta(double p, double r, double beta) {
  if (!(beta > 0.0)) throw ConfigError("f_beta: beta must be positive");
  const double b2 = beta * beta;
  const double denom = b2 * p + r;
  if (denom == 0.0) return 0.0;
  return (1.0 + b2) * p * r / denom;
}

double auc(const PRCurve& curve) {
  if (curve.recall.size() != curve.precision.size() || curve.recall.size() < 2) {
    throw EvaluationError("auc: need at least two curve points");
  }
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < curve.recall.size(); ++i) pts.emplace_back(curve.recall[i], curve.precision[i]);
  std::sort(pts.begin(), pts.end());
  std::vector<std::pair<double, double>> uniq;
  for (const auto& p : pts) {
    if (!uniq.empty() && uniq.back().first == p.first) {
      uniq.back().second = std::max(uniq.back().second, p.second);
    } else {
      uniq.push_back(p);
    }
  }
  double area = uniq.front().first * uniq.front().second;
  for (std::size_t i = 1; i < uniq.size(); ++i) {
    area += (uniq[i].first - uniq[i - 1].first) * 0.5 * (uniq[i].second + uniq[i - 1].second);
  }
  return std::clamp(area, 0.0, 1.0);
}

PRSummary summarise(const PRCurve& curve) {
  PRSummary s;
  s.auc = auc(curve);
  for (std::size_t i = 0; i < curve.recall.size(); ++i) {
    const double p = curve.precision[i], r = curve.recall[i];
    const double f1 = f_beta(p, r, 1.0);
    if (f1 > s.max_f1) {
      s.max_f1 = f1;
      s.max_f1_threshold = curve.thresholds[i];
    }
    s.max_f05 = std::max(s.max_f05, f_beta(p, r, 0.5));
    s.max_f2 = std::max(s.max_f2, f_beta(p, r, 2.0));
  }
  return s;
}

LocalisationSummary summarise(const LocalisationTrace& trace, std::size_t positive_pairs) {
  LocalisationSummary s;
  std::size_t correct = 0, tp = 0, tn = 0;
  for (const auto& f : trace.frames) {
    if (f.correctly_localised) ++correct;
    for (const auto& c : f.candidates) {
      if (c.verdict == MatchVerdict::TruePositive) ++tp;
      else if (c.verdict == MatchVerdict::TrueNegativeViolation) ++tn;
    }
  }
  s.frames_correctly_localised =
      trace.frames.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(trace.frames.size());
  s.precision = tp + tn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + tn);
  s.recall = positive_pairs == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(positive_pairs);
  return s;
}

namespace {

template <typename Retrieve>
LocalisationResult localise(const index::EmbeddingIndex& index, std::span<const EmbeddingVector> queries,
                            const train::GroundTruthGraph& truth, Retrieve&& retrieve) {
  const LocalisationTruth lt{&truth};
  if (queries.size() != lt.queries()) {
    throw EvaluationError("localise: query count does not match the ground truth");
  }
  std::unordered_map<std::uint64_t, std::size_t> entry_of;
  for (std::size_t m = 0; m < lt.map_size(); ++m) entry_of.emplace(truth.nodes[m].pose_id, m);

  LocalisationResult res;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& node = truth.nodes[truth.second_node(q)];
    FrameResult frame;
    frame.query_pose_id = node.pose_id;
    frame.odometric_distance =
        q == 0 ? 0.0 : std::max(0.0, node.cumulative_distance - truth.nodes[truth.second_node(q - 1)].cumulative_distance);
    for (const auto& nb : retrieve(index, queries[q])) {
      const auto it = entry_of.find(nb.place_id);
      if (it == entry_of.end()) {
        throw EvaluationError("localise: index place id " + std::to_string(nb.place_id) +
                              " is not a map pose in the ground truth");
      }
      Candidate c{nb.place_id, it->second, nb.distance, lt.verdict(q, it->second)};
      if (c.verdict == MatchVerdict::TruePositive) frame.correctly_localised = true;
      frame.candidates.push_back(c);
    }
    res.trace.frames.push_back(std::move(frame));
  }
  res.summary = summarise(res.trace, lt.positive_pairs());
  return res;
}

}  // namespace

LocalisationResult topn_localise(const index::EmbeddingIndex& index, std::span<const EmbeddingVector> queries,
                                 const train::GroundTruthGraph& truth, std::size_t n) {
  if (n < 1) throw ConfigError("topn_localise: N must be >= 1");
  return localise(index, queries, truth,
                  [n](const index::EmbeddingIndex& idx, const EmbeddingVector& q) { return idx.knn(q, n); });
}

LocalisationResult ball_localise(const index::EmbeddingIndex& index, std::span<const EmbeddingVector> queries,
                                 const train::GroundTruthGraph& truth, double radius) {
  return localise(index, queries, truth, [radius](const index::EmbeddingIndex& idx, const EmbeddingVector& q) {
    return idx.ball(q, radius);
  });
}

std::vector<double> default_dropout_edges(std::size_t bins, double width) {
  std::vector<double> edges;
  for (std::size_t i = 1; i <= bins; ++i) edges.push_back(width * static_cast<double>(i));
  return edges;
}

DropoutHistogram dropout_histogram(const LocalisationTrace& trace, const std::vector<double>& bin_edges) {
  for (std::size_t i = 1; i < bin_edges.size(); ++i) {
    if (!(bin_edges[i] > bin_edges[i - 1])) throw ConfigError("dropout bin edges must be strictly increasing");
  }
  DropoutHistogram h;
  h.bin_edges = bin_edges;
  h.counts.assign(bin_edges.size() + 1, 0);
  double run = 0.0;
  bool failing = false;
  auto close_run = [&]() {
    if (!failing) return;
    h.failure_lengths.push_back(run);
    h.max_failure = std::max(h.max_failure, run);
    failing = false;
    run = 0.0;
  };
  for (const auto& f : trace.frames) {
    if (f.correctly_localised) {
      close_run();
    } else {
      failing = true;
      run += f.odometric_distance;
    }
  }
  close_run();
  for (double len : h.failure_lengths) {
    const auto it = std::lower_bound(bin_edges.begin(), bin_edges.end(), len);
    ++h.counts[static_cast<std::size_t>(it - bin_edges.begin())];
  }
  h.fractions.assign(h.counts.size(), 0.0);
  if (!h.failure_lengths.empty()) {
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      h.fractions[i] = static_cast<double>(h.counts[i]) / static_cast<double>(h.failure_lengths.size());
    }
  }
  return h;
}

// ---- CSV -------------------------------------------------------------------

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

void close_out(std::ofstream& os, const std::filesystem::path& path) {
  os.flush();
  if (!os) throw IoError("failed writing " + path.string());
}

std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path, std::size_t columns) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) continue;  // header
    const auto f = text::split(line, ',');
    if (f.size() != columns) {
      throw FormatError(path.string() + ": expected " + std::to_string(columns) + " columns", line_no);
    }
    rows.emplace_back(f.begin(), f.end());
  }
  return rows;
}

double parse_cell(const std::string& s, const std::filesystem::path& path, std::size_t row) {
  double v;
  if (!text::parse_number(s, v)) throw FormatError(path.string() + ": bad number '" + s + "'", row + 2);
  return v;
}

}  // namespace

void write_pr_curve_csv(const PRCurve& curve, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "threshold,precision,recall\n";
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    os << text::format_double(curve.thresholds[i]) << ',' << text::format_double(curve.precision[i]) << ','
       << text::format_double(curve.recall[i]) << '\n';
  }
  close_out(os, path);
}

PRCurve read_pr_curve_csv(const std::filesystem::path& path) {
  PRCurve c;
  const auto rows = read_csv_rows(path, 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    c.thresholds.push_back(parse_cell(rows[i][0], path, i));
    c.precision.push_back(parse_cell(rows[i][1], path, i));
    c.recall.push_back(parse_cell(rows[i][2], path, i));
  }
  return c;
}

void write_summary_csv(const PRSummary& s, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "auc,f1,f05,f2,max_f1_threshold\n";
  os << text::format_double(s.auc) << ',' << text::format_double(s.max_f1) << ','
     << text::format_double(s.max_f05) << ',' << text::format_double(s.max_f2) << ','
     << text::format_double(s.max_f1_threshold) << '\n';
  close_out(os, path);
}

void write_topn_csv(const std::vector<TopNRow>& rows, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "N,frames_correct,precision,recall\n";
  for (const auto& r : rows) {
    os << r.n << ',' << text::format_double(r.summary.frames_correctly_localised) << ','
       << text::format_double(r.summary.precision) << ',' << text::format_double(r.summary.recall) << '\n';
  }
  close_out(os, path);
}

std::vector<TopNRow> read_topn_csv(const std::filesystem::path& path) {
  std::vector<TopNRow> out;
  const auto rows = read_csv_rows(path, 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    TopNRow r;
    if (!text::parse_number(rows[i][0], r.n)) throw FormatError(path.string() + ": bad N", i + 2);
    r.summary.frames_correctly_localised = parse_cell(rows[i][1], path, i);
    r.summary.precision = parse_cell(rows[i][2], path, i);
    r.summary.recall = parse_cell(rows[i][3], path, i);
    out.push_back(r);
  }
  return out;
}

void write_dropout_csv(const DropoutHistogram& h, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "bin_edge,fraction\n";
  for (std::size_t i = 0; i < h.bin_edges.size(); ++i) {
    os << text::format_double(h.bin_edges[i]) << ',' << text::format_double(h.fractions[i]) << '\n';
  }
  os << "inf," << text::format_double(h.fractions.back()) << '\n';
  close_out(os, path);
}

std::vector<DropoutRow> read_dropout_csv(const std::filesystem::path& path) {
  std::vector<DropoutRow> out;
  const auto rows = read_csv_rows(path, 2);
  for (std::size_t i = 0; i < rows.size(); ++i) out.push_back({rows[i][0], parse_cell(rows[i][1], path, i)});
  return out;
}

void write_trace_csv(const LocalisationTrace& trace, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "query_pose_id,correctly_localised,odometric_distance,candidates\n";
  for (const auto& f : trace.frames) {
    os << f.query_pose_id << ',' << (f.correctly_localised ? 1 : 0) << ','
       << text::format_double(f.odometric_distance) << ',';
    for (std::size_t i = 0; i < f.candidates.size(); ++i) {
      const auto& c = f.candidates[i];
      if (i) os << ';';
      os << c.place_id << ':' << text::format_double(c.distance) << ':' << to_string(c.verdict);
    }
    os << '\n';
  }
  close_out(os, path);
}

}  // namespace polarloc::eval
