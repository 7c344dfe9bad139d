#include "polarloc/train.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <unordered_set>

#include "polarloc/error.hpp"
#include "polarloc/text.hpp"

namespace polarloc::train {

// ---- Ground truth ----------------------------------------------------------

double GroundTruthGraph::planar_distance(std::size_t i, std::size_t j) const noexcept {
  return sim::planar_distance(nodes[i].pose, nodes[j].pose);
}

PairRelation GroundTruthGraph::relation(std::size_t i, std::size_t j) const noexcept {
  const double d = planar_distance(i, j);
  if (d <= r_pos) return PairRelation::Positive;
  if (d >= r_neg) return PairRelation::Negative;
  return PairRelation::DontCare;
}

GroundTruthGraph build_gt_graph(const sim::Trajectory& first, const sim::Trajectory& second,
                                double r_pos, double r_neg) {
  if (first.empty() || second.empty()) throw ConfigError("build_gt_graph: empty trajectory");
  if (!(r_pos >= 0.0) || !(r_pos < r_neg)) throw ConfigError("build_gt_graph: need 0 <= r_pos < r_neg");
  GroundTruthGraph g;
  g.r_pos = r_pos;
  g.r_neg = r_neg;
  g.first_size = first.size();
  auto add = [&](const sim::Trajectory& t, std::size_t seq) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double cum = i < t.cumulative_distance.size() ? t.cumulative_distance[i] : 0.0;
      g.nodes.push_back({t.poses[i].id, t.poses[i].pose, cum, seq});
    }
  };
  add(first, 0);
  add(second, 1);
  const std::size_t n = g.nodes.size();
  g.positives_of.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      switch (g.relation(i, j)) {
        case PairRelation::Positive:
          g.positive_pairs.emplace_back(i, j);
          g.positives_of[i].push_back(j);
          g.positives_of[j].push_back(i);
          break;
        case PairRelation::Negative:
          g.negative_pairs.emplace_back(i, j);
          break;
        case PairRelation::DontCare:
          break;
      }
    }
  }
  for (auto& adj : g.positives_of) std::sort(adj.begin(), adj.end());
  return g;
}

// ---- Batches ---------------------------------------------------------------

std::vector<std::size_t> TripletBatch::members() const {
  std::vector<std::size_t> out;
  std::unordered_set<std::size_t> seen;
  auto push = [&](std::size_t n) {
    if (seen.insert(n).second) out.push_back(n);
  };
  for (std::size_t a : anchors) push(a);
  for (const auto& ps : positives) for (std::size_t p : ps) push(p);
  for (const auto& ns : negatives) for (std::size_t n : ns) push(n);
  return out;
}

TripletBatch sample_batch(const GroundTruthGraph& graph, const BatchConfig& cfg, std::mt19937_64& rng) {
  if (cfg.anchors == 0) throw ConfigError("sample_batch: need at least one anchor");
  if (!(cfg.sensing_range > 0.0)) throw ConfigError("sample_batch: sensing_range must be positive");
  const double min_anchor_gap = 2.0 * cfg.sensing_range;

  auto positive_pool = [&](std::size_t a) {
    std::vector<std::size_t> pool;
    for (std::size_t p : graph.positives_of[a]) {
      if (!cfg.cross_sequence || graph.nodes[p].sequence != graph.nodes[a].sequence) pool.push_back(p);
    }
    return pool;
  };

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    if (cfg.cross_sequence && graph.nodes[i].sequence != 0) continue;
    if (positive_pool(i).size() >= cfg.positives_per_anchor) candidates.push_back(i);
  }

  for (std::size_t attempt = 0; attempt < cfg.max_retries; ++attempt) {
    std::shuffle(candidates.begin(), candidates.end(), rng);
    TripletBatch batch;
    for (std::size_t c : candidates) {
      const bool clear = std::all_of(batch.anchors.begin(), batch.anchors.end(), [&](std::size_t a) {
        return graph.planar_distance(a, c) > min_anchor_gap;
      });
      if (clear) batch.anchors.push_back(c);
      if (batch.anchors.size() == cfg.anchors) break;
    }
    if (batch.anchors.size() < cfg.anchors) continue;

    std::unordered_set<std::size_t> used(batch.anchors.begin(), batch.anchors.end());
    bool ok = true;
    for (std::size_t a : batch.anchors) {
      auto pool = positive_pool(a);
      pool.erase(std::remove_if(pool.begin(), pool.end(), [&](std::size_t p) { return used.count(p) > 0; }),
                 pool.end());
      if (pool.size() < cfg.positives_per_anchor) {
        ok = false;
        break;
      }
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(cfg.positives_per_anchor);
      used.insert(pool.begin(), pool.end());
      batch.positives.push_back(std::move(pool));
    }
    if (!ok) continue;

    std::vector<std::size_t> neg_pool;
    for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
      if (used.count(i)) continue;
      const bool far = std::all_of(batch.anchors.begin(), batch.anchors.end(), [&](std::size_t a) {
        return graph.planar_distance(a, i) >= graph.r_neg;
      });
      if (far) neg_pool.push_back(i);
    }
    if (neg_pool.size() < cfg.negatives) continue;
    std::shuffle(neg_pool.begin(), neg_pool.end(), rng);
    neg_pool.resize(cfg.negatives);
    batch.negatives.assign(batch.anchors.size(), neg_pool);
    if (cfg.in_batch_negatives) {
      for (std::size_t i = 0; i < batch.anchors.size(); ++i) {
        auto add = [&](std::size_t n) {
          if (graph.planar_distance(batch.anchors[i], n) >= graph.r_neg) batch.negatives[i].push_back(n);
        };
        for (std::size_t j = 0; j < batch.anchors.size(); ++j) {
          if (j == i) continue;
          add(batch.anchors[j]);
          for (std::size_t p : batch.positives[j]) add(p);
        }
      }
    }
    return batch;
  }
  throw SamplingExhaustedError("sample_batch: could not place " + std::to_string(cfg.anchors) +
                               " anchors more than " + text::format_double(min_anchor_gap) +
                               " m apart (with positives and negatives) after " +
                               std::to_string(cfg.max_retries) + " attempts");
}

// ---- Loss and mining -------------------------------------------------------

double triplet_loss(double d_ap, double d_an, double margin) noexcept {
  return std::max(0.0, d_ap * d_ap - d_an * d_an + margin);
}

const char* to_string(Mining m) noexcept { return m == Mining::SemiHard ? "semi-hard" : "hardest"; }

Mining parse_mining(const std::string& s) {
  if (s == "semi-hard" || s == "semihard") return Mining::SemiHard;
  if (s == "hardest") return Mining::Hardest;
  throw ConfigError("unknown mining strategy '" + s + "' (expected semi-hard|hardest)");
}

const char* to_string(Optimizer o) noexcept { return o == Optimizer::Sgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return Optimizer::Sgd;
  if (s == "adam") return Optimizer::Adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd|adam)");
}

MiningResult mine_triplets(std::span<const EmbeddingVector> embeddings, const TripletBatch& batch,
                           Mining strategy) {
  const auto members = batch.members();
  if (embeddings.size() != members.size()) throw ConfigError("mine_triplets: one embedding per batch member");
  std::unordered_map<std::size_t, std::size_t> slot;
  for (std::size_t i = 0; i < members.size(); ++i) slot[members[i]] = i;

  MiningResult res;
  for (std::size_t ai = 0; ai < batch.anchors.size(); ++ai) {
    const std::size_t a = batch.anchors[ai];
    const auto& ps = ai < batch.positives.size() ? batch.positives[ai] : std::vector<std::size_t>{};
    const auto& ns = ai < batch.negatives.size() ? batch.negatives[ai] : std::vector<std::size_t>{};
    if (ps.empty() || ns.empty()) {
      ++res.skipped_anchors;
      continue;
    }
    const auto& ea = embeddings[slot.at(a)];
    for (std::size_t p : ps) {
      const double d_ap = distance(ea, embeddings[slot.at(p)]);
      std::size_t hardest = ns.front();
      double hardest_d = INFINITY;
      std::size_t semi = 0;
      double semi_d = INFINITY;
      bool have_semi = false;
      for (std::size_t n : ns) {
        const double d_an = distance(ea, embeddings[slot.at(n)]);
        if (d_an < hardest_d) {
          hardest_d = d_an;
          hardest = n;
        }
        if (d_an > d_ap && d_an < semi_d) {
          semi_d = d_an;
          semi = n;
          have_semi = true;
        }
      }
      const std::size_t chosen = (strategy == Mining::SemiHard && have_semi) ? semi : hardest;
      res.triplets.push_back({a, p, chosen});
    }
  }
  return res;
}

// ---- Optimisation ----------------------------------------------------------

double lr_schedule(const Hyperparams& hp, std::size_t step) noexcept {
  if (hp.lr_decay_steps == 0 || step >= hp.lr_decay_steps) return hp.lr_end;
  const double t = static_cast<double>(step) / static_cast<double>(hp.lr_decay_steps);
  return hp.lr_start + (hp.lr_end - hp.lr_start) * t;
}

TrainState make_train_state(model::ModelParams params, const Hyperparams& hp, std::uint64_t seed) {
  TrainState s;
  s.params = std::move(params);
  s.step = 0;
  s.rng.seed(seed);
  s.hp = hp;
  return s;
}

double global_norm(const model::ModelParams& grads) {
  double s = 0.0;
  model::for_each_tensor(grads, [&](const std::vector<double>& t, bool) {
    for (double v : t) s += v * v;
  });
  return std::sqrt(s);
}

double clip_gradients(model::ModelParams& grads, double clip_norm) {
  const double norm = global_norm(grads);
  if (clip_norm > 0.0 && norm > clip_norm) {
    const double scale = clip_norm / norm;
    model::for_each_tensor(grads, [&](std::vector<double>& t, bool) {
      for (double& v : t) v *= scale;
    });
  }
  return norm;
}

double regularisation_energy(const model::ModelParams& params) {
  double s = 0.0;
  model::for_each_tensor(params, [&](const std::vector<double>& t, bool reg) {
    if (!reg) return;
    for (double v : t) s += v * v;
  });
  return s;
}

namespace {

struct Embedded {
  std::vector<EmbeddingVector> embeddings;
  std::vector<model::Trace> traces;
};

Embedded embed_members(const model::ModelParams& params, std::span<const radar::NetworkInput> inputs,
                       const std::vector<std::size_t>& members) {
  Embedded e;
  e.embeddings.resize(members.size());
  e.traces.resize(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (members[i] >= inputs.size()) throw ConfigError("batch references a node without an input scan");
    e.embeddings[i] = model::forward_trace(params, inputs[members[i]], e.traces[i]);
  }
  return e;
}

BatchGradient gradient_from(const model::ModelParams& params, const Hyperparams& hp,
                            const Embedded& emb, const std::vector<std::size_t>& members,
                            const std::vector<Triplet>& triplets) {
  std::unordered_map<std::size_t, std::size_t> slot;
  for (std::size_t i = 0; i < members.size(); ++i) slot[members[i]] = i;
  const std::size_t dim = params.config.output_dim;
  std::vector<std::vector<double>> g_emb(members.size(), std::vector<double>(dim, 0.0));
  std::vector<bool> touched(members.size(), false);

  BatchGradient out;
  out.grads = model::zeros_like(params);
  const double inv_t = triplets.empty() ? 0.0 : 1.0 / static_cast<double>(triplets.size());
  double sum = 0.0;
  for (const auto& t : triplets) {
    const std::size_t ia = slot.at(t.anchor), ip = slot.at(t.positive), in = slot.at(t.negative);
    const auto& a = emb.embeddings[ia].values;
    const auto& p = emb.embeddings[ip].values;
    const auto& n = emb.embeddings[in].values;
    const double l = squared_distance(a, p) - squared_distance(a, n) + hp.margin;
    if (!(l > 0.0)) continue;
    sum += l;
    ++out.active_triplets;
    for (std::size_t d = 0; d < dim; ++d) {
      g_emb[ia][d] += 2.0 * (n[d] - p[d]) * inv_t;
      g_emb[ip][d] += -2.0 * (a[d] - p[d]) * inv_t;
      g_emb[in][d] += 2.0 * (a[d] - n[d]) * inv_t;
    }
    touched[ia] = touched[ip] = touched[in] = true;
  }
  out.triplet_loss = sum * inv_t;
  out.loss = out.triplet_loss + hp.weight_reg * regularisation_energy(params);

  for (std::size_t i = 0; i < members.size(); ++i) {
    if (touched[i]) model::backward(params, emb.traces[i], g_emb[i], out.grads);
  }
  if (hp.weight_reg != 0.0) {
    // d/dW (reg * |W|^2) = 2 reg W on regularised tensors.
    std::vector<const std::vector<double>*> src;
    model::for_each_tensor(params, [&](const std::vector<double>& t, bool) { src.push_back(&t); });
    std::size_t k = 0;
    model::for_each_tensor(out.grads, [&](std::vector<double>& g, bool reg) {
      const auto& w = *src[k++];
      if (!reg) return;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * hp.weight_reg * w[i];
    });
  }
  return out;
}

}  // namespace

BatchGradient batch_gradient(const model::ModelParams& params, const Hyperparams& hp,
                             std::span<const radar::NetworkInput> inputs,
                             const std::vector<std::size_t>& members,
                             const std::vector<Triplet>& triplets) {
  const Embedded emb = embed_members(params, inputs, members);
  return gradient_from(params, hp, emb, members, triplets);
}

void apply_update(TrainState& state, const model::ModelParams& grads, double lr) {
  if (state.hp.optimizer == Optimizer::Sgd) {
    std::vector<const std::vector<double>*> g;
    model::for_each_tensor(grads, [&](const std::vector<double>& t, bool) { g.push_back(&t); });
    std::size_t k = 0;
    model::for_each_tensor(state.params, [&](std::vector<double>& w, bool) {
      const auto& gt = *g[k++];
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gt[i];
    });
    return;
  }
  const auto flat_g = model::flatten(grads);
  auto flat_w = model::flatten(state.params);
  if (state.adam_m.size() != flat_w.size()) {
    state.adam_m.assign(flat_w.size(), 0.0);
    state.adam_v.assign(flat_w.size(), 0.0);
  }
  const double b1 = state.hp.adam_beta1, b2 = state.hp.adam_beta2;
  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < flat_w.size(); ++i) {
    state.adam_m[i] = b1 * state.adam_m[i] + (1.0 - b1) * flat_g[i];
    state.adam_v[i] = b2 * state.adam_v[i] + (1.0 - b2) * flat_g[i] * flat_g[i];
    const double mhat = state.adam_m[i] / c1;
    const double vhat = state.adam_v[i] / c2;
    flat_w[i] -= lr * mhat / (std::sqrt(vhat) + state.hp.adam_epsilon);
  }
  model::unflatten(flat_w, state.params);
}

StepStats train_step(TrainState& state, const TripletBatch& batch,
                     std::span<const radar::NetworkInput> inputs) {
  const auto members = batch.members();
  const Embedded emb = embed_members(state.params, inputs, members);
  const MiningResult mined = mine_triplets(emb.embeddings, batch, state.hp.mining);
  BatchGradient bg = gradient_from(state.params, state.hp, emb, members, mined.triplets);

  StepStats s;
  s.step = state.step;
  s.lr = lr_schedule(state.hp, state.step);
  s.loss = bg.loss;
  s.triplet_loss = bg.triplet_loss;
  s.active_triplets = bg.active_triplets;
  s.mined_triplets = mined.triplets.size();
  s.skipped_anchors = mined.skipped_anchors;
  if (!std::isfinite(bg.loss)) {
    throw NumericError("non-finite loss at step " + std::to_string(state.step) +
                       " (lr=" + text::format_double(s.lr) +
                       ", triplet_loss=" + text::format_double(bg.triplet_loss) +
                       ", reg_energy=" + text::format_double(regularisation_energy(state.params)) +
                       ", triplets=" + std::to_string(mined.triplets.size()) + ")");
  }
  s.grad_norm_preclip = clip_gradients(bg.grads, state.hp.clip_norm);
  if (!std::isfinite(s.grad_norm_preclip)) {
    throw NumericError("non-finite gradient norm at step " + std::to_string(state.step));
  }
  apply_update(state, bg.grads, s.lr);
  ++state.step;
  return s;
}

std::vector<EmbeddingVector> embed_all(const model::ModelParams& params,
                                       std::span<const radar::NetworkInput> inputs) {
  std::vector<EmbeddingVector> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) out.push_back(model::forward(params, in));
  return out;
}

double distance_ratio(std::span<const EmbeddingVector> embeddings, const GroundTruthGraph& graph) {
  if (graph.positive_pairs.empty() || graph.negative_pairs.empty()) {
    throw EvaluationError("distance_ratio: graph needs both positive and negative pairs");
  }
  double pos = 0.0, neg = 0.0;
  for (const auto& [i, j] : graph.positive_pairs) pos += distance(embeddings[i], embeddings[j]);
  for (const auto& [i, j] : graph.negative_pairs) neg += distance(embeddings[i], embeddings[j]);
  pos /= static_cast<double>(graph.positive_pairs.size());
  neg /= static_cast<double>(graph.negative_pairs.size());
  return pos / neg;
}

double distance_ratio(const model::ModelParams& params, const GroundTruthGraph& graph,
                      std::span<const radar::NetworkInput> inputs) {
  const auto emb = embed_all(params, inputs);
  return distance_ratio(emb, graph);
}

void run_training(TrainState& state, const GroundTruthGraph& graph,
                  std::span<const radar::NetworkInput> inputs, const TrainLoopConfig& config,
                  const StepCallback& on_step) {
  for (std::size_t i = 0; i < config.steps; ++i) {
    const TripletBatch batch = sample_batch(graph, config.batch, state.rng);
    const StepStats s = train_step(state, batch, inputs);
    if (on_step) on_step(s);
  }
}

void write_log_header(std::ostream& os) { os << "step,lr,loss,active_triplets,grad_norm_preclip\n"; }

void write_log_row(std::ostream& os, const StepStats& s) {
  os << s.step << ',' << text::format_double(s.lr) << ',' << text::format_double(s.loss) << ','
     << s.active_triplets << ',' << text::format_double(s.grad_norm_preclip) << '\n';
}

}  // namespace polarloc::train
