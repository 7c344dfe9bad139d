#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "polarloc/embedding.hpp"
#include "polarloc/model.hpp"
#include "polarloc/radar.hpp"
#include "polarloc/simulate.hpp"

namespace polarloc::train {

enum class PairRelation { Positive, Negative, DontCare };

struct GraphNode {
  std::uint64_t pose_id = 0;
  sim::Pose2 pose;
  double cumulative_distance = 0.0;
  std::size_t sequence = 0;  // 0 for the first trajectory, 1 for the second
};

/// Poses of two trajectories with every pair classified by planar distance:
/// positive when <= r_pos, negative when >= r_neg, neither in between.
/// Pairs are stored once with first < second and are symmetric.
struct GroundTruthGraph {
  std::vector<GraphNode> nodes;
  std::vector<std::pair<std::size_t, std::size_t>> positive_pairs;
  std::vector<std::pair<std::size_t, std::size_t>> negative_pairs;
  std::vector<std::vector<std::size_t>> positives_of;  // adjacency, ascending
  double r_pos = 25.0;
  double r_neg = 50.0;
  std::size_t first_size = 0;  // nodes [0, first_size) belong to sequence 0

  PairRelation relation(std::size_t i, std::size_t j) const noexcept;
  double planar_distance(std::size_t i, std::size_t j) const noexcept;
  std::size_t second_size() const noexcept { return nodes.size() - first_size; }
  /// Node index of element k of the second trajectory.
  std::size_t second_node(std::size_t k) const noexcept { return first_size + k; }
};

GroundTruthGraph build_gt_graph(const sim::Trajectory& first, const sim::Trajectory& second,
                                double r_pos, double r_neg);

/// Scans referenced by graph node index. Every anchor has its own positives.
/// Each negative list starts with a shared sample that is >= r_neg from every
/// anchor; with in-batch negatives it continues with the other anchors and
/// their positives that are >= r_neg from this anchor. Members are distinct.
struct TripletBatch {
  std::vector<std::size_t> anchors;
  std::vector<std::vector<std::size_t>> positives;
  std::vector<std::vector<std::size_t>> negatives;

  /// Distinct nodes in order: anchors, positives, negatives.
  std::vector<std::size_t> members() const;
};

struct BatchConfig {
  std::size_t anchors = 3;
  std::size_t positives_per_anchor = 1;
  std::size_t negatives = 4;
  double sensing_range = 64.0;
  std::size_t max_retries = 200;
  /// Also use the other anchors and their positives as negatives.
  bool in_batch_negatives = true;
  /// Restrict anchors to the first trajectory and positives to the second.
  bool cross_sequence = true;
};

/// Throws SamplingExhaustedError when no valid batch is found within
/// config.max_retries attempts.
TripletBatch sample_batch(const GroundTruthGraph& graph, const BatchConfig& config,
                          std::mt19937_64& rng);

/// max(0, d_ap^2 - d_an^2 + margin)
double triplet_loss(double d_ap, double d_an, double margin) noexcept;

enum class Mining { SemiHard, Hardest };

const char* to_string(Mining m) noexcept;
Mining parse_mining(const std::string& s);

struct Triplet {
  std::size_t anchor = 0;  // node indices
  std::size_t positive = 0;
  std::size_t negative = 0;

  bool operator==(const Triplet&) const = default;
};

struct MiningResult {
  std::vector<Triplet> triplets;
  std::size_t skipped_anchors = 0;
};

/// `embeddings[i]` belongs to batch.members()[i]. Semi-hard picks, per
/// (anchor, positive), the closest negative farther than the positive and
/// falls back to the closest negative; Hardest always takes the closest.
/// Ties go to the earlier negative.
MiningResult mine_triplets(std::span<const EmbeddingVector> embeddings, const TripletBatch& batch,
                           Mining strategy);

enum class Optimizer { Sgd, Adam };

const char* to_string(Optimizer o) noexcept;
Optimizer parse_optimizer(const std::string& s);

struct Hyperparams {
  double lr_start = 1e-4;
  double lr_end = 5e-6;
  std::size_t lr_decay_steps = 5000;
  double clip_norm = 80.0;
  double weight_reg = 1e-7;
  double margin = 0.2;
  Mining mining = Mining::SemiHard;
  Optimizer optimizer = Optimizer::Sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
};

/// Linear decay from lr_start at step 0 to lr_end at lr_decay_steps, then flat.
double lr_schedule(const Hyperparams& hp, std::size_t step) noexcept;

struct TrainState {
  model::ModelParams params;
  std::size_t step = 0;
  std::mt19937_64 rng;
  Hyperparams hp;
  // Adam moments; empty until the first Adam step.
  std::vector<double> adam_m;
  std::vector<double> adam_v;
};

TrainState make_train_state(model::ModelParams params, const Hyperparams& hp, std::uint64_t seed);

struct StepStats {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double triplet_loss = 0.0;
  std::size_t active_triplets = 0;  // triplets with positive loss
  std::size_t mined_triplets = 0;
  std::size_t skipped_anchors = 0;
  double grad_norm_preclip = 0.0;
};

/// Scales `grads` in place so its global L2 norm is at most clip_norm and
/// returns the norm before clipping.
double clip_gradients(model::ModelParams& grads, double clip_norm);

double global_norm(const model::ModelParams& grads);

/// sum of squared regularised weights
double regularisation_energy(const model::ModelParams& params);

/// Loss and gradient of one batch for fixed mined triplets (no update).
struct BatchGradient {
  double loss = 0.0;
  double triplet_loss = 0.0;
  std::size_t active_triplets = 0;
  model::ModelParams grads;
};

/// `inputs[node]` is the preprocessed scan of graph node `node`.
BatchGradient batch_gradient(const model::ModelParams& params, const Hyperparams& hp,
                             std::span<const radar::NetworkInput> inputs,
                             const std::vector<std::size_t>& members,
                             const std::vector<Triplet>& triplets);

/// Applies an already clipped gradient with the configured optimiser.
void apply_update(TrainState& state, const model::ModelParams& grads, double lr);

/// One optimisation step: embed, mine, loss + L2 regularisation, clip,
/// update, step += 1. Throws NumericError on a non-finite loss.
StepStats train_step(TrainState& state, const TripletBatch& batch,
                     std::span<const radar::NetworkInput> inputs);

/// mean(d_ap) / mean(d_an) over every positive and negative pair of `graph`.
double distance_ratio(const model::ModelParams& params, const GroundTruthGraph& graph,
                      std::span<const radar::NetworkInput> inputs);

/// Same ratio from precomputed embeddings (indexed by node).
double distance_ratio(std::span<const EmbeddingVector> embeddings, const GroundTruthGraph& graph);

std::vector<EmbeddingVector> embed_all(const model::ModelParams& params,
                                       std::span<const radar::NetworkInput> inputs);

struct TrainLoopConfig {
  std::size_t steps = 5000;
  BatchConfig batch;
};

using StepCallback = std::function<void(const StepStats&)>;

/// Runs `config.steps` steps, sampling each batch with state.rng.
void run_training(TrainState& state, const GroundTruthGraph& graph,
                  std::span<const radar::NetworkInput> inputs, const TrainLoopConfig& config,
                  const StepCallback& on_step = {});

/// step,lr,loss,active_triplets,grad_norm_preclip
void write_log_header(std::ostream& os);
void write_log_row(std::ostream& os, const StepStats& s);

}  // namespace polarloc::train
