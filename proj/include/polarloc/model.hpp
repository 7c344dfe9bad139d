#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "polarloc/embedding.hpp"
#include "polarloc/feature_map.hpp"
#include "polarloc/numerics.hpp"
#include "polarloc/radar.hpp"

namespace polarloc::model {

enum class Variant {
  Invariant,  // circular padding, max + blur downsampling, azimuth max-pool
  Baseline,   // zero padding, stride-2 max-pool, aggregation over all positions
};

const char* to_string(Variant v) noexcept;
Variant parse_variant(const std::string& s);

struct NetConfig {
  std::vector<std::size_t> stage_channels{8, 16, 32};
  std::size_t convs_per_stage = 2;
  std::size_t kernel_size = 3;
  std::size_t vlad_clusters = 8;
  std::size_t output_dim = 64;
  Variant variant = Variant::Invariant;
  // Invariant variant only: aggregate every spatial position with NetVLAD
  // instead of max-pooling the azimuth axis first.
  bool aggregate_before_azimuth_pool = false;
  std::size_t pool_window = 2;
  std::size_t blur_kernel = 7;
  double blur_sigma = 1.0;

  std::size_t last_channels() const { return stage_channels.back(); }
  std::size_t vlad_dim() const { return vlad_clusters * last_channels(); }
  /// Cumulative azimuth stride of the feature stack.
  std::size_t azimuth_stride() const { return std::size_t{1} << stage_channels.size(); }

  bool operator==(const NetConfig&) const = default;
};

/// Throws ConfigError when the configuration breaks its invariants.
void validate(const NetConfig& config);

struct VladParams {
  std::size_t clusters = 0;
  std::size_t dim = 0;
  std::vector<double> centres;        // clusters x dim
  std::vector<double> assign_weights; // clusters x dim
  std::vector<double> assign_bias;    // clusters

  bool operator==(const VladParams&) const = default;
};

/// rows = output_dim, cols = vlad_dim; y = matrix * v.
struct Projection {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> matrix;

  bool operator==(const Projection&) const = default;
};

struct ModelParams {
  NetConfig config;
  std::vector<numerics::ConvKernel> convs;
  VladParams vlad;
  Projection projection;

  bool operator==(const ModelParams&) const = default;
};

/// Visits every learnable tensor. `regularised` is true for multiplicative
/// weights (conv filters, assignment weights, projection) and false for
/// biases and cluster centres.
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  for (auto& k : p.convs) {
    fn(k.weights, true);
    fn(k.bias, false);
  }
  fn(p.vlad.centres, false);
  fn(p.vlad.assign_weights, true);
  fn(p.vlad.assign_bias, false);
  fn(p.projection.matrix, true);
}

/// Same shapes as `p`, all zeros.
ModelParams zeros_like(const ModelParams& p);
std::size_t parameter_count(const ModelParams& p);
/// Concatenation of all tensors in for_each_tensor order.
std::vector<double> flatten(const ModelParams& p);
void unflatten(std::span<const double> flat, ModelParams& p);

/// He-scaled conv weights, unit-sphere cluster centres, assignment weights
/// 2 * centre with zero bias, orthonormal projection rows.
ModelParams init_params(const NetConfig& config, std::uint64_t seed);

// ---- NetVLAD ---------------------------------------------------------------

struct VladForward {
  std::vector<double> output;       // clusters * dim, L2-normalised (or zero)
  std::vector<double> assignments;  // N x clusters soft assignment
  std::vector<double> residuals;    // clusters x dim, un-normalised V_k
  std::vector<double> residual_norms;
  std::vector<double> intra;        // concatenated intra-normalised V_k
  double intra_norm = 0.0;
};

struct VladGrads {
  FeatureMap descriptors;
  VladParams params;
};

/// Every (azimuth, range) position of `descriptors` is one local descriptor of
/// dimension channels(). A zero residual V_k stays zero under
/// intra-normalisation, and an all-zero result is returned unnormalised.
VladForward netvlad(const FeatureMap& descriptors, const VladParams& params);
std::vector<double> netvlad_vector(const FeatureMap& descriptors, const VladParams& params);
VladGrads netvlad_backward(const FeatureMap& descriptors, const VladParams& params,
                           const VladForward& forward, std::span<const double> grad_output);

// ---- Projection ------------------------------------------------------------

struct ProjectForward {
  std::vector<double> projected;  // before normalisation
  EmbeddingVector embedding;
};

/// Linear map then l2_normalize; throws DegenerateVectorError on a ~zero image.
ProjectForward project(std::span<const double> descriptor, const Projection& projection);

struct ProjectGrads {
  std::vector<double> descriptor;
  std::vector<double> matrix;
};

ProjectGrads project_backward(std::span<const double> descriptor, const Projection& projection,
                              const ProjectForward& forward, std::span<const double> grad_embedding);

// ---- Whole network ---------------------------------------------------------

/// Intermediate values kept by forward_trace for backpropagation.
struct Trace {
  enum class Kind { Conv, Relu, MaxPool, BlurPool, AzimuthPool };
  struct Layer {
    Kind kind;
    std::size_t conv_index = 0;
    FeatureMap input;
    numerics::PoolResult pool;
  };
  std::vector<Layer> layers;
  FeatureMap descriptors;  // NetVLAD input
  VladForward vlad;
  ProjectForward projection;
};

/// Unit-norm embedding of one preprocessed scan.
EmbeddingVector forward(const ModelParams& params, const radar::NetworkInput& input);

/// Final feature map of the convolutional stack (before any azimuth pooling).
FeatureMap feature_stack(const ModelParams& params, const FeatureMap& input);

EmbeddingVector forward_trace(const ModelParams& params, const radar::NetworkInput& input,
                              Trace& trace);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(embedding).
void backward(const ModelParams& params, const Trace& trace, std::span<const double> grad_embedding,
              ModelParams& grads);

/// Same as backward but also returns the gradient with respect to the input.
FeatureMap backward_input(const ModelParams& params, const Trace& trace,
                          std::span<const double> grad_embedding, ModelParams& grads);

// ---- Checkpoint ------------------------------------------------------------
//   "PMDL" | version u32 | config | per tensor: u64 count, f64 values
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ModelParams& params, std::ostream& sink);
ModelParams load_checkpoint(std::istream& source);
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace polarloc::model
