#include "polarloc/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "polarloc/binio.hpp"
#include "polarloc/error.hpp"

namespace polarloc::model {

namespace {

using numerics::AzimuthPadding;
using numerics::Stride;
using numerics::Window;

AzimuthPadding padding_for(const NetConfig& c) {
  return c.variant == Variant::Invariant ? AzimuthPadding::Circular : AzimuthPadding::Zero;
}

bool pools_azimuth(const NetConfig& c) {
  return c.variant == Variant::Invariant && !c.aggregate_before_azimuth_pool;
}

std::string layer_name(std::size_t stage, const char* what, std::size_t idx) {
  return "stage" + std::to_string(stage + 1) + "." + what + std::to_string(idx + 1);
}

void require_finite(const FeatureMap& m, const std::string& layer) {
  if (!all_finite(m)) throw NumericError("non-finite activation after layer '" + layer + "'");
}

void require_finite(std::span<const double> v, const std::string& layer) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError("non-finite activation after layer '" + layer + "'");
  }
}

// Shapes only; all tensors zero.
ModelParams shaped_params(const NetConfig& config) {
  validate(config);
  ModelParams p;
  p.config = config;
  std::size_t c_in = 1;
  for (std::size_t ch : config.stage_channels) {
    for (std::size_t j = 0; j < config.convs_per_stage; ++j) {
      p.convs.emplace_back(config.kernel_size, config.kernel_size, c_in, ch);
      c_in = ch;
    }
  }
  const std::size_t C = config.last_channels();
  const std::size_t K = config.vlad_clusters;
  p.vlad = VladParams{K, C, std::vector<double>(K * C, 0.0), std::vector<double>(K * C, 0.0),
                      std::vector<double>(K, 0.0)};
  p.projection = Projection{config.output_dim, K * C, std::vector<double>(config.output_dim * K * C, 0.0)};
  return p;
}

}  // namespace

const char* to_string(Variant v) noexcept {
  return v == Variant::Invariant ? "invariant" : "baseline";
}

Variant parse_variant(const std::string& s) {
  if (s == "invariant") return Variant::Invariant;
  if (s == "baseline") return Variant::Baseline;
  throw ConfigError("unknown model variant '" + s + "' (expected invariant|baseline)");
}

void validate(const NetConfig& c) {
  if (c.stage_channels.empty()) throw ConfigError("NetConfig needs at least one stage");
  for (std::size_t ch : c.stage_channels) {
    if (ch == 0) throw ConfigError("stage channel count must be >= 1");
  }
  if (c.convs_per_stage == 0) throw ConfigError("convs_per_stage must be >= 1");
  if (c.kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd");
  if (c.vlad_clusters == 0) throw ConfigError("vlad_clusters (K) must be >= 1");
  if (c.output_dim == 0) throw ConfigError("output_dim must be >= 1");
  if (c.output_dim > c.vlad_dim()) {
    throw ConfigError("output_dim must not exceed K * last stage channels");
  }
  if (c.pool_window == 0) throw ConfigError("pool_window must be >= 1");
  if (c.blur_kernel % 2 == 0) throw ConfigError("blur_kernel must be odd");
  if (!(c.blur_sigma > 0.0)) throw ConfigError("blur_sigma must be positive");
  if (c.stage_channels.size() >= 32) throw ConfigError("too many stages");
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  for_each_tensor(z, [](std::vector<double>& t, bool) { std::fill(t.begin(), t.end(), 0.0); });
  return z;
}

std::size_t parameter_count(const ModelParams& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&](const std::vector<double>& t, bool) { n += t.size(); });
  return n;
}

std::vector<double> flatten(const ModelParams& p) {
  std::vector<double> out;
  out.reserve(parameter_count(p));
  for_each_tensor(p, [&](const std::vector<double>& t, bool) { out.insert(out.end(), t.begin(), t.end()); });
  return out;
}

void unflatten(std::span<const double> flat, ModelParams& p) {
  if (flat.size() != parameter_count(p)) throw ConfigError("unflatten: size mismatch");
  std::size_t at = 0;
  for_each_tensor(p, [&](std::vector<double>& t, bool) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), t.size(), t.begin());
    at += t.size();
  });
}

ModelParams init_params(const NetConfig& config, std::uint64_t seed) {
  ModelParams p = shaped_params(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  for (auto& k : p.convs) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(k.k_a * k.k_r * k.c_in));
    for (double& w : k.weights) w = std_dev * normal(rng);
  }

  const std::size_t K = p.vlad.clusters;
  const std::size_t C = p.vlad.dim;
  for (std::size_t k = 0; k < K; ++k) {
    double* c = &p.vlad.centres[k * C];
    double n2 = 0.0;
    do {
      n2 = 0.0;
      for (std::size_t i = 0; i < C; ++i) {
        c[i] = normal(rng);
        n2 += c[i] * c[i];
      }
    } while (n2 < 1e-12);
    const double inv = 1.0 / std::sqrt(n2);
    for (std::size_t i = 0; i < C; ++i) {
      c[i] *= inv;
      // With unit centres, w = 2c and b = 0 equals the nearest-centre
      // initialisation up to a constant logit shift.
      p.vlad.assign_weights[k * C + i] = 2.0 * c[i];
    }
  }

  auto& P = p.projection;
  for (std::size_t r = 0; r < P.rows; ++r) {
    double* row = &P.matrix[r * P.cols];
    while (true) {
      for (std::size_t i = 0; i < P.cols; ++i) row[i] = normal(rng);
      for (std::size_t q = 0; q < r; ++q) {
        const double* prev = &P.matrix[q * P.cols];
        double dot = 0.0;
        for (std::size_t i = 0; i < P.cols; ++i) dot += row[i] * prev[i];
        for (std::size_t i = 0; i < P.cols; ++i) row[i] -= dot * prev[i];
      }
      const double n = numerics::l2_norm({row, P.cols});
      if (n > 1e-6) {
        for (std::size_t i = 0; i < P.cols; ++i) row[i] /= n;
        break;
      }
    }
  }
  return p;
}

// ---- NetVLAD ---------------------------------------------------------------

VladForward netvlad(const FeatureMap& descriptors, const VladParams& params) {
  const std::size_t K = params.clusters;
  const std::size_t C = params.dim;
  if (K == 0) throw ConfigError("netvlad: K must be >= 1");
  if (descriptors.channels() != C) throw ConfigError("netvlad: descriptor dimension mismatch");
  const std::size_t N = descriptors.azimuth_len() * descriptors.range_len();
  if (N == 0) throw ConfigError("netvlad: no descriptors");
  const double* X = descriptors.data();

  VladForward f;
  f.assignments.assign(N * K, 0.0);
  f.residuals.assign(K * C, 0.0);
  std::vector<double> logits(K);
  for (std::size_t i = 0; i < N; ++i) {
    const double* x = X + i * C;
    double mx = -INFINITY;
    for (std::size_t k = 0; k < K; ++k) {
      const double* w = &params.assign_weights[k * C];
      double s = params.assign_bias[k];
      for (std::size_t c = 0; c < C; ++c) s += w[c] * x[c];
      logits[k] = s;
      mx = std::max(mx, s);
    }
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      logits[k] = std::exp(logits[k] - mx);
      z += logits[k];
    }
    double* a = &f.assignments[i * K];
    for (std::size_t k = 0; k < K; ++k) {
      a[k] = logits[k] / z;
      const double* ck = &params.centres[k * C];
      double* v = &f.residuals[k * C];
      for (std::size_t c = 0; c < C; ++c) v[c] += a[k] * (x[c] - ck[c]);
    }
  }

  f.residual_norms.assign(K, 0.0);
  f.intra.assign(K * C, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double n = numerics::l2_norm({&f.residuals[k * C], C});
    f.residual_norms[k] = n;
    if (n > numerics::kNormEpsilon) {
      for (std::size_t c = 0; c < C; ++c) f.intra[k * C + c] = f.residuals[k * C + c] / n;
    }
  }
  f.intra_norm = numerics::l2_norm(f.intra);
  f.output = f.intra;
  if (f.intra_norm > numerics::kNormEpsilon) {
    for (double& v : f.output) v /= f.intra_norm;
  }
  return f;
}

std::vector<double> netvlad_vector(const FeatureMap& descriptors, const VladParams& params) {
  return netvlad(descriptors, params).output;
}

VladGrads netvlad_backward(const FeatureMap& descriptors, const VladParams& params,
                           const VladForward& f, std::span<const double> grad_output) {
  const std::size_t K = params.clusters;
  const std::size_t C = params.dim;
  const std::size_t N = descriptors.azimuth_len() * descriptors.range_len();
  if (grad_output.size() != K * C) throw ConfigError("netvlad_backward: gradient size mismatch");

  VladGrads g{FeatureMap(descriptors.azimuth_len(), descriptors.range_len(), C),
              VladParams{K, C, std::vector<double>(K * C, 0.0), std::vector<double>(K * C, 0.0),
                         std::vector<double>(K, 0.0)}};

  // Through the final normalisation.
  std::vector<double> g_intra(K * C, 0.0);
  if (f.intra_norm > numerics::kNormEpsilon) {
    double dot = 0.0;
    for (std::size_t i = 0; i < K * C; ++i) dot += f.output[i] * grad_output[i];
    for (std::size_t i = 0; i < K * C; ++i) {
      g_intra[i] = (grad_output[i] - f.output[i] * dot) / f.intra_norm;
    }
  }
  // Through intra-normalisation.
  std::vector<double> g_res(K * C, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double n = f.residual_norms[k];
    if (!(n > numerics::kNormEpsilon)) continue;
    const double* u = &f.intra[k * C];
    const double* gu = &g_intra[k * C];
    double dot = 0.0;
    for (std::size_t c = 0; c < C; ++c) dot += u[c] * gu[c];
    for (std::size_t c = 0; c < C; ++c) g_res[k * C + c] = (gu[c] - u[c] * dot) / n;
  }

  const double* X = descriptors.data();
  double* GX = g.descriptors.data();
  std::vector<double> g_assign(K);
  for (std::size_t i = 0; i < N; ++i) {
    const double* x = X + i * C;
    double* gx = GX + i * C;
    const double* a = &f.assignments[i * K];
    double weighted = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double* ck = &params.centres[k * C];
      const double* gv = &g_res[k * C];
      double ga = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        ga += gv[c] * (x[c] - ck[c]);
        gx[c] += a[k] * gv[c];
      }
      g_assign[k] = ga;
      weighted += a[k] * ga;
    }
    for (std::size_t k = 0; k < K; ++k) {
      const double gs = a[k] * (g_assign[k] - weighted);
      const double* w = &params.assign_weights[k * C];
      double* gw = &g.params.assign_weights[k * C];
      for (std::size_t c = 0; c < C; ++c) {
        gw[c] += gs * x[c];
        gx[c] += gs * w[c];
      }
      g.params.assign_bias[k] += gs;
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    double mass = 0.0;
    for (std::size_t i = 0; i < N; ++i) mass += f.assignments[i * K + k];
    for (std::size_t c = 0; c < C; ++c) g.params.centres[k * C + c] = -mass * g_res[k * C + c];
  }
  return g;
}

// ---- Projection ------------------------------------------------------------

ProjectForward project(std::span<const double> descriptor, const Projection& P) {
  if (descriptor.size() != P.cols || P.matrix.size() != P.rows * P.cols) {
    throw ConfigError("project: dimension mismatch");
  }
  ProjectForward f;
  f.projected.assign(P.rows, 0.0);
  for (std::size_t r = 0; r < P.rows; ++r) {
    const double* row = &P.matrix[r * P.cols];
    double s = 0.0;
    for (std::size_t c = 0; c < P.cols; ++c) s += row[c] * descriptor[c];
    f.projected[r] = s;
  }
  f.embedding.values = numerics::l2_normalize(f.projected);
  return f;
}

ProjectGrads project_backward(std::span<const double> descriptor, const Projection& P,
                              const ProjectForward& f, std::span<const double> grad_embedding) {
  const auto gy = numerics::l2_normalize_backward(f.projected, grad_embedding);
  ProjectGrads g{std::vector<double>(P.cols, 0.0), std::vector<double>(P.rows * P.cols, 0.0)};
  for (std::size_t r = 0; r < P.rows; ++r) {
    const double* row = &P.matrix[r * P.cols];
    double* grow = &g.matrix[r * P.cols];
    for (std::size_t c = 0; c < P.cols; ++c) {
      grow[c] = gy[r] * descriptor[c];
      g.descriptor[c] += gy[r] * row[c];
    }
  }
  return g;
}

// ---- Whole network ---------------------------------------------------------

namespace {

void check_input(const ModelParams& params, const radar::NetworkInput& input) {
  if (input.data.channels() != 1) throw ConfigError("network input must have exactly one channel");
  if (input.data.azimuth_len() == 0 || input.data.range_len() == 0) {
    throw ConfigError("network input has a zero-sized axis");
  }
  if (params.convs.empty() || params.convs.front().c_in != 1) {
    throw ConfigError("model parameters do not match a single-channel input");
  }
}

// Runs the convolutional stack, optionally recording layer inputs.
FeatureMap run_stack(const ModelParams& params, FeatureMap x, Trace* trace) {
  const NetConfig& cfg = params.config;
  const AzimuthPadding pad = padding_for(cfg);
  const Window window{cfg.pool_window, cfg.pool_window};
  std::size_t conv = 0;
  for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
    for (std::size_t j = 0; j < cfg.convs_per_stage; ++j, ++conv) {
      if (trace) trace->layers.push_back({Trace::Kind::Conv, conv, x, {}});
      x = numerics::conv2d_cylindrical(x, params.convs[conv], Stride{1, 1}, pad);
      require_finite(x, layer_name(s, "conv", j));
      if (trace) trace->layers.push_back({Trace::Kind::Relu, 0, x, {}});
      x = numerics::relu(x);
    }
    if (window.range > x.range_len() || window.azimuth > x.azimuth_len()) {
      throw ConfigError("input too small: " + layer_name(s, "pool", 0) + " window exceeds feature map");
    }
    if (cfg.variant == Variant::Invariant) {
      auto pooled = numerics::maxpool(x, window, Stride{1, 1}, AzimuthPadding::Circular);
      FeatureMap out = pooled.output;
      if (trace) trace->layers.push_back({Trace::Kind::MaxPool, 0, std::move(x), std::move(pooled)});
      x = std::move(out);
      if (trace) trace->layers.push_back({Trace::Kind::BlurPool, 0, x, {}});
      x = numerics::blurpool(x, cfg.blur_kernel, cfg.blur_sigma, Stride{2, 2});
    } else {
      auto pooled = numerics::maxpool(x, window, Stride{2, 2}, AzimuthPadding::Zero);
      FeatureMap out = pooled.output;
      if (trace) trace->layers.push_back({Trace::Kind::MaxPool, 0, std::move(x), std::move(pooled)});
      x = std::move(out);
    }
    require_finite(x, layer_name(s, "pool", 0));
  }
  return x;
}

EmbeddingVector run_head(const ModelParams& params, FeatureMap features, Trace* trace) {
  if (pools_azimuth(params.config)) {
    auto pooled = numerics::azimuth_maxpool(features);
    FeatureMap out = pooled.output;
    if (trace) {
      trace->layers.push_back({Trace::Kind::AzimuthPool, 0, std::move(features), std::move(pooled)});
    }
    features = std::move(out);
  }
  VladForward vlad = netvlad(features, params.vlad);
  require_finite(vlad.output, "netvlad");
  ProjectForward proj = project(vlad.output, params.projection);
  require_finite(proj.embedding.values, "projection");
  EmbeddingVector e = proj.embedding;
  if (trace) {
    trace->descriptors = std::move(features);
    trace->vlad = std::move(vlad);
    trace->projection = std::move(proj);
  }
  return e;
}

}  // namespace

FeatureMap feature_stack(const ModelParams& params, const FeatureMap& input) {
  return run_stack(params, input, nullptr);
}

EmbeddingVector forward(const ModelParams& params, const radar::NetworkInput& input) {
  check_input(params, input);
  return run_head(params, run_stack(params, input.data, nullptr), nullptr);
}

EmbeddingVector forward_trace(const ModelParams& params, const radar::NetworkInput& input,
                              Trace& trace) {
  check_input(params, input);
  trace = Trace{};
  return run_head(params, run_stack(params, input.data, &trace), &trace);
}

FeatureMap backward_input(const ModelParams& params, const Trace& trace,
                          std::span<const double> grad_embedding, ModelParams& grads) {
  const NetConfig& cfg = params.config;
  const auto pg = project_backward(trace.vlad.output, params.projection, trace.projection, grad_embedding);
  for (std::size_t i = 0; i < pg.matrix.size(); ++i) grads.projection.matrix[i] += pg.matrix[i];

  auto vg = netvlad_backward(trace.descriptors, params.vlad, trace.vlad, pg.descriptor);
  for (std::size_t i = 0; i < vg.params.centres.size(); ++i) {
    grads.vlad.centres[i] += vg.params.centres[i];
    grads.vlad.assign_weights[i] += vg.params.assign_weights[i];
  }
  for (std::size_t k = 0; k < vg.params.assign_bias.size(); ++k) {
    grads.vlad.assign_bias[k] += vg.params.assign_bias[k];
  }

  FeatureMap g = std::move(vg.descriptors);
  const AzimuthPadding pad = padding_for(cfg);
  for (auto it = trace.layers.rbegin(); it != trace.layers.rend(); ++it) {
    switch (it->kind) {
      case Trace::Kind::AzimuthPool:
      case Trace::Kind::MaxPool:
        g = numerics::pool_backward(it->input, it->pool, g);
        break;
      case Trace::Kind::BlurPool:
        g = numerics::blurpool_backward(it->input, cfg.blur_kernel, cfg.blur_sigma, g, Stride{2, 2});
        break;
      case Trace::Kind::Relu:
        g = numerics::relu_backward(it->input, g);
        break;
      case Trace::Kind::Conv: {
        const auto& kernel = params.convs[it->conv_index];
        auto cg = numerics::conv2d_cylindrical_backward(it->input, kernel, g, Stride{1, 1}, pad);
        auto& gk = grads.convs[it->conv_index];
        for (std::size_t i = 0; i < cg.weights.size(); ++i) gk.weights[i] += cg.weights[i];
        for (std::size_t i = 0; i < cg.bias.size(); ++i) gk.bias[i] += cg.bias[i];
        g = std::move(cg.input);
        break;
      }
    }
  }
  return g;
}

void backward(const ModelParams& params, const Trace& trace, std::span<const double> grad_embedding,
              ModelParams& grads) {
  (void)backward_input(params, trace, grad_embedding, grads);
}

// ---- Checkpoint ------------------------------------------------------------

void save_checkpoint(const ModelParams& params, std::ostream& sink) {
  const NetConfig& c = params.config;
  binio::Writer w(sink);
  w.magic("PMDL");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.stage_channels.size()));
  for (std::size_t ch : c.stage_channels) w.put<std::uint64_t>(ch);
  w.put<std::uint64_t>(c.convs_per_stage);
  w.put<std::uint64_t>(c.kernel_size);
  w.put<std::uint64_t>(c.vlad_clusters);
  w.put<std::uint64_t>(c.output_dim);
  w.put<std::uint32_t>(c.variant == Variant::Invariant ? 0 : 1);
  w.put<std::uint32_t>(c.aggregate_before_azimuth_pool ? 1 : 0);
  w.put<std::uint64_t>(c.pool_window);
  w.put<std::uint64_t>(c.blur_kernel);
  w.put<double>(c.blur_sigma);
  for_each_tensor(params, [&](const std::vector<double>& t, bool) {
    w.put<std::uint64_t>(t.size());
    w.put_array(t.data(), t.size());
  });
  w.finish("checkpoint");
}

ModelParams load_checkpoint(std::istream& source) {
  binio::Reader r(source);
  r.expect_magic("PMDL", "checkpoint");
  const std::size_t version_at = r.offset();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  NetConfig c;
  const std::size_t stages_at = r.offset();
  const auto stages = r.get<std::uint32_t>("stage count");
  if (stages == 0 || stages > 16) throw FormatError("implausible stage count", stages_at);
  c.stage_channels.clear();
  for (std::uint32_t s = 0; s < stages; ++s) {
    c.stage_channels.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("stage channels")));
  }
  c.convs_per_stage = r.get<std::uint64_t>("convs per stage");
  c.kernel_size = r.get<std::uint64_t>("kernel size");
  c.vlad_clusters = r.get<std::uint64_t>("vlad clusters");
  c.output_dim = r.get<std::uint64_t>("output dim");
  const std::size_t variant_at = r.offset();
  const auto variant = r.get<std::uint32_t>("variant");
  if (variant > 1) throw FormatError("unknown variant tag", variant_at);
  c.variant = variant == 0 ? Variant::Invariant : Variant::Baseline;
  c.aggregate_before_azimuth_pool = r.get<std::uint32_t>("aggregation flag") != 0;
  c.pool_window = r.get<std::uint64_t>("pool window");
  c.blur_kernel = r.get<std::uint64_t>("blur kernel");
  c.blur_sigma = r.get<double>("blur sigma");
  const std::size_t config_end = r.offset();

  // Cap tensor sizes before allocating.
  for (std::size_t ch : c.stage_channels) {
    if (ch > 4096) throw FormatError("implausible channel count", stages_at);
  }
  if (c.convs_per_stage > 64 || c.kernel_size > 64 || c.vlad_clusters > 4096 || c.output_dim > 65536) {
    throw FormatError("implausible network dimensions", stages_at);
  }
  ModelParams p;
  try {
    p = shaped_params(c);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid checkpoint config: ") + e.what(), config_end);
  }
  for_each_tensor(p, [&](std::vector<double>& t, bool) {
    const std::size_t at = r.offset();
    const auto n = r.get<std::uint64_t>("tensor length");
    if (n != t.size()) {
      throw FormatError("tensor length " + std::to_string(n) + " does not match config (expected " +
                            std::to_string(t.size()) + ")",
                        at);
    }
    r.get_array(t.data(), t.size(), "tensor values");
  });
  return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  save_checkpoint(params, os);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return load_checkpoint(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

}  // namespace polarloc::model
