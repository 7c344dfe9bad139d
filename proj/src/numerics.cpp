#include "polarloc/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "polarloc/error.hpp"

namespace polarloc {

FeatureMap roll_azimuth(const FeatureMap& map, std::ptrdiff_t shift) {
  FeatureMap out(map.azimuth_len(), map.range_len(), map.channels());
  if (map.empty()) return out;
  const std::size_t row = map.range_len() * map.channels();
  for (std::size_t a = 0; a < map.azimuth_len(); ++a) {
    const std::size_t src = wrap_index(static_cast<std::ptrdiff_t>(a) - shift, map.azimuth_len());
    std::copy_n(map.data() + src * row, row, out.data() + a * row);
  }
  return out;
}

bool all_finite(const FeatureMap& map) noexcept {
  return std::all_of(map.values().begin(), map.values().end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace polarloc

namespace polarloc::numerics {

namespace {

void require_nonempty(const FeatureMap& m, const char* op) {
  if (m.azimuth_len() == 0 || m.range_len() == 0 || m.channels() == 0) {
    throw ConfigError(std::string(op) + ": zero-sized axis");
  }
}

void require_stride(Stride s, const char* op) {
  if (s.azimuth == 0 || s.range == 0) throw ConfigError(std::string(op) + ": zero stride");
}

// Maps a padded azimuth coordinate onto the input, or returns false when it
// falls into zero padding.
inline bool resolve_azimuth(std::ptrdiff_t a, std::size_t len, AzimuthPadding padding,
                            std::size_t& out) noexcept {
  if (padding == AzimuthPadding::Circular) {
    out = wrap_index(a, len);
    return true;
  }
  if (a < 0 || a >= static_cast<std::ptrdiff_t>(len)) return false;
  out = static_cast<std::size_t>(a);
  return true;
}

inline bool resolve_range(std::ptrdiff_t r, std::size_t len, std::size_t& out) noexcept {
  if (r < 0 || r >= static_cast<std::ptrdiff_t>(len)) return false;
  out = static_cast<std::size_t>(r);
  return true;
}

}  // namespace

ConvKernel::ConvKernel(std::size_t k_a_, std::size_t k_r_, std::size_t c_in_, std::size_t c_out_)
    : k_a(k_a_),
      k_r(k_r_),
      c_in(c_in_),
      c_out(c_out_),
      weights(k_a_ * k_r_ * c_in_ * c_out_, 0.0),
      bias(c_out_, 0.0) {
  if (k_a % 2 == 0 || k_r % 2 == 0) throw ConfigError("conv kernel windows must be odd");
  if (c_in == 0 || c_out == 0) throw ConfigError("conv kernel needs at least one channel");
}

FeatureMap conv2d_cylindrical(const FeatureMap& input, const ConvKernel& kernel, Stride stride,
                              AzimuthPadding padding) {
  require_nonempty(input, "conv2d");
  require_stride(stride, "conv2d");
  if (input.channels() != kernel.c_in) {
    throw ConfigError("conv2d: input has " + std::to_string(input.channels()) +
                      " channels, kernel expects " + std::to_string(kernel.c_in));
  }
  if (kernel.weights.size() != kernel.k_a * kernel.k_r * kernel.c_in * kernel.c_out ||
      kernel.bias.size() != kernel.c_out) {
    throw ConfigError("conv2d: kernel storage does not match its shape");
  }
  const std::size_t out_a = ceil_div(input.azimuth_len(), stride.azimuth);
  const std::size_t out_r = ceil_div(input.range_len(), stride.range);
  const auto half_a = static_cast<std::ptrdiff_t>(kernel.k_a / 2);
  const auto half_r = static_cast<std::ptrdiff_t>(kernel.k_r / 2);
  const std::size_t c_in = kernel.c_in;
  const std::size_t c_out = kernel.c_out;

  FeatureMap out(out_a, out_r, c_out);
  for (std::size_t oa = 0; oa < out_a; ++oa) {
    const auto ca = static_cast<std::ptrdiff_t>(oa * stride.azimuth);
    for (std::size_t orr = 0; orr < out_r; ++orr) {
      const auto cr = static_cast<std::ptrdiff_t>(orr * stride.range);
      double* acc = &out(oa, orr, 0);
      std::copy(kernel.bias.begin(), kernel.bias.end(), acc);
      for (std::size_t ia = 0; ia < kernel.k_a; ++ia) {
        std::size_t a_in;
        if (!resolve_azimuth(ca + static_cast<std::ptrdiff_t>(ia) - half_a, input.azimuth_len(),
                             padding, a_in)) {
          continue;
        }
        for (std::size_t ir = 0; ir < kernel.k_r; ++ir) {
          std::size_t r_in;
          if (!resolve_range(cr + static_cast<std::ptrdiff_t>(ir) - half_r, input.range_len(), r_in)) {
            continue;
          }
          const double* x = &input(a_in, r_in, 0);
          const double* wrow = &kernel.weights[kernel.offset(ia, ir, 0, 0)];
          for (std::size_t ci = 0; ci < c_in; ++ci) {
            const double xv = x[ci];
            const double* wv = wrow + ci * c_out;
            for (std::size_t co = 0; co < c_out; ++co) acc[co] += xv * wv[co];
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_cylindrical_backward(const FeatureMap& input, const ConvKernel& kernel,
                                      const FeatureMap& grad_output, Stride stride,
                                      AzimuthPadding padding) {
  require_nonempty(input, "conv2d_backward");
  require_stride(stride, "conv2d_backward");
  const std::size_t out_a = ceil_div(input.azimuth_len(), stride.azimuth);
  const std::size_t out_r = ceil_div(input.range_len(), stride.range);
  if (grad_output.azimuth_len() != out_a || grad_output.range_len() != out_r ||
      grad_output.channels() != kernel.c_out || input.channels() != kernel.c_in) {
    throw ConfigError("conv2d_backward: gradient shape mismatch");
  }
  const auto half_a = static_cast<std::ptrdiff_t>(kernel.k_a / 2);
  const auto half_r = static_cast<std::ptrdiff_t>(kernel.k_r / 2);
  const std::size_t c_in = kernel.c_in;
  const std::size_t c_out = kernel.c_out;

  ConvGrads g{FeatureMap(input.azimuth_len(), input.range_len(), c_in),
              std::vector<double>(kernel.weights.size(), 0.0), std::vector<double>(c_out, 0.0)};
  for (std::size_t oa = 0; oa < out_a; ++oa) {
    const auto ca = static_cast<std::ptrdiff_t>(oa * stride.azimuth);
    for (std::size_t orr = 0; orr < out_r; ++orr) {
      const auto cr = static_cast<std::ptrdiff_t>(orr * stride.range);
      const double* go = &grad_output(oa, orr, 0);
      for (std::size_t co = 0; co < c_out; ++co) g.bias[co] += go[co];
      for (std::size_t ia = 0; ia < kernel.k_a; ++ia) {
        std::size_t a_in;
        if (!resolve_azimuth(ca + static_cast<std::ptrdiff_t>(ia) - half_a, input.azimuth_len(),
                             padding, a_in)) {
          continue;
        }
        for (std::size_t ir = 0; ir < kernel.k_r; ++ir) {
          std::size_t r_in;
          if (!resolve_range(cr + static_cast<std::ptrdiff_t>(ir) - half_r, input.range_len(), r_in)) {
            continue;
          }
          const double* x = &input(a_in, r_in, 0);
          double* gx = &g.input(a_in, r_in, 0);
          const std::size_t base = kernel.offset(ia, ir, 0, 0);
          for (std::size_t ci = 0; ci < c_in; ++ci) {
            const double xv = x[ci];
            const double* wv = &kernel.weights[base + ci * c_out];
            double* gw = &g.weights[base + ci * c_out];
            double sum = 0.0;
            for (std::size_t co = 0; co < c_out; ++co) {
              gw[co] += xv * go[co];
              sum += wv[co] * go[co];
            }
            gx[ci] += sum;
          }
        }
      }
    }
  }
  return g;
}

PoolResult maxpool(const FeatureMap& input, Window window, Stride stride, AzimuthPadding padding) {
  require_nonempty(input, "maxpool");
  require_stride(stride, "maxpool");
  if (window.azimuth == 0 || window.range == 0) throw ConfigError("maxpool: empty window");
  if (window.range > input.range_len()) throw ConfigError("maxpool: window larger than range axis");
  if (window.azimuth > input.azimuth_len()) {
    throw ConfigError("maxpool: window larger than azimuth axis");
  }
  const std::size_t out_a = ceil_div(input.azimuth_len(), stride.azimuth);
  const std::size_t out_r = ceil_div(input.range_len(), stride.range);
  const std::size_t channels = input.channels();
  PoolResult res{FeatureMap(out_a, out_r, channels), std::vector<std::size_t>(out_a * out_r * channels)};

  for (std::size_t oa = 0; oa < out_a; ++oa) {
    for (std::size_t orr = 0; orr < out_r; ++orr) {
      for (std::size_t c = 0; c < channels; ++c) {
        bool have = false;
        double best = 0.0;
        std::size_t best_idx = 0;
        for (std::size_t ja = 0; ja < window.azimuth; ++ja) {
          std::size_t a_in;
          if (!resolve_azimuth(static_cast<std::ptrdiff_t>(oa * stride.azimuth + ja),
                               input.azimuth_len(), padding, a_in)) {
            continue;
          }
          for (std::size_t jr = 0; jr < window.range; ++jr) {
            const std::size_t r_in = orr * stride.range + jr;
            if (r_in >= input.range_len()) break;
            const std::size_t idx = input.offset(a_in, r_in, c);
            const double v = input.values()[idx];
            if (!have || v > best) {
              best = v;
              best_idx = idx;
              have = true;
            }
          }
        }
        const std::size_t o = res.output.offset(oa, orr, c);
        res.output.values()[o] = best;
        res.argmax[o] = best_idx;
      }
    }
  }
  return res;
}

PoolResult maxpool_cylindrical(const FeatureMap& input, Window window) {
  return maxpool(input, window, Stride{1, 1}, AzimuthPadding::Circular);
}

FeatureMap pool_backward(const FeatureMap& input, const PoolResult& forward,
                         const FeatureMap& grad_output) {
  if (!grad_output.same_shape(forward.output)) {
    throw ConfigError("pool_backward: gradient shape mismatch");
  }
  FeatureMap g(input.azimuth_len(), input.range_len(), input.channels());
  auto gv = g.values();
  auto go = grad_output.values();
  for (std::size_t i = 0; i < go.size(); ++i) gv[forward.argmax[i]] += go[i];
  return g;
}

std::vector<double> gaussian_taps(std::size_t size, double sigma) {
  if (size % 2 == 0) throw ConfigError("gaussian kernel size must be odd");
  if (!(sigma > 0.0)) throw ConfigError("gaussian sigma must be positive");
  const auto half = static_cast<std::ptrdiff_t>(size / 2);
  std::vector<double> taps(size);
  double total = 0.0;
  for (std::ptrdiff_t i = -half; i <= half; ++i) {
    const double x = static_cast<double>(i);
    const double v = std::exp(-x * x / (2.0 * sigma * sigma));
    taps[static_cast<std::size_t>(i + half)] = v;
    total += v;
  }
  for (double& t : taps) t /= total;
  // Mirror so the taps are exactly symmetric regardless of summation order.
  for (std::size_t i = 0; i < size / 2; ++i) taps[size - 1 - i] = taps[i];
  return taps;
}

FeatureMap blurpool(const FeatureMap& input, std::size_t kernel_size, double sigma, Stride stride) {
  require_nonempty(input, "blurpool");
  require_stride(stride, "blurpool");
  const auto taps = gaussian_taps(kernel_size, sigma);
  const auto half = static_cast<std::ptrdiff_t>(kernel_size / 2);
  const std::size_t A = input.azimuth_len();
  const std::size_t R = input.range_len();
  const std::size_t C = input.channels();
  const std::size_t out_a = ceil_div(A, stride.azimuth);
  const std::size_t out_r = ceil_div(R, stride.range);

  // Azimuth pass at the subsampled rows only.
  FeatureMap rows(out_a, R, C);
  for (std::size_t oa = 0; oa < out_a; ++oa) {
    for (std::size_t t = 0; t < kernel_size; ++t) {
      const std::size_t a_in = wrap_index(
          static_cast<std::ptrdiff_t>(oa * stride.azimuth) + static_cast<std::ptrdiff_t>(t) - half, A);
      const double g = taps[t];
      const double* src = &input(a_in, 0, 0);
      double* dst = &rows(oa, 0, 0);
      for (std::size_t i = 0; i < R * C; ++i) dst[i] += g * src[i];
    }
  }
  FeatureMap out(out_a, out_r, C);
  for (std::size_t oa = 0; oa < out_a; ++oa) {
    for (std::size_t orr = 0; orr < out_r; ++orr) {
      double* dst = &out(oa, orr, 0);
      for (std::size_t t = 0; t < kernel_size; ++t) {
        std::size_t r_in;
        if (!resolve_range(static_cast<std::ptrdiff_t>(orr * stride.range) +
                               static_cast<std::ptrdiff_t>(t) - half,
                           R, r_in)) {
          continue;
        }
        const double g = taps[t];
        const double* src = &rows(oa, r_in, 0);
        for (std::size_t c = 0; c < C; ++c) dst[c] += g * src[c];
      }
    }
  }
  return out;
}

FeatureMap blurpool_backward(const FeatureMap& input, std::size_t kernel_size, double sigma,
                             const FeatureMap& grad_output, Stride stride) {
  require_nonempty(input, "blurpool_backward");
  const auto taps = gaussian_taps(kernel_size, sigma);
  const auto half = static_cast<std::ptrdiff_t>(kernel_size / 2);
  const std::size_t A = input.azimuth_len();
  const std::size_t R = input.range_len();
  const std::size_t C = input.channels();
  const std::size_t out_a = ceil_div(A, stride.azimuth);
  const std::size_t out_r = ceil_div(R, stride.range);
  if (grad_output.azimuth_len() != out_a || grad_output.range_len() != out_r ||
      grad_output.channels() != C) {
    throw ConfigError("blurpool_backward: gradient shape mismatch");
  }

  FeatureMap grad_rows(out_a, R, C);
  for (std::size_t oa = 0; oa < out_a; ++oa) {
    for (std::size_t orr = 0; orr < out_r; ++orr) {
      const double* go = &grad_output(oa, orr, 0);
      for (std::size_t t = 0; t < kernel_size; ++t) {
        std::size_t r_in;
        if (!resolve_range(static_cast<std::ptrdiff_t>(orr * stride.range) +
                               static_cast<std::ptrdiff_t>(t) - half,
                           R, r_in)) {
          continue;
        }
        double* dst = &grad_rows(oa, r_in, 0);
        for (std::size_t c = 0; c < C; ++c) dst[c] += taps[t] * go[c];
      }
    }
  }
  FeatureMap g(A, R, C);
  for (std::size_t oa = 0; oa < out_a; ++oa) {
    for (std::size_t t = 0; t < kernel_size; ++t) {
      const std::size_t a_in = wrap_index(
          static_cast<std::ptrdiff_t>(oa * stride.azimuth) + static_cast<std::ptrdiff_t>(t) - half, A);
      const double* src = &grad_rows(oa, 0, 0);
      double* dst = &g(a_in, 0, 0);
      for (std::size_t i = 0; i < R * C; ++i) dst[i] += taps[t] * src[i];
    }
  }
  return g;
}

FeatureMap relu(const FeatureMap& input) {
  FeatureMap out = input;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

FeatureMap relu_backward(const FeatureMap& input, const FeatureMap& grad_output) {
  if (!input.same_shape(grad_output)) throw ConfigError("relu_backward: gradient shape mismatch");
  FeatureMap g = grad_output;
  auto x = input.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < gv.size(); ++i) {
    if (!(x[i] > 0.0)) gv[i] = 0.0;
  }
  return g;
}

PoolResult azimuth_maxpool(const FeatureMap& input) {
  require_nonempty(input, "azimuth_maxpool");
  const std::size_t R = input.range_len();
  const std::size_t C = input.channels();
  PoolResult res{FeatureMap(1, R, C), std::vector<std::size_t>(R * C)};
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      std::size_t best_idx = input.offset(0, r, c);
      double best = input.values()[best_idx];
      for (std::size_t a = 1; a < input.azimuth_len(); ++a) {
        const std::size_t idx = input.offset(a, r, c);
        if (input.values()[idx] > best) {
          best = input.values()[idx];
          best_idx = idx;
        }
      }
      res.output(0, r, c) = best;
      res.argmax[res.output.offset(0, r, c)] = best_idx;
    }
  }
  return res;
}

double l2_norm(std::span<const double> v) noexcept {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > kNormEpsilon)) throw DegenerateVectorError("l2_normalize: vector norm is ~0");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

std::vector<double> l2_normalize_backward(std::span<const double> v,
                                          std::span<const double> grad_output) {
  const double n = l2_norm(v);
  if (!(n > kNormEpsilon)) throw DegenerateVectorError("l2_normalize_backward: vector norm is ~0");
  double dot = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * grad_output[i];
  std::vector<double> g(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double u = v[i] / n;
    g[i] = (grad_output[i] - u * dot / n) / n;
  }
  return g;
}

}  // namespace polarloc::numerics
