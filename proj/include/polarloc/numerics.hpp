#pragma once

// Forward and backward passes for the layer types used by the embedding
// network. Every strided op places output o at input centre o * stride, so a
// cyclic azimuth roll of the input by stride * m rolls the output by m with
// identical per-position arithmetic.

#include <cstddef>
#include <span>
#include <vector>

#include "polarloc/feature_map.hpp"

namespace polarloc::numerics {

struct Stride {
  std::size_t azimuth = 1;
  std::size_t range = 1;
};

struct Window {
  std::size_t azimuth = 1;
  std::size_t range = 1;
};

enum class AzimuthPadding { Circular, Zero };

/// Convolution filter bank. Weights are laid out (k_a, k_r, c_in, c_out) with
/// c_out fastest. Window sizes must be odd.
struct ConvKernel {
  std::size_t k_a = 1;
  std::size_t k_r = 1;
  std::size_t c_in = 1;
  std::size_t c_out = 1;
  std::vector<double> weights;
  std::vector<double> bias;

  ConvKernel() = default;
  ConvKernel(std::size_t k_a, std::size_t k_r, std::size_t c_in, std::size_t c_out);

  std::size_t offset(std::size_t ia, std::size_t ir, std::size_t ci, std::size_t co) const noexcept {
    return ((ia * k_r + ir) * c_in + ci) * c_out + co;
  }
  double& w(std::size_t ia, std::size_t ir, std::size_t ci, std::size_t co) noexcept {
    return weights[offset(ia, ir, ci, co)];
  }
  double w(std::size_t ia, std::size_t ir, std::size_t ci, std::size_t co) const noexcept {
    return weights[offset(ia, ir, ci, co)];
  }

  bool operator==(const ConvKernel&) const = default;
};

struct ConvGrads {
  FeatureMap input;
  std::vector<double> weights;
  std::vector<double> bias;
};

/// Range is zero padded by half a window. Azimuth wraps when `padding` is
/// Circular and is zero padded otherwise.
FeatureMap conv2d_cylindrical(const FeatureMap& input, const ConvKernel& kernel, Stride stride = {},
                              AzimuthPadding padding = AzimuthPadding::Circular);

ConvGrads conv2d_cylindrical_backward(const FeatureMap& input, const ConvKernel& kernel,
                                      const FeatureMap& grad_output, Stride stride = {},
                                      AzimuthPadding padding = AzimuthPadding::Circular);

/// Output of a max reduction plus, for every output element, the flat index
/// of the input element that produced it (first maximum in scan order).
struct PoolResult {
  FeatureMap output;
  std::vector<std::size_t> argmax;
};

/// Max-pool whose window for output o covers input positions
/// [o * stride, o * stride + window - 1]. Range positions past the edge are
/// dropped; azimuth positions wrap (Circular) or are dropped (Zero).
PoolResult maxpool(const FeatureMap& input, Window window, Stride stride, AzimuthPadding padding);

/// Stride-1 circular max-pool; keeps the input dimensions.
PoolResult maxpool_cylindrical(const FeatureMap& input, Window window);

/// Scatters `grad_output` back onto the argmax positions.
FeatureMap pool_backward(const FeatureMap& input, const PoolResult& forward,
                         const FeatureMap& grad_output);

/// Normalised discrete Gaussian taps sampled at -(size/2) ... size/2.
std::vector<double> gaussian_taps(std::size_t size, double sigma);

/// Separable Gaussian blur, circular along azimuth and zero padded along
/// range, evaluated only at the subsampled positions.
FeatureMap blurpool(const FeatureMap& input, std::size_t kernel_size, double sigma,
                    Stride stride = {2, 2});

FeatureMap blurpool_backward(const FeatureMap& input, std::size_t kernel_size, double sigma,
                             const FeatureMap& grad_output, Stride stride = {2, 2});

FeatureMap relu(const FeatureMap& input);
FeatureMap relu_backward(const FeatureMap& input, const FeatureMap& grad_output);

/// Max over the whole azimuth axis; the result has azimuth_len 1.
PoolResult azimuth_maxpool(const FeatureMap& input);

inline constexpr double kNormEpsilon = 1e-12;

/// Throws DegenerateVectorError when the norm is <= kNormEpsilon.
std::vector<double> l2_normalize(std::span<const double> v);

/// Gradient of l2_normalize with respect to its input.
std::vector<double> l2_normalize_backward(std::span<const double> v,
                                          std::span<const double> grad_output);

double l2_norm(std::span<const double> v) noexcept;

}  // namespace polarloc::numerics
