#pragma once

#include <cstddef>
#include <vector>

#include "p4net/errors.hpp"
#include "p4net/numerics.hpp"

namespace p4net {

/// Raw image, channel-planar layout: pixels[c*h*w + y*w + x], values in [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;  // 1 (grayscale) or 3 (RGB)
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c)
      : height(h), width(w), channels(c), pixels(h * w * c, 0.0) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return pixels[(c * height + y) * width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
};

/// Stack of k spatial coefficient maps, channel-planar like Image.
/// For an H x W input the spatial dims are (H/4, W/4) and k is 81 per
/// input channel (1 order-0 + 16 order-1 + 64 order-2 maps).
struct FeatureMap {
  std::size_t k = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(std::size_t k_, std::size_t h_, std::size_t w_)
      : k(k_), h(h_), w(w_), data(k_ * h_ * w_, 0.0) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * h + y) * w + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * h + y) * w + x];
  }

  /// Flattened copy, channel-major. This is the model input layout.
  DenseVector flatten() const { return DenseVector(data); }
};

/// Per-channel normalization statistics over a client's local feature maps.
/// Standard deviations are floored at 1e-6 so dead channels stay usable.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std_dev;
};

inline constexpr double kStdFloor = 1e-6;

/// Number of scattering output channels per input channel
/// (depth 2, L = 8 angles, J = 2 scales: 1 + J*L + L^2*J*(J-1)/2 = 81).
inline constexpr std::size_t kScatterChannels = 81;

/// Depth-two scattering transform: Morlet-style oriented filters at 8 angles
/// and 2 dyadic scales, complex modulus between orders, final 4x4 average
/// pool of stride 4. Deterministic, all outputs finite and >= 0.
FeatureMap scatter_transform(const Image& img);

/// Per-channel mean/std over a set of uniformly shaped feature maps.
/// Population statistics; std floored at kStdFloor.
NormStats fit_normalizer(const std::vector<FeatureMap>& features);

/// Per-channel (x - mean) / std.
FeatureMap normalize(const FeatureMap& fm, const NormStats& stats);

}  // namespace p4net
