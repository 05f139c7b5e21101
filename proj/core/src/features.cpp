#include "p4net/features.hpp"

#include <cmath>
#include <numbers>

namespace p4net {
namespace {

constexpr std::size_t kAngles = 8;  // L
constexpr std::size_t kScales = 2;  // J

// One complex oriented filter stored as two real kernels.
struct ComplexKernel {
  int radius = 0;
  std::vector<double> re;  // (2r+1)^2, row-major
  std::vector<double> im;
};

// Morlet-style wavelet at dyadic scale j and orientation theta: a rotated
// complex exponential under a Gaussian envelope, corrected to zero mean.
ComplexKernel make_morlet(std::size_t j, double theta) {
  const double sigma = 0.8 * static_cast<double>(1u << j);
  const double xi = 3.0 * std::numbers::pi / 4.0 / static_cast<double>(1u << j);
  const int radius = static_cast<int>(std::ceil(3.5 * sigma));
  const int side = 2 * radius + 1;

  std::vector<double> envelope(side * side);
  std::vector<double> cosine(side * side);
  std::vector<double> sine(side * side);
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  double env_sum = 0.0;
  double osc_sum = 0.0;  // sum of envelope * cos (the sine part cancels by symmetry)
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const int idx = (dy + radius) * side + (dx + radius);
      const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      const double u = dx * cos_t + dy * sin_t;
      envelope[idx] = g;
      cosine[idx] = std::cos(xi * u);
      sine[idx] = std::sin(xi * u);
      env_sum += g;
      osc_sum += g * cosine[idx];
    }
  }
  const double beta = osc_sum / env_sum;  // zero-mean correction

  ComplexKernel k;
  k.radius = radius;
  k.re.resize(side * side);
  k.im.resize(side * side);
  const double norm = 1.0 / env_sum;
  for (int i = 0; i < side * side; ++i) {
    k.re[i] = norm * envelope[i] * (cosine[i] - beta);
    k.im[i] = norm * envelope[i] * sine[i];
  }
  return k;
}

const std::vector<ComplexKernel>& filter_bank() {
  static const std::vector<ComplexKernel> bank = [] {
    std::vector<ComplexKernel> filters;
    filters.reserve(kScales * kAngles);
    for (std::size_t j = 0; j < kScales; ++j) {
      for (std::size_t a = 0; a < kAngles; ++a) {
        const double theta = std::numbers::pi * static_cast<double>(a) / kAngles;
        filters.push_back(make_morlet(j, theta));
      }
    }
    return filters;
  }();
  return bank;
}

// Reflect index into [0, n-1] (half-sample symmetric reflection).
inline std::size_t reflect(long i, long n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return static_cast<std::size_t>(i);
}

// Convolve a real plane with a complex kernel, reflection padding, and take
// the complex modulus. Output has the same spatial size as the input.
std::vector<double> conv_modulus(const std::vector<double>& plane, std::size_t h,
                                 std::size_t w, const ComplexKernel& k) {
  std::vector<double> out(h * w);
  const int r = k.radius;
  const int side = 2 * r + 1;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc_re = 0.0;
      double acc_im = 0.0;
      for (int dy = -r; dy <= r; ++dy) {
        const std::size_t sy = reflect(static_cast<long>(y) + dy, static_cast<long>(h));
        const std::size_t row = sy * w;
        const int krow = (dy + r) * side;
        for (int dx = -r; dx <= r; ++dx) {
          const std::size_t sx = reflect(static_cast<long>(x) + dx, static_cast<long>(w));
          const double v = plane[row + sx];
          acc_re += v * k.re[krow + (dx + r)];
          acc_im += v * k.im[krow + (dx + r)];
        }
      }
      out[y * w + x] = std::sqrt(acc_re * acc_re + acc_im * acc_im);
    }
  }
  return out;
}

// 4x4 average pool of stride 4; output dims floor(h/4) x floor(w/4).
void avg_pool4(const std::vector<double>& plane, std::size_t h, std::size_t w,
               double* out) {
  const std::size_t oh = h / 4;
  const std::size_t ow = w / 4;
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double sum = 0.0;
      for (std::size_t dy = 0; dy < 4; ++dy) {
        for (std::size_t dx = 0; dx < 4; ++dx) {
          sum += plane[(4 * y + dy) * w + (4 * x + dx)];
        }
      }
      out[y * ow + x] = sum / 16.0;
    }
  }
}

}  // namespace

FeatureMap scatter_transform(const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw ParamError("scatter_transform: channels must be 1 or 3");
  }
  if (img.height < 4 || img.width < 4) {
    throw ParamError("scatter_transform: image smaller than the pooling window");
  }
  const std::size_t h = img.height;
  const std::size_t w = img.width;
  const std::size_t oh = h / 4;
  const std::size_t ow = w / 4;

  const auto& bank = filter_bank();
  FeatureMap fm(kScatterChannels * img.channels, oh, ow);
  std::size_t out_ch = 0;

  for (std::size_t c = 0; c < img.channels; ++c) {
    const std::vector<double> plane(img.pixels.begin() + c * h * w,
                                    img.pixels.begin() + (c + 1) * h * w);
    // Order 0: pooled input.
    avg_pool4(plane, h, w, &fm.data[out_ch * oh * ow]);
    ++out_ch;

    // Order 1: |x * psi_{j,a}| for all scales and angles.
    std::vector<std::vector<double>> order1;
    order1.reserve(kScales * kAngles);
    for (std::size_t f = 0; f < bank.size(); ++f) {
      order1.push_back(conv_modulus(plane, h, w, bank[f]));
      avg_pool4(order1.back(), h, w, &fm.data[out_ch * oh * ow]);
      ++out_ch;
    }

    // Order 2: only increasing scale paths (j1=0 -> j2=1), all angle pairs.
    for (std::size_t a1 = 0; a1 < kAngles; ++a1) {
      const auto& u1 = order1[a1];  // scale j=0 maps occupy the first kAngles slots
      for (std::size_t a2 = 0; a2 < kAngles; ++a2) {
        const auto u2 = conv_modulus(u1, h, w, bank[kAngles + a2]);
        avg_pool4(u2, h, w, &fm.data[out_ch * oh * ow]);
        ++out_ch;
      }
    }
  }
  return fm;
}

NormStats fit_normalizer(const std::vector<FeatureMap>& features) {
  if (features.empty()) throw ParamError("fit_normalizer: empty feature set");
  const std::size_t k = features[0].k;
  const std::size_t plane = features[0].h * features[0].w;
  for (const auto& fm : features) {
    if (fm.k != k || fm.h * fm.w != plane) {
      throw ShapeError("fit_normalizer: non-uniform feature map shapes");
    }
  }

  NormStats stats;
  stats.mean.assign(k, 0.0);
  stats.std_dev.assign(k, 0.0);
  const double n = static_cast<double>(features.size() * plane);
  for (const auto& fm : features) {
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        stats.mean[c] += fm.data[c * plane + i];
      }
    }
  }
  for (double& m : stats.mean) m /= n;
  for (const auto& fm : features) {
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = fm.data[c * plane + i] - stats.mean[c];
        stats.std_dev[c] += d * d;
      }
    }
  }
  for (double& s : stats.std_dev) {
    s = std::max(std::sqrt(s / n), kStdFloor);
  }
  return stats;
}

FeatureMap normalize(const FeatureMap& fm, const NormStats& stats) {
  if (fm.k != stats.mean.size() || fm.k != stats.std_dev.size()) {
    throw ShapeError("normalize: channel count mismatch");
  }
  FeatureMap out = fm;
  const std::size_t plane = fm.h * fm.w;
  for (std::size_t c = 0; c < fm.k; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      out.data[c * plane + i] = (fm.data[c * plane + i] - stats.mean[c]) / stats.std_dev[c];
    }
  }
  return out;
}

}  // namespace p4net
