#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "p4net/errors.hpp"
#include "p4net/features.hpp"
#include "p4net/numerics.hpp"

using p4net::FeatureMap;
using p4net::Image;
using p4net::RandomSource;

namespace {

Image random_image(std::size_t h, std::size_t w, std::size_t c, RandomSource& rng) {
  Image img(h, w, c);
  for (double& p : img.pixels) p = rng.next_double();
  return img;
}

}  // namespace

TEST_CASE("scatter output shapes for the two canonical inputs") {
  RandomSource rng(2, 0);
  const FeatureMap gray = p4net::scatter_transform(random_image(28, 28, 1, rng));
  CHECK(gray.k == 81);
  CHECK(gray.h == 7);
  CHECK(gray.w == 7);

  const FeatureMap rgb = p4net::scatter_transform(random_image(32, 32, 3, rng));
  CHECK(rgb.k == 243);
  CHECK(rgb.h == 8);
  CHECK(rgb.w == 8);
}

TEST_CASE("scatter coefficients are finite and non-negative") {
  RandomSource rng(3, 0);
  const FeatureMap fm = p4net::scatter_transform(random_image(28, 28, 1, rng));
  for (double v : fm.data) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
  }
}

TEST_CASE("scatter is deterministic") {
  RandomSource rng(4, 0);
  const Image img = random_image(28, 28, 1, rng);
  const FeatureMap a = p4net::scatter_transform(img);
  const FeatureMap b = p4net::scatter_transform(img);
  CHECK(a.data == b.data);
}

TEST_CASE("scatter of a constant image concentrates in the lowpass channel") {
  Image img(28, 28, 1);
  for (double& p : img.pixels) p = 0.5;
  const FeatureMap fm = p4net::scatter_transform(img);
  double lowpass = 0.0, rest = 0.0;
  for (std::size_t y = 0; y < fm.h; ++y) {
    for (std::size_t x = 0; x < fm.w; ++x) lowpass += fm.at(0, y, x);
  }
  for (std::size_t c = 1; c < fm.k; ++c) {
    for (std::size_t y = 0; y < fm.h; ++y) {
      for (std::size_t x = 0; x < fm.w; ++x) rest += fm.at(c, y, x);
    }
  }
  CHECK(lowpass > 0.0);
  CHECK(rest < 0.05 * lowpass);
}

TEST_CASE("scatter features shift by whole pool cells under a 4px translation") {
  RandomSource rng(5, 0);
  Image wide(64, 64, 1);
  for (std::size_t y = 20; y < 36; ++y) {
    for (std::size_t x = 20; x < 36; ++x) wide.at(0, y, x) = rng.next_double();
  }
  Image shifted(64, 64, 1);
  for (std::size_t y = 0; y < 60; ++y) {
    for (std::size_t x = 0; x < 60; ++x) shifted.at(0, y + 4, x + 4) = wide.at(0, y, x);
  }
  const FeatureMap a = p4net::scatter_transform(wide);
  const FeatureMap b = p4net::scatter_transform(shifted);
  REQUIRE(a.k == b.k);
  double num = 0.0, den = 0.0;
  for (std::size_t c = 0; c < a.k; ++c) {
    for (std::size_t y = 2; y + 1 < a.h - 2; ++y) {
      for (std::size_t x = 2; x + 1 < a.w - 2; ++x) {
        num += std::abs(b.at(c, y + 1, x + 1) - a.at(c, y, x));
        den += std::abs(a.at(c, y, x));
      }
    }
  }
  REQUIRE(den > 0.0);
  CHECK(num / den < 0.35);
}

TEST_CASE("flatten layout is channel-major") {
  FeatureMap fm(2, 2, 2);
  int v = 0;
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t y = 0; y < 2; ++y) {
      for (std::size_t x = 0; x < 2; ++x) fm.at(c, y, x) = v++;
    }
  }
  const p4net::DenseVector flat = fm.flatten();
  REQUIRE(flat.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(flat[i] == doctest::Approx(double(i)));
}

TEST_CASE("normalizer recovers per-channel mean and std") {
  std::vector<FeatureMap> maps;
  for (double base : {1.0, 3.0}) {
    FeatureMap fm(2, 1, 2);
    fm.at(0, 0, 0) = base;
    fm.at(0, 0, 1) = base + 1.0;
    fm.at(1, 0, 0) = 10.0;
    fm.at(1, 0, 1) = 10.0;
    maps.push_back(fm);
  }
  const p4net::NormStats stats = p4net::fit_normalizer(maps);
  REQUIRE(stats.mean.size() == 2);
  CHECK(stats.mean[0] == doctest::Approx(2.5));
  CHECK(stats.mean[1] == doctest::Approx(10.0));
  CHECK(stats.std_dev[0] == doctest::Approx(std::sqrt(1.25)));
  CHECK(stats.std_dev[1] == doctest::Approx(p4net::kStdFloor));

  const FeatureMap z = p4net::normalize(maps[0], stats);
  CHECK(z.at(0, 0, 0) == doctest::Approx((1.0 - 2.5) / std::sqrt(1.25)));
  CHECK(z.at(1, 0, 0) == doctest::Approx(0.0));
}

TEST_CASE("normalize rejects mismatched channel counts") {
  FeatureMap fm(3, 1, 1);
  p4net::NormStats stats;
  stats.mean = {0.0, 0.0};
  stats.std_dev = {1.0, 1.0};
  CHECK_THROWS_AS(p4net::normalize(fm, stats), p4net::ShapeError);
}

TEST_CASE("fit_normalizer rejects empty and ragged inputs") {
  CHECK_THROWS_AS(p4net::fit_normalizer({}), p4net::ParamError);
  std::vector<FeatureMap> ragged{FeatureMap(2, 1, 1), FeatureMap(3, 1, 1)};
  CHECK_THROWS_AS(p4net::fit_normalizer(ragged), p4net::ShapeError);
}
