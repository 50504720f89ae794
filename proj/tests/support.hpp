#pragma once

#include "mmreg/descriptors.hpp"
#include "mmreg/image.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

namespace testing {

inline mmreg::Image random_image(int w, int h, std::uint64_t seed, double lo = 0.0,
                                 double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  mmreg::Image img(w, h);
  for (double &v : img.pixels())
    v = u(rng);
  return img;
}

// Smooth random texture: sum of a few random sinusoids, in [0,1].
inline mmreg::Image texture(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double fx[6], fy[6], ph[6];
  for (int k = 0; k < 6; ++k) {
    fx[k] = 0.05 + 0.25 * u(rng);
    fy[k] = 0.05 + 0.25 * u(rng);
    ph[k] = 6.283185307179586 * u(rng);
  }
  mmreg::Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = 0; k < 6; ++k)
        s += std::sin(fx[k] * x + fy[k] * y * (k % 2 ? -1 : 1) + ph[k]);
      img.at(x, y) = 0.5 + s / 12.0;
    }
  return img;
}

inline double max_abs_diff(const mmreg::FeatureVolume &a, const mmreg::FeatureVolume &b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline std::filesystem::path temp_dir(const std::string &name) {
  auto p = std::filesystem::temp_directory_path() / ("mmreg_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

} // namespace testing
