#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "robustlens/model.hpp"
#include "robustlens/rng.hpp"

namespace rl_test {

template <class T>
robustlens::Tensor<T> random_tensor(robustlens::Shape shape, robustlens::Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
  robustlens::Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("robustlens_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace rl_test
