#ifndef STEGSENSE_TEST_HELPERS_HPP_
#define STEGSENSE_TEST_HELPERS_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stegsense/rng.hpp"
#include "stegsense/tensor.hpp"

namespace testing {

inline stegsense::Tensor random_tensor(const stegsense::Shape& shape, std::uint64_t seed, double lo = -1.0,
                                       double hi = 1.0, bool grad = false) {
  stegsense::Rng rng(seed);
  std::vector<double> v(stegsense::shape_numel(shape));
  for (double& e : v) e = rng.uniform(lo, hi);
  return stegsense::Tensor::from(shape, std::move(v), grad);
}

inline std::vector<double> values(const stegsense::Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Fresh empty directory under the system temp dir.
inline std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("stegsense_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace testing

#endif  // STEGSENSE_TEST_HELPERS_HPP_
