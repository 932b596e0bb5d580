#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <doctest.h>

#include "ppcreg/errors.hpp"
#include "ppcreg/geometry.hpp"

namespace testing {

using namespace ppcreg;

/// Runs `expr`, requires a ppcreg::Error with the given code.
#define CHECK_ERROR_CODE(expr, expected_code)                      \
  do {                                                             \
    bool thrown_ = false;                                          \
    try {                                                          \
      (void)(expr);                                                \
    } catch (const ::ppcreg::Error& e_) {                          \
      thrown_ = true;                                              \
      CHECK_MESSAGE(e_.code() == (expected_code), e_.what());      \
    }                                                              \
    CHECK_MESSAGE(thrown_, "expected ppcreg::Error from " #expr); \
  } while (false)

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

/// Rotation built independently of exp_se3: Eigen's angle-axis.
inline Mat3 random_rotation(std::mt19937_64& rng, double max_angle = 3.0) {
  std::uniform_real_distribution<double> angle(0.0, max_angle);
  return Eigen::AngleAxisd(angle(rng), random_unit(rng)).toRotationMatrix();
}

inline RigidTransform random_transform(std::mt19937_64& rng, double max_t = 100.0) {
  std::uniform_real_distribution<double> u(-max_t, max_t);
  return RigidTransform(random_rotation(rng), Vec3(u(rng), u(rng), u(rng)));
}

inline double max_abs_diff(const Mat3& a, const Mat3& b) { return (a - b).cwiseAbs().maxCoeff(); }

/// Fresh scratch directory under the build tree's temp location.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ppcreg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
