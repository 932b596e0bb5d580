#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "ppcreg/errors.hpp"
#include "ppcreg/volume.hpp"

namespace ppcreg {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Mat3 rotation_from_axis_angle(const Vec3& r) { return exp_se3({r, Vec3::Zero()}).rotation(); }

// Half extents of the axis-aligned box enclosing the primitive.
Vec3 half_extent(const Primitive& p, const Mat3& rot) {
  const Mat3 abs_rot = rot.cwiseAbs();
  switch (p.kind) {
    case PrimitiveKind::kSphere:
      return Vec3::Constant(p.size.x());
    case PrimitiveKind::kBox:
      return abs_rot * p.size;
    case PrimitiveKind::kCylinder:
      return abs_rot * Vec3(p.size.x(), p.size.x(), p.size.z());
    case PrimitiveKind::kEllipsoid: {
      Vec3 e;
      for (int i = 0; i < 3; ++i) e[i] = rot.row(i).cwiseProduct(p.size.transpose()).norm();
      return e;
    }
  }
  return Vec3::Zero();
}

bool inside(const Primitive& p, const Vec3& q) {
  switch (p.kind) {
    case PrimitiveKind::kSphere:
      return q.squaredNorm() <= p.size.x() * p.size.x();
    case PrimitiveKind::kBox:
      return (q.cwiseAbs().array() <= p.size.array()).all();
    case PrimitiveKind::kCylinder:
      return q.head<2>().squaredNorm() <= p.size.x() * p.size.x() &&
             std::abs(q.z()) <= p.size.z();
    case PrimitiveKind::kEllipsoid:
      return q.cwiseQuotient(p.size).squaredNorm() <= 1.0;
  }
  return false;
}

void check_size(const Primitive& p) {
  const bool ok = p.kind == PrimitiveKind::kSphere ? p.size.x() > 0.0
                  : p.kind == PrimitiveKind::kCylinder
                      ? p.size.x() > 0.0 && p.size.z() > 0.0
                      : p.size.minCoeff() > 0.0;
  if (!ok || !p.size.allFinite() || !std::isfinite(p.density)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("{} primitive has a non-positive size", to_string(p.kind)));
  }
}

}  // namespace

std::string to_string(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::kSphere: return "sphere";
    case PrimitiveKind::kBox: return "box";
    case PrimitiveKind::kCylinder: return "cylinder";
    case PrimitiveKind::kEllipsoid: return "ellipsoid";
  }
  return "unknown";
}

PrimitiveKind primitive_kind_from_string(const std::string& name) {
  if (name == "sphere") return PrimitiveKind::kSphere;
  if (name == "box") return PrimitiveKind::kBox;
  if (name == "cylinder") return PrimitiveKind::kCylinder;
  if (name == "ellipsoid") return PrimitiveKind::kEllipsoid;
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown primitive kind '{}'", name));
}

Volume make_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  Volume vol(spec.dims, spec.spacing, spec.origin);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const Vec3 lo = vol.bounds_min();
  const Vec3 hi = vol.bounds_max();

  for (const Primitive& base : spec.primitives) {
    check_size(base);
    Primitive p = base;
    // Always draw, so the stream does not depend on which jitters are enabled.
    const Vec3 dc(unit(rng), unit(rng), unit(rng));
    const Vec3 dr(unit(rng), unit(rng), unit(rng));
    p.center += spec.jitter_mm * dc;
    const Mat3 rot = rotation_from_axis_angle(spec.jitter_deg * kDeg * dr) *
                     rotation_from_axis_angle(p.rotation);

    const Vec3 ext = half_extent(p, rot);
    const Vec3 pmin = p.center - ext;
    const Vec3 pmax = p.center + ext;
    if ((pmin.array() < lo.array() - 1e-9).any() || (pmax.array() > hi.array() + 1e-9).any()) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("{} primitive at ({:.3f}, {:.3f}, {:.3f}) extends outside the volume",
                              to_string(p.kind), p.center.x(), p.center.y(), p.center.z()));
    }

    const Vec3 imin = vol.to_index(pmin);
    const Vec3 imax = vol.to_index(pmax);
    const Mat3 rot_t = rot.transpose();
    for (int k = std::max(0, static_cast<int>(std::floor(imin.z())));
         k <= std::min(spec.dims[2] - 1, static_cast<int>(std::ceil(imax.z()))); ++k) {
      for (int j = std::max(0, static_cast<int>(std::floor(imin.y())));
           j <= std::min(spec.dims[1] - 1, static_cast<int>(std::ceil(imax.y()))); ++j) {
        for (int i = std::max(0, static_cast<int>(std::floor(imin.x())));
             i <= std::min(spec.dims[0] - 1, static_cast<int>(std::ceil(imax.x()))); ++i) {
          if (inside(p, rot_t * (vol.voxel_center(i, j, k) - p.center))) {
            vol.at(i, j, k) += static_cast<float>(p.density);
          }
        }
      }
    }
  }
  return vol;
}

PhantomSpec phantom_preset(const std::string& name) {
  PhantomSpec spec;
  auto centered = [&spec](const Vec3& offset) -> Vec3 {
    const Vec3 c = 0.5 * Vec3(spec.dims[0] - 1, spec.dims[1] - 1, spec.dims[2] - 1)
                             .cwiseProduct(spec.spacing);
    return spec.origin + c + offset;
  };
  if (name == "sphere") {
    spec.primitives.push_back(
        {PrimitiveKind::kSphere, centered(Vec3::Zero()), Vec3::Zero(), Vec3(30, 0, 0), 1.0});
  } else if (name == "nested-spheres") {
    spec.primitives.push_back(
        {PrimitiveKind::kSphere, centered(Vec3::Zero()), Vec3::Zero(), Vec3(30, 0, 0), 1.0});
    spec.primitives.push_back(
        {PrimitiveKind::kSphere, centered(Vec3::Zero()), Vec3::Zero(), Vec3(15, 0, 0), 2.0});
  } else if (name == "sphere-pair") {
    spec.primitives.push_back(
        {PrimitiveKind::kSphere, centered({-11, -5, 3}), Vec3::Zero(), Vec3(13, 0, 0), 1.0});
    spec.primitives.push_back(
        {PrimitiveKind::kSphere, centered({13, 7, -4}), Vec3::Zero(), Vec3(9, 0, 0), 1.5});
  } else if (name == "vertebra") {
    // x: left-right, y: anterior(-) to posterior(+), z: cranio-caudal.
    spec.dims = {128, 128, 128};
    spec.jitter_mm = 1.0;
    spec.jitter_deg = 2.0;
    spec.primitives.push_back(
        {PrimitiveKind::kBox, centered({0, -4, 0}), Vec3::Zero(), Vec3(30, 26, 24), 1.0});
    spec.primitives.push_back(
        {PrimitiveKind::kCylinder, centered({0, 10, 0}), Vec3::Zero(), Vec3(8, 8, 20), -0.8});
    spec.primitives.push_back({PrimitiveKind::kEllipsoid, centered({-36, 14, 3}),
                               Vec3(0, 0, 12 * kDeg), Vec3(13, 5, 6), 1.2});
    spec.primitives.push_back({PrimitiveKind::kEllipsoid, centered({35, 15, -4}),
                               Vec3(0, 0, -10 * kDeg), Vec3(12, 5.5, 6.5), 1.2});
  } else {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown phantom preset '{}'", name));
  }
  return spec;
}

std::vector<std::string> phantom_preset_names() {
  return {"sphere", "sphere-pair", "nested-spheres", "vertebra"};
}

}  // namespace ppcreg
