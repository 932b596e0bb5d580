#include "ppcreg/geometry.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "ppcreg/errors.hpp"

namespace ppcreg {

namespace {

Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) {
    u.col(2) *= -1.0;
  }
  return u * v.transpose();
}

}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<  0.0,   -v.z(),  v.y(),
        v.z(),  0.0,   -v.x(),
       -v.y(),  v.x(),  0.0;
  // clang-format on
  return s;
}

bool is_valid_rotation(const Mat3& r, double tol) {
  if (!r.allFinite()) return false;
  const Mat3 gram = r.transpose() * r;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(r.determinant() - 1.0) <= tol;
}

RigidTransform::RigidTransform()
    : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  if (!is_valid_rotation(rotation_)) {
    throw Error(ErrorCode::kInvalidArgument,
                "rotation matrix is not orthonormal with determinant +1");
  }
  if (!translation_.allFinite()) {
    throw Error(ErrorCode::kInvalidArgument, "translation is not finite");
  }
}

RigidTransform RigidTransform::translation_only(const Vec3& t) {
  return RigidTransform(Mat3::Identity(), t);
}

RigidTransform RigidTransform::inverse() const {
  const Mat3 rt = rotation_.transpose();
  return RigidTransform(rt, -(rt * translation_));
}

Vec3 apply(const RigidTransform& transform, const Vec3& x) { return transform(x); }

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  Mat3 r = a.rotation() * b.rotation();
  const Vec3 t = a.rotation() * b.translation() + a.translation();
  const double drift =
      (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (drift > 1e-12) {
    r = nearest_rotation(r);
  }
  return RigidTransform(r, t);
}

RigidTransform invert(const RigidTransform& transform) { return transform.inverse(); }

MotionVector MotionVector::from_vector(const Vec6& v) {
  return MotionVector{v.head<3>(), v.tail<3>()};
}

Vec6 MotionVector::as_vector() const {
  Vec6 v;
  v << omega, t;
  return v;
}

bool MotionVector::is_finite() const { return omega.allFinite() && t.allFinite(); }

Mat3 left_jacobian(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const Mat3 k = skew(omega);
  double a, b;
  if (theta2 < 1e-8) {
    // Taylor series; the closed form cancels catastrophically near zero.
    a = 0.5 - theta2 / 24.0;
    b = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = (1.0 - std::cos(theta)) / theta2;
    b = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() + a * k + b * k * k;
}

RigidTransform exp_se3(const MotionVector& dv) {
  if (!dv.is_finite()) {
    throw Error(ErrorCode::kInvalidArgument, "motion vector has non-finite entries");
  }
  const double theta2 = dv.omega.squaredNorm();
  const Mat3 k = skew(dv.omega);
  double sinc, cosc;
  if (theta2 < 1e-8) {
    sinc = 1.0 - theta2 / 6.0;
    cosc = 0.5 - theta2 / 24.0;
  } else {
    const double theta = std::sqrt(theta2);
    sinc = std::sin(theta) / theta;
    cosc = (1.0 - std::cos(theta)) / theta2;
  }
  const Mat3 r = Mat3::Identity() + sinc * k + cosc * k * k;
  return RigidTransform(r, left_jacobian(dv.omega) * dv.t);
}

MotionVector log_se3(const RigidTransform& transform) {
  const Eigen::AngleAxisd aa(transform.rotation());
  MotionVector dv;
  dv.omega = aa.angle() * aa.axis();
  dv.t = left_jacobian(dv.omega).inverse() * transform.translation();
  return dv;
}

void ProjectionGeometry::validate() const {
  if (!(sdd > 0.0) || width <= 0 || height <= 0 || !(pixel_spacing.x() > 0.0) ||
      !(pixel_spacing.y() > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                "projection geometry needs sdd, detector size and pixel spacing > 0");
  }
  if (principal_point.x() < 0.0 || principal_point.x() > width ||
      principal_point.y() < 0.0 || principal_point.y() > height) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("principal point ({}, {}) lies outside the {}x{} detector",
                            principal_point.x(), principal_point.y(), width, height));
  }
}

bool ProjectionGeometry::contains(const Vec2& p) const {
  return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= width - 1.0 &&
         p.y() <= height - 1.0;
}

Vec2 project(const ProjectionGeometry& geom, const Vec3& x_cam) {
  if (!(x_cam.z() > kMinDepthMm)) {
    throw Error(ErrorCode::kPointBehindSource,
                fmt::format("point at depth {} mm is not in front of the source", x_cam.z()));
  }
  const double scale = geom.sdd / x_cam.z();
  return {x_cam.x() * scale / geom.pixel_spacing.x() + geom.principal_point.x(),
          x_cam.y() * scale / geom.pixel_spacing.y() + geom.principal_point.y()};
}

Vec3 backproject(const ProjectionGeometry& geom, const Vec2& p) {
  return {(p.x() - geom.principal_point.x()) * geom.pixel_spacing.x(),
          (p.y() - geom.principal_point.y()) * geom.pixel_spacing.y(), geom.sdd};
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const ProjectionGeometry& geom,
                                                const Vec3& x_cam) {
  const double z = x_cam.z();
  const double fu = geom.sdd / geom.pixel_spacing.x();
  const double fv = geom.sdd / geom.pixel_spacing.y();
  Eigen::Matrix<double, 2, 3> j;
  j << fu / z, 0.0, -fu * x_cam.x() / (z * z),
       0.0, fv / z, -fv * x_cam.y() / (z * z);
  return j;
}

}  // namespace ppcreg
