#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ppcreg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

Mat3 skew(const Vec3& v);

/// Rigid transform x -> R*x + t. Poses map volume coordinates into the
/// camera frame ("camera_from_volume").
class RigidTransform {
 public:
  RigidTransform();

  /// Throws kInvalidArgument unless R is orthonormal with det +1 (1e-9).
  RigidTransform(const Mat3& rotation, const Vec3& translation);

  static RigidTransform identity() { return {}; }
  static RigidTransform translation_only(const Vec3& t);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 operator()(const Vec3& x) const { return rotation_ * x + translation_; }

  RigidTransform inverse() const;

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

bool is_valid_rotation(const Mat3& r, double tol = 1e-9);

Vec3 apply(const RigidTransform& transform, const Vec3& x);

/// (a∘b)(x) = a(b(x)).
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);

RigidTransform invert(const RigidTransform& transform);

/// Twist increment: omega in radians, t in mm. Applied in the camera frame.
struct MotionVector {
  Vec3 omega = Vec3::Zero();
  Vec3 t = Vec3::Zero();

  static MotionVector from_vector(const Vec6& v);
  Vec6 as_vector() const;
  bool is_finite() const;
};

/// SO(3) left Jacobian V(omega); exp_se3 translation is V(omega) * t.
Mat3 left_jacobian(const Vec3& omega);

RigidTransform exp_se3(const MotionVector& dv);

/// Inverse of exp_se3 for rotation angles below pi.
MotionVector log_se3(const RigidTransform& transform);

/// Pinhole C-arm: X-ray source at the camera origin, optical axis +z, the
/// detector is the plane z = sdd. Pixel (i, j) has its center at (i, j).
struct ProjectionGeometry {
  double sdd = 1000.0;
  int width = 256;
  int height = 256;
  Vec2 pixel_spacing{1.0, 1.0};
  Vec2 principal_point{127.5, 127.5};

  /// Throws kInvalidArgument on non-positive sizes or an off-detector
  /// principal point.
  void validate() const;

  /// True when p lies on the sampled pixel grid [0, w-1] x [0, h-1].
  bool contains(const Vec2& p) const;
};

/// Points closer to the source plane than this are rejected by project().
inline constexpr double kMinDepthMm = 1.0;

/// Throws kPointBehindSource when x_cam.z <= kMinDepthMm.
Vec2 project(const ProjectionGeometry& geom, const Vec3& x_cam);

/// Detector-plane point (camera frame) of pixel coordinate p.
Vec3 backproject(const ProjectionGeometry& geom, const Vec2& p);

/// d project / d x at x_cam.
Eigen::Matrix<double, 2, 3> projection_jacobian(const ProjectionGeometry& geom,
                                                const Vec3& x_cam);

}  // namespace ppcreg
