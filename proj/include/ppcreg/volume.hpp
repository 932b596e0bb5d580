#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ppcreg/geometry.hpp"

namespace ppcreg {

using Dims3 = std::array<int, 3>;

/// Scalar voxel grid. `origin` is the physical position (mm, volume frame)
/// of the center of voxel (0, 0, 0); data is x-fastest.
class Volume {
 public:
  Volume() = default;
  /// Zero-filled volume.
  Volume(Dims3 dims, Vec3 spacing, Vec3 origin);
  Volume(Dims3 dims, Vec3 spacing, Vec3 origin, std::vector<float> data);

  const Dims3& dims() const { return dims_; }
  const Vec3& spacing() const { return spacing_; }
  const Vec3& origin() const { return origin_; }
  std::size_t voxel_count() const { return data_.size(); }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims_[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_[1]) * k);
  }
  float at(int i, int j, int k) const { return data_[index(i, j, k)]; }
  float& at(int i, int j, int k) { return data_[index(i, j, k)]; }

  Vec3 voxel_center(int i, int j, int k) const;
  /// Continuous voxel coordinates of a physical point.
  Vec3 to_index(const Vec3& x) const;

  /// Physical box spanned by the voxel centers.
  Vec3 bounds_min() const { return origin_; }
  Vec3 bounds_max() const;
  Vec3 center() const { return 0.5 * (bounds_min() + bounds_max()); }
  bool contains(const Vec3& x) const;

 private:
  Dims3 dims_{0, 0, 0};
  Vec3 spacing_{1.0, 1.0, 1.0};
  Vec3 origin_{0.0, 0.0, 0.0};
  std::vector<float> data_;
};

/// Trilinear interpolation at a physical point; 0 outside bounds_min..bounds_max.
double sample_trilinear(const Volume& v, const Vec3& x);

/// Per-voxel gradient (density/mm) sharing the volume's lattice.
struct VectorField {
  Dims3 dims{0, 0, 0};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  std::vector<Vec3> values;

  const Vec3& at(int i, int j, int k) const {
    return values[static_cast<std::size_t>(i) +
                  static_cast<std::size_t>(dims[0]) *
                      (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k)];
  }
};

/// Separable Gaussian smoothing (sigma in voxels, kernel truncated at 3
/// sigma, edge-clamped), then central differences divided by the spacing.
VectorField gradient_field(const Volume& v, double sigma);

/// |gradient| as a volume on the same lattice.
Volume gradient_magnitude(const VectorField& g);

struct CannyParams {
  double sigma = 1.0;
  /// Hysteresis thresholds as fractions of the maximum gradient magnitude.
  double t_low = 0.1;
  double t_high = 0.3;
  /// Uniform-stride subsampling cap on the emitted points.
  std::optional<std::size_t> max_points;
};

struct SurfacePointSet {
  std::vector<Vec3> points;     // mm, volume frame
  std::vector<Vec3> gradients;  // unit, towards increasing density

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// 3D Canny: gradient magnitude, non-maximum suppression along the gradient,
/// hysteresis growth over 26-neighborhoods. Points come out in raster order.
/// Throws kEmptySurface when nothing survives.
SurfacePointSet extract_surface_points(const Volume& v, const CannyParams& params);

// Phantoms ------------------------------------------------------------------

enum class PrimitiveKind { kSphere, kBox, kCylinder, kEllipsoid };

/// `size` meaning per kind: sphere (radius, -, -), box half extents,
/// cylinder (radius, -, half length along local z), ellipsoid semi-axes.
/// `rotation` is an axis-angle vector (radians) from local to volume frame.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kSphere;
  Vec3 center = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  double density = 1.0;
};

struct PhantomSpec {
  Dims3 dims{64, 64, 64};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  std::vector<Primitive> primitives;
  /// Seeded pose jitter applied to every primitive (0 disables).
  double jitter_mm = 0.0;
  double jitter_deg = 0.0;
};

/// Rasterizes the primitives at voxel centers, densities adding up where
/// they overlap. Throws kInvalidArgument for a primitive that leaves the grid.
Volume make_phantom(const PhantomSpec& spec, std::uint64_t seed);

/// Built-in phantoms: "sphere", "sphere-pair", "nested-spheres", "vertebra".
/// Throws kInvalidArgument for unknown names.
PhantomSpec phantom_preset(const std::string& name);
std::vector<std::string> phantom_preset_names();

std::string to_string(PrimitiveKind kind);
PrimitiveKind primitive_kind_from_string(const std::string& name);

}  // namespace ppcreg
