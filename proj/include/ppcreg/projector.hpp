#pragma once

#include <cstdint>
#include <vector>

#include "ppcreg/geometry.hpp"
#include "ppcreg/volume.hpp"

namespace ppcreg {

/// Row-major image; DRR values are line integrals (mm * density).
struct Image2D {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image2D() = default;
  Image2D(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  double at(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }
  double& at(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
};

/// Per-pixel partial derivatives, in intensity per pixel.
struct GradientImage2D {
  int width = 0;
  int height = 0;
  std::vector<double> gx;
  std::vector<double> gy;

  Vec2 at(int u, int v) const {
    const std::size_t n = static_cast<std::size_t>(v) * width + u;
    return {gx[n], gy[n]};
  }
};

enum class GradientOperator { kCentralDifference, kSobel };

/// Half the smallest voxel spacing.
double default_ray_step(const Volume& v);

/// Ray casts source -> pixel center for every pixel. Samples are taken at
/// segment midpoints of the ray clipped to the volume box, using at most
/// `step` mm per segment.
Image2D render_drr(const Volume& v, const RigidTransform& pose, const ProjectionGeometry& geom,
                   double step);

/// Central differences inside, one-sided on the border (or Sobel / 8).
/// Throws kImageTooSmall below 3x3.
GradientImage2D image_gradient(const Image2D& img,
                               GradientOperator op = GradientOperator::kCentralDifference);

/// Bilinear read of (gx, gy); (0, 0) off the pixel grid.
Vec2 sample_gradient(const GradientImage2D& g, const Vec2& p);

/// Bilinear read; 0 off the pixel grid.
double sample_bilinear(const Image2D& img, const Vec2& p);

Image2D gradient_magnitude(const GradientImage2D& g);

/// Adds i.i.d. Gaussian noise in place (deterministic for a seed).
void add_gaussian_noise(Image2D& img, double sigma, std::uint64_t seed);

}  // namespace ppcreg
