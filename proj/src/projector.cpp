#include "ppcreg/projector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "ppcreg/errors.hpp"

namespace ppcreg {

namespace {

// Slab clipping of origin + s*dir against [lo, hi]; returns false on a miss.
bool clip_ray(const Vec3& origin, const Vec3& dir, const Vec3& lo, const Vec3& hi,
              double& s_enter, double& s_exit) {
  s_enter = 0.0;
  s_exit = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < lo[a] || origin[a] > hi[a]) return false;
      continue;
    }
    double s0 = (lo[a] - origin[a]) / dir[a];
    double s1 = (hi[a] - origin[a]) / dir[a];
    if (s0 > s1) std::swap(s0, s1);
    s_enter = std::max(s_enter, s0);
    s_exit = std::min(s_exit, s1);
    if (s_enter >= s_exit) return false;
  }
  return true;
}

template <typename Sampler>
double bilinear(int width, int height, const Vec2& p, Sampler&& value) {
  const double u = p.x();
  const double v = p.y();
  if (!(u >= 0.0) || !(v >= 0.0) || u > width - 1 || v > height - 1) return 0.0;
  int u0 = static_cast<int>(std::floor(u));
  int v0 = static_cast<int>(std::floor(v));
  u0 = std::min(u0, std::max(width - 2, 0));
  v0 = std::min(v0, std::max(height - 2, 0));
  const int u1 = std::min(u0 + 1, width - 1);
  const int v1 = std::min(v0 + 1, height - 1);
  const double fu = width == 1 ? 0.0 : u - u0;
  const double fv = height == 1 ? 0.0 : v - v0;
  const double top = value(u0, v0) + fu * (value(u1, v0) - value(u0, v0));
  const double bottom = value(u0, v1) + fu * (value(u1, v1) - value(u0, v1));
  return top + fv * (bottom - top);
}

}  // namespace

double default_ray_step(const Volume& v) { return 0.5 * v.spacing().minCoeff(); }

Image2D render_drr(const Volume& v, const RigidTransform& pose, const ProjectionGeometry& geom,
                   double step) {
  if (!(step > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "ray step must be positive");
  }
  geom.validate();
  Image2D img(geom.width, geom.height);
  const Mat3 rot_t = pose.rotation().transpose();
  const Vec3 source = -(rot_t * pose.translation());
  const Vec3 lo = v.bounds_min();
  const Vec3 hi = v.bounds_max();

#pragma omp parallel for schedule(static)
  for (int row = 0; row < geom.height; ++row) {
    for (int col = 0; col < geom.width; ++col) {
      const Vec3 dir = rot_t * backproject(geom, Vec2(col, row)).normalized();
      double s0, s1;
      if (!clip_ray(source, dir, lo, hi, s0, s1)) continue;
      const double length = s1 - s0;
      const int n = std::max(1, static_cast<int>(std::ceil(length / step)));
      const double h = length / n;
      double acc = 0.0;
      for (int k = 0; k < n; ++k) {
        acc += sample_trilinear(v, source + (s0 + (k + 0.5) * h) * dir);
      }
      img.at(col, row) = acc * h;
    }
  }
  return img;
}

GradientImage2D image_gradient(const Image2D& img, GradientOperator op) {
  if (img.width < 3 || img.height < 3) {
    throw Error(ErrorCode::kImageTooSmall, "image gradient needs at least 3x3 pixels");
  }
  const int w = img.width;
  const int h = img.height;
  GradientImage2D g{w, h, std::vector<double>(img.data.size()),
                    std::vector<double>(img.data.size())};

  auto central = [&](int u, int v, int du, int dv) {
    const int n = du ? w : h;
    const int pos = du ? u : v;
    if (pos == 0) return img.at(u + du, v + dv) - img.at(u, v);
    if (pos == n - 1) return img.at(u, v) - img.at(u - du, v - dv);
    return 0.5 * (img.at(u + du, v + dv) - img.at(u - du, v - dv));
  };

  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const std::size_t n = static_cast<std::size_t>(v) * w + u;
      if (op == GradientOperator::kSobel && u > 0 && v > 0 && u < w - 1 && v < h - 1) {
        g.gx[n] = (img.at(u + 1, v - 1) + 2.0 * img.at(u + 1, v) + img.at(u + 1, v + 1) -
                   img.at(u - 1, v - 1) - 2.0 * img.at(u - 1, v) - img.at(u - 1, v + 1)) /
                  8.0;
        g.gy[n] = (img.at(u - 1, v + 1) + 2.0 * img.at(u, v + 1) + img.at(u + 1, v + 1) -
                   img.at(u - 1, v - 1) - 2.0 * img.at(u, v - 1) - img.at(u + 1, v - 1)) /
                  8.0;
      } else {
        g.gx[n] = central(u, v, 1, 0);
        g.gy[n] = central(u, v, 0, 1);
      }
    }
  }
  return g;
}

Vec2 sample_gradient(const GradientImage2D& g, const Vec2& p) {
  const auto gx = [&](int u, int v) { return g.gx[static_cast<std::size_t>(v) * g.width + u]; };
  const auto gy = [&](int u, int v) { return g.gy[static_cast<std::size_t>(v) * g.width + u]; };
  return {bilinear(g.width, g.height, p, gx), bilinear(g.width, g.height, p, gy)};
}

double sample_bilinear(const Image2D& img, const Vec2& p) {
  return bilinear(img.width, img.height, p, [&](int u, int v) { return img.at(u, v); });
}

Image2D gradient_magnitude(const GradientImage2D& g) {
  Image2D out(g.width, g.height);
  for (std::size_t n = 0; n < out.data.size(); ++n) out.data[n] = std::hypot(g.gx[n], g.gy[n]);
  return out;
}

void add_gaussian_noise(Image2D& img, double sigma, std::uint64_t seed) {
  if (sigma <= 0.0) return;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (double& value : img.data) value += noise(rng);
}

}  // namespace ppcreg
