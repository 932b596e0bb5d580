#include "ppcreg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include <fmt/format.h>

#include "ppcreg/errors.hpp"

namespace ppcreg {

namespace {

std::size_t product(const Dims3& d) {
  return static_cast<std::size_t>(d[0]) * static_cast<std::size_t>(d[1]) *
         static_cast<std::size_t>(d[2]);
}

std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& w : k) w /= sum;
  return k;
}

// One separable pass along `axis` with clamped borders.
std::vector<double> convolve_axis(const std::vector<double>& in, const Dims3& dims, int axis,
                                  const std::vector<double>& kernel) {
  std::vector<double> out(in.size());
  const int radius = static_cast<int>(kernel.size() / 2);
  const std::size_t stride = axis == 0 ? 1
                             : axis == 1 ? static_cast<std::size_t>(dims[0])
                                         : static_cast<std::size_t>(dims[0]) * dims[1];
  const int n = dims[axis];
#pragma omp parallel for schedule(static)
  for (int k = 0; k < dims[2]; ++k) {
    for (int j = 0; j < dims[1]; ++j) {
      for (int i = 0; i < dims[0]; ++i) {
        const int pos[3] = {i, j, k};
        const std::size_t base = static_cast<std::size_t>(i) +
                                 static_cast<std::size_t>(dims[0]) *
                                     (static_cast<std::size_t>(j) +
                                      static_cast<std::size_t>(dims[1]) * k);
        const std::size_t line_start = base - stride * static_cast<std::size_t>(pos[axis]);
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          const int q = std::clamp(pos[axis] + t, 0, n - 1);
          acc += kernel[t + radius] * in[line_start + stride * static_cast<std::size_t>(q)];
        }
        out[base] = acc;
      }
    }
  }
  return out;
}

}  // namespace

Volume::Volume(Dims3 dims, Vec3 spacing, Vec3 origin)
    : Volume(dims, spacing, origin, std::vector<float>(product(dims), 0.0f)) {}

Volume::Volume(Dims3 dims, Vec3 spacing, Vec3 origin, std::vector<float> data)
    : dims_(dims), spacing_(spacing), origin_(origin), data_(std::move(data)) {
  if (dims_[0] <= 0 || dims_[1] <= 0 || dims_[2] <= 0) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("volume dims must be positive, got {}x{}x{}", dims_[0], dims_[1],
                            dims_[2]));
  }
  if (!(spacing_.minCoeff() > 0.0) || !spacing_.allFinite() || !origin_.allFinite()) {
    throw Error(ErrorCode::kInvalidArgument, "volume spacing must be positive and finite");
  }
  if (data_.size() != product(dims_)) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("volume data has {} values, dims require {}", data_.size(),
                            product(dims_)));
  }
  for (float value : data_) {
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::kInvalidArgument, "volume contains non-finite values");
    }
  }
}

Vec3 Volume::voxel_center(int i, int j, int k) const {
  return origin_ + Vec3(i, j, k).cwiseProduct(spacing_);
}

Vec3 Volume::to_index(const Vec3& x) const { return (x - origin_).cwiseQuotient(spacing_); }

Vec3 Volume::bounds_max() const {
  return origin_ + Vec3(dims_[0] - 1, dims_[1] - 1, dims_[2] - 1).cwiseProduct(spacing_);
}

bool Volume::contains(const Vec3& x) const {
  const Vec3 lo = bounds_min();
  const Vec3 hi = bounds_max();
  return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
}

double sample_trilinear(const Volume& v, const Vec3& x) {
  const Vec3 u = v.to_index(x);
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const int n = v.dims()[a];
    if (!(u[a] >= 0.0) || u[a] > n - 1) return 0.0;
    int base = static_cast<int>(std::floor(u[a]));
    if (base >= n - 1) base = std::max(n - 2, 0);
    i0[a] = base;
    f[a] = n == 1 ? 0.0 : u[a] - base;
  }
  const int i1 = std::min(i0[0] + 1, v.dims()[0] - 1);
  const int j1 = std::min(i0[1] + 1, v.dims()[1] - 1);
  const int k1 = std::min(i0[2] + 1, v.dims()[2] - 1);

  const double c000 = v.at(i0[0], i0[1], i0[2]);
  const double c100 = v.at(i1, i0[1], i0[2]);
  const double c010 = v.at(i0[0], j1, i0[2]);
  const double c110 = v.at(i1, j1, i0[2]);
  const double c001 = v.at(i0[0], i0[1], k1);
  const double c101 = v.at(i1, i0[1], k1);
  const double c011 = v.at(i0[0], j1, k1);
  const double c111 = v.at(i1, j1, k1);

  const double c00 = c000 + f[0] * (c100 - c000);
  const double c10 = c010 + f[0] * (c110 - c010);
  const double c01 = c001 + f[0] * (c101 - c001);
  const double c11 = c011 + f[0] * (c111 - c011);
  const double c0 = c00 + f[1] * (c10 - c00);
  const double c1 = c01 + f[1] * (c11 - c01);
  return c0 + f[2] * (c1 - c0);
}

VectorField gradient_field(const Volume& v, double sigma) {
  if (sigma < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "gradient smoothing sigma must be >= 0");
  }
  const Dims3& d = v.dims();
  std::vector<double> smooth(v.data().begin(), v.data().end());
  if (sigma > 0.0) {
    const auto kernel = gaussian_kernel(sigma);
    for (int axis = 0; axis < 3; ++axis) smooth = convolve_axis(smooth, d, axis, kernel);
  }

  VectorField g{d, v.spacing(), v.origin(), std::vector<Vec3>(smooth.size())};
  const std::size_t sx = 1;
  const std::size_t sy = static_cast<std::size_t>(d[0]);
  const std::size_t sz = static_cast<std::size_t>(d[0]) * d[1];
#pragma omp parallel for schedule(static)
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) {
        const std::size_t c = v.index(i, j, k);
        const std::size_t xm = c - sx * (i > 0), xp = c + sx * (i < d[0] - 1);
        const std::size_t ym = c - sy * (j > 0), yp = c + sy * (j < d[1] - 1);
        const std::size_t zm = c - sz * (k > 0), zp = c + sz * (k < d[2] - 1);
        g.values[c] = Vec3((smooth[xp] - smooth[xm]) / (2.0 * v.spacing().x()),
                           (smooth[yp] - smooth[ym]) / (2.0 * v.spacing().y()),
                           (smooth[zp] - smooth[zm]) / (2.0 * v.spacing().z()));
      }
    }
  }
  return g;
}

Volume gradient_magnitude(const VectorField& g) {
  std::vector<float> mag(g.values.size());
  for (std::size_t n = 0; n < g.values.size(); ++n) {
    mag[n] = static_cast<float>(g.values[n].norm());
  }
  return Volume(g.dims, g.spacing, g.origin, std::move(mag));
}

SurfacePointSet extract_surface_points(const Volume& v, const CannyParams& params) {
  if (!(params.t_low > 0.0 && params.t_low < params.t_high && params.t_high < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("canny thresholds need 0 < t_low < t_high < 1, got {} / {}",
                            params.t_low, params.t_high));
  }
  const VectorField grad = gradient_field(v, params.sigma);
  const Volume mag = gradient_magnitude(grad);
  const Dims3& d = v.dims();
  const auto values = mag.data();
  const float max_mag = values.empty() ? 0.0f : *std::max_element(values.begin(), values.end());
  if (!(max_mag > 0.0f)) {
    throw Error(ErrorCode::kEmptySurface, "volume has no intensity gradient");
  }
  const double low = params.t_low * max_mag;
  const double high = params.t_high * max_mag;

  // 0 = suppressed, 1 = weak candidate, 2 = edge
  std::vector<std::uint8_t> state(values.size(), 0);
#pragma omp parallel for schedule(static)
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) {
        const std::size_t c = v.index(i, j, k);
        const double m = values[c];
        if (m < low || m <= 0.0) continue;
        const Vec3 dir = grad.values[c] / grad.values[c].norm();
        const Vec3 step = dir.cwiseProduct(v.spacing());
        const Vec3 x = v.voxel_center(i, j, k);
        if (m < sample_trilinear(mag, x + step) || m < sample_trilinear(mag, x - step)) continue;
        state[c] = m >= high ? 2 : 1;
      }
    }
  }

  std::deque<std::size_t> queue;
  for (std::size_t c = 0; c < state.size(); ++c) {
    if (state[c] == 2) queue.push_back(c);
  }
  const std::size_t plane = static_cast<std::size_t>(d[0]) * d[1];
  while (!queue.empty()) {
    const std::size_t c = queue.front();
    queue.pop_front();
    const int k = static_cast<int>(c / plane);
    const int j = static_cast<int>((c % plane) / d[0]);
    const int i = static_cast<int>(c % d[0]);
    for (int dk = -1; dk <= 1; ++dk) {
      for (int dj = -1; dj <= 1; ++dj) {
        for (int di = -1; di <= 1; ++di) {
          const int ni = i + di, nj = j + dj, nk = k + dk;
          if (ni < 0 || nj < 0 || nk < 0 || ni >= d[0] || nj >= d[1] || nk >= d[2]) continue;
          const std::size_t n = v.index(ni, nj, nk);
          if (state[n] == 1) {
            state[n] = 2;
            queue.push_back(n);
          }
        }
      }
    }
  }

  std::vector<std::size_t> edges;
  for (std::size_t c = 0; c < state.size(); ++c) {
    if (state[c] == 2) edges.push_back(c);
  }
  if (edges.empty()) {
    throw Error(ErrorCode::kEmptySurface, "no voxel survived hysteresis thresholding");
  }
  if (params.max_points && *params.max_points > 0 && edges.size() > *params.max_points) {
    const std::size_t cap = *params.max_points;
    std::vector<std::size_t> kept(cap);
    for (std::size_t n = 0; n < cap; ++n) kept[n] = edges[n * edges.size() / cap];
    edges = std::move(kept);
  }

  SurfacePointSet out;
  out.points.reserve(edges.size());
  out.gradients.reserve(edges.size());
  for (std::size_t c : edges) {
    const int k = static_cast<int>(c / plane);
    const int j = static_cast<int>((c % plane) / d[0]);
    const int i = static_cast<int>(c % d[0]);
    out.points.push_back(v.voxel_center(i, j, k));
    out.gradients.push_back(grad.values[c].normalized());
  }
  return out;
}

}  // namespace ppcreg
