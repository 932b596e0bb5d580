#include "ppcreg/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "ppcreg/errors.hpp"
#include "ppcreg/ppc.hpp"

namespace ppcreg {

namespace {

// Score of an exact match; nothing can beat it, so no refinement is needed.
constexpr double kPerfectScore = 1.0 - 1e-12;
constexpr double kTieSlack = 1e-12;

CorrespondenceSet empty_correspondences(const ContourPointSet& contours) {
  const std::size_t n = contours.size();
  CorrespondenceSet c;
  c.base = contours;
  c.dp.assign(n, Vec2::Zero());
  c.p_prime = contours.p;
  c.score.assign(n, 0.0);
  c.valid.assign(n, 0);
  c.weight.assign(n, 0.0);
  return c;
}

struct Patch {
  std::vector<double> centered;
  double norm = 0.0;
};

// Fills `patch` with the mean-free (2h+1)^2 patch of `mag` around `center`.
// All samples of a patch share one sub-pixel offset, so when the patch lies
// inside the grid the bilinear weights are computed once.
void sample_patch(const Image2D& mag, const Vec2& center, int half, Patch& patch) {
  const int side = 2 * half + 1;
  patch.centered.resize(static_cast<std::size_t>(side * side));
  double* out = patch.centered.data();
  const double u0f = std::floor(center.x());
  const double v0f = std::floor(center.y());
  const bool interior = u0f - half >= 0.0 && v0f - half >= 0.0 &&
                        u0f + half + 1 <= mag.width - 1.0 && v0f + half + 1 <= mag.height - 1.0;
  if (interior) {
    const int u0 = static_cast<int>(u0f);
    const int v0 = static_cast<int>(v0f);
    const double fu = center.x() - u0f;
    const double fv = center.y() - v0f;
    const double* data = mag.data.data();
    const std::size_t w = static_cast<std::size_t>(mag.width);
    for (int dy = -half; dy <= half; ++dy) {
      const double* row0 = data + static_cast<std::size_t>(v0 + dy) * w + (u0 - half);
      const double* row1 = row0 + w;
      for (int dx = 0; dx < side; ++dx) {
        const double top = row0[dx] + fu * (row0[dx + 1] - row0[dx]);
        const double bottom = row1[dx] + fu * (row1[dx + 1] - row1[dx]);
        *out++ = top + fv * (bottom - top);
      }
    }
  } else {
    for (int dy = -half; dy <= half; ++dy) {
      for (int dx = -half; dx <= half; ++dx) {
        *out++ = sample_bilinear(mag, center + Vec2(dx, dy));
      }
    }
  }
  double mean = 0.0;
  for (double value : patch.centered) mean += value;
  mean /= static_cast<double>(patch.centered.size());
  double ss = 0.0;
  for (double& value : patch.centered) {
    value -= mean;
    ss += value * value;
  }
  patch.norm = std::sqrt(ss);
}

// Relative flatness threshold; below it the NCC denominator is noise.
bool is_flat(const Patch& patch, double scale) { return patch.norm <= 1e-12 * std::max(scale, 1.0); }

double median(std::vector<double> values) {
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  double m = values[mid];
  if (values.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(values.begin(), values.begin() + mid));
  }
  return m;
}

}  // namespace

std::size_t CorrespondenceSet::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

ContourPointSet select_contour_points(const SurfacePointSet& surface, const RigidTransform& pose,
                                      const ProjectionGeometry& geom, double eps) {
  if (!(eps > 0.0 && eps < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("contour threshold must lie in (0, 1), got {}", eps));
  }
  ContourPointSet out;
  for (std::size_t i = 0; i < surface.size(); ++i) {
    const Vec3 x = pose(surface.points[i]);
    if (!(x.z() > kMinDepthMm)) continue;
    const Vec3 ray = x.normalized();
    const Vec3 g_cam = pose.rotation() * surface.gradients[i];
    const double cos_view = g_cam.dot(ray);
    if (!(std::abs(cos_view) < eps)) continue;

    const Vec2 p = project(geom, x);
    if (!geom.contains(p)) continue;
    const Vec3 g_perp = g_cam - cos_view * ray;
    const Vec2 n = projection_jacobian(geom, x) * g_perp;
    const double len = n.norm();
    if (!(len > 1e-12)) continue;

    out.w.push_back(surface.points[i]);
    out.g.push_back(surface.gradients[i]);
    out.p.push_back(p);
    out.n2d.push_back(n / len);
  }
  return out;
}

CorrespondenceSet match_along_normal(const ContourPointSet& contours,
                                     const GradientImage2D& grad_drr,
                                     const GradientImage2D& grad_flr, const MatchParams& params) {
  if (params.search_radius < 1 || params.half_width < 1) {
    throw Error(ErrorCode::kInvalidArgument, "search radius and patch half-width must be >= 1");
  }
  const Image2D mag_drr = gradient_magnitude(grad_drr);
  const Image2D mag_flr = gradient_magnitude(grad_flr);
  const double drr_scale = *std::max_element(mag_drr.data.begin(), mag_drr.data.end());
  const double flr_scale = *std::max_element(mag_flr.data.begin(), mag_flr.data.end());
  const int radius = params.search_radius;
  const int half = params.half_width;

  CorrespondenceSet c = empty_correspondences(contours);
  const auto n_points = static_cast<std::ptrdiff_t>(contours.size());

#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n_points; ++i) {
    const Vec2& p = contours.p[i];
    const Vec2& normal = contours.n2d[i];
    Patch reference, candidate;
    sample_patch(mag_drr, p, half, reference);
    if (is_flat(reference, drr_scale)) continue;

    std::vector<double> scores(2 * radius + 1, std::numeric_limits<double>::quiet_NaN());
    for (int k = -radius; k <= radius; ++k) {
      sample_patch(mag_flr, p + k * normal, half, candidate);
      if (is_flat(candidate, flr_scale)) continue;
      double dot = 0.0;
      for (std::size_t m = 0; m < reference.centered.size(); ++m) {
        dot += reference.centered[m] * candidate.centered[m];
      }
      scores[k + radius] = std::clamp(dot / (reference.norm * candidate.norm), -1.0, 1.0);
    }

    int best_k = 0;
    double best = -std::numeric_limits<double>::infinity();
    // Visit 0, -1, +1, -2, +2, ... so that ties resolve to the smallest |k|.
    for (int step = 0; step <= 2 * radius; ++step) {
      const int k = (step % 2 == 0) ? step / 2 : -(step + 1) / 2;
      const double s = scores[k + radius];
      if (std::isnan(s)) continue;
      if (s > best + kTieSlack) {
        best = s;
        best_k = k;
      }
    }
    if (!std::isfinite(best)) continue;

    double k_refined = best_k;
    if (best < kPerfectScore && best_k > -radius && best_k < radius) {
      const double sm = scores[best_k - 1 + radius];
      const double sp = scores[best_k + 1 + radius];
      if (!std::isnan(sm) && !std::isnan(sp)) {
        const double denom = sm - 2.0 * best + sp;
        if (denom < 0.0) {
          k_refined += std::clamp(0.5 * (sm - sp) / denom, -0.5, 0.5);
        }
      }
    }

    c.dp[i] = k_refined * normal;
    c.p_prime[i] = p + c.dp[i];
    c.score[i] = best;
    const Vec2& q = c.p_prime[i];
    const bool in_bounds = q.x() >= 0.0 && q.y() >= 0.0 && q.x() <= grad_flr.width - 1.0 &&
                           q.y() <= grad_flr.height - 1.0;
    c.valid[i] = best >= params.min_score && in_bounds;
  }
  return c;
}

CorrespondenceSet match_oracle(const ContourPointSet& contours, const RigidTransform& t_gt,
                               const ProjectionGeometry& geom) {
  CorrespondenceSet c = empty_correspondences(contours);
  for (std::size_t i = 0; i < contours.size(); ++i) {
    const Vec3 x = t_gt(contours.w[i]);
    if (!(x.z() > kMinDepthMm)) continue;
    const Vec2 target = project(geom, x);
    c.dp[i] = target - contours.p[i];
    c.p_prime[i] = contours.p[i] + c.dp[i];
    c.score[i] = 1.0;
    c.valid[i] = geom.contains(c.p_prime[i]);
  }
  return c;
}

CorrespondenceSet compute_weights(CorrespondenceSet c, const WeightingParams& params,
                                  const RigidTransform& pose, const ProjectionGeometry& geom) {
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!c.valid[i]) {
      c.weight[i] = 0.0;
      continue;
    }
    c.weight[i] = params.strategy == WeightingStrategy::kUniform
                      ? 1.0
                      : std::pow(std::max(c.score[i], 0.0), params.gamma);
  }
  const auto all_zero = [&c] {
    return std::all_of(c.weight.begin(), c.weight.end(), [](double w) { return !(w > 0.0); });
  };
  if (all_zero()) {
    throw Error(ErrorCode::kDegenerateWeights, "every correspondence weight is zero");
  }

  if (params.strategy == WeightingStrategy::kScoreIrls) {
    PpcSystem sys = build_ppc_rows(c, pose, geom);
    sys.w.setOnes();
    const SolveResult pre = solve_weighted(sys);
    const Eigen::VectorXd residual = sys.a * pre.dv.as_vector() - sys.b;

    std::vector<double> r(residual.data(), residual.data() + residual.size());
    const double med = median(r);
    std::vector<double> deviation(r.size());
    for (std::size_t n = 0; n < r.size(); ++n) deviation[n] = std::abs(r[n] - med);
    const double delta = params.huber_k * median(deviation);

    for (Eigen::Index row = 0; row < sys.rows(); ++row) {
      const double abs_r = std::abs(residual[row]);
      const double factor = abs_r <= delta ? 1.0 : delta / abs_r;
      c.weight[sys.source_index[static_cast<std::size_t>(row)]] *= factor;
    }
    if (all_zero()) {
      throw Error(ErrorCode::kDegenerateWeights, "robust reweighting removed every correspondence");
    }
  }
  return c;
}

std::string to_string(WeightingStrategy strategy) {
  switch (strategy) {
    case WeightingStrategy::kUniform: return "uniform";
    case WeightingStrategy::kScore: return "score";
    case WeightingStrategy::kScoreIrls: return "score_irls";
  }
  return "unknown";
}

WeightingStrategy weighting_strategy_from_string(const std::string& name) {
  if (name == "uniform") return WeightingStrategy::kUniform;
  if (name == "score") return WeightingStrategy::kScore;
  if (name == "score_irls") return WeightingStrategy::kScoreIrls;
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown weighting strategy '{}'", name));
}

}  // namespace ppcreg
