#include "ppcreg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "ppcreg/errors.hpp"

namespace ppcreg {

namespace {

Vec3 random_unit_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    const Vec3 v(normal(rng), normal(rng), normal(rng));
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(ss / values.size());
  return out;
}

SummaryRow table_row(std::string name, const std::vector<double>& mtres) {
  SummaryRow row;
  row.name = std::move(name);
  row.p50 = percentile(mtres, 50.0);
  row.p75 = percentile(mtres, 75.0);
  row.p95 = percentile(mtres, 95.0);
  const MeanStd s = mean_std(mtres);
  row.mtre_mean = s.mean;
  row.mtre_std = s.stddev;
  return row;
}

}  // namespace

double mtre(const RigidTransform& t_est, const RigidTransform& t_gt,
            std::span<const Vec3> points) {
  if (points.empty()) {
    throw Error(ErrorCode::kEmptyPointSet, "mTRE needs at least one point");
  }
  double sum = 0.0;
  for (const Vec3& w : points) sum += (t_est(w) - t_gt(w)).norm();
  return sum / static_cast<double>(points.size());
}

double mtre(const RigidTransform& t_est, const RigidTransform& t_gt,
            const SurfacePointSet& points) {
  return mtre(t_est, t_gt, std::span<const Vec3>(points.points));
}

double reduction_factor(double mtre_before, double mtre_after) {
  if (!(mtre_before > 0.0)) {
    throw Error(ErrorCode::kUndefinedReduction,
                fmt::format("reduction factor undefined for mTRE before = {}", mtre_before));
  }
  return mtre_after < mtre_before ? 1.0 - mtre_after / mtre_before : 0.0;
}

double epe(const CorrespondenceSet& c, const RigidTransform& t_gt, const RigidTransform& pose,
           const ProjectionGeometry& geom) {
  (void)pose;  // p_i already holds the projections under `pose`
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!c.valid[i]) continue;
    const Vec2 dp_gt = project(geom, t_gt(c.base.w[i])) - c.base.p[i];
    sum += (c.dp[i] - dp_gt).norm();
    ++n;
  }
  if (n == 0) {
    throw Error(ErrorCode::kEmptyPointSet, "EPE needs at least one valid correspondence");
  }
  return sum / static_cast<double>(n);
}

EvaluationSample sample_initial_transform(const RigidTransform& t_gt,
                                          std::span<const Vec3> points, double target_mtre,
                                          std::mt19937_64& rng) {
  if (!(target_mtre >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "target mTRE must be >= 0");
  }
  if (points.empty()) {
    throw Error(ErrorCode::kEmptyPointSet, "pose sampling needs target points");
  }
  EvaluationSample sample;
  sample.t_gt = t_gt;
  sample.t_init = t_gt;
  sample.target_mtre = target_mtre;

  // Direction draws happen even for a zero target to keep the stream aligned.
  const Vec3 axis = random_unit_vector(rng);
  const Vec3 t_dir = random_unit_vector(rng);
  const double rot_share = std::uniform_real_distribution<double>(0.2, 0.8)(rng);
  if (target_mtre == 0.0) return sample;

  // Unit twist in the camera frame: rot_share on the rotation (rad), the rest
  // on the translation (mm).
  Vec6 unit;
  unit << rot_share * axis, (1.0 - rot_share) * t_dir;
  unit.normalize();
  const auto motion_at = [&](double lambda) { return MotionVector::from_vector(lambda * unit); };
  const auto error_at = [&](double lambda) {
    return mtre(compose(exp_se3(motion_at(lambda)), t_gt), t_gt, points);
  };

  // Grow the bracket from below so bisection lands on the first crossing.
  double lo = 0.0;
  double hi = 1e-3 * target_mtre;
  int evaluations = 0;
  while (error_at(hi) < target_mtre) {
    if (++evaluations > 100) {
      throw Error(ErrorCode::kBisectionFailed,
                  fmt::format("cannot bracket a perturbation with mTRE {} mm", target_mtre));
    }
    lo = hi;
    hi *= 2.0;
  }
  for (int iter = 0; iter < 100; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double err = error_at(mid);
    if (std::abs(err - target_mtre) <= 1e-3) {
      sample.t_init = compose(exp_se3(motion_at(mid)), t_gt);
      sample.achieved_mtre = err;
      return sample;
    }
    (err < target_mtre ? lo : hi) = mid;
  }
  throw Error(ErrorCode::kBisectionFailed,
              fmt::format("bisection for mTRE {} mm did not converge", target_mtre));
}

void RegistrationConfig::validate() const {
  if (max_iterations < 1) {
    throw Error(ErrorCode::kInvalidArgument, "max_iterations must be >= 1");
  }
  if (!(omega_tol > 0.0) || !(t_tol > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "convergence tolerances must be positive");
  }
  if (update.linearizations < 1) {
    throw Error(ErrorCode::kInvalidArgument, "linearizations must be >= 1");
  }
  if (!(update.max_depth_change >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "max_depth_change must be >= 0");
  }
}

RegistrationContext initialize_registration(const Volume& volume, const Image2D& fluoro,
                                            const ProjectionGeometry& geom,
                                            const RegistrationConfig& config) {
  geom.validate();
  if (fluoro.width != geom.width || fluoro.height != geom.height) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("fluoro image is {}x{}, detector is {}x{}", fluoro.width,
                            fluoro.height, geom.width, geom.height));
  }
  RegistrationContext context;
  context.volume = &volume;
  context.surface = extract_surface_points(volume, config.canny);
  context.grad_flr = image_gradient(fluoro, config.update.gradient);
  context.geom = geom;
  return context;
}

RegistrationReport run_registration(const RegistrationContext& context,
                                    const RigidTransform& t_init, const RegistrationConfig& config,
                                    const std::optional<RigidTransform>& t_gt) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  RegistrationReport report;
  report.poses.push_back(t_init);
  if (t_gt) report.mtre_trace.push_back(mtre(t_init, *t_gt, context.surface));

  RigidTransform pose = t_init;
  for (int iter = 0; iter < config.max_iterations; ++iter) {
    UpdateResult step = update_step(context.surface, context.grad_flr, pose, *context.volume,
                                    context.geom, config.update);
    if (t_gt) {
      if (step.diagnostics.n_valid > 0) {
        step.diagnostics.epe_px = epe(step.correspondences, *t_gt, pose, context.geom);
      }
      double after;
      if (config.mtre_on_contour && !step.correspondences.base.empty()) {
        after = mtre(step.pose, *t_gt, std::span<const Vec3>(step.correspondences.base.w));
      } else {
        after = mtre(step.pose, *t_gt, context.surface);
      }
      const double before = report.mtre_trace.back();
      report.mtre_trace.push_back(after);
      report.reduction_factors.push_back(before > 0.0 ? reduction_factor(before, after) : 0.0);
    }
    pose = step.pose;
    report.poses.push_back(pose);
    report.diagnostics.push_back(step.diagnostics);
    report.outcomes.push_back(step.outcome);

    if (step.outcome == UpdateOutcome::kUpdated &&
        step.diagnostics.rotation_norm < config.omega_tol &&
        step.diagnostics.translation_norm < config.t_tol) {
      report.converged = true;
      break;
    }
  }
  report.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

RegistrationReport run_registration(const Volume& volume, const Image2D& fluoro,
                                    const ProjectionGeometry& geom, const RigidTransform& t_init,
                                    const RegistrationConfig& config,
                                    const std::optional<RigidTransform>& t_gt) {
  const RegistrationContext context = initialize_registration(volume, fluoro, geom, config);
  return run_registration(context, t_init, config, t_gt);
}

double percentile(std::vector<double> values, double pct) {
  if (values.empty()) {
    throw Error(ErrorCode::kEmptyPointSet, "percentile of an empty list");
  }
  std::sort(values.begin(), values.end());
  const double rank = std::clamp(pct, 0.0, 100.0) / 100.0 * (values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (rank - lo) * (values[hi] - values[lo]);
}

Summary summarize(std::span<const SampleResult> results, const std::string& method_name) {
  if (results.empty()) {
    throw Error(ErrorCode::kEmptyPointSet, "cannot summarize an empty result list");
  }
  std::vector<double> before, after, rf;
  for (const SampleResult& r : results) {
    before.push_back(r.mtre_before);
    after.push_back(r.mtre_after);
    rf.push_back(r.mtre_before > 0.0 ? reduction_factor(r.mtre_before, r.mtre_after) : 0.0);
  }
  Summary summary;
  summary.initial = table_row("initial", before);
  summary.method = table_row(method_name, after);
  const MeanStd rf_stats = mean_std(rf);
  summary.method.rf_mean = rf_stats.mean;
  summary.method.rf_std = rf_stats.stddev;
  summary.samples.assign(results.begin(), results.end());
  return summary;
}

}  // namespace ppcreg
