#include "ppcreg/ppc.hpp"

#include <cmath>
#include <limits>

#include <Eigen/SVD>
#include <fmt/format.h>

#include "ppcreg/errors.hpp"

namespace ppcreg {

PpcSystem build_ppc_rows(const CorrespondenceSet& c, const RigidTransform& pose,
                         const ProjectionGeometry& geom) {
  const std::size_t n_valid = c.valid_count();
  if (n_valid == 0) {
    throw Error(ErrorCode::kEmptySystem, "no valid correspondence to build PPC rows from");
  }
  PpcSystem sys;
  sys.a.resize(static_cast<Eigen::Index>(n_valid), 6);
  sys.b.resize(static_cast<Eigen::Index>(n_valid));
  sys.w.resize(static_cast<Eigen::Index>(n_valid));
  sys.source_index.reserve(n_valid);

  Eigen::Index row = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!c.valid[i]) continue;
    const Vec3 x = pose(c.base.w[i]);
    const Vec3 detector_point = backproject(geom, c.p_prime[i]);
    const Vec2& n2d = c.base.n2d[i];
    // Contour tangent, lifted onto the detector plane in mm.
    const Vec3 tangent(-n2d.y() * geom.pixel_spacing.x(), n2d.x() * geom.pixel_spacing.y(), 0.0);
    const Vec3 normal = detector_point.cross(tangent).normalized();

    sys.a.row(row).head<3>() = x.cross(normal).transpose();
    sys.a.row(row).tail<3>() = normal.transpose();
    sys.b[row] = -normal.dot(x);
    sys.w[row] = c.weight[i];
    sys.source_index.push_back(i);
    ++row;
  }
  return sys;
}

SolveResult solve_weighted(const PpcSystem& sys, double rcond) {
  Eigen::Index kept = 0;
  for (Eigen::Index r = 0; r < sys.rows(); ++r) {
    if (sys.w[r] > 0.0) ++kept;
  }
  if (kept == 0) {
    throw Error(ErrorCode::kEmptySystem, "PPC system has no row with positive weight");
  }

  Eigen::MatrixXd m(kept, 6);
  Eigen::VectorXd rhs(kept);
  Eigen::Index out = 0;
  for (Eigen::Index r = 0; r < sys.rows(); ++r) {
    if (!(sys.w[r] > 0.0)) continue;
    m.row(out) = sys.w[r] * sys.a.row(r);
    rhs[out] = sys.w[r] * sys.b[r];
    ++out;
  }

  // Rotation columns carry mm-scale lever arms, translation columns unit
  // normals; equalize before factorizing.
  Vec6 scale;
  for (int j = 0; j < 6; ++j) {
    const double norm = m.col(j).norm();
    scale[j] = norm > 0.0 ? norm : 1.0;
    m.col(j) /= scale[j];
  }

  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sigma = svd.singularValues();
  const double sigma_max = sigma.size() > 0 ? sigma[0] : 0.0;

  SolveResult result;
  Eigen::VectorXd projected = svd.matrixU().transpose() * rhs;
  for (Eigen::Index k = 0; k < sigma.size(); ++k) {
    if (sigma_max > 0.0 && sigma[k] > rcond * sigma_max) {
      projected[k] /= sigma[k];
      ++result.rank;
    } else {
      projected[k] = 0.0;
    }
  }
  const Vec6 y = svd.matrixV() * projected;
  result.dv = MotionVector::from_vector(y.cwiseQuotient(scale));

  const double sigma_min = sigma.size() == 6 ? sigma[5] : 0.0;
  result.condition_number =
      sigma_min > 0.0 ? sigma_max / sigma_min : std::numeric_limits<double>::infinity();
  return result;
}

UpdateResult update_step(const SurfacePointSet& surface, const GradientImage2D& grad_flr,
                         const RigidTransform& pose, const Volume& volume,
                         const ProjectionGeometry& geom, const UpdateParams& params) {
  UpdateResult result;
  result.pose = pose;

  const ContourPointSet contours = select_contour_points(surface, pose, geom, params.contour_eps);
  result.diagnostics.n_contour = contours.size();

  if (const auto* oracle = std::get_if<OracleMatcher>(&params.matcher)) {
    result.correspondences = match_oracle(contours, oracle->t_gt, geom);
  } else {
    const auto& image = std::get<ImageMatcher>(params.matcher);
    const double step = params.drr_step > 0.0 ? params.drr_step : default_ray_step(volume);
    const GradientImage2D grad_drr =
        image_gradient(render_drr(volume, pose, geom, step), params.gradient);
    result.correspondences = match_along_normal(contours, grad_drr, grad_flr, image.params);
  }
  result.diagnostics.n_valid = result.correspondences.valid_count();

  try {
    result.correspondences = compute_weights(result.correspondences, params.weighting, pose, geom);
    PpcSystem sys = build_ppc_rows(result.correspondences, pose, geom);
    SolveResult solved = solve_weighted(sys, params.rcond);
    result.diagnostics.solver_rank = solved.rank;
    result.diagnostics.condition_number = solved.condition_number;

    // Further Gauss-Newton passes keep the planes and re-expand the rows at
    // the moved points.
    RigidTransform motion = exp_se3(solved.dv);
    for (int pass = 1; pass < params.linearizations; ++pass) {
      for (Eigen::Index r = 0; r < sys.rows(); ++r) {
        const Vec3 normal = sys.a.row(r).tail<3>().transpose();
        const Vec3 x = motion(pose(result.correspondences.base.w[sys.source_index[r]]));
        sys.a.row(r).head<3>() = x.cross(normal).transpose();
        sys.b[r] = -normal.dot(x);
      }
      solved = solve_weighted(sys, params.rcond);
      motion = compose(exp_se3(solved.dv), motion);
    }

    const MotionVector dv = log_se3(motion);
    result.diagnostics.rotation_norm = dv.omega.norm();
    result.diagnostics.translation_norm = dv.t.norm();

    if (params.max_depth_change > 0.0) {
      double depth_before = 0.0, depth_after = 0.0;
      for (Eigen::Index r = 0; r < sys.rows(); ++r) {
        const Vec3 x = pose(result.correspondences.base.w[sys.source_index[r]]);
        depth_before += sys.w[r] * x.z();
        depth_after += sys.w[r] * motion(x).z();
      }
      if (std::abs(depth_after / depth_before - 1.0) > params.max_depth_change) {
        result.no_update_reason = "DepthGate";
        return result;
      }
    }

    result.pose = compose(motion, pose);
    result.outcome = UpdateOutcome::kUpdated;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kEmptySystem && e.code() != ErrorCode::kDegenerateWeights) throw;
    result.outcome = UpdateOutcome::kNoUpdate;
    result.no_update_reason = std::string(to_string(e.code()));
  }
  return result;
}

}  // namespace ppcreg
