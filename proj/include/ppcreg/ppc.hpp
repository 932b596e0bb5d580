#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "ppcreg/correspondence.hpp"
#include "ppcreg/geometry.hpp"
#include "ppcreg/projector.hpp"
#include "ppcreg/volume.hpp"

namespace ppcreg {

/// One row per valid correspondence: A_i = [(x_i x n_i)^T, n_i^T],
/// b_i = -n_i . x_i, where n_i is the normal of the plane through the
/// source, the matched detector point and the contour tangent.
struct PpcSystem {
  Eigen::Matrix<double, Eigen::Dynamic, 6> a;
  Eigen::VectorXd b;
  Eigen::VectorXd w;
  std::vector<std::size_t> source_index;  // correspondence index per row

  Eigen::Index rows() const { return a.rows(); }
};

/// Throws kEmptySystem when no correspondence is valid.
PpcSystem build_ppc_rows(const CorrespondenceSet& c, const RigidTransform& pose,
                         const ProjectionGeometry& geom);

struct SolveResult {
  MotionVector dv;
  int rank = 0;
  double condition_number = 0.0;

  bool degenerate() const { return rank < 6; }
};

/// argmin || diag(w) (A dv - b) || through a truncated SVD of the
/// column-normalized weighted matrix. Rows with w == 0 are dropped before
/// factorization. Throws kEmptySystem if no row has positive weight.
SolveResult solve_weighted(const PpcSystem& sys, double rcond = 1e-10);

struct ImageMatcher {
  MatchParams params;
};

struct OracleMatcher {
  RigidTransform t_gt;
};

using Matcher = std::variant<ImageMatcher, OracleMatcher>;

struct UpdateParams {
  Matcher matcher = ImageMatcher{};
  double contour_eps = 0.1;
  WeightingParams weighting;
  double drr_step = 0.0;  // <= 0 selects default_ray_step()
  GradientOperator gradient = GradientOperator::kCentralDifference;
  double rcond = 1e-10;
  /// Gauss-Newton passes over the fixed correspondence planes (1: one
  /// linear solve).
  int linearizations = 1;
  /// Rejects a step (kNoUpdate) that changes the mean camera depth of the
  /// weighted contour points by more than this fraction. 0 disables.
  double max_depth_change = 0.0;
};

struct UpdateDiagnostics {
  std::size_t n_contour = 0;
  std::size_t n_valid = 0;
  double condition_number = 0.0;
  double rotation_norm = 0.0;     // |omega|, rad
  double translation_norm = 0.0;  // |t|, mm
  int solver_rank = 0;
  std::optional<double> epe_px;
};

enum class UpdateOutcome { kUpdated, kNoUpdate };

struct UpdateResult {
  RigidTransform pose;
  UpdateDiagnostics diagnostics;
  UpdateOutcome outcome = UpdateOutcome::kNoUpdate;
  std::string no_update_reason;
  CorrespondenceSet correspondences;
};

/// One iteration: render the DRR gradient at `pose` (image matcher only),
/// select contours, match, weight, solve, and left-compose exp(dv).
/// Empty systems, all-zero weights and steps rejected by the depth gate come
/// back as kNoUpdate with the pose unchanged.
UpdateResult update_step(const SurfacePointSet& surface, const GradientImage2D& grad_flr,
                         const RigidTransform& pose, const Volume& volume,
                         const ProjectionGeometry& geom, const UpdateParams& params);

}  // namespace ppcreg
