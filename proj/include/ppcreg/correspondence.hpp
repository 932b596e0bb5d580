#pragma once

#include <cstdint>
#include <vector>

#include "ppcreg/geometry.hpp"
#include "ppcreg/projector.hpp"
#include "ppcreg/volume.hpp"

namespace ppcreg {

/// Surface points whose gradient is perpendicular to the viewing ray under
/// the current pose, with their projections and 2D search directions.
struct ContourPointSet {
  std::vector<Vec3> w;    // mm, volume frame
  std::vector<Vec3> g;    // unit gradients, volume frame
  std::vector<Vec2> p;    // projections under the current pose, pixels
  std::vector<Vec2> n2d;  // unit image-plane normal of the contour

  std::size_t size() const { return w.size(); }
  bool empty() const { return w.empty(); }
};

/// Keeps point i iff |R g_i . r_i| < eps, r_i the unit ray to pose(w_i).
/// Points behind the source or projecting off the detector are dropped.
ContourPointSet select_contour_points(const SurfacePointSet& surface, const RigidTransform& pose,
                                      const ProjectionGeometry& geom, double eps = 0.1);

struct CorrespondenceSet {
  ContourPointSet base;
  std::vector<Vec2> dp;
  std::vector<Vec2> p_prime;  // p + dp
  std::vector<double> score;  // similarity in [-1, 1]
  std::vector<std::uint8_t> valid;
  std::vector<double> weight;  // 0 wherever !valid

  std::size_t size() const { return dp.size(); }
  std::size_t valid_count() const;
};

struct MatchParams {
  int search_radius = 20;  // px, along n2d
  int half_width = 5;      // patch is (2h+1)^2
  double min_score = 0.3;
};

/// 1-D search along each contour normal: NCC of gradient-magnitude patches
/// (DRR patch at p vs fluoro patch at p + k*n2d, k in [-R, R]), parabolic
/// sub-pixel refinement clamped to +-0.5 px. Ties go to the smallest |k|.
/// Flat patches have no defined score and are never valid.
CorrespondenceSet match_along_normal(const ContourPointSet& contours,
                                     const GradientImage2D& grad_drr,
                                     const GradientImage2D& grad_flr, const MatchParams& params);

/// Ground-truth matcher: p'_i = project(t_gt(w_i)), score 1. Used to separate
/// solver behaviour from matching quality.
CorrespondenceSet match_oracle(const ContourPointSet& contours, const RigidTransform& t_gt,
                               const ProjectionGeometry& geom);

enum class WeightingStrategy { kUniform, kScore, kScoreIrls };

struct WeightingParams {
  WeightingStrategy strategy = WeightingStrategy::kScore;
  double gamma = 2.0;
  double huber_k = 1.345;
};

/// uniform: 1; score: max(score, 0)^gamma; score_irls: score weights times
/// the Huber factor min(1, delta/|r_i|) of an unweighted PPC pre-solve,
/// delta = huber_k * MAD(r). Invalid entries always get 0.
/// Throws kDegenerateWeights when every weight ends up 0.
CorrespondenceSet compute_weights(CorrespondenceSet c, const WeightingParams& params,
                                  const RigidTransform& pose, const ProjectionGeometry& geom);

std::string to_string(WeightingStrategy strategy);
WeightingStrategy weighting_strategy_from_string(const std::string& name);

}  // namespace ppcreg
