#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ppcreg/correspondence.hpp"
#include "ppcreg/geometry.hpp"
#include "ppcreg/ppc.hpp"
#include "ppcreg/projector.hpp"
#include "ppcreg/volume.hpp"

namespace ppcreg {

// Metrics -------------------------------------------------------------------

/// Mean distance between t_est(w) and t_gt(w). Throws kEmptyPointSet.
double mtre(const RigidTransform& t_est, const RigidTransform& t_gt,
            std::span<const Vec3> points);
double mtre(const RigidTransform& t_est, const RigidTransform& t_gt,
            const SurfacePointSet& points);

/// 1 - after/before when the error strictly decreases, otherwise 0.
/// Throws kUndefinedReduction for before <= 0.
double reduction_factor(double mtre_before, double mtre_after);

/// Mean |dp_i - (project(t_gt(w_i)) - p_i)| over valid correspondences.
/// Throws kEmptyPointSet when nothing is valid.
double epe(const CorrespondenceSet& c, const RigidTransform& t_gt, const RigidTransform& pose,
           const ProjectionGeometry& geom);

// Pose sampling -------------------------------------------------------------

struct EvaluationSample {
  RigidTransform t_gt;
  RigidTransform t_init;
  double target_mtre = 0.0;
  double achieved_mtre = 0.0;
  int view_id = 0;
  std::uint64_t seed = 0;
};

/// Draws a random unit twist in the camera frame (uniform rotation axis,
/// uniform translation direction, rotation share uniform in [0.2, 0.8]
/// before normalization) and bisects its magnitude until the mTRE of
/// exp(lambda*dv) o t_gt hits target_mtre within 1e-3 mm.
/// Throws kBisectionFailed if no bracket or no convergence in 100 steps.
EvaluationSample sample_initial_transform(const RigidTransform& t_gt,
                                          std::span<const Vec3> points, double target_mtre,
                                          std::mt19937_64& rng);

// Registration --------------------------------------------------------------

struct RegistrationConfig {
  int max_iterations = 30;
  double omega_tol = 1e-4;  // rad
  double t_tol = 0.01;      // mm
  CannyParams canny;
  UpdateParams update;
  /// Evaluate mTRE on the contour points of each update instead of the
  /// whole surface point set.
  bool mtre_on_contour = false;

  void validate() const;
};

struct RegistrationReport {
  std::vector<RigidTransform> poses;  // poses[0] = t_init, then one per update
  std::vector<double> mtre_trace;     // parallel to poses; empty without ground truth
  std::vector<double> reduction_factors;  // one per update
  std::vector<UpdateDiagnostics> diagnostics;
  std::vector<UpdateOutcome> outcomes;
  bool converged = false;
  double wall_time = 0.0;  // seconds

  std::size_t updates() const { return diagnostics.size(); }
  const RigidTransform& final_pose() const { return poses.back(); }
};

/// Initialization results shared by every iteration (and by every sample
/// registering against the same fluoro image).
struct RegistrationContext {
  const Volume* volume = nullptr;
  SurfacePointSet surface;
  GradientImage2D grad_flr;
  ProjectionGeometry geom;
};

/// Extracts the surface points and the fluoro gradient once.
RegistrationContext initialize_registration(const Volume& volume, const Image2D& fluoro,
                                            const ProjectionGeometry& geom,
                                            const RegistrationConfig& config);

/// Iterates update_step until |omega| < omega_tol and |t| < t_tol or the
/// iteration cap. When t_gt is given the report carries the mTRE trace and
/// per-update reduction factors and EPE.
RegistrationReport run_registration(const RegistrationContext& context,
                                    const RigidTransform& t_init, const RegistrationConfig& config,
                                    const std::optional<RigidTransform>& t_gt = std::nullopt);

RegistrationReport run_registration(const Volume& volume, const Image2D& fluoro,
                                    const ProjectionGeometry& geom, const RigidTransform& t_init,
                                    const RegistrationConfig& config,
                                    const std::optional<RigidTransform>& t_gt = std::nullopt);

// Summaries -----------------------------------------------------------------

struct SampleResult {
  std::size_t sample_id = 0;
  int view_id = 0;
  std::uint64_t seed = 0;
  double mtre_before = 0.0;
  double mtre_after = 0.0;
};

/// One table row: percentiles and mean/std of the mTRE, and mean/std of the
/// reduction factor (absent on the "initial" row).
struct SummaryRow {
  std::string name;
  double p50 = 0.0;
  double p75 = 0.0;
  double p95 = 0.0;
  double mtre_mean = 0.0;
  double mtre_std = 0.0;
  std::optional<double> rf_mean;
  std::optional<double> rf_std;
};

struct Summary {
  SummaryRow initial;
  SummaryRow method;
  std::vector<SampleResult> samples;  // raw (before, after) pairs
};

/// Linear interpolation between order statistics at rank pct/100 * (n-1).
double percentile(std::vector<double> values, double pct);

/// Population statistics; throws kEmptyPointSet for an empty result list.
Summary summarize(std::span<const SampleResult> results, const std::string& method_name);

}  // namespace ppcreg
