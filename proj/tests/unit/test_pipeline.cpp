#include <algorithm>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "ppcreg/pipeline.hpp"

using namespace ppcreg;

namespace {

ProjectionGeometry detector_256() {
  ProjectionGeometry g;
  g.sdd = 1000.0;
  g.width = 256;
  g.height = 256;
  g.pixel_spacing = {0.8, 0.8};
  g.principal_point = {127.5, 127.5};
  return g;
}

struct PairFixture {
  Volume volume = make_phantom(phantom_preset("sphere-pair"), 0);
  ProjectionGeometry geom = detector_256();
  SurfacePointSet surface = extract_surface_points(volume, CannyParams{});
  RigidTransform t_gt =
      compose(RigidTransform(Eigen::AngleAxisd(0.3, Vec3(0, 1, 1).normalized()).toRotationMatrix(),
                             Vec3(0, 0, 600)),
              RigidTransform::translation_only(-volume.center()));
  Image2D blank = Image2D(256, 256);

  RegistrationConfig oracle_config() const {
    RegistrationConfig cfg;
    cfg.update.matcher = OracleMatcher{t_gt};
    cfg.update.linearizations = 5;
    return cfg;
  }
};

}  // namespace

TEST_CASE("mtre identities") {
  const Volume v = make_phantom(phantom_preset("sphere"), 0);
  const SurfacePointSet s = extract_surface_points(v, CannyParams{});
  std::mt19937_64 rng(2);
  const RigidTransform t = testing::random_transform(rng);
  CHECK(mtre(t, t, s) == 0.0);
  // Voxel-center points have integer coordinates, so the offsets are exact.
  const RigidTransform id = RigidTransform::identity();
  CHECK(mtre(RigidTransform::translation_only({5, 0, 0}), id, s) == 5.0);
  CHECK(mtre(RigidTransform::translation_only({3, 0, -4}), id, s) == 5.0);
  CHECK(mtre(id, RigidTransform::translation_only({0, -5, 0}), s) == 5.0);
  // A rotation about the origin moves each point by 2 r sin(theta / 2).
  const std::vector<Vec3> ring = {{10, 0, 0}, {0, 10, 0}, {-10, 0, 0}};
  const RigidTransform rz = exp_se3({Vec3(0, 0, 0.5), Vec3::Zero()});
  CHECK(mtre(rz, id, ring) == doctest::Approx(20.0 * std::sin(0.25)).epsilon(1e-14));
  CHECK_ERROR_CODE(mtre(id, id, std::span<const Vec3>{}), ErrorCode::kEmptyPointSet);
}

TEST_CASE("reduction_factor examples") {
  CHECK(reduction_factor(20.0, 10.0) == 0.5);
  CHECK(reduction_factor(10.0, 12.0) == 0.0);
  CHECK(reduction_factor(10.0, 10.0) == 0.0);
  CHECK(reduction_factor(8.0, 0.0) == 1.0);
  CHECK_ERROR_CODE(reduction_factor(0.0, 1.0), ErrorCode::kUndefinedReduction);
  CHECK_ERROR_CODE(reduction_factor(-1.0, 1.0), ErrorCode::kUndefinedReduction);
}

TEST_CASE("epe examples") {
  PairFixture f;
  const RigidTransform pose = compose(RigidTransform::translation_only({2, -1, 4}), f.t_gt);
  const ContourPointSet cs = select_contour_points(f.surface, pose, f.geom, 0.1);
  CorrespondenceSet c = match_oracle(cs, f.t_gt, f.geom);
  REQUIRE(c.valid_count() > 0);
  CHECK(epe(c, f.t_gt, pose, f.geom) == 0.0);
  for (Vec2& dp : c.dp) dp += Vec2(3, -4);
  CHECK(epe(c, f.t_gt, pose, f.geom) == doctest::Approx(5.0).epsilon(1e-9));
  c.valid.assign(c.size(), 0);
  CHECK_ERROR_CODE(epe(c, f.t_gt, pose, f.geom), ErrorCode::kEmptyPointSet);
}

TEST_CASE("sample_initial_transform") {
  PairFixture f;
  SUBCASE("zero target returns the ground truth") {
    std::mt19937_64 rng(1);
    const EvaluationSample s = sample_initial_transform(f.t_gt, f.surface.points, 0.0, rng);
    CHECK(mtre(s.t_init, f.t_gt, f.surface) == 0.0);
    CHECK(s.achieved_mtre == 0.0);
  }
  SUBCASE("large targets are reached") {
    std::mt19937_64 rng(2);
    for (double target : {0.5, 20.0, 45.0}) {
      const EvaluationSample s = sample_initial_transform(f.t_gt, f.surface.points, target, rng);
      CHECK(std::abs(mtre(s.t_init, f.t_gt, f.surface) - target) <= 1e-3);
      CHECK(s.achieved_mtre == mtre(s.t_init, f.t_gt, f.surface));
      CHECK(s.target_mtre == target);
    }
  }
  SUBCASE("a thousand draws all land within 0.1 mm") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> target(0.0, 45.0);
    std::vector<Vec3> points;
    for (std::size_t i = 0; i < f.surface.size(); i += 8) points.push_back(f.surface.points[i]);
    double worst = 0.0;
    for (int draw = 0; draw < 1000; ++draw) {
      const double t = target(rng);
      const EvaluationSample s = sample_initial_transform(f.t_gt, points, t, rng);
      worst = std::max(worst, std::abs(mtre(s.t_init, f.t_gt, points) - t));
    }
    CHECK(worst <= 0.1);
  }
  SUBCASE("same seed, same sample") {
    std::mt19937_64 a(77), b(77);
    const EvaluationSample s1 = sample_initial_transform(f.t_gt, f.surface.points, 12.0, a);
    const EvaluationSample s2 = sample_initial_transform(f.t_gt, f.surface.points, 12.0, b);
    CHECK(testing::max_abs_diff(s1.t_init.rotation(), s2.t_init.rotation()) == 0.0);
    CHECK(s1.t_init.translation() == s2.t_init.translation());
  }
  SUBCASE("errors") {
    std::mt19937_64 rng(4);
    CHECK_ERROR_CODE(sample_initial_transform(f.t_gt, f.surface.points, -1.0, rng),
                     ErrorCode::kInvalidArgument);
    CHECK_ERROR_CODE(sample_initial_transform(f.t_gt, {}, 1.0, rng), ErrorCode::kEmptyPointSet);
  }
}

TEST_CASE("run_registration with the oracle matcher") {
  PairFixture f;
  const RegistrationContext context =
      initialize_registration(f.volume, f.blank, f.geom, f.oracle_config());

  SUBCASE("starting at the ground truth converges immediately") {
    const RegistrationReport r = run_registration(context, f.t_gt, f.oracle_config(), f.t_gt);
    CHECK(r.converged);
    CHECK(r.updates() == 1);
    CHECK(r.mtre_trace.back() < 1e-9);
    CHECK(r.reduction_factors.front() == 0.0);
  }
  SUBCASE("twenty millimetres out") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 5; ++trial) {
      const EvaluationSample s = sample_initial_transform(f.t_gt, context.surface.points, 20.0, rng);
      const RegistrationReport r = run_registration(context, s.t_init, f.oracle_config(), f.t_gt);
      CHECK(r.mtre_trace.front() == doctest::Approx(20.0).epsilon(1e-3));
      CHECK(r.mtre_trace.back() < 0.1);
      CHECK(r.poses.size() == r.updates() + 1);
      CHECK(r.mtre_trace.size() == r.poses.size());
      CHECK(r.reduction_factors.size() == r.updates());
      REQUIRE(r.diagnostics.front().epe_px.has_value());
      CHECK(*r.diagnostics.front().epe_px < 1e-9);
    }
  }
  SUBCASE("the iteration cap is honoured") {
    RegistrationConfig cfg = f.oracle_config();
    cfg.max_iterations = 1;
    const RigidTransform init = compose(RigidTransform::translation_only({5, 0, 0}), f.t_gt);
    const RegistrationReport r = run_registration(context, init, cfg, f.t_gt);
    CHECK(r.updates() == 1);
    CHECK_FALSE(r.converged);
  }
  SUBCASE("no ground truth, no trace") {
    const RigidTransform init = compose(RigidTransform::translation_only({1, 0, 0}), f.t_gt);
    const RegistrationReport r = run_registration(context, init, f.oracle_config());
    CHECK(r.mtre_trace.empty());
    CHECK(r.reduction_factors.empty());
    CHECK_FALSE(r.diagnostics.front().epe_px.has_value());
  }
}

TEST_CASE("registration input validation") {
  PairFixture f;
  CHECK_ERROR_CODE(initialize_registration(f.volume, Image2D(10, 10), f.geom, RegistrationConfig{}),
                   ErrorCode::kDimensionMismatch);
  RegistrationConfig bad;
  bad.max_iterations = 0;
  CHECK_ERROR_CODE(bad.validate(), ErrorCode::kInvalidArgument);
  bad = RegistrationConfig{};
  bad.t_tol = 0.0;
  CHECK_ERROR_CODE(bad.validate(), ErrorCode::kInvalidArgument);
  bad = RegistrationConfig{};
  bad.update.linearizations = 0;
  CHECK_ERROR_CODE(bad.validate(), ErrorCode::kInvalidArgument);
}

TEST_CASE("percentile examples") {
  CHECK(percentile({1, 2, 3, 4}, 50) == 2.5);
  CHECK(percentile({4, 1, 3, 2}, 75) == 3.25);
  CHECK(percentile({7}, 95) == 7.0);
  CHECK(percentile({1, 2, 3}, 0) == 1.0);
  CHECK(percentile({1, 2, 3}, 100) == 3.0);
  std::vector<double> hundred(100);
  for (int i = 0; i < 100; ++i) hundred[i] = i + 1.0;
  CHECK(percentile(hundred, 95) == doctest::Approx(95.05).epsilon(1e-12));
  CHECK_ERROR_CODE(percentile({}, 50), ErrorCode::kEmptyPointSet);
}

TEST_CASE("percentile agrees with a sort-and-interpolate oracle") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 50.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> values(1 + trial * 7);
    for (double& x : values) x = u(rng);
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    for (double pct : {50.0, 75.0, 95.0}) {
      // Blend of the two order statistics around the fractional rank.
      const double h = (sorted.size() - 1) * pct / 100.0;
      const std::size_t i = static_cast<std::size_t>(h);
      const double expected =
          i + 1 < sorted.size() ? sorted[i] * (1 - (h - i)) + sorted[i + 1] * (h - i) : sorted[i];
      CHECK(percentile(values, pct) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("summarize examples") {
  const std::vector<SampleResult> results = {
      {0, 0, 0, 10.0, 5.0}, {1, 1, 0, 20.0, 25.0}, {2, 0, 0, 30.0, 15.0}, {3, 1, 0, 40.0, 40.0}};
  const Summary s = summarize(results, "ppc-oracle-score");
  CHECK(s.initial.name == "initial");
  CHECK(s.method.name == "ppc-oracle-score");
  CHECK(s.initial.p50 == 25.0);
  CHECK(s.initial.mtre_mean == 25.0);
  CHECK(s.initial.mtre_std == doctest::Approx(std::sqrt(125.0)));
  CHECK_FALSE(s.initial.rf_mean.has_value());
  CHECK(s.method.p50 == 20.0);
  CHECK(s.method.p75 == 28.75);
  CHECK(s.method.mtre_mean == 21.25);
  CHECK(s.method.mtre_std == doctest::Approx(std::sqrt(167.1875)));
  REQUIRE(s.method.rf_mean.has_value());
  CHECK(*s.method.rf_mean == 0.25);
  CHECK(*s.method.rf_std == 0.25);
  CHECK(s.samples.size() == 4);
  CHECK_ERROR_CODE(summarize({}, "x"), ErrorCode::kEmptyPointSet);

  // A sample already at zero error counts as no reduction.
  const std::vector<SampleResult> zero = {{0, 0, 0, 0.0, 0.0}};
  CHECK(*summarize(zero, "x").method.rf_mean == 0.0);
}
