// Acceptance gate: one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>
#include <sys/wait.h>

#include <fmt/format.h>

#include "ppcreg/harness.hpp"
#include "ppcreg/io.hpp"
#include "ppcreg/pipeline.hpp"

using namespace ppcreg;
namespace fs = std::filesystem;
namespace h = ppcreg::harness;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Check {
  int id;
  std::string name;
  double budget_s;  // 0: no runtime bound
  std::function<Outcome()> run;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
}

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "ppcreg_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = fmt::format("\"{}\" {} >\"{}\" 2>&1", PPCREG_CLI, args, log.string());
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    rows.push_back(fields);
  }
  return rows;
}

ProjectionGeometry detector_256() {
  return h::ExperimentConfig{}.geometry;
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Vec3(n(rng), n(rng), n(rng)).normalized();
}

Mat3 random_rotation(std::mt19937_64& rng) {
  return Eigen::AngleAxisd(std::uniform_real_distribution<double>(0.0, 3.1)(rng), random_unit(rng))
      .toRotationMatrix();
}

// 1 -------------------------------------------------------------------------

Outcome ppc_rows() {
  const ProjectionGeometry g = detector_256();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(-60.0, 60.0), px(0.0, 255.0), ang(0.0, 2 * std::numbers::pi);
  const double eps = 1e-6;
  double worst = 0.0;
  std::size_t rows = 0;
  for (int config = 0; config < 100; ++config) {
    const RigidTransform pose(random_rotation(rng), Vec3(u(rng), u(rng), 600.0 + u(rng)));
    CorrespondenceSet c;
    for (int i = 0; i < 10; ++i) {
      const Vec3 w(u(rng), u(rng), u(rng));
      const double a = ang(rng);
      const Vec2 p = project(g, pose(w));
      const Vec2 p_prime(px(rng), px(rng));
      c.base.w.push_back(w);
      c.base.g.push_back(Vec3::UnitZ());
      c.base.p.push_back(p);
      c.base.n2d.push_back(Vec2(std::cos(a), std::sin(a)));
      c.dp.push_back(p_prime - p);
      c.p_prime.push_back(p_prime);
      c.score.push_back(1.0);
      c.valid.push_back(1);
      c.weight.push_back(1.0);
    }
    const PpcSystem sys = build_ppc_rows(c, pose, g);
    for (Eigen::Index r = 0; r < sys.rows(); ++r) {
      const std::size_t i = sys.source_index[r];
      // Plane through the source and two detector points along the tangent.
      const Vec2 tangent(-c.base.n2d[i].y(), c.base.n2d[i].x());
      const Vec3 normal =
          backproject(g, c.p_prime[i]).cross(backproject(g, c.p_prime[i] + tangent)).normalized();
      const Vec3 x = pose(c.base.w[i]);
      for (int k = 0; k < 6; ++k) {
        Vec6 e = Vec6::Zero();
        e[k] = eps;
        const double plus = normal.dot(exp_se3(MotionVector::from_vector(e))(x));
        const double minus = normal.dot(exp_se3(MotionVector::from_vector(-e))(x));
        worst = std::max(worst, std::abs(sys.a(r, k) - (plus - minus) / (2 * eps)));
      }
      ++rows;
    }
  }
  return {worst <= 1e-4, fmt::format("{} rows, max |A - FD| = {:.3g}", rows, worst)};
}

// 2 -------------------------------------------------------------------------

Outcome solver() {
  std::mt19937_64 rng(202);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst_rel = 0.0, worst_zero = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Vec6 truth;
    for (int k = 0; k < 3; ++k) truth[k] = 0.05 * n(rng);
    for (int k = 3; k < 6; ++k) truth[k] = 5.0 * n(rng);
    const int rows = 20 + trial;
    PpcSystem sys;
    sys.a.resize(rows, 6);
    sys.w.resize(rows);
    for (int r = 0; r < rows; ++r) {
      const Vec3 x(40 * n(rng), 40 * n(rng), 600 + 40 * n(rng));
      const Vec3 normal = random_unit(rng);
      sys.a.row(r).head<3>() = x.cross(normal).transpose();
      sys.a.row(r).tail<3>() = normal.transpose();
      sys.w[r] = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    }
    sys.b = sys.a * truth;
    const Vec6 dv = solve_weighted(sys).dv.as_vector();
    worst_rel = std::max(worst_rel, (dv - truth).norm() / truth.norm());

    // Zero weights on a quarter of the rows, whose right-hand sides are garbage.
    PpcSystem noisy = sys;
    for (int r = 0; r < rows; ++r) noisy.b[r] += 0.3 * n(rng);
    const int cut = rows - rows / 4;
    PpcSystem deleted;
    deleted.a = noisy.a.topRows(cut);
    deleted.b = noisy.b.head(cut);
    deleted.w = noisy.w.head(cut);
    for (int r = cut; r < rows; ++r) {
      noisy.w[r] = 0.0;
      noisy.b[r] = 1e8 * n(rng);
    }
    const Vec6 a = solve_weighted(noisy).dv.as_vector();
    const Vec6 b = solve_weighted(deleted).dv.as_vector();
    worst_zero = std::max(worst_zero, (a - b).cwiseAbs().maxCoeff());
  }
  return {worst_rel <= 1e-9 && worst_zero <= 1e-12,
          fmt::format("max relative error {:.3g}, max zero-weight deviation {:.3g}", worst_rel,
                      worst_zero)};
}

// 3 -------------------------------------------------------------------------

Outcome oracle_convergence() {
  h::ExperimentConfig cfg;
  cfg.matcher = h::MatcherMode::kOracle;
  cfg.sampling.count = 50;
  cfg.sampling.mtre_min = 0.0;
  cfg.sampling.mtre_max = 20.0;
  cfg.sampling.seed = 303;
  cfg.registration.max_iterations = 10;
  const Volume volume = h::load_or_make_volume(cfg);
  const SurfacePointSet surface = extract_surface_points(volume, cfg.registration.canny);
  const std::vector<EvaluationSample> samples = h::sample_poses(cfg, volume, surface);

  std::map<int, RegistrationContext> contexts;
  int hits = 0;
  double worst = 0.0;
  for (const EvaluationSample& s : samples) {
    if (!contexts.contains(s.view_id)) {
      RegistrationContext ctx;
      ctx.volume = &volume;
      ctx.surface = surface;
      ctx.geom = cfg.geometry;
      contexts.emplace(s.view_id, std::move(ctx));
    }
    const RegistrationReport r =
        run_registration(contexts.at(s.view_id), s.t_init, h::bind_matcher(cfg, s.t_gt), s.t_gt);
    const double final_mtre = r.mtre_trace.back();
    if (final_mtre < 0.1) ++hits;
    worst = std::max(worst, final_mtre);
  }
  const double rate = hits / static_cast<double>(samples.size());
  return {rate >= 0.95,
          fmt::format("{}/{} samples below 0.1 mm ({:.0f}%), worst {:.3g} mm", hits, samples.size(),
                      100 * rate, worst)};
}

// 4 -------------------------------------------------------------------------

struct EvalRun {
  bool ok = false;
  std::string error;
  double initial_mean = 0.0, final_mean = 0.0, rf_mean = 0.0;
  bool columns_ok = false;
};

EvalRun eval_update(const std::string& matcher) {
  const fs::path dir = work_dir() / ("eval_" + matcher);
  spit(dir / "config.json", R"({"sampling": {"count": 200, "mtre_range": [0, 45], "seed": 404}})");
  EvalRun run;
  const int code = run_cli(fmt::format("eval-update --config \"{}\" --matcher {} --out \"{}\"",
                                       (dir / "config.json").string(), matcher, dir.string()),
                           dir / "log.txt");
  if (code != 0) {
    run.error = fmt::format("exit code {}: {}", code, slurp(dir / "log.txt"));
    return run;
  }
  const auto summary = read_csv(dir / "summary.csv");
  const auto samples = read_csv(dir / "samples.csv");
  const std::vector<std::string> header = {"name", "p50", "p75", "p95", "mtre_mean", "mtre_std",
                                           "rf_mean", "rf_std"};
  run.columns_ok = summary.size() == 3 && summary[0] == header && summary[1].size() == 8 &&
                   summary[2].size() == 8 && summary[1][0] == "initial" && summary[1][6].empty() &&
                   samples.size() == 201;
  if (!run.columns_ok) {
    run.error = "unexpected CSV layout";
    return run;
  }
  run.initial_mean = std::stod(summary[1][4]);
  run.final_mean = std::stod(summary[2][4]);
  run.rf_mean = std::stod(summary[2][6]);
  run.ok = true;
  return run;
}

Outcome single_update() {
  const auto t0 = std::chrono::steady_clock::now();
  const EvalRun oracle = eval_update("oracle");
  const double oracle_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto t1 = std::chrono::steady_clock::now();
  const EvalRun image = eval_update("image");
  const double image_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
  if (!oracle.ok || !image.ok) {
    return {false, fmt::format("eval-update failed: {}{}", oracle.error, image.error)};
  }
  const bool oracle_pass = oracle.rf_mean >= 0.5 && oracle_s < 600.0;
  const bool image_pass = image.rf_mean >= 0.3 && image.final_mean < image.initial_mean && image_s < 600.0;
  return {oracle_pass && image_pass,
          fmt::format("oracle rf {:.3f} (need >= 0.5) [{}] in {:.0f} s; image rf {:.3f} (need >= 0.3), "
                      "mTRE {:.2f} -> {:.2f} mm [{}] in {:.0f} s",
                      oracle.rf_mean, oracle_pass ? "ok" : "miss", oracle_s, image.rf_mean,
                      image.initial_mean, image.final_mean, image_pass ? "ok" : "miss", image_s)};
}

// 5 -------------------------------------------------------------------------

Outcome metric_identities() {
  const Volume v = make_phantom(phantom_preset("vertebra"), 0);
  const SurfacePointSet s = extract_surface_points(v, CannyParams{});
  const RigidTransform t = h::view_pose(v, h::ExperimentConfig{}, 1);
  const RigidTransform id = RigidTransform::identity();
  // Voxel centers sit on integer coordinates, so a 5 mm shift is exact.
  const double same = mtre(t, t, s);
  const double five = mtre(RigidTransform::translation_only({0, 5, 0}), id, s);
  const double rf_half = reduction_factor(20.0, 10.0);
  const double rf_worse = reduction_factor(10.0, 12.0);

  const ProjectionGeometry g = detector_256();
  const ContourPointSet cs = select_contour_points(s, compose(RigidTransform::translation_only({2, 1, -3}), t), g);
  const CorrespondenceSet perfect = match_oracle(cs, t, g);
  const double flow = epe(perfect, t, compose(RigidTransform::translation_only({2, 1, -3}), t), g);

  const bool pass = same == 0.0 && five == 5.0 && rf_half == 0.5 && rf_worse == 0.0 && flow == 0.0;
  return {pass, fmt::format("mtre(T,T)={}, 5 mm offset -> {}, rf(20,10)={}, rf(10,12)={}, perfect EPE={}",
                            same, five, rf_half, rf_worse, flow)};
}

// 6 -------------------------------------------------------------------------

Outcome drr_checks() {
  ProjectionGeometry g;
  g.sdd = 1000.0;
  g.width = 65;
  g.height = 65;
  g.pixel_spacing = {1.0, 1.0};
  g.principal_point = {32.0, 32.0};
  const double step = 0.25;

  // Unit-density cube, 100 mm on a side, centered on the optical axis.
  PhantomSpec cube_spec;
  cube_spec.dims = {128, 128, 128};
  const Vec3 c = 0.5 * Vec3(127, 127, 127);
  cube_spec.primitives.push_back({PrimitiveKind::kBox, c, Vec3::Zero(), Vec3::Constant(50.0), 1.0});
  const Volume cube = make_phantom(cube_spec, 0);
  const RigidTransform pose = RigidTransform::translation_only(Vec3(0, 0, 600) - c);
  const double path = render_drr(cube, pose, g, step).at(32, 32);
  const bool path_ok = std::abs(path - 100.0) <= 2.0 * step;

  const Volume empty(cube.dims(), cube.spacing(), cube.origin());
  const Image2D zero = render_drr(empty, pose, g, step);
  const bool empty_ok = std::all_of(zero.data.begin(), zero.data.end(), [](double x) { return x == 0.0; });

  const Volume a = make_phantom(phantom_preset("vertebra"), 0);
  // Disjoint supports keep the mixed volume exact in float.
  const Volume jittered = make_phantom(phantom_preset("vertebra"), 1);
  Volume b(a.dims(), a.spacing(), a.origin());
  Volume mix(a.dims(), a.spacing(), a.origin());
  for (std::size_t n = 0; n < mix.voxel_count(); ++n) {
    b.data()[n] = a.data()[n] == 0.0f ? jittered.data()[n] : 0.0f;
    mix.data()[n] = 2.0f * a.data()[n] - 0.5f * b.data()[n];
  }
  const RigidTransform view = h::view_pose(a, h::ExperimentConfig{}, 2);
  const ProjectionGeometry full = detector_256();
  const Image2D ia = render_drr(a, view, full, 0.5);
  const Image2D ib = render_drr(b, view, full, 0.5);
  const Image2D im = render_drr(mix, view, full, 0.5);
  double lin = 0.0;
  for (std::size_t n = 0; n < im.data.size(); ++n) {
    lin = std::max(lin, std::abs(im.data[n] - (2.0 * ia.data[n] - 0.5 * ib.data[n])));
  }
  const bool lin_ok = lin <= 1e-9;
  return {path_ok && empty_ok && lin_ok,
          fmt::format("cube path {:.4f} mm (100 +- {}), empty volume {}, linearity error {:.3g}", path,
                      2.0 * step, empty_ok ? "zero" : "NONZERO", lin)};
}

// 7 -------------------------------------------------------------------------

Outcome shift_recovery() {
  const h::ExperimentConfig cfg;
  const Volume volume = h::load_or_make_volume(cfg);
  const SurfacePointSet surface = extract_surface_points(volume, cfg.registration.canny);
  const RigidTransform pose = h::view_pose(volume, cfg, 0);
  const ProjectionGeometry g = cfg.geometry;
  const double step = default_ray_step(volume);
  const GradientImage2D grad_drr = image_gradient(render_drr(volume, pose, g, step));
  const Image2D mag = gradient_magnitude(grad_drr);
  const double mag_max = *std::max_element(mag.data.begin(), mag.data.end());
  const ContourPointSet contours = select_contour_points(surface, pose, g, cfg.registration.update.contour_eps);

  // High contrast: image gradient at the contour point of at least 20% of the
  // strongest gradient in the image.
  std::vector<std::size_t> strong;
  for (std::size_t i = 0; i < contours.size(); ++i) {
    if (sample_bilinear(mag, contours.p[i]) >= 0.2 * mag_max) strong.push_back(i);
  }
  if (strong.empty()) return {false, "no high-contrast contour points"};

  // Shifting the principal point moves the whole projection rigidly, so the
  // fluoro image is the DRR displaced by exactly 4 px along the bin direction.
  constexpr int kBins = 36;
  std::vector<std::vector<std::size_t>> bins(kBins);
  for (std::size_t i : strong) {
    const Vec2& n = contours.n2d[i];
    const double a = std::atan2(n.y(), n.x()) + std::numbers::pi;
    bins[std::min(kBins - 1, static_cast<int>(a / (2 * std::numbers::pi) * kBins))].push_back(i);
  }
  std::size_t good = 0;
  for (int b = 0; b < kBins; ++b) {
    if (bins[b].empty()) continue;
    const double a = (b + 0.5) * 2 * std::numbers::pi / kBins - std::numbers::pi;
    const Vec2 dir(std::cos(a), std::sin(a));
    ProjectionGeometry shifted = g;
    shifted.principal_point += 4.0 * dir;
    const GradientImage2D grad_flr = image_gradient(render_drr(volume, pose, shifted, step));
    ContourPointSet subset;
    for (std::size_t i : bins[b]) {
      subset.w.push_back(contours.w[i]);
      subset.g.push_back(contours.g[i]);
      subset.p.push_back(contours.p[i]);
      subset.n2d.push_back(contours.n2d[i]);
    }
    const CorrespondenceSet c =
        match_along_normal(subset, grad_drr, grad_flr, cfg.registration.update.matcher.index() == 0
                                                           ? std::get<ImageMatcher>(cfg.registration.update.matcher).params
                                                           : MatchParams{});
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (c.valid[k] && (c.dp[k] - 4.0 * subset.n2d[k]).norm() <= 0.5) ++good;
    }
  }
  const double rate = good / static_cast<double>(strong.size());
  return {rate >= 0.9, fmt::format("{}/{} high-contrast points within 0.5 px ({:.1f}%)", good, strong.size(),
                                   100 * rate)};
}

// 8 -------------------------------------------------------------------------

Outcome determinism() {
  const fs::path root = work_dir() / "determinism";
  spit(root / "config.json", R"({"sampling": {"count": 6, "seed": 808}})");
  const std::string cfg = fmt::format("--config \"{}\"", (root / "config.json").string());
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"phantom", "phantom --seed 5"},
      {"render", "render --view 3"},
      {"register", "register --init-mtre 12 --view 1 --overlay --max-iterations 8"},
      {"eval-update", "eval-update"},
      {"sample-poses", "sample-poses"},
  };
  std::vector<std::string> mismatches;
  std::size_t files = 0;
  for (const auto& [name, args] : commands) {
    std::vector<std::map<std::string, std::string>> outputs;
    fs::create_directories(root / name);
    for (const auto& [tag, threads] : {std::pair{"a", 1}, std::pair{"b", 1}, std::pair{"c", 4}}) {
      const fs::path out = root / name / tag;
      const int code = run_cli(fmt::format("{} {} --threads {} --out \"{}\"", args, cfg, threads, out.string()),
                               root / name / fmt::format("{}.log", tag));
      if (code != 0) {
        mismatches.push_back(fmt::format("{} exited with {}", name, code));
        break;
      }
      std::map<std::string, std::string> contents;
      for (const auto& entry : fs::directory_iterator(out)) {
        contents[entry.path().filename().string()] = slurp(entry.path());
      }
      outputs.push_back(std::move(contents));
    }
    if (outputs.size() != 3) continue;
    if (outputs[0].empty()) mismatches.push_back(fmt::format("{} wrote nothing", name));
    files += outputs[0].size();
    for (std::size_t k = 1; k < 3; ++k) {
      if (outputs[k] != outputs[0]) mismatches.push_back(fmt::format("{} run {} differs", name, k));
    }
  }
  std::string detail = fmt::format("{} output files compared over 3 runs (1, 1 and 4 threads)", files);
  for (const std::string& m : mismatches) detail += "; " + m;
  return {mismatches.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<Check> checks = {
      {1, "PPC row correctness", 5.0, ppc_rows},
      {2, "solver exactness", 1.0, solver},
      {3, "oracle convergence", 120.0, oracle_convergence},
      {4, "single-update experiment", 0.0, single_update},
      {5, "metric identities", 0.0, metric_identities},
      {6, "DRR analytic checks", 0.0, drr_checks},
      {7, "matching shift recovery", 0.0, shift_recovery},
      {8, "determinism", 0.0, determinism},
  };
  int failures = 0;
  for (const Check& check : checks) {
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = check.run();
    } catch (const std::exception& e) {
      outcome = {false, fmt::format("exception: {}", e.what())};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::string timing = fmt::format("{:.2f} s", seconds);
    if (check.budget_s > 0.0) {
      timing += fmt::format(" (budget {} s)", check.budget_s);
      if (seconds >= check.budget_s) {
        outcome.pass = false;
        timing += " OVER BUDGET";
      }
    }
    if (!outcome.pass) ++failures;
    fmt::print("{} criterion {}: {}: {} [{}]\n", outcome.pass ? "PASS" : "FAIL", check.id, check.name,
               outcome.detail, timing);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", checks.size() - failures, checks.size());
  return failures == 0 ? 0 : 1;
}
