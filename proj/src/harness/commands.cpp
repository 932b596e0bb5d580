#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "ppcreg/errors.hpp"
#include "ppcreg/harness.hpp"
#include "ppcreg/io.hpp"
#include "ppcreg/projector.hpp"

namespace ppcreg::harness {

namespace {

using nlohmann::json;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Offset that keeps the fluoro noise streams apart from the sample streams.
constexpr std::uint64_t kNoiseStream = 0x6e6f697365000000ULL;

std::string num(double v) { return std::isfinite(v) ? io::format_double(v) : "null"; }

template <typename T, typename F>
std::string json_array(const std::vector<T>& values, F&& fmt_one) {
  std::string s = "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ", ";
    s += fmt_one(values[i]);
  }
  return s + "]";
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.close();
  if (!out) throw Error(ErrorCode::kIoFailure, fmt::format("cannot write '{}'", path.string()));
}

double drr_step(const ExperimentConfig& config, const Volume& volume) {
  const double step = config.registration.update.drr_step;
  return step > 0.0 ? step : default_ray_step(volume);
}

Image2D normalized(const Image2D& img) {
  Image2D out = img;
  const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
  const double range = *hi - *lo;
  for (double& v : out.data) v = range > 0.0 ? (v - *lo) / range : 0.0;
  return out;
}

/// Fluoro intensities with the DRR contour at `pose` drawn on top.
Image2D make_overlay(const Image2D& fluoro, const Volume& volume, const RigidTransform& pose,
                     const ExperimentConfig& config) {
  const Image2D drr = render_drr(volume, pose, config.geometry, drr_step(config, volume));
  const Image2D edges = normalized(gradient_magnitude(image_gradient(drr)));
  Image2D out = normalized(fluoro);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = std::max(0.6 * out.data[i], edges.data[i]);
  }
  return out;
}

SurfacePointSet surface_of(const Volume& volume, const ExperimentConfig& config) {
  return extract_surface_points(volume, config.registration.canny);
}

}  // namespace

Volume load_or_make_volume(const ExperimentConfig& config) {
  if (config.volume_path) return io::load_volume(*config.volume_path);
  return make_phantom(config.phantom, config.phantom_seed);
}

RigidTransform view_pose(const Volume& volume, const ExperimentConfig& config, int view_id) {
  const std::size_t n = config.views_deg.size();
  const double deg = config.views_deg[static_cast<std::size_t>(view_id) % n];
  const double a = deg * std::numbers::pi / 180.0;
  Mat3 base;
  base << 1, 0, 0,
          0, 0, -1,
          0, 1, 0;
  Mat3 view;
  view << std::cos(a), 0, std::sin(a),
          0, 1, 0,
          -std::sin(a), 0, std::cos(a);
  const Mat3 r = view * base;
  const Vec3 t = Vec3(0.0, 0.0, config.source_to_center_mm) - r * volume.center();
  return RigidTransform(r, t);
}

RegistrationConfig bind_matcher(const ExperimentConfig& config, const RigidTransform& t_gt) {
  RegistrationConfig reg = config.registration;
  if (config.matcher == MatcherMode::kOracle) reg.update.matcher = OracleMatcher{t_gt};
  return reg;
}

Image2D synthesize_fluoro(const Volume& volume, const ExperimentConfig& config,
                          const RigidTransform& t_gt, std::uint64_t noise_seed) {
  Image2D img = render_drr(volume, t_gt, config.geometry, drr_step(config, volume));
  if (config.fluoro_noise_sigma > 0.0) add_gaussian_noise(img, config.fluoro_noise_sigma, noise_seed);
  return img;
}

std::uint64_t sample_seed(std::uint64_t base_seed, std::size_t sample_id) {
  return splitmix64(base_seed + sample_id);
}

std::vector<EvaluationSample> sample_poses(const ExperimentConfig& config, const Volume& volume,
                                           const SurfacePointSet& surface) {
  const auto& s = config.sampling;
  const int n_views = static_cast<int>(config.views_deg.size());
  std::vector<EvaluationSample> out;
  out.reserve(s.count);
  for (std::size_t id = 0; id < s.count; ++id) {
    const std::uint64_t seed = sample_seed(s.seed, id);
    std::mt19937_64 rng(seed);
    const int view_id = static_cast<int>(id % n_views);
    const double target = std::uniform_real_distribution<double>(s.mtre_min, s.mtre_max)(rng);
    EvaluationSample sample = sample_initial_transform(view_pose(volume, config, view_id),
                                                       surface.points, target, rng);
    sample.view_id = view_id;
    sample.seed = seed;
    out.push_back(sample);
  }
  return out;
}

std::string sample_to_json(std::size_t sample_id, const EvaluationSample& sample) {
  return fmt::format(
      "{{\"sample_id\": {}, \"view_id\": {}, \"seed\": {}, \"target_mtre\": {}, "
      "\"achieved_mtre\": {}, \"t_gt\": {}, \"t_init\": {}}}",
      sample_id, sample.view_id, sample.seed, num(sample.target_mtre), num(sample.achieved_mtre),
      io::pose_to_json(sample.t_gt), io::pose_to_json(sample.t_init));
}

std::vector<EvaluationSample> load_samples(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, fmt::format("cannot open '{}'", path.string()));
  std::vector<EvaluationSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json doc = json::parse(line);
      EvaluationSample s;
      s.view_id = doc.at("view_id").get<int>();
      s.seed = doc.at("seed").get<std::uint64_t>();
      s.target_mtre = doc.at("target_mtre").get<double>();
      s.achieved_mtre = doc.at("achieved_mtre").get<double>();
      s.t_gt = io::pose_from_json(doc.at("t_gt").dump());
      s.t_init = io::pose_from_json(doc.at("t_init").dump());
      out.push_back(s);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kMalformedHeader,
                  fmt::format("'{}' line {}: {}", path.string(), line_no, e.what()));
    } catch (const Error& e) {
      throw Error(e.code(), fmt::format("'{}' line {}: {}", path.string(), line_no, e.what()));
    }
  }
  return out;
}

std::string method_name(const ExperimentConfig& config) {
  return fmt::format("ppc-{}-{}", to_string(config.matcher),
                     to_string(config.registration.update.weighting.strategy));
}

Summary run_eval_update(const ExperimentConfig& config, const Volume& volume,
                        const SurfacePointSet& surface,
                        const std::vector<EvaluationSample>& samples) {
  if (samples.empty()) throw Error(ErrorCode::kEmptyPointSet, "no samples to evaluate");
  RegistrationConfig reg = config.registration;
  reg.max_iterations = 1;

  // One context per view; the image matcher needs the fluoro gradient.
  std::map<int, RegistrationContext> contexts;
  for (const EvaluationSample& s : samples) {
    if (contexts.contains(s.view_id)) continue;
    RegistrationContext ctx;
    ctx.volume = &volume;
    ctx.surface = surface;
    ctx.geom = config.geometry;
    if (config.matcher == MatcherMode::kImage) {
      const Image2D fluoro = synthesize_fluoro(volume, config, s.t_gt,
                                               sample_seed(config.sampling.seed ^ kNoiseStream,
                                                           static_cast<std::size_t>(s.view_id)));
      ctx.grad_flr = image_gradient(fluoro, reg.update.gradient);
    }
    contexts.emplace(s.view_id, std::move(ctx));
  }

  std::vector<SampleResult> results(samples.size());
  std::exception_ptr failure;
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const EvaluationSample& s = samples[static_cast<std::size_t>(i)];
      RegistrationConfig local = reg;
      if (config.matcher == MatcherMode::kOracle) local.update.matcher = OracleMatcher{s.t_gt};
      const RegistrationReport report =
          run_registration(contexts.at(s.view_id), s.t_init, local, s.t_gt);
      SampleResult& r = results[static_cast<std::size_t>(i)];
      r.sample_id = static_cast<std::size_t>(i);
      r.view_id = s.view_id;
      r.seed = s.seed;
      r.mtre_before = report.mtre_trace.front();
      r.mtre_after = report.mtre_trace.back();
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return summarize(results, method_name(config));
}

std::string report_to_json(const RegistrationReport& report) {
  std::string s = "{\n";
  s += fmt::format("  \"converged\": {},\n", report.converged ? "true" : "false");
  s += fmt::format("  \"updates\": {},\n", report.updates());
  s += fmt::format("  \"final_pose\": {},\n", io::pose_to_json(report.final_pose()));
  s += fmt::format("  \"mtre_trace\": {},\n", json_array(report.mtre_trace, num));
  s += fmt::format("  \"reduction_factors\": {},\n", json_array(report.reduction_factors, num));
  s += "  \"poses\": [";
  for (std::size_t i = 0; i < report.poses.size(); ++i) {
    s += fmt::format("{}\n    {}", i ? "," : "", io::pose_to_json(report.poses[i]));
  }
  s += "\n  ],\n  \"iterations\": [";
  for (std::size_t i = 0; i < report.diagnostics.size(); ++i) {
    const UpdateDiagnostics& d = report.diagnostics[i];
    s += fmt::format(
        "{}\n    {{\"outcome\": \"{}\", \"n_contour\": {}, \"n_valid\": {}, \"solver_rank\": {}, "
        "\"condition_number\": {}, \"rotation_norm\": {}, \"translation_norm\": {}, "
        "\"epe_px\": {}}}",
        i ? "," : "", report.outcomes[i] == UpdateOutcome::kUpdated ? "updated" : "no_update",
        d.n_contour, d.n_valid, d.solver_rank, num(d.condition_number), num(d.rotation_norm),
        num(d.translation_norm), d.epe_px ? num(*d.epe_px) : "null");
  }
  s += "\n  ]\n}\n";
  return s;
}

int cmd_phantom(const ExperimentConfig& config, const PhantomOptions& options) {
  PhantomSpec spec = config.phantom;
  if (options.preset) {
    try {
      spec = phantom_preset(*options.preset);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  const Volume volume = make_phantom(spec, options.seed.value_or(config.phantom_seed));
  const fs::path path = config.output_dir / "volume.json";
  io::save_volume(path, volume);
  fmt::print("wrote {} ({}x{}x{})\n", path.string(), volume.dims()[0], volume.dims()[1],
             volume.dims()[2]);
  return 0;
}

int cmd_render(const ExperimentConfig& config, const RenderOptions& options) {
  const Volume volume = options.volume ? io::load_volume(*options.volume)
                                       : load_or_make_volume(config);
  const RigidTransform pose = options.pose ? io::load_pose(*options.pose)
                                           : view_pose(volume, config, options.view);
  const Image2D drr = render_drr(volume, pose, config.geometry, drr_step(config, volume));
  io::save_image(config.output_dir / "drr.json", drr);
  io::export_image_pgm(drr, config.output_dir / "drr.pgm");
  fmt::print("wrote {}\n", (config.output_dir / "drr.json").string());
  return 0;
}

int cmd_register(const ExperimentConfig& config, const RegisterOptions& options) {
  if (!options.init_pose && !options.init_mtre) {
    throw UsageError("register needs an initial pose (--init) or an initial mTRE (--init-mtre)");
  }
  if (options.init_mtre && !(*options.init_mtre >= 0.0)) {
    throw UsageError("--init-mtre must be >= 0");
  }
  const Volume volume = options.volume ? io::load_volume(*options.volume)
                                       : load_or_make_volume(config);
  std::optional<RigidTransform> t_gt;
  if (options.gt_pose) {
    t_gt = io::load_pose(*options.gt_pose);
  } else if (!options.fluoro) {
    t_gt = view_pose(volume, config, options.view);
  }
  if (config.matcher == MatcherMode::kOracle && !t_gt) {
    throw UsageError("the oracle matcher needs a ground-truth pose (--gt or a synthesized fluoro)");
  }
  if (options.init_mtre && !t_gt) {
    throw UsageError("--init-mtre needs a ground-truth pose");
  }

  const RegistrationConfig reg = bind_matcher(config, t_gt.value_or(RigidTransform::identity()));
  RegistrationContext context;
  context.volume = &volume;
  context.surface = surface_of(volume, config);
  context.geom = config.geometry;

  std::optional<Image2D> fluoro;
  if (options.fluoro) {
    fluoro = io::load_image(*options.fluoro);
  } else if (config.matcher == MatcherMode::kImage || options.overlay) {
    fluoro = synthesize_fluoro(volume, config, *t_gt, sample_seed(config.sampling.seed ^ kNoiseStream,
                                                                 static_cast<std::size_t>(options.view)));
  }
  if (fluoro) {
    if (fluoro->width != config.geometry.width || fluoro->height != config.geometry.height) {
      throw Error(ErrorCode::kDimensionMismatch,
                  fmt::format("fluoro image is {}x{}, detector is {}x{}", fluoro->width,
                              fluoro->height, config.geometry.width, config.geometry.height));
    }
    if (config.matcher == MatcherMode::kImage) {
      context.grad_flr = image_gradient(*fluoro, reg.update.gradient);
    }
  }

  RigidTransform t_init;
  if (options.init_pose) {
    t_init = io::load_pose(*options.init_pose);
  } else {
    std::mt19937_64 rng(sample_seed(config.sampling.seed, 0));
    t_init = sample_initial_transform(*t_gt, context.surface.points, *options.init_mtre, rng).t_init;
  }

  const RegistrationReport report = run_registration(context, t_init, reg, t_gt);
  write_text(config.output_dir / "report.json", report_to_json(report));
  io::save_pose(config.output_dir / "final_pose.json", report.final_pose());
  if (options.overlay && fluoro) {
    io::export_image_pgm(make_overlay(*fluoro, volume, report.final_pose(), config),
                         config.output_dir / "overlay.pgm");
  }
  fmt::print("updates: {}, converged: {}", report.updates(), report.converged);
  if (!report.mtre_trace.empty()) {
    fmt::print(", mTRE {:.4f} -> {:.4f} mm", report.mtre_trace.front(), report.mtre_trace.back());
  }
  fmt::print("\nwrote {}\n", (config.output_dir / "report.json").string());
  return 0;
}

int cmd_eval_update(const ExperimentConfig& config, const EvalOptions& options) {
  const Volume volume = load_or_make_volume(config);
  const SurfacePointSet surface = surface_of(volume, config);
  const std::vector<EvaluationSample> samples =
      options.poses ? load_samples(*options.poses) : sample_poses(config, volume, surface);
  if (samples.empty()) throw UsageError("eval-update needs at least one sample");
  const Summary summary = run_eval_update(config, volume, surface, samples);
  io::export_results_csv(summary, config.output_dir);
  for (const SummaryRow* row : {&summary.initial, &summary.method}) {
    fmt::print("{:<24} p50 {:8.3f}  p75 {:8.3f}  p95 {:8.3f}  mTRE {:8.3f} +- {:7.3f}", row->name,
               row->p50, row->p75, row->p95, row->mtre_mean, row->mtre_std);
    if (row->rf_mean) fmt::print("  rf {:.3f} +- {:.3f}", *row->rf_mean, *row->rf_std);
    fmt::print("\n");
  }
  return 0;
}

int cmd_sample_poses(const ExperimentConfig& config) {
  std::string text;
  if (config.sampling.count > 0) {
    const Volume volume = load_or_make_volume(config);
    const SurfacePointSet surface = surface_of(volume, config);
    const std::vector<EvaluationSample> samples = sample_poses(config, volume, surface);
    for (std::size_t i = 0; i < samples.size(); ++i) text += sample_to_json(i, samples[i]) + "\n";
  }
  const fs::path path = config.output_dir / "poses.jsonl";
  write_text(path, text);
  fmt::print("wrote {} ({} samples)\n", path.string(), config.sampling.count);
  return 0;
}

}  // namespace ppcreg::harness
