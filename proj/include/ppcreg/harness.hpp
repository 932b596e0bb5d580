#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppcreg/geometry.hpp"
#include "ppcreg/pipeline.hpp"
#include "ppcreg/volume.hpp"

namespace ppcreg::harness {

namespace fs = std::filesystem;

/// Bad command line or configuration; the CLI maps it to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class MatcherMode { kImage, kOracle };

std::string to_string(MatcherMode mode);
MatcherMode matcher_mode_from_string(const std::string& name);

struct SamplingConfig {
  std::size_t count = 200;
  double mtre_min = 0.0;
  double mtre_max = 45.0;
  std::uint64_t seed = 1;
};

/// Registration settings used when a config leaves them out: 60 px search
/// with 17 px patches, score weights with Huber IRLS, at most 5000 surface
/// points and a 25% depth gate.
RegistrationConfig default_registration_config();

struct ExperimentConfig {
  std::string phantom_preset = "vertebra";
  PhantomSpec phantom = ppcreg::phantom_preset("vertebra");
  std::uint64_t phantom_seed = 0;
  /// When set, the volume is read from disk instead of generated.
  std::optional<fs::path> volume_path;

  ProjectionGeometry geometry{1000.0, 256, 256, {0.8, 0.8}, {127.5, 127.5}};
  double source_to_center_mm = 600.0;
  /// Extrinsic view rotations (degrees about the cranio-caudal axis).
  std::vector<double> views_deg{0.0, 30.0, -30.0, 60.0, -60.0, 90.0};

  SamplingConfig sampling;
  RegistrationConfig registration = default_registration_config();
  MatcherMode matcher = MatcherMode::kImage;
  double fluoro_noise_sigma = 0.0;
  fs::path output_dir = "out";
};

/// Every key is optional; unknown keys and invalid ranges raise UsageError.
/// Relative paths resolve against the config file's directory.
ExperimentConfig load_experiment_config(const fs::path& path);
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const fs::path& base_dir = {});

/// Generates the configured phantom or loads config.volume_path.
Volume load_or_make_volume(const ExperimentConfig& config);

/// Ground-truth pose of view `view_id`: the volume center sits on the
/// optical axis at source_to_center_mm, AP direction along the rays.
RigidTransform view_pose(const Volume& volume, const ExperimentConfig& config, int view_id);

/// Registration parameters with the configured matcher bound to t_gt.
RegistrationConfig bind_matcher(const ExperimentConfig& config, const RigidTransform& t_gt);

/// Simulated fluoroscopy: DRR at t_gt plus optional seeded noise.
Image2D synthesize_fluoro(const Volume& volume, const ExperimentConfig& config,
                          const RigidTransform& t_gt, std::uint64_t noise_seed);

std::uint64_t sample_seed(std::uint64_t base_seed, std::size_t sample_id);

/// Seeded (t_gt, t_init) pairs, target mTRE uniform in the sampling range.
std::vector<EvaluationSample> sample_poses(const ExperimentConfig& config, const Volume& volume,
                                           const SurfacePointSet& surface);

std::string sample_to_json(std::size_t sample_id, const EvaluationSample& sample);
std::vector<EvaluationSample> load_samples(const fs::path& path);

/// Single-update experiment; the row order follows the sample id.
Summary run_eval_update(const ExperimentConfig& config, const Volume& volume,
                        const SurfacePointSet& surface,
                        const std::vector<EvaluationSample>& samples);

std::string method_name(const ExperimentConfig& config);

// Commands, as invoked by the CLI. Each returns its process exit code.

struct PhantomOptions {
  std::optional<std::string> preset;
  std::optional<std::uint64_t> seed;
};
int cmd_phantom(const ExperimentConfig& config, const PhantomOptions& options);

struct RenderOptions {
  std::optional<fs::path> volume;
  std::optional<fs::path> pose;
  int view = 0;
};
int cmd_render(const ExperimentConfig& config, const RenderOptions& options);

struct RegisterOptions {
  std::optional<fs::path> volume;
  std::optional<fs::path> fluoro;
  std::optional<fs::path> gt_pose;
  std::optional<fs::path> init_pose;
  std::optional<double> init_mtre;
  int view = 0;
  bool overlay = false;
};
int cmd_register(const ExperimentConfig& config, const RegisterOptions& options);

struct EvalOptions {
  std::optional<fs::path> poses;
};
int cmd_eval_update(const ExperimentConfig& config, const EvalOptions& options);

int cmd_sample_poses(const ExperimentConfig& config);

/// Report serialization (JSON). Wall time is left out so reruns compare equal.
std::string report_to_json(const RegistrationReport& report);

}  // namespace ppcreg::harness
