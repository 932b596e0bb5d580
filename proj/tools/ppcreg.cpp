#include <cstdio>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <omp.h>

#include "ppcreg/errors.hpp"
#include "ppcreg/harness.hpp"

namespace h = ppcreg::harness;

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string matcher;
  std::string weights;
  std::optional<int> max_iterations;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--seed", f.seed, "RNG seed (phantom seed for 'phantom', sampling seed otherwise)");
  cmd->add_option("--matcher", f.matcher, "Correspondence source")
      ->check(CLI::IsMember({"image", "oracle"}));
  cmd->add_option("--weights", f.weights, "Correspondence weighting")
      ->check(CLI::IsMember({"uniform", "score", "score_irls"}));
  cmd->add_option("--max-iterations", f.max_iterations, "Iteration cap")->check(CLI::PositiveNumber);
  cmd->add_option("--threads", f.threads, "Worker threads (0: OpenMP default)")
      ->check(CLI::NonNegativeNumber);
}

h::ExperimentConfig resolve(const CommonFlags& f, bool seed_is_sampling) {
  h::ExperimentConfig cfg =
      f.config.empty() ? h::ExperimentConfig{} : h::load_experiment_config(f.config);
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (f.seed && seed_is_sampling) cfg.sampling.seed = *f.seed;
  if (!f.matcher.empty()) cfg.matcher = h::matcher_mode_from_string(f.matcher);
  if (!f.weights.empty()) {
    cfg.registration.update.weighting.strategy = ppcreg::weighting_strategy_from_string(f.weights);
  }
  if (f.max_iterations) cfg.registration.max_iterations = *f.max_iterations;
  if (f.threads > 0) omp_set_num_threads(f.threads);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-to-plane 2D/3D registration toolkit"};
  app.require_subcommand(1);

  CommonFlags flags;

  auto* phantom = app.add_subcommand("phantom", "Generate a phantom volume");
  add_common(phantom, flags);
  h::PhantomOptions phantom_opts;
  phantom->add_option("--preset", phantom_opts.preset, "sphere | sphere-pair | nested-spheres | vertebra");

  auto* render = app.add_subcommand("render", "Render a DRR");
  add_common(render, flags);
  h::RenderOptions render_opts;
  render->add_option("--volume", render_opts.volume, "Volume header (default: from config)");
  render->add_option("--pose", render_opts.pose, "Pose record (default: view pose)");
  render->add_option("--view", render_opts.view, "View index")->check(CLI::NonNegativeNumber);

  auto* reg = app.add_subcommand("register", "Run an iterative registration");
  add_common(reg, flags);
  h::RegisterOptions reg_opts;
  reg->add_option("--volume", reg_opts.volume, "Volume header (default: from config)");
  reg->add_option("--fluoro", reg_opts.fluoro, "Fluoro image header (default: synthesized)");
  reg->add_option("--gt", reg_opts.gt_pose, "Ground-truth pose record (default: view pose)");
  auto* init = reg->add_option("--init", reg_opts.init_pose, "Initial pose record");
  reg->add_option("--init-mtre", reg_opts.init_mtre, "Sample an initial pose at this mTRE [mm]")
      ->excludes(init);
  reg->add_option("--view", reg_opts.view, "View index")->check(CLI::NonNegativeNumber);
  reg->add_flag("--overlay", reg_opts.overlay, "Write overlay.pgm");

  auto* eval = app.add_subcommand("eval-update", "Single-update evaluation experiment");
  add_common(eval, flags);
  h::EvalOptions eval_opts;
  eval->add_option("--poses", eval_opts.poses, "Reuse samples from a poses.jsonl file");

  auto* sample = app.add_subcommand("sample-poses", "Write sampled (t_gt, t_init) pairs");
  add_common(sample, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (phantom->parsed()) {
      if (flags.seed) phantom_opts.seed = flags.seed;
      return h::cmd_phantom(resolve(flags, false), phantom_opts);
    }
    if (render->parsed()) return h::cmd_render(resolve(flags, true), render_opts);
    if (reg->parsed()) return h::cmd_register(resolve(flags, true), reg_opts);
    if (eval->parsed()) return h::cmd_eval_update(resolve(flags, true), eval_opts);
    if (sample->parsed()) return h::cmd_sample_poses(resolve(flags, true));
  } catch (const h::UsageError& e) {
    fmt::print(stderr, "usage error: {}\n", e.what());
    return 2;
  } catch (const ppcreg::Error& e) {
    fmt::print(stderr, "error [{}]: {}\n", ppcreg::to_string(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 2;
}
