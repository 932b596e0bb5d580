#include <fstream>
#include <initializer_list>
#include <iterator>
#include <numbers>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "ppcreg/errors.hpp"
#include "ppcreg/harness.hpp"
#include "ppcreg/io.hpp"

namespace ppcreg::harness {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw UsageError(fmt::format("config: '{}' must be an object", where));
  const std::set<std::string> known(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!known.contains(key)) {
      throw UsageError(fmt::format("config: unknown key '{}' in '{}'", key, where));
    }
  }
}

Vec3 vec3(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw UsageError("config: expected a 3-vector");
  return {v[0], v[1], v[2]};
}

Vec2 vec2(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 2) throw UsageError("config: expected a 2-vector");
  return {v[0], v[1]};
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

void parse_phantom(const json& j, ExperimentConfig& cfg) {
  check_keys(j, "phantom", {"preset", "seed", "jitter_mm", "jitter_deg", "dims", "spacing",
                            "origin", "primitives"});
  if (j.contains("preset")) {
    cfg.phantom_preset = j.at("preset").get<std::string>();
    try {
      cfg.phantom = phantom_preset(cfg.phantom_preset);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  read(j, "seed", cfg.phantom_seed);
  read(j, "jitter_mm", cfg.phantom.jitter_mm);
  read(j, "jitter_deg", cfg.phantom.jitter_deg);
  if (j.contains("dims")) {
    const auto d = j.at("dims").get<std::vector<int>>();
    if (d.size() != 3) throw UsageError("config: phantom.dims needs 3 values");
    cfg.phantom.dims = {d[0], d[1], d[2]};
  }
  if (j.contains("spacing")) cfg.phantom.spacing = vec3(j.at("spacing"));
  if (j.contains("origin")) cfg.phantom.origin = vec3(j.at("origin"));
  if (j.contains("primitives")) {
    cfg.phantom_preset = "custom";
    cfg.phantom.primitives.clear();
    for (const json& p : j.at("primitives")) {
      check_keys(p, "phantom.primitives[]", {"kind", "center", "rotation_deg", "size", "density"});
      Primitive prim;
      try {
        prim.kind = primitive_kind_from_string(p.at("kind").get<std::string>());
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
      prim.center = vec3(p.at("center"));
      if (p.contains("rotation_deg")) {
        prim.rotation = vec3(p.at("rotation_deg")) * (std::numbers::pi / 180.0);
      }
      prim.size = vec3(p.at("size"));
      read(p, "density", prim.density);
      cfg.phantom.primitives.push_back(prim);
    }
  }
}

void parse_registration(const json& j, RegistrationConfig& reg) {
  check_keys(j, "registration",
             {"max_iterations", "omega_tol", "t_tol", "contour_eps", "drr_step", "rcond",
              "linearizations", "max_depth_change", "gradient", "mtre_points", "canny", "matching",
              "weighting"});
  read(j, "max_iterations", reg.max_iterations);
  read(j, "omega_tol", reg.omega_tol);
  read(j, "t_tol", reg.t_tol);
  read(j, "contour_eps", reg.update.contour_eps);
  read(j, "drr_step", reg.update.drr_step);
  read(j, "rcond", reg.update.rcond);
  read(j, "linearizations", reg.update.linearizations);
  read(j, "max_depth_change", reg.update.max_depth_change);
  if (j.contains("gradient")) {
    const auto name = j.at("gradient").get<std::string>();
    if (name == "central") {
      reg.update.gradient = GradientOperator::kCentralDifference;
    } else if (name == "sobel") {
      reg.update.gradient = GradientOperator::kSobel;
    } else {
      throw UsageError(fmt::format("config: unknown gradient operator '{}'", name));
    }
  }
  if (j.contains("mtre_points")) {
    const auto name = j.at("mtre_points").get<std::string>();
    if (name != "surface" && name != "contour") {
      throw UsageError(fmt::format("config: mtre_points must be surface|contour, got '{}'", name));
    }
    reg.mtre_on_contour = name == "contour";
  }
  if (j.contains("canny")) {
    const json& c = j.at("canny");
    check_keys(c, "registration.canny", {"sigma", "t_low", "t_high", "max_points"});
    read(c, "sigma", reg.canny.sigma);
    read(c, "t_low", reg.canny.t_low);
    read(c, "t_high", reg.canny.t_high);
    if (c.contains("max_points") && !c.at("max_points").is_null()) {
      reg.canny.max_points = c.at("max_points").get<std::size_t>();
    }
  }
  MatchParams match = std::holds_alternative<ImageMatcher>(reg.update.matcher)
                          ? std::get<ImageMatcher>(reg.update.matcher).params
                          : MatchParams{};
  if (j.contains("matching")) {
    const json& m = j.at("matching");
    check_keys(m, "registration.matching", {"search_radius", "half_width", "min_score"});
    read(m, "search_radius", match.search_radius);
    read(m, "half_width", match.half_width);
    read(m, "min_score", match.min_score);
  }
  reg.update.matcher = ImageMatcher{match};
  if (j.contains("weighting")) {
    const json& w = j.at("weighting");
    check_keys(w, "registration.weighting", {"strategy", "gamma", "huber_k"});
    if (w.contains("strategy")) {
      try {
        reg.update.weighting.strategy =
            weighting_strategy_from_string(w.at("strategy").get<std::string>());
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
    }
    read(w, "gamma", reg.update.weighting.gamma);
    read(w, "huber_k", reg.update.weighting.huber_k);
  }
}

void validate(const ExperimentConfig& cfg) {
  try {
    cfg.geometry.validate();
    cfg.registration.validate();
  } catch (const Error& e) {
    throw UsageError(fmt::format("config: {}", e.what()));
  }
  const auto& s = cfg.sampling;
  if (!(s.mtre_min >= 0.0) || !(s.mtre_max >= s.mtre_min)) {
    throw UsageError("config: sampling.mtre_range must satisfy 0 <= min <= max");
  }
  if (cfg.views_deg.empty()) throw UsageError("config: views_deg must not be empty");
  if (!(cfg.source_to_center_mm > kMinDepthMm && cfg.source_to_center_mm < cfg.geometry.sdd)) {
    throw UsageError("config: source_to_center_mm must lie between the source and the detector");
  }
  const double eps = cfg.registration.update.contour_eps;
  if (!(eps > 0.0 && eps < 1.0)) throw UsageError("config: contour_eps must lie in (0, 1)");
  const auto& c = cfg.registration.canny;
  if (!(c.sigma >= 0.0 && c.t_low > 0.0 && c.t_low < c.t_high && c.t_high < 1.0)) {
    throw UsageError("config: canny needs sigma >= 0 and 0 < t_low < t_high < 1");
  }
  const auto& m = std::get<ImageMatcher>(cfg.registration.update.matcher).params;
  if (m.search_radius < 1 || m.half_width < 1) {
    throw UsageError("config: matching.search_radius and half_width must be >= 1");
  }
  if (!(cfg.fluoro_noise_sigma >= 0.0)) throw UsageError("config: fluoro_noise_sigma must be >= 0");
  if (cfg.volume_path && !fs::exists(*cfg.volume_path)) {
    throw UsageError(fmt::format("config: volume '{}' does not exist", cfg.volume_path->string()));
  }
}

}  // namespace

RegistrationConfig default_registration_config() {
  RegistrationConfig reg;
  MatchParams match;
  match.search_radius = 60;
  match.half_width = 8;
  reg.update.matcher = ImageMatcher{match};
  reg.update.weighting.strategy = WeightingStrategy::kScoreIrls;
  reg.update.max_depth_change = 0.25;
  reg.canny.max_points = 5000;
  return reg;
}

std::string to_string(MatcherMode mode) {
  return mode == MatcherMode::kOracle ? "oracle" : "image";
}

MatcherMode matcher_mode_from_string(const std::string& name) {
  if (name == "image") return MatcherMode::kImage;
  if (name == "oracle") return MatcherMode::kOracle;
  throw UsageError(fmt::format("unknown matcher '{}' (expected image|oracle)", name));
}

ExperimentConfig parse_experiment_config(const std::string& json_text, const fs::path& base_dir) {
  ExperimentConfig cfg;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw UsageError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  try {
    check_keys(j, "<root>",
               {"phantom", "volume", "geometry", "source_to_center_mm", "views_deg", "sampling",
                "registration", "matcher", "fluoro_noise_sigma", "output_dir"});
    if (j.contains("phantom")) parse_phantom(j.at("phantom"), cfg);
    if (j.contains("volume")) cfg.volume_path = base_dir / j.at("volume").get<std::string>();
    if (j.contains("geometry")) {
      const json& g = j.at("geometry");
      check_keys(g, "geometry", {"sdd", "detector", "pixel_spacing", "principal_point"});
      read(g, "sdd", cfg.geometry.sdd);
      if (g.contains("detector")) {
        const auto d = g.at("detector").get<std::vector<int>>();
        if (d.size() != 2) throw UsageError("config: geometry.detector needs [width, height]");
        cfg.geometry.width = d[0];
        cfg.geometry.height = d[1];
        cfg.geometry.principal_point = Vec2(0.5 * (d[0] - 1), 0.5 * (d[1] - 1));
      }
      if (g.contains("pixel_spacing")) cfg.geometry.pixel_spacing = vec2(g.at("pixel_spacing"));
      if (g.contains("principal_point")) {
        cfg.geometry.principal_point = vec2(g.at("principal_point"));
      }
    }
    read(j, "source_to_center_mm", cfg.source_to_center_mm);
    read(j, "views_deg", cfg.views_deg);
    if (j.contains("sampling")) {
      const json& s = j.at("sampling");
      check_keys(s, "sampling", {"count", "mtre_range", "seed"});
      read(s, "count", cfg.sampling.count);
      read(s, "seed", cfg.sampling.seed);
      if (s.contains("mtre_range")) {
        const Vec2 r = vec2(s.at("mtre_range"));
        cfg.sampling.mtre_min = r.x();
        cfg.sampling.mtre_max = r.y();
      }
    }
    if (j.contains("registration")) parse_registration(j.at("registration"), cfg.registration);
    if (j.contains("matcher")) cfg.matcher = matcher_mode_from_string(j.at("matcher").get<std::string>());
    read(j, "fluoro_noise_sigma", cfg.fluoro_noise_sigma);
    if (j.contains("output_dir")) cfg.output_dir = base_dir / j.at("output_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw UsageError(fmt::format("config: {}", e.what()));
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError(fmt::format("cannot read config '{}'", path.string()));
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_experiment_config(text, path.parent_path());
}

}  // namespace ppcreg::harness
