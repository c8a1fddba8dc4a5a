#pragma once

// Seeded benchmark trials: sample or load a target, corrupt it per scenario
// (noise hits the target, partial visibility and decimation hit the source),
// detach the source by the inverse of a random ground-truth pose, register,
// and score. Trial seeds derive from the master seed and trial index, so
// trials are independent of execution order.

#include <chrono>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdfreg/corruptions.hpp"
#include "sdfreg/metrics.hpp"
#include "sdfreg/pointcloud.hpp"
#include "sdfreg/registration.hpp"
#include "sdfreg/rng.hpp"
#include "sdfreg/scene_json.hpp"
#include "sdfreg/sdf.hpp"
#include "sdfreg/sdf_train.hpp"

namespace sdfreg {

enum class Scenario { clean, noise, partial, density, custom };
enum class RegMode { oracle, neural, c2f };

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::clean: return "clean";
    case Scenario::noise: return "noise";
    case Scenario::partial: return "partial";
    case Scenario::density: return "density";
    case Scenario::custom: return "custom";
  }
  return "unknown";
}

inline const char* to_string(RegMode m) {
  switch (m) {
    case RegMode::oracle: return "oracle";
    case RegMode::neural: return "neural";
    case RegMode::c2f: return "c2f";
  }
  return "unknown";
}

inline Scenario parse_scenario(const std::string& s) {
  if (s == "clean") return Scenario::clean;
  if (s == "noise") return Scenario::noise;
  if (s == "partial") return Scenario::partial;
  if (s == "density") return Scenario::density;
  if (s == "custom") return Scenario::custom;
  throw std::invalid_argument("scenario: unknown value '" + s + "'");
}

inline RegMode parse_reg_mode(const std::string& s) {
  if (s == "oracle") return RegMode::oracle;
  if (s == "neural") return RegMode::neural;
  if (s == "c2f") return RegMode::c2f;
  throw std::invalid_argument("mode: unknown value '" + s + "'");
}

/// Presets overwrite the three corruption fields so scenarios stay pure;
/// custom leaves them as configured.
inline void apply_scenario_preset(Scenario s, PerturbationSpec& p) {
  switch (s) {
    case Scenario::clean:
      p.noise_sigma = 0.0;
      p.partial_keep_fraction = 1.0;
      p.density_keep_fraction = 1.0;
      break;
    case Scenario::noise:
      p.noise_sigma = 0.02;
      p.partial_keep_fraction = 1.0;
      p.density_keep_fraction = 1.0;
      break;
    case Scenario::partial:
      p.noise_sigma = 0.0;
      p.partial_keep_fraction = 0.7;
      p.density_keep_fraction = 1.0;
      break;
    case Scenario::density:
      p.noise_sigma = 0.0;
      p.partial_keep_fraction = 1.0;
      p.density_keep_fraction = 0.05;
      break;
    case Scenario::custom: break;
  }
}

struct ExperimentConfig {
  Scenario scenario = Scenario::clean;
  RegMode mode = RegMode::oracle;
  std::shared_ptr<const SdfModel> scene;  // analytic scene; oracle mode requires it
  nlohmann::json scene_json;              // scene node as configured, for the echo
  std::optional<PointCloud> target_cloud;
  std::optional<PointCloud> source_cloud;
  std::string target_file, source_file;
  int trials = 1;
  std::size_t target_samples = 1024;
  std::size_t source_samples = 1024;
  PerturbationSpec perturbation;
  TrainConfig train;
  RegistrationConfig registration;
  double success_rot_deg = 5.0;
  double success_trans = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (trials < 1) throw std::invalid_argument("trials must be >= 1");
    if (target_samples < 1 || source_samples < 1)
      throw std::invalid_argument("sample counts must be >= 1");
    if (!(success_rot_deg > 0.0) || !(success_trans > 0.0))
      throw std::invalid_argument("success thresholds must be > 0");
    if (!scene && !target_cloud)
      throw std::invalid_argument("experiment needs a 'scene' or a 'target_file'");
    if (mode == RegMode::oracle && !scene)
      throw std::invalid_argument("oracle mode requires a 'scene'");
    perturbation.validate();
    train.validate();
    registration.validate();
  }
};

struct TrialOutcome {
  TrialReport report;
  bool ok = false;
  std::string error;  // empty when ok
};

struct BenchmarkRun {
  std::vector<TrialOutcome> trials;
  std::optional<BatchSummary> summary;  // over scored trials; absent if none ran
};

// Sub-seed slots under the per-trial seed; fixed so adding draws to one stage
// never shifts another stage's stream.
namespace trial_seed {
constexpr std::uint64_t kTargetSample = 0;
constexpr std::uint64_t kSourceSample = 1;
constexpr std::uint64_t kNoise = 2;
constexpr std::uint64_t kPartial = 3;
constexpr std::uint64_t kDensity = 4;
constexpr std::uint64_t kPose = 5;
constexpr std::uint64_t kTrain = 6;
}  // namespace trial_seed

inline TrialOutcome run_trial(const ExperimentConfig& cfg, int trial_index) {
  using clock = std::chrono::steady_clock;
  TrialOutcome out;
  out.report.trial_id = trial_index;
  const auto t0 = clock::now();
  try {
    const std::uint64_t ts = derive_seed(cfg.seed, static_cast<std::uint64_t>(trial_index));
    PointCloud target =
        cfg.target_cloud
            ? *cfg.target_cloud
            : sample_surface(*cfg.scene, cfg.target_samples, derive_seed(ts, trial_seed::kTargetSample));
    PointCloud source =
        cfg.source_cloud
            ? *cfg.source_cloud
            : (cfg.target_cloud
                   ? *cfg.target_cloud
                   : sample_surface(*cfg.scene, cfg.source_samples,
                                    derive_seed(ts, trial_seed::kSourceSample)));

    const PerturbationSpec& pert = cfg.perturbation;
    if (pert.noise_sigma > 0.0)
      target = add_noise(target, pert.noise_sigma, derive_seed(ts, trial_seed::kNoise));
    if (pert.partial_keep_fraction < 1.0)
      source = crop_partial(source, pert.partial_keep_fraction,
                            derive_seed(ts, trial_seed::kPartial));
    if (pert.density_keep_fraction < 1.0)
      source = decimate(source, pert.density_keep_fraction, derive_seed(ts, trial_seed::kDensity));

    const RigidTransform gt = random_pose(pert, derive_seed(ts, trial_seed::kPose));
    const RigidTransform gt_inv = gt.inverse();
    PointCloud P;
    P.points.reserve(source.points.size());
    for (const auto& p : source.points) P.points.push_back(gt_inv * p);

    RegistrationResult res;
    if (cfg.mode == RegMode::oracle) {
      res = register_points(*cfg.scene, P, cfg.registration);
    } else if (cfg.mode == RegMode::neural) {
      TrainConfig tc = cfg.train;
      tc.seed = derive_seed(ts, trial_seed::kTrain);
      NeuralSdfModel model(fit_sdf(target, tc).params);
      res = register_points(model, P, cfg.registration);
    } else {
      TrainConfig tc = cfg.train;
      tc.seed = derive_seed(ts, trial_seed::kTrain);
      RegistrationConfig rc = cfg.registration;
      rc.c2f_enabled = true;
      res = register_c2f(target, P, tc, rc).result;
    }

    out.report = score_trial(trial_index, gt, res.theta_est);
    out.report.iterations = res.iterations;
    out.report.stop_reason = to_string(res.stop_reason);
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
    out.report.stop_reason = "error";
    out.report.rot_error_deg = std::numeric_limits<double>::quiet_NaN();
    out.report.trans_error = std::numeric_limits<double>::quiet_NaN();
  }
  out.report.wall_time_ms =
      std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  return out;
}

/// Runs all trials in index order; failures are recorded, never fatal.
inline BenchmarkRun run_benchmark(const ExperimentConfig& cfg) {
  cfg.validate();
  BenchmarkRun run;
  run.trials.reserve(static_cast<std::size_t>(cfg.trials));
  for (int i = 0; i < cfg.trials; ++i) run.trials.push_back(run_trial(cfg, i));
  std::vector<TrialReport> scored;
  for (const auto& t : run.trials)
    if (t.ok) scored.push_back(t.report);
  if (!scored.empty())
    run.summary = summarize(scored, cfg.success_rot_deg, cfg.success_trans);
  return run;
}

// --- experiment config JSON --------------------------------------------------

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& ctx,
                       std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (const char* a : allowed)
      if (key == a) known = true;
    if (!known) throw std::invalid_argument(ctx + ": unknown field '" + key + "'");
  }
}

inline double json_number(const nlohmann::json& j, const std::string& ctx, const char* key,
                          double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number())
    throw std::invalid_argument(ctx + ": field '" + std::string(key) + "' must be a number");
  return j[key].get<double>();
}

inline std::int64_t json_int(const nlohmann::json& j, const std::string& ctx, const char* key,
                             std::int64_t fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_integer())
    throw std::invalid_argument(ctx + ": field '" + std::string(key) + "' must be an integer");
  return j[key].get<std::int64_t>();
}

inline std::string json_string(const nlohmann::json& j, const std::string& ctx, const char* key,
                               const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_string())
    throw std::invalid_argument(ctx + ": field '" + std::string(key) + "' must be a string");
  return j[key].get<std::string>();
}

}  // namespace detail

inline TrainConfig parse_train_config(const nlohmann::json& j, const std::string& ctx = "train") {
  detail::check_keys(j, ctx,
                     {"lambda_q", "lambda_e", "steps", "batch_size", "learning_rate",
                      "query_box_padding", "seed", "hidden_layers", "hidden_width"});
  TrainConfig c;
  c.lambda_q = detail::json_number(j, ctx, "lambda_q", c.lambda_q);
  c.lambda_e = detail::json_number(j, ctx, "lambda_e", c.lambda_e);
  c.steps = static_cast<int>(detail::json_int(j, ctx, "steps", c.steps));
  c.batch_size = static_cast<int>(detail::json_int(j, ctx, "batch_size", c.batch_size));
  c.learning_rate = detail::json_number(j, ctx, "learning_rate", c.learning_rate);
  c.query_box_padding = detail::json_number(j, ctx, "query_box_padding", c.query_box_padding);
  c.seed = static_cast<std::uint64_t>(detail::json_int(j, ctx, "seed", 0));
  c.hidden_layers = static_cast<int>(detail::json_int(j, ctx, "hidden_layers", c.hidden_layers));
  c.hidden_width = static_cast<int>(detail::json_int(j, ctx, "hidden_width", c.hidden_width));
  c.validate();
  return c;
}

inline RegistrationConfig parse_registration_config(const nlohmann::json& j,
                                                    const std::string& ctx = "registration") {
  detail::check_keys(j, ctx,
                     {"max_iters", "rel_tol", "lm_lambda_init", "lm_lambda_up", "lm_lambda_down",
                      "lm_lambda_max", "c2f_refine_steps"});
  RegistrationConfig c;
  c.max_iters = static_cast<int>(detail::json_int(j, ctx, "max_iters", c.max_iters));
  c.rel_tol = detail::json_number(j, ctx, "rel_tol", c.rel_tol);
  c.lm_lambda_init = detail::json_number(j, ctx, "lm_lambda_init", c.lm_lambda_init);
  c.lm_lambda_up = detail::json_number(j, ctx, "lm_lambda_up", c.lm_lambda_up);
  c.lm_lambda_down = detail::json_number(j, ctx, "lm_lambda_down", c.lm_lambda_down);
  c.lm_lambda_max = detail::json_number(j, ctx, "lm_lambda_max", c.lm_lambda_max);
  c.c2f_refine_steps =
      static_cast<int>(detail::json_int(j, ctx, "c2f_refine_steps", c.c2f_refine_steps));
  c.validate();
  return c;
}

inline PerturbationSpec parse_perturbation_spec(const nlohmann::json& j,
                                                const std::string& ctx = "perturbation") {
  detail::check_keys(j, ctx,
                     {"rot_range_deg", "trans_range", "noise_sigma", "partial_keep_fraction",
                      "density_keep_fraction"});
  PerturbationSpec p;
  p.rot_range_deg = detail::json_number(j, ctx, "rot_range_deg", p.rot_range_deg);
  p.trans_range = detail::json_number(j, ctx, "trans_range", p.trans_range);
  p.noise_sigma = detail::json_number(j, ctx, "noise_sigma", p.noise_sigma);
  p.partial_keep_fraction =
      detail::json_number(j, ctx, "partial_keep_fraction", p.partial_keep_fraction);
  p.density_keep_fraction =
      detail::json_number(j, ctx, "density_keep_fraction", p.density_keep_fraction);
  return p;
}

/// Parses and fully resolves an experiment config; scenario presets are
/// applied to the perturbation spec here so the echo shows effective values.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  const std::string ctx = "experiment";
  detail::check_keys(j, ctx,
                     {"scenario", "mode", "scene", "scene_file", "target_file", "source_file",
                      "trials", "target_samples", "source_samples", "perturbation", "train",
                      "registration", "success_rot_deg", "success_trans", "seed"});
  ExperimentConfig cfg;
  cfg.scenario = parse_scenario(detail::json_string(j, ctx, "scenario", "clean"));
  cfg.mode = parse_reg_mode(detail::json_string(j, ctx, "mode", "oracle"));

  if (j.contains("scene") && j.contains("scene_file"))
    throw std::invalid_argument("experiment: give either 'scene' or 'scene_file', not both");
  if (j.contains("scene")) {
    cfg.scene_json = j["scene"];
    cfg.scene = parse_scene(cfg.scene_json);
  } else if (j.contains("scene_file")) {
    const std::string path = detail::json_string(j, ctx, "scene_file", "");
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("experiment: cannot open scene_file '" + path + "'");
    in >> cfg.scene_json;
    cfg.scene = parse_scene(cfg.scene_json);
  }
  cfg.target_file = detail::json_string(j, ctx, "target_file", "");
  cfg.source_file = detail::json_string(j, ctx, "source_file", "");
  if (!cfg.target_file.empty()) cfg.target_cloud = read_cloud(cfg.target_file);
  if (!cfg.source_file.empty()) cfg.source_cloud = read_cloud(cfg.source_file);

  cfg.trials = static_cast<int>(detail::json_int(j, ctx, "trials", 1));
  cfg.target_samples =
      static_cast<std::size_t>(detail::json_int(j, ctx, "target_samples", 1024));
  cfg.source_samples =
      static_cast<std::size_t>(detail::json_int(j, ctx, "source_samples", 1024));
  cfg.seed = static_cast<std::uint64_t>(detail::json_int(j, ctx, "seed", 0));
  if (j.contains("perturbation")) cfg.perturbation = parse_perturbation_spec(j["perturbation"]);
  apply_scenario_preset(cfg.scenario, cfg.perturbation);
  if (j.contains("train")) cfg.train = parse_train_config(j["train"]);
  if (j.contains("registration")) cfg.registration = parse_registration_config(j["registration"]);
  cfg.success_rot_deg = detail::json_number(j, ctx, "success_rot_deg", cfg.success_rot_deg);
  cfg.success_trans = detail::json_number(j, ctx, "success_trans", cfg.success_trans);
  cfg.validate();
  return cfg;
}

/// Fully resolved config echo: defaults and presets are spelled out so a
/// report alone reproduces the run.
inline nlohmann::ordered_json experiment_config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["scenario"] = to_string(cfg.scenario);
  j["mode"] = to_string(cfg.mode);
  j["scene"] = cfg.scene ? nlohmann::ordered_json(cfg.scene_json) : nlohmann::ordered_json();
  j["target_file"] = cfg.target_file;
  j["source_file"] = cfg.source_file;
  j["trials"] = cfg.trials;
  j["target_samples"] = cfg.target_samples;
  j["source_samples"] = cfg.source_samples;
  j["seed"] = cfg.seed;
  j["perturbation"] = {{"rot_range_deg", cfg.perturbation.rot_range_deg},
                       {"trans_range", cfg.perturbation.trans_range},
                       {"noise_sigma", cfg.perturbation.noise_sigma},
                       {"partial_keep_fraction", cfg.perturbation.partial_keep_fraction},
                       {"density_keep_fraction", cfg.perturbation.density_keep_fraction}};
  j["train"] = {{"lambda_q", cfg.train.lambda_q},
                {"lambda_e", cfg.train.lambda_e},
                {"steps", cfg.train.steps},
                {"batch_size", cfg.train.batch_size},
                {"learning_rate", cfg.train.learning_rate},
                {"query_box_padding", cfg.train.query_box_padding},
                {"hidden_layers", cfg.train.hidden_layers},
                {"hidden_width", cfg.train.hidden_width}};
  j["registration"] = {{"max_iters", cfg.registration.max_iters},
                       {"rel_tol", cfg.registration.rel_tol},
                       {"lm_lambda_init", cfg.registration.lm_lambda_init},
                       {"lm_lambda_up", cfg.registration.lm_lambda_up},
                       {"lm_lambda_down", cfg.registration.lm_lambda_down},
                       {"lm_lambda_max", cfg.registration.lm_lambda_max},
                       {"c2f_refine_steps", cfg.registration.c2f_refine_steps}};
  j["success_rot_deg"] = cfg.success_rot_deg;
  j["success_trans"] = cfg.success_trans;
  return j;
}

}  // namespace sdfreg
