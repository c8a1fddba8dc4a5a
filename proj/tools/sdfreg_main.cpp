// sdfreg command line tool: fit SDF models to point clouds, register clouds
// against SDFs, synthesize surface samples, and run seeded benchmark suites.
//
// Exit codes: 0 success, 2 config/parse errors, 3 training divergence,
// 4 solver failure (register only; the result JSON is still written).

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sdfreg/sdfreg.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitTraining = 3;
constexpr int kExitSolver = 4;

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

nlohmann::ordered_json transform_to_json(const sdfreg::RigidTransform& T) {
  const Eigen::Matrix4d m = T.matrix();
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) arr.push_back(m(r, c));
  return arr;
}

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  return j;
}

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out << body;
  if (!out) throw std::runtime_error("write failed: " + path);
}

sdfreg::RigidTransform parse_initial_pose(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 16)
    throw std::invalid_argument("initial_pose must be an array of 16 numbers (row-major 4x4)");
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      const auto& v = j[static_cast<std::size_t>(4 * r + c)];
      if (!v.is_number()) throw std::invalid_argument("initial_pose entries must be numbers");
      m(r, c) = v.get<double>();
    }
  sdfreg::RigidTransform T = sdfreg::RigidTransform::FromMatrix(m);
  if ((T.rotation * T.rotation.transpose() - Eigen::Matrix3d::Identity()).norm() > 1e-9 ||
      T.rotation.determinant() < 0.0)
    throw std::invalid_argument("initial_pose rotation block is not a rotation matrix");
  return T;
}

sdfreg::RegistrationConfig parse_register_config_json(const nlohmann::json& j) {
  nlohmann::json base = j;
  nlohmann::json pose;
  if (base.contains("initial_pose")) {
    pose = base["initial_pose"];
    base.erase("initial_pose");
  }
  sdfreg::RegistrationConfig cfg = sdfreg::parse_registration_config(base);
  if (!pose.is_null()) cfg.initial_pose = parse_initial_pose(pose);
  return cfg;
}

int cmd_fit_sdf(const std::string& input, const std::string& config_path, const std::string& out,
                std::string trace_path) {
  sdfreg::TrainConfig cfg;
  if (!config_path.empty()) cfg = sdfreg::parse_train_config(load_json_file(config_path));
  const sdfreg::PointCloud cloud = sdfreg::read_cloud(input);
  const sdfreg::FitResult fit = sdfreg::fit_sdf(cloud, cfg);
  sdfreg::write_mlp(out, fit.params);

  if (trace_path.empty()) trace_path = out + ".loss.csv";
  std::string csv = "step,loss_self,loss_eikonal,loss_total\n";
  for (const auto& row : fit.trace)
    csv += std::to_string(row.step) + "," + fmt17(row.loss_self) + "," +
           fmt17(row.loss_eikonal) + "," + fmt17(row.loss_total) + "\n";
  write_text_file(trace_path, csv);

  std::cout << "fit " << input << " (" << cloud.points.size() << " points): model " << out
            << ", trace " << trace_path << ", final loss "
            << fmt17(fit.trace.back().loss_total) << "\n";
  return kExitOk;
}

int cmd_register(const std::string& source, const std::string& sdf_path,
                 const std::string& config_path, const std::string& out) {
  sdfreg::RegistrationConfig cfg;
  if (!config_path.empty()) cfg = parse_register_config_json(load_json_file(config_path));
  const sdfreg::PointCloud P = sdfreg::read_cloud(source);
  const auto model = sdfreg::load_sdf_any(sdf_path);
  const sdfreg::RegistrationResult res = sdfreg::register_points(*model, P, cfg);

  nlohmann::ordered_json j;
  j["theta_est"] = transform_to_json(res.theta_est);
  j["iterations"] = res.iterations;
  j["stop_reason"] = sdfreg::to_string(res.stop_reason);
  nlohmann::ordered_json trace = nlohmann::ordered_json::array();
  for (const auto& row : res.trace)
    trace.push_back({{"d_n", row.d_n},
                     {"lambda", row.lambda},
                     {"delta_xi_norm", row.delta_xi_norm}});
  j["trace"] = std::move(trace);
  write_text_file(out, j.dump(2) + "\n");

  std::cout << "register " << source << " -> " << sdf_path << ": " << res.iterations
            << " iterations, " << sdfreg::to_string(res.stop_reason) << ", result " << out
            << "\n";
  return res.stop_reason == sdfreg::StopReason::solver_failure ? kExitSolver : kExitOk;
}

int cmd_synth(const std::string& shape, std::size_t n, std::uint64_t seed,
              const std::string& out) {
  const auto model = sdfreg::load_scene_file(shape);
  const sdfreg::PointCloud cloud = sdfreg::sample_surface(*model, n, seed);
  sdfreg::write_cloud(out, cloud);
  std::cout << "synth " << shape << ": " << cloud.points.size() << " points -> " << out << "\n";
  return kExitOk;
}

int cmd_benchmark(const std::string& config_path, const std::string& out_dir) {
  const sdfreg::ExperimentConfig cfg =
      sdfreg::parse_experiment_config(load_json_file(config_path));
  std::filesystem::create_directories(out_dir);

  const sdfreg::BenchmarkRun run = sdfreg::run_benchmark(cfg);

  nlohmann::ordered_json report;
  report["tool_version"] = SDFREG_VERSION;
  report["config"] = sdfreg::experiment_config_to_json(cfg);
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& t : run.trials) {
    nlohmann::ordered_json row;
    row["trial"] = t.report.trial_id;
    if (t.ok) {
      row["rot_err_deg"] = t.report.rot_error_deg;
      row["trans_err"] = t.report.trans_error;
    } else {
      row["rot_err_deg"] = nullptr;
      row["trans_err"] = nullptr;
    }
    row["iterations"] = t.report.iterations;
    row["stop_reason"] = t.report.stop_reason;
    row["wall_time_ms"] = t.report.wall_time_ms;
    row["ground_truth"] = transform_to_json(t.report.ground_truth);
    row["estimate"] = transform_to_json(t.report.estimate);
    row["error"] = t.ok ? nlohmann::ordered_json() : nlohmann::ordered_json(t.error);
    rows.push_back(std::move(row));
  }
  report["trials"] = std::move(rows);
  if (run.summary) {
    const auto& s = *run.summary;
    report["summary"] = {
        {"count", s.count},
        {"rotation_deg",
         {{"mae", s.rotation_deg.mae}, {"rmse", s.rotation_deg.rmse}, {"median", s.rotation_deg.median}}},
        {"translation",
         {{"mae", s.translation.mae}, {"rmse", s.translation.rmse}, {"median", s.translation.median}}},
        {"success_rate", s.success_rate},
        {"rot_thresh_deg", s.rot_thresh_deg},
        {"trans_thresh", s.trans_thresh}};
  } else {
    report["summary"] = nullptr;
  }

  const std::string report_path = (std::filesystem::path(out_dir) / "report.json").string();
  const std::string csv_path = (std::filesystem::path(out_dir) / "trials.csv").string();
  write_text_file(report_path, report.dump(2) + "\n");

  std::string csv = "trial,rot_err_deg,trans_err,iters,stop_reason,ms\n";
  for (const auto& t : run.trials) {
    csv += std::to_string(t.report.trial_id) + ",";
    csv += (t.ok ? fmt17(t.report.rot_error_deg) : "nan") + std::string(",");
    csv += (t.ok ? fmt17(t.report.trans_error) : "nan") + std::string(",");
    csv += std::to_string(t.report.iterations) + ",";
    csv += t.report.stop_reason + ",";
    csv += fmt17(t.report.wall_time_ms) + "\n";
  }
  write_text_file(csv_path, csv);

  std::size_t failed = 0;
  for (const auto& t : run.trials)
    if (!t.ok) ++failed;
  std::cout << "benchmark " << to_string(cfg.scenario) << "/" << to_string(cfg.mode) << ": "
            << run.trials.size() << " trials (" << failed << " failed)";
  if (run.summary)
    std::cout << ", success rate " << fmt17(run.summary->success_rate) << ", rot MAE "
              << fmt17(run.summary->rotation_deg.mae) << " deg, trans MAE "
              << fmt17(run.summary->translation.mae);
  std::cout << ", report " << report_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SDF-based rigid point cloud registration"};
  app.require_subcommand(1);

  std::string fit_input, fit_config, fit_out, fit_trace;
  auto* fit = app.add_subcommand("fit-sdf", "Train a neural SDF on a point cloud");
  fit->add_option("--input", fit_input, "input cloud (.xyz or .ply)")->required();
  fit->add_option("--config", fit_config, "training config JSON");
  fit->add_option("--out", fit_out, "output SDFN model path")->required();
  fit->add_option("--trace", fit_trace, "loss trace CSV path (default: <out>.loss.csv)");

  std::string reg_source, reg_sdf, reg_config, reg_out;
  auto* reg = app.add_subcommand("register", "Register a source cloud against an SDF");
  reg->add_option("--source", reg_source, "source cloud (.xyz or .ply)")->required();
  reg->add_option("--sdf", reg_sdf, "SDF: scene JSON, SDFG grid, or SDFN model")->required();
  reg->add_option("--config", reg_config, "registration config JSON");
  reg->add_option("--out", reg_out, "output result JSON path")->required();

  std::string synth_shape, synth_out;
  std::size_t synth_n = 1024;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "Sample surface points from a scene");
  synth->add_option("--shape", synth_shape, "scene JSON path")->required();
  synth->add_option("--n", synth_n, "number of samples")->required();
  synth->add_option("--seed", synth_seed, "random seed");
  synth->add_option("--out", synth_out, "output cloud path (.xyz or .ply)")->required();

  std::string bench_config, bench_out_dir;
  auto* bench = app.add_subcommand("benchmark", "Run a seeded benchmark suite");
  bench->add_option("--config", bench_config, "experiment config JSON")->required();
  bench->add_option("--out-dir", bench_out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (fit->parsed()) return cmd_fit_sdf(fit_input, fit_config, fit_out, fit_trace);
    if (reg->parsed()) return cmd_register(reg_source, reg_sdf, reg_config, reg_out);
    if (synth->parsed()) return cmd_synth(synth_shape, synth_n, synth_seed, synth_out);
    if (bench->parsed()) return cmd_benchmark(bench_config, bench_out_dir);
  } catch (const sdfreg::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitTraining;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSolver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
