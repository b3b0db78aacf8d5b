#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "vislam/dataio.hpp"
#include "vislam/errors.hpp"
#include "vislam/preintegration.hpp"

namespace vislam::cli {

namespace {

using ojson = nlohmann::ordered_json;

std::string hex(const unsigned char* data, unsigned int n) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * n);
  for (unsigned int k = 0; k < n; ++k) {
    out += kDigits[data[k] >> 4];
    out += kDigits[data[k] & 0xf];
  }
  return out;
}

std::string sha1_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha1(), nullptr) != 1) {
    throw NumericalFailure("SHA-1 digest failed");
  }
  return hex(md, n);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

ojson vec_json(const Eigen::Vector3d& v) { return ojson::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3_from(const nlohmann::json& j, const char* key) {
  if (!j.is_array() || j.size() != 3) throw InvalidArgument(std::string(key) + " must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

// Frame times are relative to the dataset origin; trajectories on disk are
// absolute seconds.
std::vector<StampedPose> absolute(std::vector<StampedPose> poses, std::int64_t origin_ns) {
  const double t0 = static_cast<double>(origin_ns) * 1e-9;
  for (auto& p : poses) p.timestamp += t0;
  return poses;
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const InvalidArgument*>(&e)) return kUsage;
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return kUsage;
  if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const IoError*>(&e) ||
      dynamic_cast<const InsufficientData*>(&e)) {
    return kDataError;
  }
  if (dynamic_cast<const DegenerateMotion*>(&e) || dynamic_cast<const NumericalFailure*>(&e) ||
      dynamic_cast<const TrackingLost*>(&e)) {
    return kNumericalFailure;
  }
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kDataError;
  return kUsage;
}

fs::path default_output_root() {
  if (const char* env = std::getenv("VISLAM_OUT"); env != nullptr && *env != '\0') return env;
  return "vislam_out";
}

std::string git_blob_sha1(std::string_view content) {
  std::string object = "blob " + std::to_string(content.size());
  object.push_back('\0');
  object.append(content);
  return sha1_hex(object);
}

std::string content_hash(const std::vector<fs::path>& inputs) {
  std::vector<std::string> lines;
  for (const fs::path& input : inputs) {
    if (fs::is_regular_file(input)) {
      lines.push_back(git_blob_sha1(slurp(input)) + " " + input.filename().generic_string());
    } else if (fs::is_directory(input)) {
      for (const auto& entry : fs::recursive_directory_iterator(input)) {
        if (!entry.is_regular_file()) continue;
        lines.push_back(git_blob_sha1(slurp(entry.path())) + " " +
                        fs::relative(entry.path(), input).generic_string());
      }
    } else {
      throw IoError("no such input: " + input.string());
    }
  }
  std::sort(lines.begin(), lines.end());
  std::string listing;
  for (const auto& l : lines) listing += l + "\n";
  return sha1_hex(listing);
}

ojson RunManifest::to_json() const {
  ojson j;
  j["command"] = command;
  j["config_paths"] = config_paths;
  j["seed"] = seed ? ojson(*seed) : ojson(nullptr);
  j["parameters"] = parameters;
  j["output_dir"] = output_dir;
  j["input_hash"] = input_hash;
  return j;
}

RunManifest RunManifest::from_json(const ojson& j) {
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config_paths = j.at("config_paths").get<std::vector<std::string>>();
  if (!j.at("seed").is_null()) m.seed = j.at("seed").get<std::uint64_t>();
  m.parameters = j.at("parameters");
  m.output_dir = j.at("output_dir").get<std::string>();
  m.input_hash = j.at("input_hash").get<std::string>();
  return m;
}

void RunManifest::write(const fs::path& path) const { write_text(path, to_json().dump(2) + "\n"); }

Simulation simulation_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidArgument("simulation config must be a JSON object");
  Simulation s;
  std::string preset = "excited";
  double duration = 60.0;
  SimConfig& c = s.config;
  for (const auto& [key, value] : j.items()) {
    if (key == "preset") preset = value.get<std::string>();
    else if (key == "duration") duration = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "imu_rate") c.imu_rate = value.get<int>();
    else if (key == "cam_rate") c.cam_rate = value.get<int>();
    else if (key == "imu_noise") c.imu_noise = value.get<bool>();
    else if (key == "pixel_sigma") c.pixel_sigma = value.get<double>();
    else if (key == "landmark_count") c.landmark_count = value.get<int>();
    else if (key == "visual_scale") c.visual_scale = value.get<double>();
    else if (key == "visual_rotation_sigma") c.visual_rotation_sigma = value.get<double>();
    else if (key == "visual_position_sigma") c.visual_position_sigma = value.get<double>();
    else if (key == "bias_random_walk") c.bias_random_walk = value.get<bool>();
    else if (key == "gyro_bias") c.bias.gyro = vec3_from(value, "gyro_bias");
    else if (key == "accel_bias") c.bias.accel = vec3_from(value, "accel_bias");
    else throw InvalidArgument("unknown simulation setting '" + key + "'");
  }
  s.model = trajectory_preset(preset, duration);
  c.validate();
  s.effective = {{"preset", preset},
                 {"duration", duration},
                 {"seed", c.seed},
                 {"imu_rate", c.imu_rate},
                 {"cam_rate", c.cam_rate},
                 {"imu_noise", c.imu_noise},
                 {"pixel_sigma", c.pixel_sigma},
                 {"landmark_count", c.landmark_count},
                 {"visual_scale", c.visual_scale},
                 {"visual_rotation_sigma", c.visual_rotation_sigma},
                 {"visual_position_sigma", c.visual_position_sigma},
                 {"bias_random_walk", c.bias_random_walk},
                 {"gyro_bias", vec_json(c.bias.gyro)},
                 {"accel_bias", vec_json(c.bias.accel)}};
  return s;
}

RunManifest cmd_simulate(const SimulateArgs& args) {
  nlohmann::json j = nlohmann::json::object();
  if (args.config) j = nlohmann::json::parse(slurp(*args.config));
  if (args.seed) j["seed"] = *args.seed;
  if (args.preset) j["preset"] = *args.preset;
  if (args.duration) j["duration"] = *args.duration;
  const Simulation sim = simulation_from_json(j);

  write_dataset(args.out, generate(sim.model, sim.config));

  RunManifest m;
  m.command = "simulate";
  if (args.config) m.config_paths.push_back(args.config->generic_string());
  m.seed = sim.config.seed;
  m.parameters = sim.effective;
  m.output_dir = args.out.generic_string();
  m.input_hash = sha1_hex(sim.effective.dump());
  m.write(args.out / "manifest.json");
  return m;
}

std::vector<KeyframeVisualPose> visual_poses_from_ground_truth(const Dataset& data) {
  if (!data.ground_truth.has_orientation || data.ground_truth.records.empty()) {
    throw InsufficientData("ground truth with orientation is required for --visual-from-gt");
  }
  const RigidPosed T_BC = data.calibration.T_CB.inverse();
  std::vector<KeyframeVisualPose> out;
  int id = 0;
  for (const StampedPose& b : ground_truth_poses(data.ground_truth)) {
    const RigidPosed T_WC = b.pose * T_BC;
    out.push_back({id++, b.timestamp, T_WC.rotation, T_WC.translation});
  }
  return out;
}

std::vector<ConvergenceRow> replay_initialization(std::span<const KeyframeVisualPose> keyframes,
                                                  const Dataset& data, int repeats) {
  if (keyframes.size() < 4) throw InsufficientData("initialization needs at least 4 keyframes");
  const InitializationInput full = make_initialization_input(
      keyframes, data.imu.samples, data.calibration.T_CB, data.calibration.noise);
  std::vector<InitializationInput> inputs;
  std::vector<ConvergenceRow> rows;
  for (std::size_t n = 4; n <= keyframes.size(); ++n) {
    InitializationInput input = full;
    input.keyframes.resize(n);
    input.preintegrations.resize(n - 1);
    ConvergenceRow row;
    row.keyframes = n;
    row.t_end = keyframes[n - 1].timestamp - keyframes[0].timestamp;
    try {
      row.result = run_full_initialization(input);
      row.status = row.result->ill_conditioned ? "ill_conditioned" : "ok";
    } catch (const DegenerateMotion& e) {
      row.status = e.what();
    } catch (const NumericalFailure& e) {
      row.status = e.what();
    }
    inputs.push_back(std::move(input));
    rows.push_back(std::move(row));
  }
  // Timing passes sweep every window in turn so a scheduler stall lands on
  // one sample of many windows rather than all samples of one.
  std::vector<std::vector<double>> ms(rows.size());
  for (int r = 0; r < std::max(repeats, 1); ++r) {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const auto t0 = std::chrono::steady_clock::now();
      try {
        (void)run_full_initialization(inputs[k]);
      } catch (const Error&) {
      }
      ms[k].push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
  }
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::nth_element(ms[k].begin(), ms[k].begin() + ms[k].size() / 2, ms[k].end());
    rows[k].solve_ms = ms[k][ms[k].size() / 2];
  }
  return rows;
}

void write_convergence_csv(const fs::path& path, std::span<const ConvergenceRow> rows) {
  std::ostringstream os;
  os << "keyframes,t_end,scale,gravity_x,gravity_y,gravity_z,gyro_bias_x,gyro_bias_y,gyro_bias_z,"
        "accel_bias_x,accel_bias_y,accel_bias_z,cond_stage2,cond_stage3,status,solve_ms\n";
  for (const ConvergenceRow& r : rows) {
    os << r.keyframes << ',' << format_double(r.t_end);
    if (r.result) {
      const InitializationResult& x = *r.result;
      os << ',' << format_double(x.scale);
      for (const Eigen::Vector3d* v : {&x.gravity_W, &x.gyro_bias, &x.accel_bias}) {
        for (int i = 0; i < 3; ++i) os << ',' << format_double((*v)(i) + 0.0);
      }
      os << ',' << format_double(x.condition_number_stage2) << ','
         << format_double(x.condition_number_stage3);
    } else {
      os << std::string(12, ',');
    }
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    char ms[32];
    std::snprintf(ms, sizeof(ms), "%.4f", r.solve_ms);
    os << ',' << status << ',' << ms << '\n';
  }
  write_text(path, os.str());
}

namespace {

std::vector<fs::path> dataset_inputs(const fs::path& dataset, const std::optional<fs::path>& calib) {
  std::vector<fs::path> in{dataset};
  if (calib) in.push_back(*calib);
  return in;
}

std::vector<std::string> dataset_paths(const fs::path& dataset, const std::optional<fs::path>& calib) {
  std::vector<std::string> out{dataset.generic_string()};
  if (calib) out.push_back(calib->generic_string());
  return out;
}

}  // namespace

RunManifest cmd_init(const InitArgs& args, InitializationResult* result) {
  if (!(args.window > 0.0) || !(args.keyframe_interval > 0.0)) {
    throw InvalidArgument("init window and keyframe interval must be positive");
  }
  const Dataset data = read_dataset(args.dataset, args.calib);
  const std::vector<KeyframeVisualPose> poses =
      args.visual_from_gt || data.visual_poses.empty() ? visual_poses_from_ground_truth(data) : data.visual_poses;
  const double t_max = poses.front().timestamp + args.window;
  const auto keyframes = select_init_keyframes(poses, args.keyframe_interval, t_max);

  const auto rows = replay_initialization(keyframes, data);
  write_convergence_csv(args.out / "convergence.csv", rows);
  if (!rows.back().result) throw DegenerateMotion("initialization failed on the full window: " + rows.back().status);
  std::ostringstream rec;
  write_result_record(rec, *rows.back().result);
  write_text(args.out / "init_result.txt", rec.str());
  if (result != nullptr) *result = *rows.back().result;

  RunManifest m;
  m.command = "init";
  m.config_paths = dataset_paths(args.dataset, args.calib);
  m.parameters = {{"init_window_sec", args.window},
                  {"keyframe_interval", args.keyframe_interval},
                  {"visual_from_gt", args.visual_from_gt}};
  m.output_dir = args.out.generic_string();
  m.input_hash = content_hash(dataset_inputs(args.dataset, args.calib));
  m.write(args.out / "manifest.json");
  return m;
}

RunManifest cmd_run(const RunArgs& args, PipelineResult* result) {
  PipelineOptions options;
  options.mode = args.mode;
  options.full_ba = args.full_ba;
  options.init_window = args.init_window;
  options.local_window = args.local_window;
  options.validate();

  RunManifest m;
  m.command = "run";
  m.config_paths = dataset_paths(args.dataset, args.calib);
  m.parameters = {{"mode", std::string(to_string(args.mode))},
                  {"full_ba", args.full_ba},
                  {"init_window_sec", args.init_window},
                  {"local_window", args.local_window}};
  m.output_dir = args.out.generic_string();
  m.input_hash = content_hash(dataset_inputs(args.dataset, args.calib));

  const Dataset data = read_dataset(args.dataset, args.calib);
  PipelineResult r = run_pipeline(data, options);

  const std::int64_t origin = data.imu.origin_ns;
  write_trajectory_tum(absolute(r.frames, origin), args.out / "trajectory.tum");
  write_trajectory_tum(absolute(r.keyframes, origin), args.out / "keyframes.tum");

  ojson report;
  report["mode"] = std::string(to_string(args.mode));
  report["frames"] = r.frames.size();
  report["keyframes"] = r.keyframes.size();
  report["keyframes_inserted"] = r.keyframes_inserted;
  report["keyframes_culled"] = r.keyframes_culled;
  report["map_points"] = r.map_points;
  report["init"] = {{"scale", r.init.scale},
                    {"gravity", vec_json(r.init.gravity_W)},
                    {"gyro_bias", vec_json(r.init.gyro_bias)},
                    {"accel_bias", vec_json(r.init.accel_bias)},
                    {"cond_stage2", r.init.condition_number_stage2},
                    {"cond_stage3", r.init.condition_number_stage3},
                    {"ill_conditioned", r.init.ill_conditioned}};
  ojson loops = ojson::array();
  for (const LoopClosureEvent& l : r.loops) {
    loops.push_back({{"t_query", l.t_query},
                     {"t_match", l.t_match},
                     {"correction_m", l.correction},
                     {"fused_points", l.fused_points}});
  }
  report["loops"] = loops;
  report["tracking_lost_at"] = r.lost_at ? ojson(*r.lost_at) : ojson(nullptr);
  if (r.lost_at) report["tracking_lost_reason"] = r.lost_reason;
  if (r.ate_before_full_ba) report["ate_before_full_ba"] = *r.ate_before_full_ba;
  if (r.ate_after_full_ba) report["ate_after_full_ba"] = *r.ate_after_full_ba;
  if (r.full_ba_report) report["full_ba_iterations"] = r.full_ba_report->solver.iterations;
  if (data.ground_truth.has_orientation && !r.frames.empty()) {
    try {
      const auto ev = evaluate(r.frames, ground_truth_poses(data.ground_truth),
                               {.max_dt = 1e-3, .fix_scale = false, .deltas = {}});
      report["ate"] = ev.ate;
      report["scale_error_percent"] = ev.alignment.scale_error_percent();
    } catch (const Error&) {
      report["ate"] = nullptr;
    }
  }
  write_text(args.out / "report.json", report.dump(2) + "\n");
  m.write(args.out / "manifest.json");

  const std::optional<double> lost = r.lost_at;
  const std::string reason = r.lost_reason;
  if (result != nullptr) *result = std::move(r);
  if (lost) throw TrackingLost(*lost, "tracking lost at t = " + format_double(*lost) + " s: " + reason);
  return m;
}

std::vector<StampedPose> read_ground_truth_any(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string first;
  std::getline(in, first);
  in.close();
  if (first.find(',') == std::string::npos) return read_trajectory_tum(path);
  const GroundTruthTrack track = read_groundtruth_csv(path);
  return absolute(ground_truth_poses(track), track.origin_ns);
}

RunManifest cmd_eval(const EvalArgs& args, EvaluationReport* report) {
  std::vector<StampedPose> est = read_trajectory_tum(args.estimate);
  std::vector<StampedPose> gt = read_ground_truth_any(args.ground_truth);
  if (est.empty() || gt.empty()) throw InsufficientData("eval: empty trajectory");
  // shift both to a common whole-second base so differences keep their precision
  const double base = std::floor(std::min(est.front().timestamp, gt.front().timestamp));
  for (auto& p : est) p.timestamp -= base;
  for (auto& p : gt) p.timestamp -= base;

  const EvaluationReport r = evaluate(est, gt, {.max_dt = args.max_dt, .fix_scale = args.fix_scale});
  write_metrics_csv(args.out / "metrics.csv", r);
  write_rpe_plot_data(args.out / "rpe.csv", r.rpe);
  if (report != nullptr) *report = r;

  RunManifest m;
  m.command = "eval";
  m.config_paths = {args.estimate.generic_string(), args.ground_truth.generic_string()};
  m.parameters = {{"fix_scale", args.fix_scale}, {"max_dt", args.max_dt}};
  m.output_dir = args.out.generic_string();
  m.input_hash = content_hash({args.estimate, args.ground_truth});
  m.write(args.out / "manifest.json");
  return m;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Visual-inertial initialization, tracking and evaluation on EuRoC-layout data"};
  app.require_subcommand(1);

  SimulateArgs sim;
  std::string sim_out;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset");
  simulate->add_option("--config", sim.config, "JSON simulation settings")->check(CLI::ExistingFile);
  simulate->add_option("--seed", sim.seed, "Random seed (overrides the config)");
  simulate->add_option("--preset", sim.preset, "excited, loops, hover or constant_velocity");
  simulate->add_option("--duration", sim.duration, "Seconds");
  simulate->add_option("--out", sim_out, "Dataset directory");

  InitArgs init;
  std::string init_out;
  auto* init_cmd = app.add_subcommand("init", "Replay the initializer over growing windows");
  init_cmd->add_option("--dataset", init.dataset, "Dataset root")->required()->check(CLI::ExistingDirectory);
  init_cmd->add_option("--calib", init.calib, "Calibration file")->check(CLI::ExistingFile);
  init_cmd->add_option("--init-window-sec", init.window, "Seconds of keyframes")->capture_default_str();
  init_cmd->add_option("--keyframe-interval", init.keyframe_interval, "Seconds between keyframes")
      ->capture_default_str();
  init_cmd->add_flag("--visual-from-gt", init.visual_from_gt, "Camera poses from ground truth");
  init_cmd->add_option("--out", init_out, "Output directory");

  RunArgs run;
  std::string run_out;
  std::string mode = "slam";
  auto* run_cmd = app.add_subcommand("run", "Run the full pipeline");
  run_cmd->add_option("--dataset", run.dataset, "Dataset root")->required()->check(CLI::ExistingDirectory);
  run_cmd->add_option("--calib", run.calib, "Calibration file")->check(CLI::ExistingFile);
  run_cmd->add_option("--mode", mode, "slam, odometry or localization-only")->capture_default_str();
  run_cmd->add_flag("--full-ba", run.full_ba, "Final full BA");
  run_cmd->add_option("--init-window-sec", run.init_window, "Seconds before initialization")->capture_default_str();
  run_cmd->add_option("--local-window", run.local_window, "Keyframes in local BA")->capture_default_str();
  run_cmd->add_option("--out", run_out, "Output directory");

  EvalArgs eval;
  std::string eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "ATE, scale error and RPE of an estimate");
  eval_cmd->add_option("--est", eval.estimate, "Estimated trajectory (TUM)")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--gt", eval.ground_truth, "Ground truth (TUM or EuRoC CSV)")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_flag("--fix-scale", eval.fix_scale, "Rigid alignment only");
  eval_cmd->add_option("--max-dt", eval.max_dt, "Association tolerance, s")->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  auto out_dir = [](const std::string& given, const char* name) {
    return given.empty() ? default_output_root() / name : fs::path(given);
  };

  try {
    if (*simulate) {
      sim.out = out_dir(sim_out, "simulate");
      cmd_simulate(sim);
      std::cout << "dataset written to " << sim.out.string() << "\n";
    } else if (*init_cmd) {
      init.out = out_dir(init_out, "init");
      InitializationResult r;
      cmd_init(init, &r);
      std::printf("scale %.6f  gyro bias %.5f %.5f %.5f  accel bias %.4f %.4f %.4f  cond %.1f / %.1f%s\n", r.scale,
                  r.gyro_bias.x(), r.gyro_bias.y(), r.gyro_bias.z(), r.accel_bias.x(), r.accel_bias.y(),
                  r.accel_bias.z(), r.condition_number_stage2, r.condition_number_stage3,
                  r.ill_conditioned ? "  (ill-conditioned)" : "");
    } else if (*run_cmd) {
      run.mode = parse_run_mode(mode);
      run.out = out_dir(run_out, "run");
      PipelineResult r;
      cmd_run(run, &r);
      std::printf("%zu frames, %zu keyframes, %zu loops", r.frames.size(), r.keyframes.size(), r.loops.size());
      if (r.ate_after_full_ba) std::printf(", ATE %.4f -> %.4f m after full BA", *r.ate_before_full_ba, *r.ate_after_full_ba);
      std::printf("\n");
    } else if (*eval_cmd) {
      eval.out = out_dir(eval_out, "eval");
      EvaluationReport r;
      cmd_eval(eval, &r);
      std::printf("matched %zu  ATE %.6f m  scale error %.3f%%\n", r.matched, r.ate,
                  r.alignment.scale_error_percent());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kOk;
}

}  // namespace vislam::cli
