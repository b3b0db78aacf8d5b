#pragma once

// Commands behind the vislam command-line tool. main() only parses flags and
// maps exceptions to exit codes; everything else lives here so tests can
// drive it directly.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vislam/evaluation.hpp"
#include "vislam/initializer.hpp"
#include "vislam/pipeline.hpp"
#include "vislam/simulator.hpp"

namespace vislam::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericalFailure = 3 };

/// 1 for bad arguments/configuration, 2 for unreadable or insufficient data,
/// 3 for degenerate motion, numerical failure or lost tracking.
int exit_code_for(const std::exception& e);

/// Output root used when --out is absent: $VISLAM_OUT, else ./vislam_out.
fs::path default_output_root();

/// SHA-1 of "blob <size>\0<content>", as git computes object ids.
std::string git_blob_sha1(std::string_view content);

/// One hash over every regular file below each path (a file counts as
/// itself): SHA-1 of the sorted "<blob id> <relative path>" lines.
std::string content_hash(const std::vector<fs::path>& inputs);

struct RunManifest {
  std::string command;
  std::vector<std::string> config_paths;
  std::optional<std::uint64_t> seed;
  nlohmann::ordered_json parameters = nlohmann::ordered_json::object();
  std::string output_dir;
  std::string input_hash;

  nlohmann::ordered_json to_json() const;
  static RunManifest from_json(const nlohmann::ordered_json& j);
  void write(const fs::path& path) const;
};

// simulate

struct SimulateArgs {
  std::optional<fs::path> config;  // JSON, see simulation_from_json
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
  std::optional<double> duration;
  fs::path out;
};

struct Simulation {
  TrajectoryModel model;
  SimConfig config;
  nlohmann::ordered_json effective;  // every setting that was applied
};

/// Keys: preset, duration, seed, imu_rate, cam_rate, imu_noise, pixel_sigma,
/// landmark_count, visual_scale, visual_rotation_sigma, visual_position_sigma,
/// bias_random_walk, gyro_bias [3], accel_bias [3]. Unknown keys are an error.
Simulation simulation_from_json(const nlohmann::json& j);

RunManifest cmd_simulate(const SimulateArgs& args);

// init

struct InitArgs {
  fs::path dataset;
  std::optional<fs::path> calib;
  double window = 15.0;
  double keyframe_interval = 0.25;
  bool visual_from_gt = false;  // camera poses from ground truth instead of keyframes.csv
  fs::path out;
};

struct ConvergenceRow {
  std::size_t keyframes = 0;
  double t_end = 0.0;  // s since the first keyframe
  std::optional<InitializationResult> result;
  std::string status;  // "ok", "ill_conditioned" or the failure message
  double solve_ms = 0.0;
};

/// Camera poses derived from ground truth, scale 1.
std::vector<KeyframeVisualPose> visual_poses_from_ground_truth(const Dataset& data);

/// Runs the initializer on every prefix of `keyframes` with at least 4
/// entries. solve_ms is the median of `repeats` timed solves.
std::vector<ConvergenceRow> replay_initialization(std::span<const KeyframeVisualPose> keyframes,
                                                  const Dataset& data, int repeats = 1);

void write_convergence_csv(const fs::path& path, std::span<const ConvergenceRow> rows);

/// Writes convergence.csv and init_result.txt (the full window). Throws when
/// the full window cannot be solved.
RunManifest cmd_init(const InitArgs& args, InitializationResult* result = nullptr);

// run

struct RunArgs {
  fs::path dataset;
  std::optional<fs::path> calib;
  RunMode mode = RunMode::kSlam;
  bool full_ba = false;
  double init_window = 15.0;
  std::size_t local_window = 10;
  fs::path out;
};

/// Writes trajectory.tum (frames), keyframes.tum, report.json and the
/// manifest. Tracking loss still writes the partial trajectory, then throws
/// TrackingLost.
RunManifest cmd_run(const RunArgs& args, PipelineResult* result = nullptr);

// eval

struct EvalArgs {
  fs::path estimate;  // TUM
  fs::path ground_truth;  // TUM, or EuRoC ground-truth CSV
  bool fix_scale = false;
  double max_dt = 0.02;
  fs::path out;
};

/// TUM file or EuRoC CSV (detected from the first line), absolute seconds.
std::vector<StampedPose> read_ground_truth_any(const fs::path& path);

/// Writes metrics.csv and rpe.csv.
RunManifest cmd_eval(const EvalArgs& args, EvaluationReport* report = nullptr);

/// Full command line: parses, dispatches, prints errors, returns the exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace vislam::cli
