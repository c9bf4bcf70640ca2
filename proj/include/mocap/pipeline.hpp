#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mocap/ik_solver.hpp"
#include "mocap/implicit_trajectory.hpp"
#include "mocap/metrics.hpp"
#include "mocap/triangulation.hpp"

namespace mocap {

inline constexpr const char* kVersion = "1.0.0";

enum class TrajectorySource
{
  Implicit,
  Robust,
};

struct PipelineConfig
{
  std::filesystem::path rig;
  std::filesystem::path observations;
  std::string model = "default-40";
  std::filesystem::path output_dir = "run";
  std::filesystem::path reference_events; // optional

  TrajectorySource source = TrajectorySource::Implicit;
  /// "all", "dense-87", "sparse-25" or a comma-separated keypoint list.
  std::string keypoint_set = "all";
  double min_confidence = kDefaultMinConfidence;
  RobustWeightConfig robust;
  FitConfig fit;
  IKConfig ik;
  std::vector<double> gc_thresholds_px = {5.0};
  double gc_lambda = 0.5;
  double match_tolerance_s = kDefaultMatchToleranceS;
  bool run_ik = true;
  bool run_metrics = true;
  std::uint64_t seed = 0;

  /// Throws ConfigError for bad values or missing input files.
  void validate() const;
};

nlohmann::json config_to_json(const PipelineConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
PipelineConfig config_from_json(const nlohmann::json& doc, const PipelineConfig& base = {});
PipelineConfig load_config(const std::filesystem::path& path);

/// Stable FNV-1a hash of the canonical configuration text.
std::string config_hash(const PipelineConfig& config);
std::string fnv1a_hex(const std::string& bytes);

struct PipelineResult
{
  MetricsReport metrics;
  PointTrajectory targets;
  WeightField weights;
  std::optional<IKSolution> ik;
  std::vector<std::filesystem::path> artifacts;
};

/// gate -> robust weights -> trajectory -> IK -> predicted markers -> metrics.
/// Each stage writes its artifact under output_dir; failures are rethrown
/// with the stage name prefixed.
PipelineResult run_pipeline(const PipelineConfig& config);

struct ComparisonRow
{
  std::string label;
  MetricsReport metrics;
};

/// Runs every configuration in order and writes a delimited table with one
/// row per configuration.
std::vector<ComparisonRow> run_comparison(
    const std::vector<std::pair<std::string, PipelineConfig>>& configs,
    const std::filesystem::path& table_path);

std::string comparison_table(const std::vector<ComparisonRow>& rows);

/// Resolves a keypoint-set specification against the available names.
std::vector<std::string> resolve_keypoint_set(
    const std::string& spec, const std::vector<std::string>& available);

/// Target weights (frames x joints) from a weight field.
Eigen::MatrixXd target_weights(const WeightField& weights);

void save_weight_field(
    const WeightField& weights, const ObservationSet& obs, const std::filesystem::path& path);
WeightField load_weight_field(const ObservationSet& obs, const std::filesystem::path& path);

} // namespace mocap
