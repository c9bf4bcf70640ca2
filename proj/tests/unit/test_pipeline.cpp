#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "mocap/errors.hpp"
#include "mocap/json_util.hpp"
#include "mocap/pipeline.hpp"
#include "mocap/synthetic.hpp"

#include "scratch_dir.hpp"

namespace fs = std::filesystem;
using namespace mocap;

namespace {

std::string slurp(const fs::path& p)
{
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Clean-walk fixture written once per test binary.
const fs::path& clean_fixture()
{
  static const fs::path dir = [] {
    const fs::path d = scratch_dir() / "clean";
    write_fixture(make_fixture("clean-walk"), d);
    return d;
  }();
  return dir;
}

PipelineConfig robust_config(const fs::path& out)
{
  PipelineConfig c;
  c.rig = clean_fixture() / "rig.json";
  c.observations = clean_fixture() / "observations.jsonl";
  c.reference_events = clean_fixture() / "events.json";
  c.source = TrajectorySource::Robust;
  c.output_dir = out;
  return c;
}

int run_cli(const std::string& args)
{
  const std::string cmd = std::string("\"") + MOCAP_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Config, JsonRoundTrip)
{
  PipelineConfig c;
  c.rig = "a/rig.json";
  c.observations = "a/obs.jsonl";
  c.source = TrajectorySource::Robust;
  c.keypoint_set = "sparse-25";
  c.fit.iterations = 123;
  c.fit.huber.knee2 = 12.0;
  c.ik.kernel = MarkerKernel::Huber;
  c.ik.joint_limit_mode = JointLimitMode::Hard;
  c.gc_thresholds_px = {2.0, 5.0, 10.0};
  c.run_metrics = false;
  c.seed = 77;
  const PipelineConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, PartialDocumentKeepsDefaults)
{
  const PipelineConfig c = config_from_json(nlohmann::json::parse(R"({"seed": 4, "fit": {"iterations": 10}})"));
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.fit.iterations, 10);
  EXPECT_EQ(c.fit.lambda_smooth, FitConfig{}.lambda_smooth);
  EXPECT_EQ(c.source, TrajectorySource::Implicit);
}

TEST(Config, UnknownKeysAndBadValuesRejected)
{
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"sead": 1})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"fit": {"iteration": 1}})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"trajectory_source": "magic"})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"ik": {"kernel": "cauchy"}})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"seed": "four"})")), ConfigError);
}

TEST(Config, HashTracksContent)
{
  PipelineConfig a;
  PipelineConfig b = a;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Config, PathsResolveAgainstConfigFile)
{
  const fs::path dir = scratch_dir();
  fs::create_directories(dir / "cfg");
  std::ofstream(dir / "cfg" / "run.json")
      << R"({"paths": {"rig": "../data/rig.json", "observations": "/abs/obs.jsonl", "model": "m.json", "output_dir": "out"}})";
  const PipelineConfig c = load_config(dir / "cfg" / "run.json");
  EXPECT_EQ(c.rig, dir / "cfg" / "../data/rig.json");
  EXPECT_EQ(c.observations, fs::path("/abs/obs.jsonl"));
  EXPECT_EQ(fs::path(c.model), dir / "cfg" / "m.json");
  EXPECT_EQ(c.output_dir, dir / "cfg" / "out");
}

TEST(Config, MissingObservationsNamedBeforeAnyWork)
{
  const fs::path out = scratch_dir() / "never";
  PipelineConfig c = robust_config(out);
  c.observations = clean_fixture() / "no_such_file.jsonl";
  try
  {
    run_pipeline(c);
    FAIL() << "expected ConfigError";
  }
  catch (const ConfigError& e)
  {
    EXPECT_NE(std::string(e.what()).find("no_such_file.jsonl"), std::string::npos) << e.what();
  }
  EXPECT_FALSE(fs::exists(out));
}

TEST(KeypointSet, Resolution)
{
  const auto& all = default_40_model().marker_names();
  EXPECT_EQ(resolve_keypoint_set("all", all), all);
  EXPECT_EQ(resolve_keypoint_set("dense-87", all), all);
  EXPECT_EQ(resolve_keypoint_set("sparse-25", all), sparse_25_marker_names());
  EXPECT_EQ(resolve_keypoint_set(all[3] + "," + all[1], all), (std::vector<std::string>{all[3], all[1]}));
  EXPECT_THROW(resolve_keypoint_set("nose,chin", all), ConfigError);
}

TEST(Pipeline, CleanWalkEndToEnd)
{
  const fs::path out = scratch_dir() / "run";
  const PipelineResult r = run_pipeline(robust_config(out));
  ASSERT_TRUE(r.metrics.marker_err_mm.has_value());
  EXPECT_LT(*r.metrics.marker_err_mm, 2.0);
  EXPECT_EQ(r.metrics.violations.v0, 0.0);
  ASSERT_TRUE(r.metrics.gait.has_value());
  for (const char* f : {"gated_observations.jsonl", "weights.json", "triangulated.json", "targets.json",
                        "ik/poses.csv", "ik/calibration.json", "predicted_markers.json", "metrics.json",
                        "events_estimated.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const MetricsReport back = load_metrics(out / "metrics.json");
  EXPECT_EQ(back.marker_err_mm, r.metrics.marker_err_mm);
  EXPECT_EQ(back.gc, r.metrics.gc);
}

TEST(Pipeline, RerunIsBitwiseIdentical)
{
  const fs::path out = scratch_dir() / "run";
  run_pipeline(robust_config(out));
  const std::string manifest = slurp(out / "manifest.json");
  const nlohmann::json doc = nlohmann::json::parse(manifest);
  std::map<std::string, std::string> first;
  for (const auto& a : doc.at("artifacts"))
    first[a.at("file").get<std::string>()] = slurp(out / a.at("file").get<std::string>());

  run_pipeline(robust_config(out));
  EXPECT_EQ(slurp(out / "manifest.json"), manifest);
  for (const auto& [file, bytes] : first)
    EXPECT_EQ(slurp(out / file), bytes) << file;
}

TEST(Pipeline, StageFailureNamesStage)
{
  const fs::path dir = scratch_dir();
  CameraRig rig = load_rig(clean_fixture() / "rig.json");
  rig.cameras[2].name = "renamed";
  save_rig(rig, dir / "rig.json");
  PipelineConfig c = robust_config(dir / "out");
  c.rig = dir / "rig.json";
  try
  {
    run_pipeline(c);
    FAIL() << "expected a data error";
  }
  catch (const Error& e)
  {
    EXPECT_EQ(e.kind(), ErrorKind::Data);
    EXPECT_NE(std::string(e.what()).find("stage 'gate'"), std::string::npos) << e.what();
  }
}

TEST(Pipeline, SparseSelectionCarriesThrough)
{
  const fs::path out = scratch_dir() / "run";
  PipelineConfig c = robust_config(out);
  c.keypoint_set = "sparse-25";
  run_pipeline(c);
  const ObservationSet gated = load_observations(out / "gated_observations.jsonl");
  EXPECT_EQ(gated.joint_names(), sparse_25_marker_names());
  EXPECT_EQ(gated.keypoint_set_label(), "sparse-25");
}

TEST(Comparison, SingleConfigMatchesPipeline)
{
  const fs::path dir = scratch_dir();
  const PipelineResult single = run_pipeline(robust_config(dir / "direct"));
  const auto rows = run_comparison({{"only", robust_config(dir / "cmp")}}, dir / "table.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].metrics.marker_err_mm, single.metrics.marker_err_mm);
  EXPECT_EQ(rows[0].metrics.pose_noise, single.metrics.pose_noise);
  EXPECT_EQ(rows[0].metrics.gc, single.metrics.gc);
  const std::string table = slurp(dir / "table.csv");
  EXPECT_EQ(table, comparison_table({{"only", single.metrics}}));
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 2);
  EXPECT_EQ(table.rfind("label,marker_err_mm,pose_noise,gc_5,v0,v50,v100", 0), 0u);
}

TEST(Cli, ExitCodes)
{
  const fs::path dir = scratch_dir();
  const std::string fx = clean_fixture().string();
  EXPECT_EQ(run_cli("simulate --preset clean-walk --output-dir " + (dir / "sim").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "sim" / "observations.jsonl"));
  EXPECT_EQ(run_cli("simulate --preset stair-climb --output-dir " + (dir / "x").string()), 2);
  EXPECT_EQ(run_cli("pipeline --config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(run_cli("pipeline --rig " + fx + "/rig.json --observations " + fx + "/nope.jsonl"), 2);
  EXPECT_EQ(run_cli("pipeline --source sideways --rig " + fx + "/rig.json --observations " + fx
                    + "/observations.jsonl"),
            2);
  EXPECT_EQ(run_cli("no-such-command"), 2);

  std::ofstream(dir / "broken.jsonl") << "{\"t\": 0, \"camera\": \n";
  EXPECT_EQ(run_cli("gate --rig " + fx + "/rig.json --observations " + (dir / "broken.jsonl").string()
                    + " --output-dir " + (dir / "g").string()),
            3);
}

TEST(Cli, ConfigFileWithFlagOverrides)
{
  const fs::path dir = scratch_dir();
  const fs::path fx = clean_fixture();
  fs::copy_file(fx / "model.json", dir / "model.json");
  std::ofstream(dir / "run.json") << nlohmann::json{
      {"paths",
       {{"rig", (fx / "rig.json").string()},
        {"observations", (fx / "observations.jsonl").string()},
        {"model", "model.json"},
        {"output_dir", "from_config"}}},
      {"trajectory_source", "robust"},
      {"seed", 3}}.dump();

  ASSERT_EQ(run_cli("pipeline --config " + (dir / "run.json").string() + " --keypoints sparse-25"), 0);
  const fs::path out = dir / "from_config";
  ASSERT_TRUE(fs::exists(out / "manifest.json"));
  const nlohmann::json manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(manifest.at("config").at("keypoint_set"), "sparse-25");
  EXPECT_EQ(manifest.at("seed"), 3);
  EXPECT_EQ(load_observations(out / "gated_observations.jsonl").n_joints(), 25u);

  ASSERT_EQ(run_cli("pipeline --config " + (dir / "run.json").string() + " --seed 5 --output-dir "
                    + (dir / "flag_out").string()),
            0);
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "flag_out" / "manifest.json")).at("seed"), 5);
}

TEST(Cli, StagesComposeFromFiles)
{
  const fs::path dir = scratch_dir();
  const std::string fx = clean_fixture().string();
  const std::string d = dir.string();
  ASSERT_EQ(run_cli("weights --rig " + fx + "/rig.json --observations " + fx + "/observations.jsonl --output-dir " + d), 0);
  ASSERT_EQ(run_cli("triangulate --rig " + fx + "/rig.json --observations " + fx + "/observations.jsonl --weights " + d
                    + "/weights.json --output-dir " + d),
            0);
  ASSERT_EQ(run_cli("ik --targets " + d + "/triangulated.json --output-dir " + d + "/ik"), 0);
  ASSERT_EQ(run_cli("metrics --rig " + fx + "/rig.json --observations " + fx + "/observations.jsonl --weights " + d
                    + "/weights.json --targets " + d + "/triangulated.json --ik-dir " + d + "/ik --events " + fx
                    + "/events.json --output-dir " + d),
            0);
  const MetricsReport m = load_metrics(dir / "metrics.json");
  ASSERT_TRUE(m.marker_err_mm.has_value());
  EXPECT_LT(*m.marker_err_mm, 2.0);

  // matches the one-shot pipeline on the same inputs
  PipelineConfig c = robust_config(dir / "whole");
  c.min_confidence = 0.0;
  const PipelineResult whole = run_pipeline(c);
  EXPECT_NEAR(*m.marker_err_mm, *whole.metrics.marker_err_mm, 1e-9);
}
