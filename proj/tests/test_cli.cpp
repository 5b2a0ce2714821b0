#include "mostnet/cli.hpp"

#include "mostnet/json_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace mostnet;
namespace fs = std::filesystem;

namespace {

const nlohmann::json kTinyConfig = {
    {"data", {{"seed", 3}, {"clips_per_split", {{"train", 2}, {"val", 1}, {"test", 1}}}}},
    {"scene",
     {{"frame_size", {32, 40}},
      {"n_frames", 5},
      {"object_radius", 8.0},
      {"object_motion", {{"max_rotation_deg", 1.0}, {"max_translation_px", 0.8}, {"max_scale_change", 0.005}}},
      {"distractor_radius", 3.0},
      {"distractor_motion", {{"max_rotation_deg", 2.0}, {"max_translation_px", 1.0}, {"max_scale_change", 0.0}}}}},
    {"model", {{"base_channels", 4}, {"n_res_blocks", 1}, {"regressor_widths", {8, 8, 8}}, {"seg_hidden", 4}}},
    {"train", {{"batch_size", 1}, {"steps", 2}, {"unroll_length", 3}, {"log_every", 1}}},
    {"eval", {{"split", "test"}}}};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    ws_ = fs::temp_directory_path() /
          ("mostnet_test_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(ws_);
    fs::create_directories(ws_);
    write("tiny.json", kTinyConfig);
  }

  void write(const std::string& name, const nlohmann::json& j) { std::ofstream(ws_ / name) << j.dump(2); }

  int invoke(std::vector<std::string> args) {
    std::vector<std::string> full{"mostnet", "--workspace", ws_.string(), "--config", "tiny.json"};
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : full) argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data());
  }

  nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(ws_ / p);
    return nlohmann::json::parse(in);
  }

  std::string read_text(const fs::path& p) {
    std::ifstream in(ws_ / p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path ws_;
};

}  // namespace

TEST_F(CliTest, ConfigErrorsExitWithValidationCode) {
  write("bad_key.json", {{"train", {{"stepz", 5}}}});
  write("bad_value.json", {{"train", {{"steps", -1}}}});
  write("one_frame.json", {{"scene", {{"n_frames", 1}}}});
  write("bad_size.json", {{"scene", {{"frame_size", {30, 40}}}}});
  const auto with = [&](const std::string& cfg, std::vector<std::string> rest) {
    std::vector<std::string> full{"mostnet", "--workspace", ws_.string(), "--config", cfg};
    full.insert(full.end(), rest.begin(), rest.end());
    std::vector<const char*> argv;
    for (const auto& a : full) argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data());
  };
  EXPECT_EQ(with("bad_key.json", {"params"}), cli::kValidationError);
  EXPECT_EQ(with("bad_value.json", {"params"}), cli::kValidationError);
  EXPECT_EQ(with("one_frame.json", {"synth", "--out", "d"}), cli::kValidationError);
  EXPECT_EQ(with("bad_size.json", {"params"}), cli::kValidationError);
  EXPECT_EQ(with("missing.json", {"params"}), cli::kValidationError);
  EXPECT_FALSE(fs::exists(ws_ / "d"));
}

TEST_F(CliTest, ArgumentErrorsExitWithValidationCode) {
  EXPECT_EQ(invoke({}), cli::kValidationError);
  EXPECT_EQ(invoke({"frobnicate"}), cli::kValidationError);
  EXPECT_EQ(invoke({"train", "--data", "nowhere"}), cli::kValidationError);
  EXPECT_EQ(invoke({"--device", "cuda", "params"}), cli::kValidationError);
  EXPECT_EQ(invoke({"params", "--ablation", "XYZ"}), cli::kValidationError);
  EXPECT_EQ(invoke({"eval", "--data", "nowhere", "--out", "e"}), cli::kValidationError);
  EXPECT_EQ(invoke({"params", "--json"}), cli::kSuccess);
}

TEST_F(CliTest, PipelineProducesSchemaValidReports) {
  ASSERT_EQ(invoke({"synth", "--out", "data"}), cli::kSuccess);
  EXPECT_EQ(read_json("data/index.json").at("format"), "mostnet-dataset");
  // A second synth into the same place must not clobber it.
  EXPECT_EQ(invoke({"synth", "--out", "data"}), cli::kValidationError);

  ASSERT_EQ(invoke({"train", "--data", "data", "--out", "run"}), cli::kSuccess);
  EXPECT_TRUE(fs::exists(ws_ / "run/checkpoint.pt"));
  EXPECT_TRUE(fs::exists(ws_ / "run/checkpoint.pt.json"));
  EXPECT_EQ(read_json("run/run_config.json").at("train").at("steps"), 2);
  EXPECT_EQ(invoke({"train", "--data", "data", "--out", "run"}), cli::kValidationError);

  ASSERT_EQ(invoke({"eval", "--checkpoint", "run/checkpoint.pt", "--data", "data", "--out", "e1"}), cli::kSuccess);
  ASSERT_EQ(invoke({"eval", "--checkpoint", "run/checkpoint.pt", "--data", "data", "--out", "e2", "--frames"}),
            cli::kSuccess);
  const auto r1 = read_json("e1/report.json");
  std::set<std::string> keys;
  for (const auto& [k, _] : r1.items()) keys.insert(k);
  EXPECT_EQ(keys, (std::set<std::string>{"psnr_db", "ssim", "mace_px", "iou", "ew", "fps", "n_frames"}));
  EXPECT_EQ(r1.at("n_frames"), 4);
  auto a = r1, b = read_json("e2/report.json");
  a.erase("fps");
  b.erase("fps");
  EXPECT_EQ(a.dump(), b.dump());
  const auto csv = read_text("e1/per_scale.csv");
  EXPECT_EQ(csv, read_text("e2/per_scale.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_TRUE(fs::exists(ws_ / "e2/frames"));

  ASSERT_EQ(invoke({"eval", "--ground-truth", "--data", "data", "--out", "gt"}), cli::kSuccess);
  EXPECT_EQ(read_json("gt/report.json").at("psnr_db"), 100.0);

  const auto frames = ws_ / "data/test/clip_0000/B";
  ASSERT_EQ(invoke({"infer", "--checkpoint", "run/checkpoint.pt", "--input", frames.string(), "--out", "inf"}),
            cli::kSuccess);
  const auto summary = read_json("inf/summary.json");
  EXPECT_EQ(summary.at("n_inputs"), 5);
  EXPECT_EQ(summary.at("n_outputs"), 4);
  std::size_t outputs = 0;
  for (const auto& e : fs::directory_iterator(ws_ / "inf/R")) outputs += e.path().extension() == ".png";
  EXPECT_EQ(outputs, 4u);
  std::ifstream hs(ws_ / "inf/H.txt");
  EXPECT_EQ(geometry::read_homographies(hs).size(), 4u);

  // A checkpoint built for another architecture is refused.
  write("other.json", nlohmann::json{{"model", {{"base_channels", 6}}}});
  std::vector<std::string> args{"mostnet", "--workspace", ws_.string(), "--config", "other.json", "eval",
                                "--checkpoint", "run/checkpoint.pt", "--data", "data", "--out", "e3"};
  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  EXPECT_EQ(cli::run(static_cast<int>(argv.size()), argv.data()), cli::kValidationError);
}

TEST_F(CliTest, ResumeExtendsARun) {
  ASSERT_EQ(invoke({"synth", "--out", "data"}), cli::kSuccess);
  ASSERT_EQ(invoke({"train", "--data", "data", "--out", "run"}), cli::kSuccess);
  auto longer = kTinyConfig;
  longer["train"]["steps"] = 3;
  write("longer.json", longer);
  std::vector<std::string> args{"mostnet", "--workspace", ws_.string(), "--config", "longer.json",
                                "train",   "--data",      "data",       "--out",    "run",
                                "--resume", "run/checkpoint.pt"};
  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  ASSERT_EQ(cli::run(static_cast<int>(argv.size()), argv.data()), cli::kSuccess);
  std::ifstream in(ws_ / "run/checkpoint.pt.json");
  EXPECT_EQ(nlohmann::json::parse(in).at("step"), 3);
}

TEST(RunConfig, ProfilesAndOverrides) {
  const auto desk = cli::RunConfig::for_profile(cli::Profile::Desk);
  const auto paper = cli::RunConfig::for_profile(cli::Profile::Paper);
  EXPECT_EQ(paper.train.batch_size, 16);
  EXPECT_EQ(paper.train.lr_start, 1e-4);
  EXPECT_EQ(paper.model.base_channels, 32);
  EXPECT_LT(desk.model.base_channels, paper.model.base_channels);

  const auto c = cli::RunConfig::from_json(kTinyConfig, desk);
  EXPECT_EQ(c.model.input_size, (FrameSize{40, 32}));
  EXPECT_EQ(c.data.clips_per_split.at("train"), 2);
  const auto again = cli::RunConfig::from_json(c.to_json(), paper);
  EXPECT_EQ(again.to_json(), c.to_json());
  EXPECT_THROW(cli::RunConfig::from_json({{"extra", 1}}, desk), ConfigError);
  EXPECT_THROW(cli::RunConfig::from_json({{"eval", {{"split", "dev"}}}}, desk), ConfigError);
  EXPECT_THROW(cli::profile_from_string("huge"), ConfigError);
}
