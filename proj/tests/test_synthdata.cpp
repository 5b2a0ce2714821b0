#include "mostnet/hash.hpp"
#include "mostnet/json_util.hpp"
#include "mostnet/synthdata.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace mostnet;
using namespace mostnet::synth;
using geometry::Homography;
using geometry::Vec2;

namespace {

SceneSpec quiet_scene(std::uint64_t seed) {
  SceneSpec s;
  s.seed = seed;
  s.distractor = false;
  s.background_drift = 0.0;
  s.object_step = MotionStep{};
  return s;
}

DegradationSpec clean_degradation(int k) {
  DegradationSpec d;
  d.kernel_size = k;
  d.eta = 0.0;
  d.sigma_gain = 0.0;
  d.color_map = ColorMap::identity();
  return d;
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mostnet_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string tree_digest(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Sha256 sha;
  for (const auto& f : files) {
    sha.update(fs::relative(f, root).generic_string());
    sha.update_file(f);
  }
  return sha.hex_digest();
}

double max_abs_diff(const Homography& a, const Homography& b) {
  return (a.matrix() - b.matrix()).cwiseAbs().maxCoeff();
}

}  // namespace

TEST(Render, ZeroMotionGivesIdentityAndStaticFrames) {
  const auto seq = render_clean_sequence(quiet_scene(3));
  ASSERT_EQ(seq.homographies.size(), 7u);
  for (const auto& h : seq.homographies) EXPECT_EQ(max_abs_diff(h, Homography()), 0.0);
  for (int t = 1; t < 8; ++t) {
    EXPECT_TRUE(torch::equal(seq.frames[t], seq.frames[0]));
    EXPECT_TRUE(torch::equal(seq.masks[t], seq.masks[0]));
  }
}

TEST(Render, PureTranslationStep) {
  auto spec = quiet_scene(5);
  spec.object_radius = 12.0;
  spec.object_step = MotionStep{0.0, 0.0, 2.0, 0.0};
  // Start near the left so eight steps of 2 px fit.
  std::optional<CleanSequence> seq;
  for (std::uint64_t seed = 0; !seq && seed < 50; ++seed) {
    spec.seed = seed;
    try {
      seq = render_clean_sequence(spec);
    } catch (const SceneError&) {
    }
  }
  ASSERT_TRUE(seq);
  for (const auto& h : seq->homographies) {
    EXPECT_LT(max_abs_diff(h, Homography::translation(2.0, 0.0)), 1e-12);
  }
}

TEST(Render, ObjectLeavingFrameIsRejected) {
  auto spec = quiet_scene(1);
  spec.object_step = MotionStep{0.0, 0.0, 15.0, 0.0};
  EXPECT_THROW(render_clean_sequence(spec), SceneError);
  spec.object_step.reset();
  spec.object_radius = 40.0;
  EXPECT_THROW(render_clean_sequence(spec), SceneError);
}

TEST(Render, SingleFrameClipRejected) {
  SceneSpec spec;
  spec.n_frames = 1;
  EXPECT_THROW(render_clean_sequence(spec), ConfigError);
}

// Eq. 3 on generator coordinates: every object pixel of frame t, mapped back to
// frame t-1 through the object pose and forward again through H, lands on itself.
TEST(Render, MaskedMotionObeysHomographyExactly) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SceneSpec spec;
    spec.seed = seed;
    const auto seq = render_clean_sequence(spec);
    const auto masks = seq.masks.accessor<double, 4>();
    double worst = 0.0;
    int checked = 0;
    for (int t = 1; t < spec.n_frames; ++t) {
      const auto& h = seq.homographies[static_cast<std::size_t>(t - 1)];
      const auto back = geometry::compose(seq.object_pose[static_cast<std::size_t>(t - 1)],
                                          seq.object_pose[static_cast<std::size_t>(t)].inverse());
      for (int r = 0; r < spec.frame_size.height; ++r) {
        for (int c = 0; c < spec.frame_size.width; ++c) {
          if (masks[t][0][r][c] == 0.0) continue;
          const Vec2 x(c + 0.5, r + 0.5);
          worst = std::max(worst, (h.apply(back.apply(x)) - x).norm());
          ++checked;
        }
      }
    }
    EXPECT_GT(checked, 1000);
    EXPECT_LT(worst, 1e-9);
  }
}

TEST(Render, RansacOnMaskedMotionFieldRecoversHomography) {
  SceneSpec spec;
  spec.seed = 11;
  const auto seq = render_clean_sequence(spec);
  for (int t = 1; t < spec.n_frames; ++t) {
    const auto mask = seq.masks[t - 1][0];
    geometry::RansacOptions opts;
    opts.seed = static_cast<std::uint64_t>(t);
    const auto fit = geometry::ransac_partial_affine(seq.motion[static_cast<std::size_t>(t - 1)], mask, opts);
    EXPECT_LT(max_abs_diff(fit.h, seq.homographies[static_cast<std::size_t>(t - 1)]), 1e-6);
    EXPECT_DOUBLE_EQ(fit.inlier_ratio, 1.0);
  }
}

TEST(Render, DistractorDoesNotChangeLabels) {
  SceneSpec with;
  with.seed = 21;
  auto without = with;
  without.distractor = false;
  const auto a = render_clean_sequence(with);
  const auto b = render_clean_sequence(without);
  EXPECT_TRUE(torch::equal(a.masks, b.masks));
  ASSERT_EQ(a.homographies.size(), b.homographies.size());
  for (std::size_t i = 0; i < a.homographies.size(); ++i) {
    EXPECT_EQ(max_abs_diff(a.homographies[i], b.homographies[i]), 0.0);
  }
  EXPECT_FALSE(torch::equal(a.frames, b.frames));
}

TEST(Degrade, DeltaKernelWithoutNoiseIsIdentity) {
  SceneSpec spec;
  spec.seed = 4;
  const auto seq = render_clean_sequence(spec);
  const auto out = degrade(seq.frames, seq.velocity, clean_degradation(1), 99);
  EXPECT_TRUE(torch::equal(out, seq.frames));
}

TEST(Degrade, StaticSceneAnyKernelIsIdentity) {
  const auto seq = render_clean_sequence(quiet_scene(6));
  const auto out = degrade(seq.frames, seq.velocity, clean_degradation(7), 1);
  EXPECT_TRUE(torch::equal(out, seq.frames));
}

TEST(Degrade, MovingEdgeMatchesBoxConvolution) {
  const int h = 6, w = 20, k = 5;
  auto frames = torch::zeros({1, 3, h, w}, torch::kDouble);
  frames.index_put_({torch::indexing::Slice(), torch::indexing::Slice(), torch::indexing::Slice(),
                     torch::indexing::Slice(9, torch::indexing::None)},
                    1.0);
  frames[0][1] *= 0.5;
  // Horizontal motion of 4 px puts the five taps on integer offsets -2..2.
  auto velocity = torch::zeros({1, 2, h, w}, torch::kDouble);
  velocity.select(1, 0).fill_(4.0);
  const auto out = degrade(frames, velocity, clean_degradation(k), 0);

  auto in = frames.accessor<double, 4>();
  auto got = out.accessor<double, 4>();
  double worst = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < h; ++r)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int j = -2; j <= 2; ++j) acc += in[0][c][r][std::clamp(x + j, 0, w - 1)] / 5.0;
        worst = std::max(worst, std::abs(acc - got[0][c][r][x]));
      }
  EXPECT_LT(worst, 1e-6);
}

TEST(Degrade, KernelIsNormalizedAndCentered) {
  for (auto [vx, vy] : {std::pair{0.0, 0.0}, {1.3, -0.7}, {20.0, 3.0}}) {
    const auto kernel = motion_kernel(vx, vy, 7);
    EXPECT_NEAR(kernel.sum().item<double>(), 1.0, 1e-12);
    EXPECT_TRUE(torch::allclose(kernel, kernel.flip({0, 1}), 0.0, 1e-12));
  }
  const auto delta = motion_kernel(0.0, 0.0, 5);
  EXPECT_EQ(delta[2][2].item<double>(), 1.0);
}

TEST(Degrade, MoreNoiseLowersFidelity) {
  SceneSpec spec;
  spec.seed = 8;
  const auto seq = render_clean_sequence(spec);
  double previous = 0.0;
  for (double eta : {0.0, 0.02, 0.05, 0.1}) {
    auto d = clean_degradation(7);
    d.eta = eta;
    const double mse = (degrade(seq.frames, seq.velocity, d, 5) - seq.frames).pow(2).mean().item<double>();
    EXPECT_GT(mse, previous);
    previous = mse;
  }
}

TEST(Degrade, DeterministicInSeed) {
  SceneSpec spec;
  spec.seed = 9;
  const auto seq = render_clean_sequence(spec);
  const DegradationSpec d;
  EXPECT_TRUE(torch::equal(degrade(seq.frames, seq.velocity, d, 1), degrade(seq.frames, seq.velocity, d, 1)));
  EXPECT_FALSE(torch::equal(degrade(seq.frames, seq.velocity, d, 1), degrade(seq.frames, seq.velocity, d, 2)));
}

TEST(Specs, JsonRoundTripAndUnknownKeys) {
  SceneSpec s;
  s.seed = 17;
  s.object_step = MotionStep{1.0, 0.0, 2.0, -1.0};
  const auto back = SceneSpec::from_json(s.to_json(), SceneSpec{});
  EXPECT_EQ(back.to_json(), s.to_json());
  DegradationSpec d;
  d.eta = 0.03;
  EXPECT_EQ(DegradationSpec::from_json(d.to_json(), DegradationSpec{}).to_json(), d.to_json());
  EXPECT_THROW(SceneSpec::from_json({{"n_frame", 3}}, SceneSpec{}), ConfigError);
  EXPECT_THROW(DegradationSpec::from_json({{"kernel_size", 4}}, DegradationSpec{}), ConfigError);
  EXPECT_THROW(SceneSpec::from_json({{"n_frames", 1}}, SceneSpec{}), ConfigError);
}

TEST(Dataset, SameSeedGivesByteIdenticalTree) {
  DatasetPlan plan;
  plan.seed = 42;
  plan.clips_per_split = {{"train", 2}, {"val", 1}};
  const auto a = scratch_dir("det_a");
  const auto b = scratch_dir("det_b");
  const auto ia = write_dataset(generate_dataset(plan), a);
  const auto ib = write_dataset(generate_dataset(plan), b);
  EXPECT_TRUE(ia == ib);
  EXPECT_EQ(tree_digest(a), tree_digest(b));
  plan.seed = 43;
  const auto c = scratch_dir("det_c");
  write_dataset(generate_dataset(plan), c);
  EXPECT_NE(tree_digest(a), tree_digest(c));
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST(Dataset, WriteReadRoundTrip) {
  DatasetPlan plan;
  plan.seed = 7;
  plan.clips_per_split = {{"train", 2}};
  const auto clips = generate_dataset(plan);
  const auto root = scratch_dir("roundtrip");
  const auto written = write_dataset(clips, root);
  const auto read = read_dataset(root);
  EXPECT_TRUE(written == read);
  ASSERT_EQ(read.count("train"), 2u);
  EXPECT_EQ(read.count("val"), 0u);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto loaded = load_clip(read.clips[i]);
    const auto& original = clips.at("train")[i];
    EXPECT_TRUE(torch::equal(loaded.masks, original.masks));
    EXPECT_LE((loaded.restored - original.restored).abs().max().item<float>(), 1.0f / 255.0f);
    EXPECT_LE((loaded.degraded - original.degraded).abs().max().item<float>(), 1e-6f);
    ASSERT_EQ(loaded.homographies.size(), original.homographies.size());
    for (std::size_t k = 0; k < loaded.homographies.size(); ++k) {
      EXPECT_LT(max_abs_diff(loaded.homographies[k], original.homographies[k]), 1e-12);
    }
  }
  fs::remove_all(root);
}

TEST(Dataset, ValidationNamesTheOffendingFile) {
  DatasetPlan plan;
  plan.seed = 3;
  plan.clips_per_split = {{"train", 1}};
  const auto root = scratch_dir("corrupt");
  write_dataset(generate_dataset(plan), root);
  const auto mask = root / "train" / "clip_0000" / "M" / "frame_0003.png";
  const auto copy = root / "mask_backup.png";
  fs::copy_file(mask, copy);
  fs::remove(mask);
  try {
    read_dataset(root);
    FAIL() << "expected a validation error";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("M/frame_0003.png"), std::string::npos) << e.what();
  }
  fs::rename(copy, mask);
  EXPECT_NO_THROW(read_dataset(root));

  const auto extra = root / "train" / "clip_0000" / "B" / "frame_0099.png";
  fs::copy_file(mask, extra);
  EXPECT_THROW(read_dataset(root), DatasetError);
  fs::remove(extra);

  {
    std::fstream h(root / "train" / "clip_0000" / "H.txt", std::ios::in | std::ios::out);
    h.seekp(0);
    h << '2';
  }
  try {
    read_dataset(root);
    FAIL() << "expected a checksum error";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
  }
  fs::remove_all(root);
}

TEST(Labels, DownscalingAcrossScales) {
  const int h = 64, w = 80;
  ScaleLabels full;
  full.restored = torch::rand({1, 3, h, w}, torch::kDouble);
  full.mask = torch::ones({1, 1, h, w}, torch::kDouble);
  full.homography = geometry::to_tensor(Homography::translation(4.0, -8.0), torch::kDouble).unsqueeze(0);
  full.offsets = geometry::offsets_from_homography(full.homography, {w, h});

  const auto s1 = gt_labels_at_scale(full, 1);
  EXPECT_TRUE(torch::equal(s1.restored, full.restored));
  EXPECT_TRUE(torch::equal(s1.homography, full.homography));

  const auto s3 = gt_labels_at_scale(full, 3);
  EXPECT_EQ(s3.restored.size(2), 16);
  EXPECT_EQ(s3.restored.size(3), 20);
  EXPECT_TRUE(torch::equal(s3.mask, torch::ones_like(s3.mask)));
  EXPECT_NEAR(s3.homography[0][0][2].item<double>(), 1.0, 1e-12);
  EXPECT_NEAR(s3.homography[0][1][2].item<double>(), -2.0, 1e-12);
  EXPECT_TRUE(torch::allclose(s3.offsets.select(2, 0), torch::full({1, 4}, 1.0, torch::kDouble)));

  // Re-upscaling the scale-2 homography reproduces scale 1.
  const auto s2 = gt_labels_at_scale(full, 2);
  const auto up = geometry::scale_homography(s2.homography, 2.0);
  EXPECT_LT((up - full.homography).abs().max().item<double>(), 1e-12);
  EXPECT_THROW(gt_labels_at_scale(full, 4), std::invalid_argument);
}
