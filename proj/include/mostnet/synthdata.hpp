#pragma once

// Synthetic stand-in for the clinical data pipeline: clean clips of a
// textured convex object moving with known similarity motion over a drifting
// background (plus an optional unlabeled distractor), degraded by a pale color
// mapping, per-pixel motion blur and signal-dependent plus additive noise.

#include "mostnet/geometry.hpp"
#include "mostnet/labels.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mostnet::synth {

class SceneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MotionLimits {
  double max_rotation_deg = 0.0;    // per frame
  double max_translation_px = 0.0;  // per axis, per frame
  double max_scale_change = 0.0;    // relative, per frame
};

/// Deterministic per-frame motion used instead of random draws.
struct MotionStep {
  double rotation_deg = 0.0;
  double scale_change = 0.0;
  double dx = 0.0;
  double dy = 0.0;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  FrameSize frame_size{80, 64};
  int n_frames = 8;
  double object_radius = 20.0;
  int object_vertices = 7;
  MotionLimits object_motion{1.5, 2.0, 0.01};
  std::optional<MotionStep> object_step;
  double background_drift = 0.5;  // max px per frame, per axis
  bool distractor = true;
  double distractor_radius = 7.0;
  MotionLimits distractor_motion{4.0, 2.5, 0.0};

  void validate() const;
  nlohmann::json to_json() const;
  static SceneSpec from_json(const nlohmann::json& j, SceneSpec defaults);
};

/// Per-channel y = clamp(gain * x + offset, 0, 1) ^ gamma.
struct ColorMap {
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  std::array<double, 3> offset{0.0, 0.0, 0.0};
  std::array<double, 3> gamma{1.0, 1.0, 1.0};

  static ColorMap identity() { return {}; }
  static ColorMap pale();
  double apply(double x, int channel) const;
};

struct DegradationSpec {
  int kernel_size = 7;      // K, odd
  double eta = 0.01;        // additive Gaussian std
  double sigma_gain = 0.02; // signal-dependent std = sigma_gain * sqrt(intensity)
  double exposure = 1.0;    // blur length as a fraction of the per-frame motion
  ColorMap color_map = ColorMap::pale();

  void validate() const;
  nlohmann::json to_json() const;
  static DegradationSpec from_json(const nlohmann::json& j, DegradationSpec defaults);
};

struct CleanSequence {
  torch::Tensor frames;    // [T,3,H,W] double in [0,1]
  torch::Tensor masks;     // [T,1,H,W] double in {0,1}
  torch::Tensor velocity;  // [T,2,H,W] double, per-pixel motion used for blur
  std::vector<geometry::Homography> homographies;  // T-1, object motion t-1 -> t
  std::vector<geometry::MotionField> motion;       // T-1, displacement of frame t-1 pixels
  std::vector<geometry::Homography> object_pose;   // T, canonical object coords -> pixels
};

/// Renders a clean clip. Object pixels obey x_t = H_{t-1->t} x_{t-1} exactly.
CleanSequence render_clean_sequence(const SceneSpec& spec);

/// Color maps, blurs with per-pixel linear motion kernels oriented along
/// `velocity` ([T,2,H,W]) and adds noise. Deterministic in `seed`.
torch::Tensor degrade(const torch::Tensor& frames, const torch::Tensor& velocity,
                      const DegradationSpec& spec, std::uint64_t seed);

/// Normalized K x K kernel for a linear motion `v` (pixels).
torch::Tensor motion_kernel(double vx, double vy, int kernel_size, double exposure = 1.0);

// ---------------------------------------------------------------------------
// Clips and the on-disk dataset format:
//   root/index.json
//   root/<split>/clip_XXXX/{B,R,M}/frame_%04d.png   (8-bit; masks single channel {0,255})
//   root/<split>/clip_XXXX/H.txt                     (T-1 homography lines)

struct Clip {
  std::string name;
  torch::Tensor degraded;  // [T,3,H,W] float in [0,1]
  torch::Tensor restored;  // [T,3,H,W]
  torch::Tensor masks;     // [T,1,H,W] {0,1}
  std::vector<geometry::Homography> homographies;  // T-1

  int n_frames() const { return static_cast<int>(restored.size(0)); }
  FrameSize frame_size() const {
    return {static_cast<int>(restored.size(3)), static_cast<int>(restored.size(2))};
  }
};

Clip make_clip(std::string name, const SceneSpec& scene, const DegradationSpec& degradation);

inline const std::array<std::string, 3> kSplits{"train", "val", "test"};

struct DatasetIndex {
  struct Entry {
    std::string split;
    std::string name;
    int n_frames = 0;
    std::string sha256;
    std::filesystem::path dir;
  };
  std::filesystem::path root;
  std::vector<Entry> clips;

  std::vector<Entry> split(const std::string& name) const;
  std::size_t count(const std::string& split_name) const;
  bool operator==(const DatasetIndex& other) const;
};

/// Per-split clip counts and derived seeds for a generated dataset.
struct DatasetPlan {
  std::map<std::string, int> clips_per_split{{"train", 8}, {"val", 2}, {"test", 2}};
  std::uint64_t seed = 0;
  SceneSpec scene;
  DegradationSpec degradation;

  /// Scene for clip `index` of `split`, with an independent derived seed.
  SceneSpec scene_for(const std::string& split, int index) const;
};

/// Renders every clip of the plan (clips are independent; generated in order).
std::map<std::string, std::vector<Clip>> generate_dataset(const DatasetPlan& plan);

/// Writes the clips and index.json; `generator` (e.g. the specs used) is stored in the index.
DatasetIndex write_dataset(const std::map<std::string, std::vector<Clip>>& splits,
                           const std::filesystem::path& root,
                           const nlohmann::json& generator = nlohmann::json::object());
/// Validates the tree against index.json (missing or extra files, checksums).
DatasetIndex read_dataset(const std::filesystem::path& root);
Clip load_clip(const DatasetIndex::Entry& entry);

// Image I/O helpers ([3,H,W] / [1,H,W] float tensors in [0,1]).
void write_png(const std::filesystem::path& path, const torch::Tensor& image);
torch::Tensor read_png(const std::filesystem::path& path, int channels);
torch::Tensor quantize8(const torch::Tensor& x);

/// Labels at scale s from full-resolution labels: R and M area-downsampled by
/// 2^(s-1) (M thresholded at 0.5), H conjugated by diag(2^(1-s), 2^(1-s), 1).
ScaleLabels gt_labels_at_scale(const ScaleLabels& full, int scale);
LabelPyramid gt_label_pyramid(const ScaleLabels& full);

}  // namespace mostnet::synth
