#pragma once

// Training loop (truncated recurrent unrolling, Adam with cosine annealing),
// augmentation, checkpoints and evaluation.

#include "mostnet/losses.hpp"
#include "mostnet/metrics.hpp"
#include "mostnet/model.hpp"
#include "mostnet/synthdata.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mostnet::training {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AugmentConfig {
  double flip_h = 0.5;           // probability
  double flip_v = 0.5;           // probability
  double channel_perturb = 0.1;  // per-channel gain in [1-a, 1+a]
  double color_jitter = 0.1;     // brightness/contrast/saturation amplitude

  void validate() const;
  nlohmann::json to_json() const;
  static AugmentConfig from_json(const nlohmann::json& j, AugmentConfig defaults);
  static AugmentConfig none() { return {0.0, 0.0, 0.0, 0.0}; }
};

struct TrainConfig {
  int batch_size = 16;
  double lr_start = 1e-4;
  double lr_end = 1e-6;
  int steps = 1000;
  int unroll_length = 4;  // frames per sample, the first one is the cold start
  double grad_clip = 1.0;
  losses::LossWeights weights;
  AugmentConfig augment;
  std::uint64_t seed = 0;
  int log_every = 10;
  int validate_every = 0;    // 0 disables periodic validation
  int checkpoint_every = 0;  // 0 saves only at the end

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig defaults);
};

/// Cosine annealing from lr_start at step 0 to lr_end at step cfg.steps.
double cosine_lr(const TrainConfig& cfg, int step);

/// A window of consecutive frames of one clip.
struct Sample {
  torch::Tensor degraded;      // [T,3,H,W]
  torch::Tensor restored;      // [T,3,H,W]
  torch::Tensor masks;         // [T,1,H,W]
  torch::Tensor homographies;  // [T-1,3,3] double

  FrameSize frame_size() const {
    return {static_cast<int>(restored.size(3)), static_cast<int>(restored.size(2))};
  }
};

Sample sample_from_clip(const synth::Clip& clip, int start, int length);

struct AugmentDraw {
  bool flip_h = false;
  bool flip_v = false;
  std::array<double, 3> channel_gain{1.0, 1.0, 1.0};
  double brightness = 0.0;
  double contrast = 0.0;
  double saturation = 0.0;

  nlohmann::json to_json() const;
};

AugmentDraw draw_augment(const AugmentConfig& cfg, std::mt19937_64& rng);
/// Flips B, R, M and conjugates H by the reflection; photometric changes touch B only.
Sample apply_augment(const Sample& sample, const AugmentDraw& draw);
Sample augment(const Sample& sample, const AugmentConfig& cfg, std::mt19937_64& rng);

/// Full-resolution labels of a batch at one time step, expanded to all scales.
LabelPyramid batch_labels(const torch::Tensor& restored, const torch::Tensor& masks,
                          const torch::Tensor& homographies);

struct StepRecord {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::map<std::string, double> task_losses;  // unweighted, summed over scales and steps
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

struct TrainOptions {
  std::filesystem::path log_path;         // JSON lines; empty disables
  std::filesystem::path checkpoint_path;  // empty disables
  std::filesystem::path dump_path;        // diagnostic dump on divergence
  const std::vector<synth::Clip>* validation = nullptr;
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::vector<StepRecord> history;
  int final_step = 0;
};

/// Throws TrainingDiverged after writing a dump when the loss is not finite.
TrainResult train(MostNet& model, const std::vector<synth::Clip>& clips, const TrainConfig& cfg,
                  const TrainOptions& options = {});

// ---------------------------------------------------------------------------
// Checkpoints: a torch archive with the model (and optionally the optimizer),
// the step, and the model/train configuration JSON; a JSON sidecar mirrors the
// metadata.

struct CheckpointInfo {
  int step = 0;
  ModelConfig model;
  nlohmann::json train;
  std::string fingerprint;
};

void save_checkpoint(const std::filesystem::path& path, MostNet& model,
                     torch::optim::Adam* optimizer, int step, const nlohmann::json& train_config);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);
/// Loads weights (and optimizer state when given); throws CheckpointError on a
/// fingerprint mismatch with the model's configuration.
CheckpointInfo load_checkpoint(const std::filesystem::path& path, MostNet& model,
                               torch::optim::Adam* optimizer = nullptr);

// ---------------------------------------------------------------------------
// Evaluation

struct ScaleMetrics {
  int scale = 1;
  bool present = false;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double mace_px = 0.0;
  std::optional<double> iou;
};

struct EvalResult {
  metrics::EvalReport report;
  std::array<ScaleMetrics, 3> per_scale;  // outputs upsampled to full resolution

  std::string per_scale_csv() const;
};

/// Per-scale predictions of one clip for frames 1..T-1.
struct ClipPrediction {
  struct Scale {
    torch::Tensor restored;    // [T-1,3,Hs,Ws]
    torch::Tensor mask;        // [T-1,1,Hs,Ws] or undefined
    torch::Tensor homography;  // [T-1,3,3] scale-s pixels
  };
  std::array<std::optional<Scale>, 3> scales;
  double seconds = 0.0;
};

ClipPrediction predict_clip(MostNet& model, const synth::Clip& clip);
/// Ground truth dressed up as predictions (oracle path).
ClipPrediction ground_truth_prediction(const synth::Clip& clip);

EvalResult evaluate_predictions(const std::vector<synth::Clip>& clips,
                                const std::vector<ClipPrediction>& predictions);
EvalResult evaluate(MostNet& model, const std::vector<synth::Clip>& clips);

}  // namespace mostnet::training
