#pragma once

// Multi-output, multi-scale, multi-task video enhancement network.
//
// Scale s = 1 is full resolution, s = 2, 3 are 2x and 4x downsampled. Each
// forward step consumes the current degraded frame and the recurrent state of
// its stream, and emits a restored frame R^s, a segmentation mask M^s and a
// homography H^s (previous frame -> current frame, scale-s pixels) per scale.

#include "mostnet/blocks.hpp"
#include "mostnet/geometry.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mostnet {

enum class Ablation {
  Full,
  NoSegmentation,     // NS: no segmentation heads, gating mask of ones
  NoEncoderFeatures,  // NE: motion-gated attention sees only the restored frame
  NoWarping,          // NW: previous encoder features are not warped
  NoMultiOutputs,     // NMO: task outputs only at scale 1, no cross-scale propagation
};

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& name);
inline constexpr std::array<Ablation, 5> kAllAblations{Ablation::Full, Ablation::NoSegmentation,
                                                       Ablation::NoEncoderFeatures,
                                                       Ablation::NoWarping, Ablation::NoMultiOutputs};

/// How the scale-1 regressor widths are cropped for the coarser scales.
enum class RegressorCrop {
  DropLeading,   // s=2 keeps widths[1..], s=3 keeps widths[2..]
  DropTrailing,  // s=2 keeps widths[..n-1), s=3 keeps widths[..n-2)
};

struct ModelConfig {
  static constexpr int kScales = 3;

  Ablation ablation = Ablation::Full;
  FrameSize input_size{80, 64};
  std::int64_t base_channels = 32;  // encoder width at scale s is base * 2^(s-1)
  int n_res_blocks = 5;
  bool use_fft_branch = true;
  std::vector<std::int64_t> regressor_widths{64, 128, 256, 256, 256};
  RegressorCrop regressor_crop = RegressorCrop::DropLeading;
  double dropout = 0.2;
  std::int64_t seg_hidden = 16;

  static ModelConfig paper();
  static ModelConfig desk();

  std::int64_t channels_at(int scale) const { return base_channels << (scale - 1); }
  std::vector<std::int64_t> regressor_widths_at(int scale) const;
  bool emits_scale(int scale) const { return scale == 1 || ablation != Ablation::NoMultiOutputs; }
  bool has_segmentation() const { return ablation != Ablation::NoSegmentation; }

  /// Throws ConfigError on invalid values.
  void validate() const;
  nlohmann::json to_json() const;
  /// Overrides fields of `defaults` with the keys present in `j`.
  static ModelConfig from_json(const nlohmann::json& j, ModelConfig defaults);
  /// Stable hash of the architecture-defining fields.
  std::string fingerprint() const;
};

struct ScaleOutput {
  torch::Tensor restored;          // [N,3,Hs,Ws] in [0,1]
  torch::Tensor mask;              // [N,1,Hs,Ws] in (0,1); undefined without segmentation
  torch::Tensor homography;        // [N,3,3] cumulative H^s
  torch::Tensor offsets;           // [N,4,2] cumulative corner offsets of H^s
  torch::Tensor prior;             // [N,3,3] cascade prior H~^s
  torch::Tensor residual_offsets;  // [N,4,2] regressor output
};

struct PyramidOutputs {
  std::array<std::optional<ScaleOutput>, ModelConfig::kScales> scales;

  bool has(int scale) const { return scales.at(scale - 1).has_value(); }
  const ScaleOutput& at(int scale) const;
};

/// Previous-step encoder and motion features of one video stream.
struct RecurrentState {
  std::array<torch::Tensor, ModelConfig::kScales> f_prev;
  std::array<torch::Tensor, ModelConfig::kScales> h_prev;
  bool initialized = false;

  RecurrentState detached() const;
};

class MostNetImpl : public torch::nn::Module {
 public:
  explicit MostNetImpl(ModelConfig config);

  /// Cold start: one pass on the self-pair (b0, b0); outputs are discarded.
  RecurrentState init_state(const torch::Tensor& b0);
  /// One recurrent step on frame b_t ([N,3,H,W] or [3,H,W]).
  std::pair<PyramidOutputs, RecurrentState> forward(const RecurrentState& state,
                                                    const torch::Tensor& b_t);

  const ModelConfig& config() const { return config_; }

  /// Learnable scalar count per top-level submodule.
  std::map<std::string, std::int64_t> parameter_breakdown() const;

 private:
  std::pair<PyramidOutputs, RecurrentState> step(const RecurrentState* previous,
                                                 const torch::Tensor& frame);

  ModelConfig config_;
  std::array<blocks::EncoderStage, 3> encoders_{nullptr, nullptr, nullptr};
  std::array<blocks::ChannelAttentionFuse, 3> fusers_{nullptr, nullptr, nullptr};
  std::array<blocks::DecoderStage, 3> decoders_{nullptr, nullptr, nullptr};
  std::array<blocks::RestorationHead, 3> restoration_{nullptr, nullptr, nullptr};
  std::array<blocks::SegmentationHead, 3> segmentation_{nullptr, nullptr, nullptr};
  std::array<blocks::MotionGatedAttention, 3> gating_{nullptr, nullptr, nullptr};
  std::array<blocks::OffsetRegressor, 3> regressors_{nullptr, nullptr, nullptr};
};
TORCH_MODULE(MostNet);

std::int64_t count_parameters(const ModelConfig& config);
std::int64_t count_parameters(const torch::nn::Module& module);

struct VideoResult {
  std::vector<PyramidOutputs> steps;  // one per frame after the first
  double fps = 0.0;                   // frames per second over the streamed steps
};

/// Streams a clip ([T,3,H,W], T >= 2) through the model without gradients.
VideoResult process_video(MostNet& model, const torch::Tensor& frames);

}  // namespace mostnet
