#pragma once

// Neural building blocks of the multi-task network. Every block consumes and
// produces NCHW tensors.

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace mostnet::blocks {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

torch::nn::Conv2dOptions conv3x3(std::int64_t in, std::int64_t out, std::int64_t stride = 1);
torch::nn::Conv2dOptions conv1x1(std::int64_t in, std::int64_t out);

/// Sets every parameter of the module tree to zero.
void zero_parameters(torch::nn::Module& module);

/// Residual block whose skip path is augmented by a branch acting in the
/// Fourier domain:
///   y = x + conv(relu(conv(x))) + irfft2(conv1x1(relu(conv1x1(rfft2(x)))))
/// The 1x1 convolutions operate on the real and imaginary parts stacked along
/// channels, i.e. independently per frequency.
class FFTResBlockImpl : public torch::nn::Module {
 public:
  FFTResBlockImpl(std::int64_t channels, bool use_fft_branch);

  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor spatial_branch(const torch::Tensor& x);
  torch::Tensor fourier_branch(const torch::Tensor& x);
  /// Input of the Fourier 1x1 convolutions: [N, 2C, H, W/2+1].
  static torch::Tensor spectrum(const torch::Tensor& x);

 private:
  bool use_fft_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::Conv2d fft1_{nullptr}, fft2_{nullptr};
};
TORCH_MODULE(FFTResBlock);

/// Plain residual block with an optional 1x1 projection when widths differ.
class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(std::int64_t in_channels, std::int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
};
TORCH_MODULE(ResBlock);

struct BlockConfig {
  std::int64_t in_channels = 3;
  std::int64_t out_channels = 32;
  int n_res_blocks = 5;
  bool use_fft_branch = true;
};

/// conv3x3 (stride 1 at scale 1, 2 otherwise) -> ReLU -> n FFT residual blocks.
class EncoderStageImpl : public torch::nn::Module {
 public:
  EncoderStageImpl(const BlockConfig& config, int scale);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d head_{nullptr};
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(EncoderStage);

/// Squeeze-excitation fusion of current and aligned previous features:
/// concat -> GAP -> 1x1 (ratio 4) -> ReLU -> 1x1 -> sigmoid gates -> 3x3 projection.
class ChannelAttentionFuseImpl : public torch::nn::Module {
 public:
  explicit ChannelAttentionFuseImpl(std::int64_t channels, std::int64_t reduction = 4);
  torch::Tensor forward(const torch::Tensor& current, const torch::Tensor& previous_warped);
  /// Per-channel gates [N, 2C, 1, 1] for the concatenated input.
  torch::Tensor gates(const torch::Tensor& current, const torch::Tensor& previous_warped);

 private:
  torch::nn::Conv2d squeeze_{nullptr}, excite_{nullptr}, project_{nullptr};
};
TORCH_MODULE(ChannelAttentionFuse);

struct DecoderOutput {
  torch::Tensor backbone;  // shared features feeding the task heads
  torch::Tensor upsampled; // g for the next finer scale; undefined at scale 1
};

/// Expanding path at one scale. `base` is the scale-1 encoder width (32 for
/// the full-size network).
///   s=3: two residual blocks at 4*base, transposed conv to 2*base.
///   s<3: concat(F, g) -> 3x3 conv halving channels -> residual blocks with
///        2*base then base outputs; s=2 adds a transposed conv to scale 1.
class DecoderStageImpl : public torch::nn::Module {
 public:
  DecoderStageImpl(std::int64_t base, int scale);
  DecoderOutput forward(const torch::Tensor& fused, const std::optional<torch::Tensor>& lower);
  std::int64_t backbone_channels() const { return backbone_channels_; }

 private:
  int scale_;
  std::int64_t backbone_channels_;
  torch::nn::Conv2d reduce_{nullptr};
  ResBlock res1_{nullptr}, res2_{nullptr};
  torch::nn::ConvTranspose2d up_{nullptr};
};
TORCH_MODULE(DecoderStage);

/// R = clamp(b + conv3x3(backbone), 0, 1).
class RestorationHeadImpl : public torch::nn::Module {
 public:
  explicit RestorationHeadImpl(std::int64_t in_channels);
  torch::Tensor forward(const torch::Tensor& backbone, const torch::Tensor& degraded);

 private:
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(RestorationHead);

/// Two 3x3 convolutions separated by ReLU, then sigmoid. When `with_prior`
/// the upsampled coarser mask is concatenated to the backbone.
class SegmentationHeadImpl : public torch::nn::Module {
 public:
  SegmentationHeadImpl(std::int64_t in_channels, bool with_prior, std::int64_t hidden = 16);
  torch::Tensor forward(const torch::Tensor& backbone, const std::optional<torch::Tensor>& prior);
  torch::Tensor logits(const torch::Tensor& backbone, const std::optional<torch::Tensor>& prior);

 private:
  bool with_prior_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(SegmentationHead);

/// h = concat(conv3x3(f * M), conv3x3(R)). Without the encoder stream the
/// restored-frame stream alone produces all `channels` outputs.
class MotionGatedAttentionImpl : public torch::nn::Module {
 public:
  MotionGatedAttentionImpl(std::int64_t channels, bool use_encoder_stream);
  torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& mask,
                        const torch::Tensor& restored);
  /// Stream-A output (gated encoder features); undefined when disabled.
  torch::Tensor encoder_stream(const torch::Tensor& features, const torch::Tensor& mask);

 private:
  bool use_encoder_stream_;
  torch::nn::Conv2d stream_a_{nullptr}, stream_b_{nullptr};
};
TORCH_MODULE(MotionGatedAttention);

/// Regresses residual corner offsets [N,4,2] from current and aligned previous
/// motion features: blocks of conv3x3 -> ReLU -> BN -> maxpool(2), GAP,
/// dropout, linear. The final linear layer starts at zero (identity residual).
class OffsetRegressorImpl : public torch::nn::Module {
 public:
  OffsetRegressorImpl(std::int64_t in_channels, const std::vector<std::int64_t>& widths,
                      double dropout = 0.2);
  torch::Tensor forward(const torch::Tensor& current, const torch::Tensor& previous_warped);
  torch::nn::Linear& head() { return fc_; }

 private:
  torch::nn::Sequential features_{nullptr};
  torch::nn::Dropout dropout_{nullptr};
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(OffsetRegressor);

/// 2x area downsampling repeated `times` times.
torch::Tensor area_downsample(const torch::Tensor& x, int times);

}  // namespace mostnet::blocks
