#include "mostnet/blocks.hpp"

#include <sstream>

namespace mostnet::blocks {

namespace F = torch::nn::functional;

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    std::ostringstream os;
    os << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
    throw ShapeError(os.str());
  }
}

void require_same_spatial(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.size(0) != b.size(0) || a.size(2) != b.size(2) || a.size(3) != b.size(3)) {
    std::ostringstream os;
    os << what << ": spatial mismatch " << a.sizes() << " vs " << b.sizes();
    throw ShapeError(os.str());
  }
}

}  // namespace

torch::nn::Conv2dOptions conv3x3(std::int64_t in, std::int64_t out, std::int64_t stride) {
  return torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1);
}

torch::nn::Conv2dOptions conv1x1(std::int64_t in, std::int64_t out) {
  return torch::nn::Conv2dOptions(in, out, 1);
}

void zero_parameters(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& p : module.parameters()) p.zero_();
}

torch::Tensor area_downsample(const torch::Tensor& x, int times) {
  auto out = x;
  for (int i = 0; i < times; ++i) out = F::avg_pool2d(out, F::AvgPool2dFuncOptions(2));
  return out;
}

// ---------------------------------------------------------------------------

FFTResBlockImpl::FFTResBlockImpl(std::int64_t channels, bool use_fft_branch)
    : use_fft_(use_fft_branch) {
  conv1_ = register_module("conv1", torch::nn::Conv2d(conv3x3(channels, channels)));
  conv2_ = register_module("conv2", torch::nn::Conv2d(conv3x3(channels, channels)));
  if (use_fft_) {
    fft1_ = register_module("fft1", torch::nn::Conv2d(conv1x1(2 * channels, 2 * channels)));
    fft2_ = register_module("fft2", torch::nn::Conv2d(conv1x1(2 * channels, 2 * channels)));
  }
}

torch::Tensor FFTResBlockImpl::spatial_branch(const torch::Tensor& x) {
  return conv2_(torch::relu(conv1_(x)));
}

torch::Tensor FFTResBlockImpl::spectrum(const torch::Tensor& x) {
  const auto freq = torch::fft::rfft2(x, std::nullopt, {-2, -1}, "ortho");
  return torch::cat({torch::real(freq), torch::imag(freq)}, 1);
}

torch::Tensor FFTResBlockImpl::fourier_branch(const torch::Tensor& x) {
  const auto c = x.size(1);
  const auto y = fft2_(torch::relu(fft1_(spectrum(x))));
  const auto freq = torch::complex(y.narrow(1, 0, c).contiguous(), y.narrow(1, c, c).contiguous());
  return torch::fft::irfft2(freq, std::vector<std::int64_t>{x.size(2), x.size(3)}, {-2, -1},
                            "ortho");
}

torch::Tensor FFTResBlockImpl::forward(const torch::Tensor& x) {
  auto y = x + spatial_branch(x);
  if (use_fft_) y = y + fourier_branch(x);
  return y;
}

// ---------------------------------------------------------------------------

ResBlockImpl::ResBlockImpl(std::int64_t in_channels, std::int64_t out_channels) {
  conv1_ = register_module("conv1", torch::nn::Conv2d(conv3x3(in_channels, out_channels)));
  conv2_ = register_module("conv2", torch::nn::Conv2d(conv3x3(out_channels, out_channels)));
  if (in_channels != out_channels) {
    skip_ = register_module("skip", torch::nn::Conv2d(conv1x1(in_channels, out_channels)));
  }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  const auto identity = skip_ ? skip_(x) : x;
  return identity + conv2_(torch::relu(conv1_(x)));
}

// ---------------------------------------------------------------------------

EncoderStageImpl::EncoderStageImpl(const BlockConfig& config, int scale) {
  if (config.in_channels <= 0 || config.out_channels <= 0 || config.n_res_blocks <= 0) {
    throw std::invalid_argument("encoder stage needs positive channel and block counts");
  }
  head_ = register_module(
      "head", torch::nn::Conv2d(conv3x3(config.in_channels, config.out_channels, scale == 1 ? 1 : 2)));
  body_ = register_module("body", torch::nn::Sequential());
  for (int i = 0; i < config.n_res_blocks; ++i) {
    body_->push_back(FFTResBlock(config.out_channels, config.use_fft_branch));
  }
}

torch::Tensor EncoderStageImpl::forward(const torch::Tensor& x) {
  return body_->forward(torch::relu(head_(x)));
}

// ---------------------------------------------------------------------------

ChannelAttentionFuseImpl::ChannelAttentionFuseImpl(std::int64_t channels, std::int64_t reduction) {
  const auto joint = 2 * channels;
  const auto hidden = std::max<std::int64_t>(1, joint / reduction);
  squeeze_ = register_module("squeeze", torch::nn::Conv2d(conv1x1(joint, hidden)));
  excite_ = register_module("excite", torch::nn::Conv2d(conv1x1(hidden, joint)));
  project_ = register_module("project", torch::nn::Conv2d(conv3x3(joint, channels)));
}

torch::Tensor ChannelAttentionFuseImpl::gates(const torch::Tensor& current,
                                              const torch::Tensor& previous_warped) {
  require_same_shape(current, previous_warped, "channel attention");
  const auto joint = torch::cat({current, previous_warped}, 1);
  const auto pooled = joint.mean({2, 3}, true);
  return torch::sigmoid(excite_(torch::relu(squeeze_(pooled))));
}

torch::Tensor ChannelAttentionFuseImpl::forward(const torch::Tensor& current,
                                                const torch::Tensor& previous_warped) {
  const auto g = gates(current, previous_warped);
  const auto joint = torch::cat({current, previous_warped}, 1);
  return project_(joint * g);
}

// ---------------------------------------------------------------------------

DecoderStageImpl::DecoderStageImpl(std::int64_t base, int scale) : scale_(scale) {
  if (scale < 1 || scale > 3) throw std::invalid_argument("decoder scale must be 1, 2 or 3");
  const auto deconv = [](std::int64_t in, std::int64_t out) {
    return torch::nn::ConvTranspose2d(
        torch::nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1));
  };
  if (scale == 3) {
    res1_ = register_module("res1", ResBlock(4 * base, 4 * base));
    res2_ = register_module("res2", ResBlock(4 * base, 4 * base));
    up_ = register_module("up", deconv(4 * base, 2 * base));
    backbone_channels_ = 4 * base;
  } else {
    const auto width = base << (scale - 1);  // encoder width at this scale
    reduce_ = register_module("reduce", torch::nn::Conv2d(conv3x3(2 * width, width)));
    res1_ = register_module("res1", ResBlock(width, 2 * base));
    res2_ = register_module("res2", ResBlock(2 * base, base));
    if (scale == 2) up_ = register_module("up", deconv(base, base));
    backbone_channels_ = base;
  }
}

DecoderOutput DecoderStageImpl::forward(const torch::Tensor& fused,
                                        const std::optional<torch::Tensor>& lower) {
  DecoderOutput out;
  if (scale_ == 3) {
    if (lower) throw ShapeError("decoder scale 3 takes no lower-scale input");
    out.backbone = res2_(res1_(fused));
  } else {
    if (!lower) throw ShapeError("decoder scale < 3 requires the upsampled lower-scale features");
    require_same_spatial(fused, *lower, "decoder");
    out.backbone = res2_(res1_(reduce_(torch::cat({fused, *lower}, 1))));
  }
  if (up_) out.upsampled = up_(out.backbone);
  return out;
}

// ---------------------------------------------------------------------------

RestorationHeadImpl::RestorationHeadImpl(std::int64_t in_channels) {
  conv_ = register_module("conv", torch::nn::Conv2d(conv3x3(in_channels, 3)));
}

torch::Tensor RestorationHeadImpl::forward(const torch::Tensor& backbone,
                                           const torch::Tensor& degraded) {
  require_same_spatial(backbone, degraded, "restoration head");
  return torch::clamp(degraded + conv_(backbone), 0.0, 1.0);
}

// ---------------------------------------------------------------------------

SegmentationHeadImpl::SegmentationHeadImpl(std::int64_t in_channels, bool with_prior,
                                           std::int64_t hidden)
    : with_prior_(with_prior) {
  conv1_ = register_module("conv1",
                           torch::nn::Conv2d(conv3x3(in_channels + (with_prior ? 1 : 0), hidden)));
  conv2_ = register_module("conv2", torch::nn::Conv2d(conv3x3(hidden, 1)));
}

torch::Tensor SegmentationHeadImpl::logits(const torch::Tensor& backbone,
                                           const std::optional<torch::Tensor>& prior) {
  if (prior.has_value() != with_prior_) {
    throw ShapeError(with_prior_ ? "segmentation head expects a coarser mask prior"
                                 : "segmentation head takes no prior");
  }
  auto input = backbone;
  if (prior) {
    require_same_spatial(backbone, *prior, "segmentation head");
    input = torch::cat({backbone, *prior}, 1);
  }
  return conv2_(torch::relu(conv1_(input)));
}

torch::Tensor SegmentationHeadImpl::forward(const torch::Tensor& backbone,
                                            const std::optional<torch::Tensor>& prior) {
  return torch::sigmoid(logits(backbone, prior));
}

// ---------------------------------------------------------------------------

MotionGatedAttentionImpl::MotionGatedAttentionImpl(std::int64_t channels, bool use_encoder_stream)
    : use_encoder_stream_(use_encoder_stream) {
  if (use_encoder_stream_) {
    stream_a_ = register_module(
        "stream_a", torch::nn::Conv2d(conv3x3(channels, channels / 2).bias(false)));
    stream_b_ = register_module("stream_b", torch::nn::Conv2d(conv3x3(3, channels - channels / 2)));
  } else {
    stream_b_ = register_module("stream_b", torch::nn::Conv2d(conv3x3(3, channels)));
  }
}

torch::Tensor MotionGatedAttentionImpl::encoder_stream(const torch::Tensor& features,
                                                       const torch::Tensor& mask) {
  if (!use_encoder_stream_) return {};
  require_same_spatial(features, mask, "motion gated attention");
  return stream_a_(features * mask);
}

torch::Tensor MotionGatedAttentionImpl::forward(const torch::Tensor& features,
                                                const torch::Tensor& mask,
                                                const torch::Tensor& restored) {
  require_same_spatial(features, restored, "motion gated attention");
  const auto b = stream_b_(restored);
  if (!use_encoder_stream_) return b;
  return torch::cat({encoder_stream(features, mask), b}, 1);
}

// ---------------------------------------------------------------------------

OffsetRegressorImpl::OffsetRegressorImpl(std::int64_t in_channels,
                                         const std::vector<std::int64_t>& widths, double dropout) {
  if (widths.empty()) throw std::invalid_argument("offset regressor needs at least one block");
  features_ = register_module("features", torch::nn::Sequential());
  auto in = in_channels;
  for (const auto w : widths) {
    features_->push_back(torch::nn::Conv2d(conv3x3(in, w)));
    features_->push_back(torch::nn::ReLU());
    features_->push_back(torch::nn::BatchNorm2d(torch::nn::BatchNorm2dOptions(w).momentum(0.1)));
    features_->push_back(
        torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(2).stride(2).ceil_mode(true)));
    in = w;
  }
  dropout_ = register_module("dropout", torch::nn::Dropout(dropout));
  fc_ = register_module("fc", torch::nn::Linear(in, 8));
  torch::NoGradGuard no_grad;
  fc_->weight.zero_();
  fc_->bias.zero_();
}

torch::Tensor OffsetRegressorImpl::forward(const torch::Tensor& current,
                                           const torch::Tensor& previous_warped) {
  require_same_shape(current, previous_warped, "offset regressor");
  auto x = features_->forward(torch::cat({current, previous_warped}, 1));
  x = dropout_(x.mean({2, 3}));
  return fc_(x).reshape({-1, 4, 2});
}

}  // namespace mostnet::blocks
