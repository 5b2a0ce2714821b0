#include "mostnet/model.hpp"

#include "mostnet/hash.hpp"
#include "mostnet/json_util.hpp"

#include <chrono>
#include <sstream>

namespace mostnet {

namespace F = torch::nn::functional;

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::Full: return "FULL";
    case Ablation::NoSegmentation: return "NS";
    case Ablation::NoEncoderFeatures: return "NE";
    case Ablation::NoWarping: return "NW";
    case Ablation::NoMultiOutputs: return "NMO";
  }
  return "FULL";
}

Ablation ablation_from_string(const std::string& name) {
  for (auto a : kAllAblations) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown ablation '" + name + "' (expected FULL, NS, NE, NW or NMO)");
}

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.base_channels = 16;
  c.n_res_blocks = 2;
  c.regressor_widths = {16, 32, 64, 64, 64};
  c.seg_hidden = 8;
  return c;
}

std::vector<std::int64_t> ModelConfig::regressor_widths_at(int scale) const {
  const auto n = static_cast<std::ptrdiff_t>(regressor_widths.size());
  const std::ptrdiff_t drop = std::min<std::ptrdiff_t>(scale - 1, n - 1);
  if (regressor_crop == RegressorCrop::DropLeading) {
    return {regressor_widths.begin() + drop, regressor_widths.end()};
  }
  return {regressor_widths.begin(), regressor_widths.end() - drop};
}

void ModelConfig::validate() const {
  if (input_size.width <= 0 || input_size.height <= 0 || input_size.width % 4 != 0 ||
      input_size.height % 4 != 0) {
    throw ConfigError("model.input_size must be positive and divisible by 4");
  }
  if (base_channels < 2 || base_channels % 2 != 0) {
    throw ConfigError("model.base_channels must be an even integer >= 2");
  }
  if (n_res_blocks < 1) throw ConfigError("model.n_res_blocks must be >= 1");
  if (regressor_widths.size() < 3) throw ConfigError("model.regressor_widths needs >= 3 entries");
  for (auto w : regressor_widths) {
    if (w <= 0) throw ConfigError("model.regressor_widths must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model.dropout must be in [0,1)");
  if (seg_hidden < 1) throw ConfigError("model.seg_hidden must be >= 1");
}

nlohmann::json ModelConfig::to_json() const {
  return {
      {"ablation", to_string(ablation)},
      {"input_size", {input_size.height, input_size.width}},
      {"base_channels", base_channels},
      {"n_res_blocks", n_res_blocks},
      {"use_fft_branch", use_fft_branch},
      {"regressor_widths", regressor_widths},
      {"regressor_crop", regressor_crop == RegressorCrop::DropLeading ? "leading" : "trailing"},
      {"dropout", dropout},
      {"seg_hidden", seg_hidden},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j, ModelConfig c) {
  constexpr std::string_view kSection = "model";
  reject_unknown_keys(j, kSection,
                      {"ablation", "input_size", "base_channels", "n_res_blocks", "use_fft_branch",
                       "regressor_widths", "regressor_crop", "dropout", "seg_hidden"});
  if (j.contains("ablation")) c.ablation = ablation_from_string(j.at("ablation").get<std::string>());
  if (j.contains("input_size")) {
    const auto& s = j.at("input_size");
    if (!s.is_array() || s.size() != 2) throw ConfigError("model.input_size must be [H, W]");
    c.input_size = {s[1].get<int>(), s[0].get<int>()};
  }
  read_optional(j, "base_channels", c.base_channels, kSection);
  read_optional(j, "n_res_blocks", c.n_res_blocks, kSection);
  read_optional(j, "use_fft_branch", c.use_fft_branch, kSection);
  read_optional(j, "regressor_widths", c.regressor_widths, kSection);
  if (j.contains("regressor_crop")) {
    const auto v = j.at("regressor_crop").get<std::string>();
    if (v == "leading") {
      c.regressor_crop = RegressorCrop::DropLeading;
    } else if (v == "trailing") {
      c.regressor_crop = RegressorCrop::DropTrailing;
    } else {
      throw ConfigError("model.regressor_crop must be 'leading' or 'trailing'");
    }
  }
  read_optional(j, "dropout", c.dropout, kSection);
  read_optional(j, "seg_hidden", c.seg_hidden, kSection);
  c.validate();
  return c;
}

std::string ModelConfig::fingerprint() const {
  auto j = to_json();
  j.erase("input_size");  // weights do not depend on the frame size
  return sha256_hex(j.dump()).substr(0, 16);
}

// ---------------------------------------------------------------------------

const ScaleOutput& PyramidOutputs::at(int scale) const {
  const auto& s = scales.at(scale - 1);
  if (!s) throw std::out_of_range("no outputs emitted at scale " + std::to_string(scale));
  return *s;
}

RecurrentState RecurrentState::detached() const {
  RecurrentState out = *this;
  for (auto& t : out.f_prev) {
    if (t.defined()) t = t.detach();
  }
  for (auto& t : out.h_prev) {
    if (t.defined()) t = t.detach();
  }
  return out;
}

// ---------------------------------------------------------------------------

MostNetImpl::MostNetImpl(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto base = config_.base_channels;
  for (int s = 1; s <= 3; ++s) {
    const auto i = static_cast<std::size_t>(s - 1);
    const auto c = config_.channels_at(s);
    const auto tag = std::to_string(s);
    blocks::BlockConfig bc{s == 1 ? 3 : config_.channels_at(s - 1), c, config_.n_res_blocks,
                           config_.use_fft_branch};
    encoders_[i] = register_module("encoder" + tag, blocks::EncoderStage(bc, s));
    fusers_[i] = register_module("fuse" + tag, blocks::ChannelAttentionFuse(c));
    decoders_[i] = register_module("decoder" + tag, blocks::DecoderStage(base, s));
    if (!config_.emits_scale(s)) continue;

    const auto backbone = decoders_[i]->backbone_channels();
    restoration_[i] = register_module("restore" + tag, blocks::RestorationHead(backbone));
    if (config_.has_segmentation()) {
      const bool with_prior = s < 3 && config_.emits_scale(s + 1);
      segmentation_[i] = register_module(
          "segment" + tag, blocks::SegmentationHead(backbone, with_prior, config_.seg_hidden));
    }
    gating_[i] = register_module(
        "gate" + tag,
        blocks::MotionGatedAttention(c, config_.ablation != Ablation::NoEncoderFeatures));
    regressors_[i] = register_module(
        "regress" + tag,
        blocks::OffsetRegressor(2 * c, config_.regressor_widths_at(s), config_.dropout));
  }
}

RecurrentState MostNetImpl::init_state(const torch::Tensor& b0) {
  return step(nullptr, b0).second;
}

std::pair<PyramidOutputs, RecurrentState> MostNetImpl::forward(const RecurrentState& state,
                                                               const torch::Tensor& b_t) {
  if (!state.initialized) {
    throw std::logic_error("forward requires an initialized recurrent state (call init_state)");
  }
  return step(&state, b_t);
}

std::pair<PyramidOutputs, RecurrentState> MostNetImpl::step(const RecurrentState* previous,
                                                            const torch::Tensor& frame) {
  const auto b = frame.dim() == 3 ? frame.unsqueeze(0) : frame;
  if (b.dim() != 4 || b.size(1) != 3) throw blocks::ShapeError("frames must be [N,3,H,W]");
  if (b.size(2) % 4 != 0 || b.size(3) % 4 != 0) {
    throw blocks::ShapeError("frame height and width must be divisible by 4");
  }
  const auto n = b.size(0);

  std::array<torch::Tensor, 3> f;
  auto x = b;
  for (std::size_t i = 0; i < 3; ++i) {
    x = encoders_[i](x);
    f[i] = x;
  }
  if (previous) {
    for (std::size_t i = 0; i < 3; ++i) {
      if (!previous->f_prev[i].defined() || previous->f_prev[i].sizes() != f[i].sizes()) {
        throw blocks::ShapeError("recurrent state does not match the frame size");
      }
    }
  }

  PyramidOutputs outputs;
  RecurrentState next;
  next.initialized = true;
  next.f_prev = f;

  const bool cascade = config_.ablation != Ablation::NoMultiOutputs;
  torch::Tensor coarser_h;     // H^{s+1}
  torch::Tensor coarser_mask;  // M^{s+1}
  std::optional<torch::Tensor> g;

  for (int s = 3; s >= 1; --s) {
    const auto i = static_cast<std::size_t>(s - 1);
    const FrameSize size{static_cast<int>(f[i].size(3)), static_cast<int>(f[i].size(2))};
    const bool identity_prior = !cascade || !coarser_h.defined();
    const auto prior = identity_prior ? geometry::identity_homographies(n, b.options())
                                      : geometry::scale_homography(coarser_h, 2.0);
    const auto align = [&](const torch::Tensor& t) {
      return identity_prior ? t : geometry::warp(t, prior);
    };

    const auto f_prev = previous ? previous->f_prev[i] : f[i];
    const auto f_prev_aligned =
        config_.ablation == Ablation::NoWarping ? f_prev : align(f_prev);
    const auto fused = fusers_[i](f[i], f_prev_aligned);
    auto decoded = decoders_[i]->forward(fused, g);
    g = decoded.upsampled.defined() ? std::optional<torch::Tensor>(decoded.upsampled)
                                    : std::nullopt;
    if (!config_.emits_scale(s)) continue;

    ScaleOutput out;
    out.prior = prior;
    const auto degraded = blocks::area_downsample(b, s - 1);
    out.restored = restoration_[i](decoded.backbone, degraded);

    torch::Tensor gate;
    if (segmentation_[i]) {
      std::optional<torch::Tensor> mask_prior;
      if (coarser_mask.defined()) {
        mask_prior = F::interpolate(coarser_mask, F::InterpolateFuncOptions()
                                                      .scale_factor(std::vector<double>{2.0, 2.0})
                                                      .mode(torch::kBilinear)
                                                      .align_corners(false));
      }
      out.mask = segmentation_[i](decoded.backbone, mask_prior);
      gate = out.mask;
      coarser_mask = out.mask;
    } else {
      gate = torch::ones({n, 1, size.height, size.width}, b.options());
    }

    const auto h = gating_[i](f[i], gate, out.restored);
    next.h_prev[i] = h;
    const auto h_prev = previous ? previous->h_prev[i] : h;
    if (!h_prev.defined() || h_prev.sizes() != h.sizes()) {
      throw blocks::ShapeError("recurrent motion features do not match");
    }
    out.residual_offsets = regressors_[i](h, align(h_prev));
    const auto residual = geometry::dlt_solve(out.residual_offsets, size);
    out.homography = geometry::compose(residual, prior);
    out.offsets = geometry::offsets_from_homography(out.homography, size);
    coarser_h = out.homography;
    outputs.scales[i] = std::move(out);
  }
  return {std::move(outputs), std::move(next)};
}

std::map<std::string, std::int64_t> MostNetImpl::parameter_breakdown() const {
  std::map<std::string, std::int64_t> out;
  for (const auto& item : named_children()) out[item.key()] = count_parameters(*item.value());
  return out;
}

std::int64_t count_parameters(const torch::nn::Module& module) {
  std::int64_t total = 0;
  for (const auto& p : module.parameters()) total += p.numel();
  return total;
}

std::int64_t count_parameters(const ModelConfig& config) {
  MostNet model(config);
  return count_parameters(*model);
}

VideoResult process_video(MostNet& model, const torch::Tensor& frames) {
  if (frames.dim() != 4 || frames.size(0) < 2) {
    throw std::invalid_argument("process_video needs at least two frames [T,3,H,W]");
  }
  torch::NoGradGuard no_grad;
  VideoResult result;
  const auto t = frames.size(0);
  result.steps.reserve(static_cast<std::size_t>(t - 1));
  const auto start = std::chrono::steady_clock::now();
  auto state = model->init_state(frames[0].unsqueeze(0));
  for (std::int64_t k = 1; k < t; ++k) {
    auto [out, next] = model->forward(state, frames[k].unsqueeze(0));
    result.steps.push_back(std::move(out));
    state = std::move(next);
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.fps = seconds > 0.0 ? static_cast<double>(t) / seconds : 0.0;
  return result;
}

}  // namespace mostnet
