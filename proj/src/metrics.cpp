#include "mostnet/metrics.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace mostnet::metrics {

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    throw blocks::ShapeError(std::string(what) + ": shape mismatch " + c10::str(a.sizes()) +
                             " vs " + c10::str(b.sizes()));
  }
}

/// Applies `per_frame` to each [C,H,W] frame and averages.
template <typename Fn>
double mean_over_frames(const torch::Tensor& a, const torch::Tensor& b, Fn per_frame) {
  if (a.dim() == 3) return per_frame(a, b);
  if (a.dim() != 4 || a.size(0) == 0) throw std::invalid_argument("expected [C,H,W] or [T,C,H,W]");
  double sum = 0.0;
  for (std::int64_t t = 0; t < a.size(0); ++t) sum += per_frame(a[t], b[t]);
  return sum / static_cast<double>(a.size(0));
}

torch::Tensor gaussian_window() {
  const auto x = torch::arange(11, torch::kDouble) - 5.0;
  auto g = torch::exp(-(x * x) / (2.0 * 1.5 * 1.5));
  g = g / g.sum();
  return torch::outer(g, g).view({1, 1, 11, 11});
}

double ssim_frame(const torch::Tensor& pred, const torch::Tensor& gt) {
  if (pred.size(1) < 11 || pred.size(2) < 11) throw std::invalid_argument("ssim: frame smaller than the 11x11 window");
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const auto window = gaussian_window();
  const auto x = pred.to(torch::kDouble).unsqueeze(1);  // channels as batch
  const auto y = gt.to(torch::kDouble).unsqueeze(1);
  const auto blur = [&](const torch::Tensor& t) { return torch::conv2d(t, window); };
  const auto mx = blur(x);
  const auto my = blur(y);
  const auto vx = blur(x * x) - mx * mx;
  const auto vy = blur(y * y) - my * my;
  const auto cov = blur(x * y) - mx * my;
  const auto map = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  return map.mean({1, 2, 3}).mean().item<double>();
}

}  // namespace

double psnr(const torch::Tensor& pred, const torch::Tensor& gt) {
  require_same_shape(pred, gt, "psnr");
  return mean_over_frames(pred, gt, [](const torch::Tensor& a, const torch::Tensor& b) {
    const double mse = (a.to(torch::kDouble) - b.to(torch::kDouble)).pow(2).mean().item<double>();
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
  });
}

double ssim(const torch::Tensor& pred, const torch::Tensor& gt) {
  require_same_shape(pred, gt, "ssim");
  return mean_over_frames(pred, gt, ssim_frame);
}

double iou(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask, double threshold) {
  require_same_shape(pred_mask, gt_mask, "iou");
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("iou: threshold must be in (0,1)");
  return mean_over_frames(pred_mask, gt_mask, [threshold](const torch::Tensor& p, const torch::Tensor& g) {
    const auto a = p > threshold;
    const auto b = g > 0.5;
    const double uni = (a | b).sum().item<double>();
    if (uni == 0.0) return 1.0;
    return (a & b).sum().item<double>() / uni;
  });
}

double temporal_warp_error(const torch::Tensor& restored,
                           const std::vector<geometry::Homography>& homographies,
                           const std::optional<torch::Tensor>& regions) {
  if (restored.dim() != 4 || restored.size(0) < 2) {
    throw std::invalid_argument("temporal_warp_error: expected [T,C,H,W] with T >= 2");
  }
  const auto t_count = restored.size(0);
  if (static_cast<std::int64_t>(homographies.size()) != t_count - 1) {
    throw std::invalid_argument("temporal_warp_error: expected " + std::to_string(t_count - 1) +
                                " homographies, got " + std::to_string(homographies.size()));
  }
  if (regions && (regions->dim() != 4 || regions->size(0) != t_count)) {
    throw std::invalid_argument("temporal_warp_error: regions must be [T,1,H,W]");
  }
  const FrameSize size{static_cast<int>(restored.size(3)), static_cast<int>(restored.size(2))};
  const auto frames = restored.to(torch::kDouble);
  std::vector<torch::Tensor> hs;
  for (const auto& h : homographies) hs.push_back(geometry::to_tensor(h, torch::kDouble));
  const auto h = torch::stack(hs);
  const auto warped = geometry::warp(frames.slice(0, 0, t_count - 1), h);
  auto valid = geometry::warp_valid_mask(h, size).to(torch::kDouble);
  if (regions) valid = valid * (regions->slice(0, 1).to(torch::kDouble) > 0.5).to(torch::kDouble);
  const auto diff = (frames.slice(0, 1) - warped).abs().mean(1, true);  // [T-1,1,H,W]

  double sum = 0.0;
  std::int64_t pairs = 0;
  for (std::int64_t t = 0; t < t_count - 1; ++t) {
    const double count = valid[t].sum().item<double>();
    if (count == 0.0) continue;
    sum += (diff[t] * valid[t]).sum().item<double>() / count;
    ++pairs;
  }
  return pairs > 0 ? sum / static_cast<double>(pairs) : 0.0;
}

double measure_fps(MostNet& model, const torch::Tensor& frames, int warmup) {
  if (warmup < 0 || frames.dim() != 4 || frames.size(0) < warmup + 10) {
    throw std::invalid_argument("measure_fps: needs at least warmup + 10 frames");
  }
  torch::NoGradGuard no_grad;
  auto state = model->init_state(frames[0].unsqueeze(0));
  std::int64_t k = 1;
  for (; k <= warmup && k < frames.size(0); ++k) state = model->forward(state, frames[k].unsqueeze(0)).second;
  const auto start = std::chrono::steady_clock::now();
  std::int64_t measured = 0;
  for (; k < frames.size(0); ++k, ++measured) state = model->forward(state, frames[k].unsqueeze(0)).second;
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return seconds > 0.0 ? static_cast<double>(measured) / seconds : 0.0;
}

nlohmann::json EvalReport::to_json() const {
  return {{"psnr_db", psnr_db}, {"ssim", ssim},
          {"mace_px", mace_px}, {"iou", iou ? nlohmann::json(*iou) : nlohmann::json(nullptr)},
          {"ew", ew},           {"fps", fps},
          {"n_frames", n_frames}};
}

}  // namespace mostnet::metrics
