#pragma once

// Evaluation metrics: PSNR, SSIM, IoU, temporal warping error and throughput.
// Frames are [C,H,W]; videos are [T,C,H,W] and report the mean over frames.

#include "mostnet/geometry.hpp"
#include "mostnet/model.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <optional>
#include <vector>

namespace mostnet::metrics {

inline constexpr double kPsnrCap = 100.0;

double psnr(const torch::Tensor& pred, const torch::Tensor& gt);
/// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03, range 1) over
/// valid window positions, averaged over channels.
double ssim(const torch::Tensor& pred, const torch::Tensor& gt);
/// Empty union counts as a perfect match.
double iou(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask, double threshold = 0.5);

/// Mean over consecutive pairs of mean |R_t - warp(R_{t-1}, H_{t-1->t})| over
/// pixels with an in-bounds pre-image, further restricted to `regions`
/// ([T,1,H,W], region in frame t) when given.
double temporal_warp_error(const torch::Tensor& restored,
                           const std::vector<geometry::Homography>& homographies,
                           const std::optional<torch::Tensor>& regions = std::nullopt);

/// Steady-state frames per second of the recurrent forward after `warmup` steps.
double measure_fps(MostNet& model, const torch::Tensor& frames, int warmup);

struct EvalReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double mace_px = 0.0;
  std::optional<double> iou;  // absent without segmentation
  double ew = 0.0;
  double fps = 0.0;
  int n_frames = 0;

  nlohmann::json to_json() const;
};

}  // namespace mostnet::metrics
