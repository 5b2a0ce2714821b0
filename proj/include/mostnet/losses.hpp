#pragma once

// Task losses and the weighted multi-scale, multi-task objective.

#include "mostnet/labels.hpp"
#include "mostnet/model.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <map>
#include <string>
#include <utility>

namespace mostnet::losses {

inline constexpr double kCharbonnierEps = 1e-3;
inline constexpr double kBceClamp = 1e-7;

/// Mean of sqrt((pred - gt)^2 + eps^2).
torch::Tensor charbonnier(const torch::Tensor& pred, const torch::Tensor& gt,
                          double eps = kCharbonnierEps);
/// Mean binary cross-entropy; pred is clamped to [1e-7, 1 - 1e-7].
torch::Tensor bce(const torch::Tensor& pred, const torch::Tensor& gt);
/// Mean corner error of [N,4,2] offsets (same value as geometry::mace).
torch::Tensor mace_loss(const torch::Tensor& pred, const torch::Tensor& gt);

struct LossWeights {
  double restoration = 2e-4;
  double segmentation = 5e-5;
  double homography = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j, LossWeights defaults);
};

enum class Task { Restoration, Segmentation, Homography };
std::string to_string(Task task);

struct LossReport {
  torch::Tensor total;                        // scalar, differentiable
  std::map<std::pair<Task, int>, double> terms;  // unweighted loss per (task, scale)

  double total_value() const { return total.item<double>(); }
  /// Unweighted loss of `task` summed over scales.
  double task_sum(Task task) const;
};

/// total = sum over emitted scales of w.r * charbonnier + w.s * bce + w.h * mace.
/// Throws std::invalid_argument when an emitted scale has no labels.
LossReport total_loss(const PyramidOutputs& outputs, const LabelPyramid& labels,
                      const LossWeights& weights);

}  // namespace mostnet::losses
