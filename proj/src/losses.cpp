#include "mostnet/losses.hpp"

#include "mostnet/json_util.hpp"

#include <stdexcept>

namespace mostnet::losses {

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    throw blocks::ShapeError(std::string(what) + ": shape mismatch " + c10::str(a.sizes()) +
                             " vs " + c10::str(b.sizes()));
  }
}

}  // namespace

torch::Tensor charbonnier(const torch::Tensor& pred, const torch::Tensor& gt, double eps) {
  require_same_shape(pred, gt, "charbonnier");
  if (!(eps > 0.0)) throw std::invalid_argument("charbonnier: eps must be positive");
  return torch::sqrt((pred - gt).pow(2) + eps * eps).mean();
}

torch::Tensor bce(const torch::Tensor& pred, const torch::Tensor& gt) {
  require_same_shape(pred, gt, "bce");
  const auto p = pred.clamp(kBceClamp, 1.0 - kBceClamp);
  return -(gt * torch::log(p) + (1.0 - gt) * torch::log(1.0 - p)).mean();
}

torch::Tensor mace_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
  require_same_shape(pred, gt, "mace_loss");
  return geometry::mace(pred, gt);
}

void LossWeights::validate() const {
  if (restoration < 0.0 || segmentation < 0.0 || homography < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
}

nlohmann::json LossWeights::to_json() const {
  return {{"restoration", restoration}, {"segmentation", segmentation}, {"homography", homography}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j, LossWeights w) {
  reject_unknown_keys(j, "weights", {"restoration", "segmentation", "homography"});
  read_optional(j, "restoration", w.restoration, "weights");
  read_optional(j, "segmentation", w.segmentation, "weights");
  read_optional(j, "homography", w.homography, "weights");
  w.validate();
  return w;
}

std::string to_string(Task task) {
  switch (task) {
    case Task::Restoration: return "restoration";
    case Task::Segmentation: return "segmentation";
    case Task::Homography: return "homography";
  }
  return "?";
}

double LossReport::task_sum(Task task) const {
  double sum = 0.0;
  for (const auto& [key, value] : terms) {
    if (key.first == task) sum += value;
  }
  return sum;
}

LossReport total_loss(const PyramidOutputs& outputs, const LabelPyramid& labels,
                      const LossWeights& weights) {
  LossReport report;
  for (int s = 1; s <= ModelConfig::kScales; ++s) {
    if (!outputs.has(s)) continue;
    const auto& label = labels.at(static_cast<std::size_t>(s - 1));
    if (!label) throw std::invalid_argument("total_loss: no labels for emitted scale " + std::to_string(s));
    const auto& out = outputs.at(s);

    const auto add = [&](Task task, double weight, const torch::Tensor& value) {
      report.terms[{task, s}] = value.item<double>();
      const auto weighted = weight * value;
      report.total = report.total.defined() ? report.total + weighted : weighted;
    };
    add(Task::Restoration, weights.restoration, charbonnier(out.restored, label->restored));
    if (out.mask.defined()) add(Task::Segmentation, weights.segmentation, bce(out.mask, label->mask));
    add(Task::Homography, weights.homography, mace_loss(out.offsets, label->offsets));
  }
  if (!report.total.defined()) throw std::invalid_argument("total_loss: outputs emit no scale");
  return report;
}

}  // namespace mostnet::losses
