#pragma once

#include <torch/torch.h>

#include <array>
#include <optional>

namespace mostnet {

/// Ground truth at one scale, batched.
struct ScaleLabels {
  torch::Tensor restored;    // [N,3,Hs,Ws] in [0,1]
  torch::Tensor mask;        // [N,1,Hs,Ws] in {0,1}
  torch::Tensor homography;  // [N,3,3] in scale-s pixels
  torch::Tensor offsets;     // [N,4,2] corner offsets at scale-s corners
};

/// Labels for scales 1..3 (index s-1).
using LabelPyramid = std::array<std::optional<ScaleLabels>, 3>;

}  // namespace mostnet
