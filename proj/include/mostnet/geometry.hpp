#pragma once

// Homography algebra shared by the network, the losses, the metrics and the
// synthetic data generator.
//
// Coordinate convention: continuous pixel coordinates where pixel (col, row)
// covers [col, col+1) x [row, row+1), so its center sits at (col+0.5, row+0.5)
// and the frame corners are (0,0), (W,0), (W,H), (0,H). With this convention
// an area-downsampled frame relates to the full frame through diag(1/2,1/2,1)
// exactly, which is what scale_homography relies on.

#include <Eigen/Dense>
#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mostnet {

struct FrameSize {
  int width = 0;
  int height = 0;

  bool operator==(const FrameSize&) const = default;
  FrameSize downscaled(int factor) const { return {width / factor, height / factor}; }
};

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace geometry {

using Vec2 = Eigen::Vector2d;
using Mat3 = Eigen::Matrix3d;

/// Projective map of the image plane, normalized so that m(2,2) == 1.
class Homography {
 public:
  Homography() : m_(Mat3::Identity()) {}
  /// Normalizes by m(2,2); throws GeometryError when singular.
  explicit Homography(const Mat3& m);

  static Homography translation(double tx, double ty);
  /// x' = scale * R(angle) * (x - center) + center + (tx, ty)
  static Homography similarity(double scale, double angle_rad, Vec2 center, Vec2 shift);

  const Mat3& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }

  Vec2 apply(const Vec2& p) const;
  Homography inverse() const;

 private:
  Mat3 m_;
};

/// Displacements of the TL, TR, BR, BL frame corners.
struct CornerOffsets {
  std::array<Vec2, 4> d{Vec2::Zero(), Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
};

std::array<Vec2, 4> frame_corners(FrameSize size);

/// Four-point DLT: least-squares null vector of the 8x9 system (Hartley
/// normalized). Throws GeometryError if three displaced corners are collinear.
Homography dlt_solve(const CornerOffsets& offsets, FrameSize size);
CornerOffsets offsets_from_homography(const Homography& h, FrameSize size);

/// S * h * S^-1 with S = diag(factor, factor, 1).
Homography scale_homography(const Homography& h, double factor);
/// Maps x to outer(inner(x)).
Homography compose(const Homography& outer, const Homography& inner);

/// Mean Euclidean distance between predicted and ground-truth displaced corners.
double mace(const CornerOffsets& pred, const CornerOffsets& gt);

/// Dense per-pixel displacement between two frames.
struct MotionField {
  torch::Tensor flow;   // [2, H, W] double, (dx, dy) in pixels
  torch::Tensor valid;  // [H, W] bool

  FrameSize size() const {
    return {static_cast<int>(flow.size(2)), static_cast<int>(flow.size(1))};
  }
};

enum class MotionModel { Similarity, Affine };

struct RansacOptions {
  double inlier_threshold = 1.0;
  int max_iterations = 2000;
  double confidence = 0.995;
  MotionModel model = MotionModel::Similarity;
  std::uint64_t seed = 0;
};

struct RansacResult {
  Homography h;
  double inlier_ratio = 0.0;
  int iterations = 0;
};

/// Robust fit of a 4-DoF similarity (or 6-DoF affine) transform to the motion
/// field restricted to `mask`, followed by a least-squares refit on inliers.
RansacResult ransac_partial_affine(const MotionField& field, const torch::Tensor& mask,
                                   const RansacOptions& options = {});

// Text format: 9 row-major numbers per line, 17 significant digits.
std::string format_homography(const Homography& h);
Homography parse_homography(const std::string& line);
void write_homographies(std::ostream& out, std::span<const Homography> hs);
std::vector<Homography> read_homographies(std::istream& in);

// ---------------------------------------------------------------------------
// Batched, differentiable counterparts operating on torch tensors.
// Homographies are [N,3,3], corner offsets [N,4,2], images [N,C,H,W].

torch::Tensor to_tensor(const Homography& h, const torch::TensorOptions& options = {});
Homography from_tensor(const torch::Tensor& h);
torch::Tensor to_tensor(const CornerOffsets& o, const torch::TensorOptions& options = {});
CornerOffsets offsets_from_tensor(const torch::Tensor& o);

torch::Tensor frame_corners(FrameSize size, const torch::TensorOptions& options);
torch::Tensor dlt_solve(const torch::Tensor& offsets, FrameSize size);
torch::Tensor offsets_from_homography(const torch::Tensor& h, FrameSize size);
torch::Tensor scale_homography(const torch::Tensor& h, double factor);
torch::Tensor compose(const torch::Tensor& outer, const torch::Tensor& inner);
torch::Tensor identity_homographies(std::int64_t n, const torch::TensorOptions& options);

/// Reverse-mapped bilinear warp: out(p) = x(h^-1 p), zero outside the frame.
/// Accepts [C,H,W] with [3,3] or [N,C,H,W] with [N,3,3]. Differentiable in x and h.
torch::Tensor warp(const torch::Tensor& x, const torch::Tensor& h);
/// [N,1,H,W] mask of output pixels whose pre-image lies inside the frame.
torch::Tensor warp_valid_mask(const torch::Tensor& h, FrameSize size);

/// Batch-mean MACE of [N,4,2] offsets; differentiable in pred.
torch::Tensor mace(const torch::Tensor& pred, const torch::Tensor& gt);

}  // namespace geometry
}  // namespace mostnet
