#include "mostnet/geometry.hpp"

namespace mostnet::geometry {

namespace {

torch::TensorOptions with_default_double(const torch::TensorOptions& options) {
  return options.has_dtype() ? options : options.dtype(torch::kDouble);
}

// Homogeneous pixel-center grid [3, H*W].
torch::Tensor pixel_grid(FrameSize size, const torch::TensorOptions& options) {
  auto xs = torch::arange(size.width, options) + 0.5;
  auto ys = torch::arange(size.height, options) + 0.5;
  auto grid = torch::meshgrid({ys, xs}, "ij");
  return torch::stack({grid[1].reshape(-1), grid[0].reshape(-1),
                       torch::ones({static_cast<std::int64_t>(size.width) * size.height}, options)});
}

// Pre-images of the pixel centers in index space (col, row), each [N, H*W].
std::pair<torch::Tensor, torch::Tensor> source_coordinates(const torch::Tensor& h, FrameSize size) {
  const auto hinv = torch::linalg_inv(h);
  const auto src = torch::matmul(hinv, pixel_grid(size, h.options()));
  const auto z = src.select(1, 2);
  return {src.select(1, 0) / z - 0.5, src.select(1, 1) / z - 0.5};
}

}  // namespace

torch::Tensor to_tensor(const Homography& h, const torch::TensorOptions& options) {
  auto t = torch::empty({3, 3}, torch::kDouble);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) t[r][c] = h(r, c);
  }
  return t.to(with_default_double(options));
}

Homography from_tensor(const torch::Tensor& h) {
  TORCH_CHECK(h.numel() == 9, "expected a single 3x3 homography");
  const auto t = h.detach().to(torch::kCPU, torch::kDouble).reshape({3, 3}).contiguous();
  auto a = t.accessor<double, 2>();
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = a[r][c];
  }
  return Homography(m);
}

torch::Tensor to_tensor(const CornerOffsets& o, const torch::TensorOptions& options) {
  auto t = torch::empty({4, 2}, torch::kDouble);
  for (int i = 0; i < 4; ++i) {
    t[i][0] = o.d[i].x();
    t[i][1] = o.d[i].y();
  }
  return t.to(with_default_double(options));
}

CornerOffsets offsets_from_tensor(const torch::Tensor& o) {
  TORCH_CHECK(o.numel() == 8, "expected a single 4x2 offset tensor");
  const auto t = o.detach().to(torch::kCPU, torch::kDouble).reshape({4, 2}).contiguous();
  auto a = t.accessor<double, 2>();
  CornerOffsets out;
  for (int i = 0; i < 4; ++i) out.d[i] = Vec2(a[i][0], a[i][1]);
  return out;
}

torch::Tensor frame_corners(FrameSize size, const torch::TensorOptions& options) {
  const double w = size.width;
  const double h = size.height;
  return torch::tensor({0.0, 0.0, w, 0.0, w, h, 0.0, h}, torch::kDouble)
      .reshape({4, 2})
      .to(with_default_double(options));
}

torch::Tensor identity_homographies(std::int64_t n, const torch::TensorOptions& options) {
  return torch::eye(3, options).unsqueeze(0).repeat({n, 1, 1});
}

torch::Tensor dlt_solve(const torch::Tensor& offsets, FrameSize size) {
  TORCH_CHECK(offsets.dim() == 3 && offsets.size(1) == 4 && offsets.size(2) == 2,
              "offsets must be [N,4,2]");
  const auto n = offsets.size(0);
  const auto opts = offsets.options();
  // Solve in coordinates normalized by the frame size to keep the 8x8 system
  // well conditioned in single precision.
  const auto norm = torch::tensor({1.0 / size.width, 1.0 / size.height}, opts);
  const auto src = (frame_corners(size, opts) * norm).unsqueeze(0).expand({n, 4, 2});
  const auto dst = src + offsets * norm;

  const auto x = src.select(2, 0);
  const auto y = src.select(2, 1);
  const auto u = dst.select(2, 0);
  const auto v = dst.select(2, 1);
  const auto one = torch::ones_like(x);
  const auto zero = torch::zeros_like(x);
  const auto rows_u = torch::stack({x, y, one, zero, zero, zero, -u * x, -u * y}, 2);
  const auto rows_v = torch::stack({zero, zero, zero, x, y, one, -v * x, -v * y}, 2);
  const auto a = torch::stack({rows_u, rows_v}, 2).reshape({n, 8, 8});
  const auto b = torch::stack({u, v}, 2).reshape({n, 8, 1});
  const auto sol = torch::linalg_solve(a, b).squeeze(2);
  const auto hn = torch::cat({sol, torch::ones({n, 1}, opts)}, 1).reshape({n, 3, 3});

  const auto t = torch::diag(torch::tensor({1.0 / size.width, 1.0 / size.height, 1.0}, opts));
  const auto tinv = torch::diag(torch::tensor({double(size.width), double(size.height), 1.0}, opts));
  return torch::matmul(torch::matmul(tinv, hn), t);
}

torch::Tensor offsets_from_homography(const torch::Tensor& h, FrameSize size) {
  TORCH_CHECK(h.dim() == 3 && h.size(1) == 3 && h.size(2) == 3, "homographies must be [N,3,3]");
  const auto corners = frame_corners(size, h.options());
  const auto homog = torch::cat({corners, torch::ones({4, 1}, h.options())}, 1);
  const auto mapped = torch::matmul(h, homog.t());  // [N,3,4]
  const auto xy = mapped.narrow(1, 0, 2) / mapped.narrow(1, 2, 1);
  return xy.transpose(1, 2) - corners;
}

torch::Tensor scale_homography(const torch::Tensor& h, double factor) {
  TORCH_CHECK(factor > 0.0, "scale factor must be positive");
  const auto s = torch::tensor({1.0, 1.0, factor, 1.0, 1.0, factor, 1.0 / factor, 1.0 / factor, 1.0},
                               torch::kDouble)
                     .reshape({3, 3})
                     .to(h.options());
  return h * s;
}

torch::Tensor compose(const torch::Tensor& outer, const torch::Tensor& inner) {
  const auto m = torch::matmul(outer, inner);
  return m / m.narrow(-2, 2, 1).narrow(-1, 2, 1);
}

torch::Tensor warp(const torch::Tensor& x, const torch::Tensor& h) {
  if (x.dim() == 3) return warp(x.unsqueeze(0), h.reshape({1, 3, 3})).squeeze(0);
  TORCH_CHECK(x.dim() == 4, "warp expects [N,C,H,W] input");
  const auto n = x.size(0);
  const auto c = x.size(1);
  const FrameSize size{static_cast<int>(x.size(3)), static_cast<int>(x.size(2))};
  auto hb = h.to(x.options());
  if (hb.dim() == 2) hb = hb.unsqueeze(0);
  if (hb.size(0) == 1 && n > 1) hb = hb.expand({n, 3, 3});
  TORCH_CHECK(hb.size(0) == n, "batch mismatch between images and homographies");

  auto [u, v] = source_coordinates(hb, size);
  const auto u0 = torch::floor(u).detach();
  const auto v0 = torch::floor(v).detach();
  const auto wx = u - u0;
  const auto wy = v - v0;
  const auto flat = x.reshape({n, c, -1});
  const auto hw = flat.size(2);

  auto out = torch::zeros({n, c, hw}, x.options());
  for (int dy = 0; dy <= 1; ++dy) {
    for (int dx = 0; dx <= 1; ++dx) {
      const auto xi = u0 + dx;
      const auto yi = v0 + dy;
      const auto inside = (xi >= 0) & (xi <= size.width - 1) & (yi >= 0) & (yi <= size.height - 1);
      const auto w = (dx ? wx : 1 - wx) * (dy ? wy : 1 - wy) * inside.to(x.scalar_type());
      // Non-finite coordinates stay NaN through `w`; only the gather index is sanitized.
      const auto idx = (torch::nan_to_num(yi, 0.0).clamp(0, size.height - 1) * size.width +
                        torch::nan_to_num(xi, 0.0).clamp(0, size.width - 1))
                           .to(torch::kLong);
      const auto vals = torch::gather(flat, 2, idx.unsqueeze(1).expand({n, c, hw}));
      out = out + vals * w.unsqueeze(1);
    }
  }
  return out.reshape(x.sizes());
}

torch::Tensor warp_valid_mask(const torch::Tensor& h, FrameSize size) {
  auto hb = h.dim() == 2 ? h.unsqueeze(0) : h;
  auto [u, v] = source_coordinates(hb.to(torch::kDouble), size);
  const auto inside = (u >= 0) & (u <= size.width - 1) & (v >= 0) & (v <= size.height - 1);
  return inside.reshape({hb.size(0), 1, size.height, size.width});
}

torch::Tensor mace(const torch::Tensor& pred, const torch::Tensor& gt) {
  TORCH_CHECK(pred.sizes() == gt.sizes(), "offset shape mismatch");
  return torch::linalg_vector_norm(pred - gt, 2, {-1}, false, std::nullopt).mean();
}

}  // namespace mostnet::geometry
