#include "mostnet/geometry.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace mostnet;
using namespace mostnet::geometry;

namespace {

constexpr FrameSize kSize{80, 64};

CornerOffsets random_offsets(std::mt19937_64& rng, double range = 10.0) {
  std::uniform_real_distribution<double> u(-range, range);
  CornerOffsets o;
  for (auto& d : o.d) d = Vec2(u(rng), u(rng));
  return o;
}

double max_abs_diff(const Homography& a, const Homography& b) {
  return (a.matrix() - b.matrix()).cwiseAbs().maxCoeff();
}

double corner_error(const Homography& h, const CornerOffsets& o, FrameSize size) {
  const auto corners = frame_corners(size);
  double worst = 0.0;
  for (int i = 0; i < 4; ++i) worst = std::max(worst, (h.apply(corners[i]) - (corners[i] + o.d[i])).norm());
  return worst;
}

}  // namespace

TEST(Dlt, TrivialCases) {
  EXPECT_LT(max_abs_diff(dlt_solve(CornerOffsets{}, kSize), Homography()), 1e-12);
  CornerOffsets shift;
  for (auto& d : shift.d) d = Vec2(2.0, 0.0);
  EXPECT_LT(max_abs_diff(dlt_solve(shift, kSize), Homography::translation(2.0, 0.0)), 1e-12);
  const auto back = offsets_from_homography(Homography::translation(3.0, 0.0), kSize);
  for (const auto& d : back.d) EXPECT_LT((d - Vec2(3.0, 0.0)).norm(), 1e-12);
  const auto zero = offsets_from_homography(Homography(), kSize);
  for (const auto& d : zero.d) EXPECT_EQ(d.norm(), 0.0);
}

TEST(Dlt, RandomRoundTrips) {
  std::mt19937_64 rng(7);
  double worst_corner = 0.0, worst_matrix = 0.0, worst_offsets = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto o = random_offsets(rng);
    const auto h = dlt_solve(o, kSize);
    EXPECT_EQ(h(2, 2), 1.0);
    worst_corner = std::max(worst_corner, corner_error(h, o, kSize));
    const auto o2 = offsets_from_homography(h, kSize);
    for (int k = 0; k < 4; ++k) worst_offsets = std::max(worst_offsets, (o2.d[k] - o.d[k]).norm());
    worst_matrix = std::max(worst_matrix, max_abs_diff(dlt_solve(o2, kSize), h));
  }
  EXPECT_LT(worst_corner, 1e-6);
  EXPECT_LT(worst_offsets, 1e-6);
  EXPECT_LT(worst_matrix, 1e-6);
}

TEST(Dlt, DegenerateQuadrilateralThrows) {
  CornerOffsets o;
  o.d[1] = Vec2(0.0, 64.0);  // TR lands on BR
  EXPECT_THROW(dlt_solve(o, kSize), GeometryError);
  EXPECT_THROW(Homography(Mat3::Zero()), GeometryError);
}

TEST(ScaleHomography, LawsAndPointMapping) {
  EXPECT_LT(max_abs_diff(scale_homography(Homography(), 3.7), Homography()), 1e-15);
  EXPECT_LT(max_abs_diff(scale_homography(Homography::translation(1.0, 0.0), 2.0),
                         Homography::translation(2.0, 0.0)),
            1e-15);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 80.0), f(0.25, 4.0);
  double worst_point = 0.0, worst_group = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto h = dlt_solve(random_offsets(rng), kSize);
    const double a = f(rng), b = f(rng);
    const auto scaled = scale_homography(h, a);
    const Vec2 x(u(rng), u(rng));
    worst_point = std::max(worst_point, (a * h.apply(x) - scaled.apply(a * x)).norm());
    worst_group = std::max(worst_group, max_abs_diff(scale_homography(h, a * b), scale_homography(scaled, b)));
  }
  EXPECT_LT(worst_point, 1e-9);
  EXPECT_LT(worst_group, 1e-9);
  EXPECT_THROW(scale_homography(Homography(), 0.0), GeometryError);
}

TEST(Compose, LawsAndPointMapping) {
  const auto t = compose(Homography::translation(1.0, 0.0), Homography::translation(0.0, 1.0));
  EXPECT_LT(max_abs_diff(t, Homography::translation(1.0, 1.0)), 1e-15);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 64.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = dlt_solve(random_offsets(rng), kSize);
    const auto b = dlt_solve(random_offsets(rng), kSize);
    EXPECT_LT(max_abs_diff(compose(Homography(), b), b), 1e-12);
    const auto ab = compose(a, b);
    EXPECT_EQ(ab(2, 2), 1.0);
    const Vec2 x(u(rng), u(rng));
    worst = std::max(worst, (ab.apply(x) - a.apply(b.apply(x))).norm());
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Mace, ClosedFormsAndPseudometric) {
  std::mt19937_64 rng(17);
  const auto a = random_offsets(rng);
  EXPECT_EQ(mace(a, a), 0.0);
  auto shifted = a;
  for (auto& d : shifted.d) d += Vec2(3.0, 4.0);
  EXPECT_NEAR(mace(a, shifted), 5.0, 1e-12);
  for (int i = 0; i < 200; ++i) {
    const auto x = random_offsets(rng), y = random_offsets(rng), z = random_offsets(rng);
    double direct = 0.0;
    for (int k = 0; k < 4; ++k) direct += std::hypot(x.d[k].x() - y.d[k].x(), x.d[k].y() - y.d[k].y()) / 4.0;
    EXPECT_NEAR(mace(x, y), direct, 1e-12);
    EXPECT_EQ(mace(x, y), mace(y, x));
    EXPECT_LE(mace(x, z), mace(x, y) + mace(y, z) + 1e-12);
  }
}

TEST(TensorGeometry, MatchesScalarImplementation) {
  std::mt19937_64 rng(19);
  std::vector<CornerOffsets> os;
  std::vector<torch::Tensor> rows;
  for (int i = 0; i < 16; ++i) {
    os.push_back(random_offsets(rng));
    rows.push_back(to_tensor(os.back(), torch::kDouble));
  }
  const auto batch = torch::stack(rows);
  const auto hs = dlt_solve(batch, kSize);
  const auto scaled = scale_homography(hs, 0.5);
  const auto composed = compose(hs, hs.flip(0));
  for (int i = 0; i < 16; ++i) {
    const auto h = dlt_solve(os[i], kSize);
    EXPECT_LT(max_abs_diff(from_tensor(hs[i]), h), 1e-9);
    EXPECT_LT(max_abs_diff(from_tensor(scaled[i]), scale_homography(h, 0.5)), 1e-9);
    EXPECT_LT(max_abs_diff(from_tensor(composed[i]), compose(h, dlt_solve(os[15 - i], kSize))), 1e-9);
  }
  EXPECT_LT((offsets_from_homography(hs, kSize) - batch).abs().max().item<double>(), 1e-6);
}

TEST(Warp, IdentityAndIntegerTranslation) {
  const auto x = torch::rand({3, 8, 10}, torch::kDouble);
  EXPECT_TRUE(torch::equal(warp(x, torch::eye(3, torch::kDouble)), x));
  const auto shifted = warp(x, to_tensor(Homography::translation(1.0, 0.0), torch::kDouble));
  EXPECT_EQ(shifted.select(2, 0).abs().max().item<double>(), 0.0);
  EXPECT_LT((shifted.slice(2, 1) - x.slice(2, 0, 9)).abs().max().item<double>(), 1e-12);
}

TEST(Warp, HalfPixelShiftOnRamp) {
  const auto ramp = torch::arange(10, torch::kDouble).view({1, 1, 10}).expand({1, 6, 10}).contiguous();
  const auto out = warp(ramp, to_tensor(Homography::translation(0.5, 0.0), torch::kDouble));
  for (int c = 1; c < 10; ++c) EXPECT_NEAR(out[0][3][c].item<double>(), c - 0.5, 1e-12) << c;
}

TEST(Warp, LinearInInput) {
  const auto h = to_tensor(Homography::similarity(1.05, 0.1, {5, 4}, {0.7, -0.3}), torch::kDouble);
  const auto x = torch::rand({2, 8, 10}, torch::kDouble);
  const auto y = torch::rand({2, 8, 10}, torch::kDouble);
  const auto lhs = warp(0.3 * x - 1.7 * y, h);
  const auto rhs = 0.3 * warp(x, h) - 1.7 * warp(y, h);
  EXPECT_LT((lhs - rhs).abs().max().item<double>(), 1e-6);
}

TEST(Warp, GradientMatchesFiniteDifferences) {
  torch::manual_seed(3);
  const auto h0 = to_tensor(Homography::similarity(1.03, 0.07, {5, 4}, {0.37, -0.21}), torch::kDouble);
  const auto x0 = torch::rand({1, 8, 10}, torch::kDouble);
  const auto probe = torch::randn({1, 8, 10}, torch::kDouble);
  auto loss = [&](const torch::Tensor& x, const torch::Tensor& h) { return (warp(x, h) * probe).sum(); };

  auto x = x0.clone().requires_grad_(true);
  auto h = h0.clone().requires_grad_(true);
  loss(x, h).backward();

  torch::NoGradGuard guard;
  auto fd = [&](torch::Tensor v, auto eval, double step) {
    auto g = torch::zeros_like(v);
    auto flat = v.view(-1);
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + step;
      const double up = eval();
      flat[i] = orig - step;
      const double down = eval();
      flat[i] = orig;
      g.view(-1)[i] = (up - down) / (2 * step);
    }
    return g;
  };
  auto xv = x0.clone();
  const auto gx = fd(xv, [&] { return loss(xv, h0).item<double>(); }, 1e-3);
  EXPECT_LT(((x.grad() - gx).norm() / gx.norm()).item<double>(), 1e-3);

  // Only the translation and linear part; the last row is fixed by normalization.
  // A small step keeps the sample points clear of bilinear kinks.
  auto hv = h0.clone();
  const auto gh = fd(hv, [&] { return loss(x0, hv).item<double>(); }, 1e-6);
  const auto top = torch::indexing::Slice(0, 2);
  EXPECT_LT(((h.grad().index({top}) - gh.index({top})).norm() / gh.index({top}).norm()).item<double>(), 1e-3);
}

TEST(Warp, ValidMask) {
  const auto mask = warp_valid_mask(to_tensor(Homography::translation(2.0, 0.0), torch::kDouble).unsqueeze(0), {10, 6});
  EXPECT_EQ(mask.sizes(), (std::vector<std::int64_t>{1, 1, 6, 10}));
  EXPECT_EQ(mask.slice(3, 0, 2).sum().item<double>(), 0.0);
  EXPECT_EQ(mask.slice(3, 2).min().item<double>(), 1.0);
}

namespace {

MotionField field_from(const Homography& g, FrameSize size) {
  MotionField f;
  f.flow = torch::zeros({2, size.height, size.width}, torch::kDouble);
  f.valid = torch::ones({size.height, size.width}, torch::kBool);
  auto a = f.flow.accessor<double, 3>();
  for (int r = 0; r < size.height; ++r)
    for (int c = 0; c < size.width; ++c) {
      const Vec2 p(c + 0.5, r + 0.5);
      const Vec2 d = g.apply(p) - p;
      a[0][r][c] = d.x();
      a[1][r][c] = d.y();
    }
  return f;
}

}  // namespace

TEST(Ransac, ExactTranslationAndIdentity) {
  auto mask = torch::zeros({64, 80}, torch::kBool);
  mask.slice(0, 10, 40).slice(1, 20, 60).fill_(true);
  const auto t = ransac_partial_affine(field_from(Homography::translation(2.5, -1.0), kSize), mask);
  EXPECT_LT(max_abs_diff(t.h, Homography::translation(2.5, -1.0)), 1e-9);
  EXPECT_EQ(t.inlier_ratio, 1.0);
  const auto id = ransac_partial_affine(field_from(Homography(), kSize), mask);
  EXPECT_LT(max_abs_diff(id.h, Homography()), 1e-12);
}

TEST(Ransac, RecoversSimilarityDespiteOutliers) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> big(-40.0, 40.0), unit(0.0, 1.0);
  auto mask = torch::zeros({64, 80}, torch::kBool);
  mask.slice(0, 8, 56).slice(1, 10, 70).fill_(true);
  for (int trial = 0; trial < 5; ++trial) {
    const auto gen = Homography::similarity(1.0 + 0.04 * (unit(rng) - 0.5), 5.0 * std::numbers::pi / 180.0,
                                            {40, 32}, {big(rng) / 10, big(rng) / 10});
    auto field = field_from(gen, kSize);
    auto a = field.flow.accessor<double, 3>();
    int outliers = 0, masked = 0;
    for (int r = 8; r < 56; ++r)
      for (int c = 10; c < 70; ++c) {
        ++masked;
        if (unit(rng) < 0.2) {
          a[0][r][c] = big(rng);
          a[1][r][c] = big(rng);
          ++outliers;
        }
      }
    const auto res = ransac_partial_affine(field, mask, {.seed = static_cast<std::uint64_t>(trial)});
    EXPECT_LT(max_abs_diff(res.h, gen), 1e-3);
    EXPECT_NEAR(res.inlier_ratio, 1.0 - static_cast<double>(outliers) / masked, 0.01);
  }
}

TEST(Ransac, InsufficientSupportThrows) {
  auto mask = torch::zeros({64, 80}, torch::kBool);
  mask[3][4] = true;
  mask[3][5] = true;
  EXPECT_THROW(ransac_partial_affine(field_from(Homography(), kSize), mask), GeometryError);
}

TEST(TextFormat, RoundTripsExactly) {
  std::mt19937_64 rng(29);
  std::vector<Homography> hs;
  for (int i = 0; i < 20; ++i) hs.push_back(dlt_solve(random_offsets(rng), kSize));
  std::stringstream ss;
  write_homographies(ss, hs);
  const auto back = read_homographies(ss);
  ASSERT_EQ(back.size(), hs.size());
  for (std::size_t i = 0; i < hs.size(); ++i) EXPECT_EQ(back[i].matrix(), hs[i].matrix());
  EXPECT_THROW(parse_homography("1 0 0 0 1 0 0 0"), GeometryError);
}
