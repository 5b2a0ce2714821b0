#include "mostnet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

namespace mostnet::geometry {

namespace {

constexpr double kSingularDet = 1e-12;
constexpr double kCollinearEps = 1e-9;

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

// Similarity transform that moves the centroid to the origin and makes the
// mean distance sqrt(2).
Mat3 hartley_normalizer(const std::array<Vec2, 4>& pts) {
  Vec2 centroid = Vec2::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= 4.0;
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= 4.0;
  const double s = std::sqrt(2.0) / mean_dist;
  Mat3 t;
  t << s, 0, -s * centroid.x(), 0, s, -s * centroid.y(), 0, 0, 1;
  return t;
}

Vec2 transform(const Mat3& m, const Vec2& p) {
  const Eigen::Vector3d q = m * Eigen::Vector3d(p.x(), p.y(), 1.0);
  return {q.x() / q.z(), q.y() / q.z()};
}

}  // namespace

Homography::Homography(const Mat3& m) {
  if (!m.allFinite()) throw GeometryError("homography has non-finite entries");
  if (std::abs(m(2, 2)) < kSingularDet) throw GeometryError("homography has h33 == 0");
  m_ = m / m(2, 2);
  if (std::abs(m_.determinant()) <= kSingularDet) throw GeometryError("singular homography");
}

Homography Homography::translation(double tx, double ty) {
  Mat3 m = Mat3::Identity();
  m(0, 2) = tx;
  m(1, 2) = ty;
  return Homography(m);
}

Homography Homography::similarity(double scale, double angle_rad, Vec2 center, Vec2 shift) {
  const double a = scale * std::cos(angle_rad);
  const double b = scale * std::sin(angle_rad);
  Mat3 m;
  m << a, -b, center.x() + shift.x() - (a * center.x() - b * center.y()),
      b, a, center.y() + shift.y() - (b * center.x() + a * center.y()),
      0, 0, 1;
  return Homography(m);
}

Vec2 Homography::apply(const Vec2& p) const { return transform(m_, p); }

Homography Homography::inverse() const { return Homography(m_.inverse()); }

std::array<Vec2, 4> frame_corners(FrameSize size) {
  const double w = size.width;
  const double h = size.height;
  return {Vec2(0, 0), Vec2(w, 0), Vec2(w, h), Vec2(0, h)};
}

Homography dlt_solve(const CornerOffsets& offsets, FrameSize size) {
  const auto src = frame_corners(size);
  std::array<Vec2, 4> dst;
  for (int i = 0; i < 4; ++i) {
    if (!offsets.d[i].allFinite()) throw GeometryError("non-finite corner offset");
    dst[i] = src[i] + offsets.d[i];
  }
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      for (int k = j + 1; k < 4; ++k) {
        if (std::abs(cross(dst[j] - dst[i], dst[k] - dst[i])) < kCollinearEps) {
          throw GeometryError("singular configuration: three displaced corners are collinear");
        }
      }
    }
  }

  const Mat3 ts = hartley_normalizer(src);
  const Mat3 td = hartley_normalizer(dst);
  Eigen::Matrix<double, 8, 9> a;
  for (int i = 0; i < 4; ++i) {
    const Vec2 p = transform(ts, src[i]);
    const Vec2 q = transform(td, dst[i]);
    a.row(2 * i) << p.x(), p.y(), 1, 0, 0, 0, -q.x() * p.x(), -q.x() * p.y(), -q.x();
    a.row(2 * i + 1) << 0, 0, 0, p.x(), p.y(), 1, -q.y() * p.x(), -q.y() * p.y(), -q.y();
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 8, 9>> svd(a, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> v = svd.matrixV().col(8);
  Mat3 hn;
  hn << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  return Homography(td.inverse() * hn * ts);
}

CornerOffsets offsets_from_homography(const Homography& h, FrameSize size) {
  const auto corners = frame_corners(size);
  CornerOffsets out;
  for (int i = 0; i < 4; ++i) out.d[i] = h.apply(corners[i]) - corners[i];
  return out;
}

Homography scale_homography(const Homography& h, double factor) {
  if (!(factor > 0.0)) throw GeometryError("scale factor must be positive");
  Mat3 m = h.matrix();
  m(0, 2) *= factor;
  m(1, 2) *= factor;
  m(2, 0) /= factor;
  m(2, 1) /= factor;
  return Homography(m);
}

Homography compose(const Homography& outer, const Homography& inner) {
  return Homography(outer.matrix() * inner.matrix());
}

double mace(const CornerOffsets& pred, const CornerOffsets& gt) {
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) sum += (pred.d[i] - gt.d[i]).norm();
  return sum / 4.0;
}

// ---------------------------------------------------------------------------
// RANSAC

namespace {

struct Correspondence {
  Vec2 src;
  Vec2 dst;
};

// Least-squares fit of the chosen model; returns false for degenerate input.
bool fit_model(std::span<const Correspondence> pts, MotionModel model, Mat3& out) {
  const Eigen::Index n = static_cast<Eigen::Index>(pts.size());
  if (model == MotionModel::Similarity) {
    // x' = a x - b y + tx ; y' = b x + a y + ty
    Eigen::MatrixXd a(2 * n, 4);
    Eigen::VectorXd rhs(2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& [s, d] = pts[static_cast<std::size_t>(i)];
      a.row(2 * i) << s.x(), -s.y(), 1, 0;
      a.row(2 * i + 1) << s.y(), s.x(), 0, 1;
      rhs(2 * i) = d.x();
      rhs(2 * i + 1) = d.y();
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < 4) return false;
    const Eigen::Vector4d x = qr.solve(rhs);
    out << x(0), -x(1), x(2), x(1), x(0), x(3), 0, 0, 1;
  } else {
    Eigen::MatrixXd a(n, 3);
    Eigen::VectorXd bx(n), by(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& [s, d] = pts[static_cast<std::size_t>(i)];
      a.row(i) << s.x(), s.y(), 1;
      bx(i) = d.x();
      by(i) = d.y();
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < 3) return false;
    const Eigen::Vector3d px = qr.solve(bx);
    const Eigen::Vector3d py = qr.solve(by);
    out << px(0), px(1), px(2), py(0), py(1), py(2), 0, 0, 1;
  }
  return std::abs(out.determinant()) > kSingularDet;
}

int count_inliers(std::span<const Correspondence> pts, const Mat3& m, double threshold,
                  std::vector<char>* mask) {
  int count = 0;
  const double t2 = threshold * threshold;
  if (mask) mask->assign(pts.size(), 0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec2 p = transform(m, pts[i].src);
    if ((p - pts[i].dst).squaredNorm() <= t2) {
      ++count;
      if (mask) (*mask)[i] = 1;
    }
  }
  return count;
}

}  // namespace

RansacResult ransac_partial_affine(const MotionField& field, const torch::Tensor& mask,
                                   const RansacOptions& options) {
  const auto size = field.size();
  TORCH_CHECK(field.flow.dim() == 3 && field.flow.size(0) == 2, "flow must be [2,H,W]");
  TORCH_CHECK(mask.dim() == 2 && mask.size(0) == size.height && mask.size(1) == size.width,
              "mask must be [H,W] matching the flow");

  const auto flow = field.flow.to(torch::kDouble).contiguous();
  const auto valid = field.valid.defined() ? field.valid.to(torch::kBool).contiguous()
                                           : torch::ones({size.height, size.width}, torch::kBool);
  const auto m = mask.to(torch::kBool).contiguous();
  auto fa = flow.accessor<double, 3>();
  auto va = valid.accessor<bool, 2>();
  auto ma = m.accessor<bool, 2>();

  std::vector<Correspondence> pts;
  for (int r = 0; r < size.height; ++r) {
    for (int c = 0; c < size.width; ++c) {
      if (!va[r][c] || !ma[r][c]) continue;
      const double dx = fa[0][r][c];
      const double dy = fa[1][r][c];
      if (!std::isfinite(dx) || !std::isfinite(dy)) continue;
      const Vec2 src(c + 0.5, r + 0.5);
      pts.push_back({src, src + Vec2(dx, dy)});
    }
  }
  const int minimal = options.model == MotionModel::Similarity ? 2 : 3;
  if (pts.size() < 3) throw GeometryError("insufficient support: fewer than 3 usable pixels");

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);

  Mat3 best = Mat3::Identity();
  int best_count = -1;
  int needed = options.max_iterations;
  int iter = 0;
  std::vector<Correspondence> sample(static_cast<std::size_t>(minimal));
  for (; iter < needed; ++iter) {
    for (auto& s : sample) s = pts[pick(rng)];
    Mat3 candidate;
    if (!fit_model(sample, options.model, candidate)) continue;
    const int count = count_inliers(pts, candidate, options.inlier_threshold, nullptr);
    if (count > best_count) {
      best_count = count;
      best = candidate;
      const double w = static_cast<double>(count) / static_cast<double>(pts.size());
      const double p_fail = 1.0 - std::pow(w, minimal);
      if (p_fail <= std::numeric_limits<double>::epsilon()) {
        needed = iter + 1;
      } else {
        const double k = std::log(1.0 - options.confidence) / std::log(p_fail);
        needed = std::min(options.max_iterations, static_cast<int>(std::ceil(k)));
      }
    }
  }
  if (best_count < minimal) throw GeometryError("insufficient support: no consistent model");

  std::vector<char> inlier_mask;
  count_inliers(pts, best, options.inlier_threshold, &inlier_mask);
  std::vector<Correspondence> inliers;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (inlier_mask[i]) inliers.push_back(pts[i]);
  }
  Mat3 refit;
  if (fit_model(inliers, options.model, refit)) best = refit;
  const int final_count = count_inliers(pts, best, options.inlier_threshold, nullptr);

  return {Homography(best), static_cast<double>(final_count) / static_cast<double>(pts.size()),
          iter};
}

// ---------------------------------------------------------------------------
// Text I/O

std::string format_homography(const Homography& h) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (int i = 0; i < 9; ++i) {
    if (i) os << ' ';
    os << h(i / 3, i % 3);
  }
  return os.str();
}

Homography parse_homography(const std::string& line) {
  std::istringstream is(line);
  Mat3 m;
  for (int i = 0; i < 9; ++i) {
    double v = 0.0;
    if (!(is >> v)) throw GeometryError("homography line needs 9 numbers: '" + line + "'");
    m(i / 3, i % 3) = v;
  }
  std::string extra;
  if (is >> extra) throw GeometryError("trailing data in homography line: '" + line + "'");
  return Homography(m);
}

void write_homographies(std::ostream& out, std::span<const Homography> hs) {
  for (const auto& h : hs) out << format_homography(h) << '\n';
}

std::vector<Homography> read_homographies(std::istream& in) {
  std::vector<Homography> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_homography(line));
  }
  return out;
}

}  // namespace mostnet::geometry
