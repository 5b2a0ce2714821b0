#include "mostnet/synthdata.hpp"

#include "mostnet/blocks.hpp"
#include "mostnet/json_util.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace mostnet::synth {

using geometry::Homography;
using geometry::Vec2;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kBorder = 2.0;

// Independent random streams per scene component, so that toggling the
// distractor leaves the object and background draws untouched.
std::mt19937_64 component_rng(std::uint64_t seed, std::uint32_t component) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    component};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double symmetric(std::mt19937_64& rng, double amp) {
  return amp > 0.0 ? uniform(rng, -amp, amp) : 0.0;
}

struct Wave {
  double fx, fy, phase;
  std::array<double, 3> amp;
};

// Smooth procedural RGB texture: base color modulated by a few plane waves and
// darkened along a family of thin lines.
struct Texture {
  std::array<double, 3> base{};
  std::vector<Wave> waves;
  double line_fx = 0.0, line_fy = 0.0, line_phase = 0.0, line_width = 0.0, line_gain = 1.0;
  double shade_radius = 0.0;  // radial darkening toward this radius (0 = none)

  std::array<double, 3> at(const Vec2& u) const {
    std::array<double, 3> rgb = base;
    for (const auto& w : waves) {
      const double s = std::sin(w.fx * u.x() + w.fy * u.y() + w.phase);
      for (int c = 0; c < 3; ++c) rgb[c] *= 1.0 + w.amp[c] * s;
    }
    double gain = 1.0;
    if (line_width > 0.0 &&
        std::abs(std::sin(line_fx * u.x() + line_fy * u.y() + line_phase)) < line_width) {
      gain *= line_gain;
    }
    if (shade_radius > 0.0) {
      const double r = u.norm() / shade_radius;
      gain *= 1.0 - 0.25 * r * r;
    }
    for (auto& v : rgb) v = std::clamp(v * gain, 0.0, 1.0);
    return rgb;
  }
};

Texture random_texture(std::mt19937_64& rng, std::array<double, 3> base, double jitter,
                       double fmin, double fmax, double amp, int n_waves) {
  Texture t;
  for (int c = 0; c < 3; ++c) t.base[c] = std::clamp(base[c] + symmetric(rng, jitter), 0.0, 1.0);
  for (int k = 0; k < n_waves; ++k) {
    const double f = uniform(rng, fmin, fmax);
    const double dir = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    Wave w{f * std::cos(dir), f * std::sin(dir), uniform(rng, 0.0, 2.0 * std::numbers::pi), {}};
    for (auto& a : w.amp) a = uniform(rng, 0.4, 1.0) * amp;
    t.waves.push_back(w);
  }
  return t;
}

/// Cyclic (hence convex) polygon with jittered vertex angles, stretched along y.
std::vector<Vec2> random_convex_polygon(std::mt19937_64& rng, int n, double radius,
                                        double aspect) {
  std::vector<double> angles;
  const double step = 2.0 * std::numbers::pi / n;
  for (int k = 0; k < n; ++k) angles.push_back(k * step + uniform(rng, -0.3, 0.3) * step);
  std::sort(angles.begin(), angles.end());
  std::vector<Vec2> out;
  for (double a : angles) out.emplace_back(radius * std::cos(a), aspect * radius * std::sin(a));
  return out;
}

bool inside_convex(const std::vector<Vec2>& poly, const Vec2& p) {
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 e = poly[(i + 1) % n] - poly[i];
    const Vec2 d = p - poly[i];
    if (e.x() * d.y() - e.y() * d.x() < 0.0) return false;
  }
  return true;
}

struct MovingShape {
  std::vector<Vec2> polygon;  // canonical coordinates, CCW
  Texture texture;
  std::vector<Homography> pose;  // canonical -> pixels per frame
  std::vector<Homography> steps; // pose[t] = steps[t-1] * pose[t-1]
};

bool fits(const MovingShape& shape, const Homography& pose, FrameSize size, double border) {
  for (const auto& v : shape.polygon) {
    const Vec2 p = pose.apply(v);
    if (p.x() < border || p.y() < border || p.x() > size.width - border ||
        p.y() > size.height - border) {
      return false;
    }
  }
  return true;
}

Homography step_about(const Vec2& center, double rot_deg, double scale_change, double dx,
                      double dy) {
  return Homography::similarity(1.0 + scale_change, rot_deg * kDeg, center, Vec2(dx, dy));
}

// Object motion: random bounded steps that keep the polygon inside the frame.
void animate_object(MovingShape& shape, const SceneSpec& spec, std::mt19937_64& rng) {
  for (int t = 1; t < spec.n_frames; ++t) {
    const auto& prev = shape.pose.back();
    const Vec2 center = prev.apply(Vec2::Zero());
    std::optional<Homography> chosen;
    if (spec.object_step) {
      const auto& s = *spec.object_step;
      const auto step = step_about(center, s.rotation_deg, s.scale_change, s.dx, s.dy);
      if (fits(shape, geometry::compose(step, prev), spec.frame_size, kBorder)) chosen = step;
    } else {
      const auto& m = spec.object_motion;
      for (int attempt = 0; attempt < 64 && !chosen; ++attempt) {
        const auto step =
            step_about(center, symmetric(rng, m.max_rotation_deg), symmetric(rng, m.max_scale_change),
                       symmetric(rng, m.max_translation_px), symmetric(rng, m.max_translation_px));
        if (fits(shape, geometry::compose(step, prev), spec.frame_size, kBorder)) chosen = step;
      }
    }
    if (!chosen) {
      throw SceneError("object leaves the frame at t=" + std::to_string(t) +
                       " (reduce the object radius or the motion limits)");
    }
    shape.steps.push_back(*chosen);
    shape.pose.push_back(geometry::compose(*chosen, prev));
  }
}

// Distractor motion: bounded steps, translation reflected to keep its center in frame.
void animate_distractor(MovingShape& shape, const SceneSpec& spec, std::mt19937_64& rng) {
  const auto& m = spec.distractor_motion;
  for (int t = 1; t < spec.n_frames; ++t) {
    const auto& prev = shape.pose.back();
    const Vec2 center = prev.apply(Vec2::Zero());
    double dx = symmetric(rng, m.max_translation_px);
    double dy = symmetric(rng, m.max_translation_px);
    if (center.x() + dx < 0.0 || center.x() + dx > spec.frame_size.width) dx = -dx;
    if (center.y() + dy < 0.0 || center.y() + dy > spec.frame_size.height) dy = -dy;
    const auto step = step_about(center, symmetric(rng, m.max_rotation_deg),
                                 symmetric(rng, m.max_scale_change), dx, dy);
    shape.steps.push_back(step);
    shape.pose.push_back(geometry::compose(step, prev));
  }
}

enum Layer : std::uint8_t { kBackground = 0, kDistractor = 1, kObject = 2 };

}  // namespace

// ---------------------------------------------------------------------------
// Specs

void SceneSpec::validate() const {
  if (frame_size.width <= 0 || frame_size.height <= 0) throw ConfigError("scene.frame_size must be positive");
  if (n_frames < 2) throw ConfigError("scene.n_frames must be >= 2 (homography labels need pairs)");
  if (object_radius <= 0.0) throw ConfigError("scene.object_radius must be positive");
  if (object_vertices < 3) throw ConfigError("scene.object_vertices must be >= 3");
  if (background_drift < 0.0 || distractor_radius <= 0.0) {
    throw ConfigError("scene.background_drift must be >= 0 and distractor_radius > 0");
  }
  for (const auto* m : {&object_motion, &distractor_motion}) {
    if (m->max_rotation_deg < 0 || m->max_translation_px < 0 || m->max_scale_change < 0 ||
        m->max_scale_change >= 0.5) {
      throw ConfigError("scene motion limits must be non-negative (scale change < 0.5)");
    }
  }
}

namespace {

nlohmann::json motion_to_json(const MotionLimits& m) {
  return {{"max_rotation_deg", m.max_rotation_deg},
          {"max_translation_px", m.max_translation_px},
          {"max_scale_change", m.max_scale_change}};
}

MotionLimits motion_from_json(const nlohmann::json& j, MotionLimits m, std::string_view section) {
  reject_unknown_keys(j, section, {"max_rotation_deg", "max_translation_px", "max_scale_change"});
  read_optional(j, "max_rotation_deg", m.max_rotation_deg, section);
  read_optional(j, "max_translation_px", m.max_translation_px, section);
  read_optional(j, "max_scale_change", m.max_scale_change, section);
  return m;
}

}  // namespace

nlohmann::json SceneSpec::to_json() const {
  nlohmann::json j{{"seed", seed},
                   {"frame_size", {frame_size.height, frame_size.width}},
                   {"n_frames", n_frames},
                   {"object_radius", object_radius},
                   {"object_vertices", object_vertices},
                   {"object_motion", motion_to_json(object_motion)},
                   {"background_drift", background_drift},
                   {"distractor", distractor},
                   {"distractor_radius", distractor_radius},
                   {"distractor_motion", motion_to_json(distractor_motion)}};
  if (object_step) {
    j["object_step"] = {{"rotation_deg", object_step->rotation_deg},
                        {"scale_change", object_step->scale_change},
                        {"translation", {object_step->dx, object_step->dy}}};
  }
  return j;
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j, SceneSpec s) {
  constexpr std::string_view kSection = "scene";
  reject_unknown_keys(j, kSection,
                      {"seed", "frame_size", "n_frames", "object_radius", "object_vertices",
                       "object_motion", "object_step", "background_drift", "distractor",
                       "distractor_radius", "distractor_motion"});
  read_optional(j, "seed", s.seed, kSection);
  if (j.contains("frame_size")) {
    const auto& f = j.at("frame_size");
    if (!f.is_array() || f.size() != 2) throw ConfigError("scene.frame_size must be [H, W]");
    s.frame_size = {f[1].get<int>(), f[0].get<int>()};
  }
  read_optional(j, "n_frames", s.n_frames, kSection);
  read_optional(j, "object_radius", s.object_radius, kSection);
  read_optional(j, "object_vertices", s.object_vertices, kSection);
  if (j.contains("object_motion")) {
    s.object_motion = motion_from_json(j.at("object_motion"), s.object_motion, "scene.object_motion");
  }
  if (j.contains("object_step")) {
    const auto& o = j.at("object_step");
    reject_unknown_keys(o, "scene.object_step", {"rotation_deg", "scale_change", "translation"});
    MotionStep step;
    read_optional(o, "rotation_deg", step.rotation_deg, "scene.object_step");
    read_optional(o, "scale_change", step.scale_change, "scene.object_step");
    if (o.contains("translation")) {
      const auto& t = o.at("translation");
      if (!t.is_array() || t.size() != 2) throw ConfigError("scene.object_step.translation must be [dx, dy]");
      step.dx = t[0].get<double>();
      step.dy = t[1].get<double>();
    }
    s.object_step = step;
  }
  read_optional(j, "background_drift", s.background_drift, kSection);
  read_optional(j, "distractor", s.distractor, kSection);
  read_optional(j, "distractor_radius", s.distractor_radius, kSection);
  if (j.contains("distractor_motion")) {
    s.distractor_motion =
        motion_from_json(j.at("distractor_motion"), s.distractor_motion, "scene.distractor_motion");
  }
  s.validate();
  return s;
}

ColorMap ColorMap::pale() {
  return {{0.75, 0.8, 0.85}, {0.12, 0.1, 0.08}, {1.15, 1.05, 1.0}};
}

double ColorMap::apply(double x, int channel) const {
  const auto c = static_cast<std::size_t>(channel);
  const double y = std::clamp(gain[c] * x + offset[c], 0.0, 1.0);
  return gamma[c] == 1.0 ? y : std::pow(y, gamma[c]);
}

void DegradationSpec::validate() const {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("degradation.kernel_size must be odd and >= 1");
  if (eta < 0.0 || sigma_gain < 0.0) throw ConfigError("degradation noise levels must be >= 0");
  if (exposure < 0.0) throw ConfigError("degradation.exposure must be >= 0");
  for (int c = 0; c < 3; ++c) {
    if (color_map.gamma[static_cast<std::size_t>(c)] <= 0.0) throw ConfigError("degradation.color_map.gamma must be > 0");
  }
}

nlohmann::json DegradationSpec::to_json() const {
  return {{"kernel_size", kernel_size},
          {"eta", eta},
          {"sigma_gain", sigma_gain},
          {"exposure", exposure},
          {"color_map",
           {{"gain", color_map.gain}, {"offset", color_map.offset}, {"gamma", color_map.gamma}}}};
}

DegradationSpec DegradationSpec::from_json(const nlohmann::json& j, DegradationSpec d) {
  constexpr std::string_view kSection = "degradation";
  reject_unknown_keys(j, kSection, {"kernel_size", "eta", "sigma_gain", "exposure", "color_map"});
  read_optional(j, "kernel_size", d.kernel_size, kSection);
  read_optional(j, "eta", d.eta, kSection);
  read_optional(j, "sigma_gain", d.sigma_gain, kSection);
  read_optional(j, "exposure", d.exposure, kSection);
  if (j.contains("color_map")) {
    const auto& c = j.at("color_map");
    if (c.is_string()) {
      const auto name = c.get<std::string>();
      if (name == "identity") {
        d.color_map = ColorMap::identity();
      } else if (name == "pale") {
        d.color_map = ColorMap::pale();
      } else {
        throw ConfigError("degradation.color_map must be 'identity', 'pale' or an object");
      }
    } else {
      reject_unknown_keys(c, "degradation.color_map", {"gain", "offset", "gamma"});
      read_optional(c, "gain", d.color_map.gain, "degradation.color_map");
      read_optional(c, "offset", d.color_map.offset, "degradation.color_map");
      read_optional(c, "gamma", d.color_map.gamma, "degradation.color_map");
    }
  }
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Rendering

CleanSequence render_clean_sequence(const SceneSpec& spec) {
  spec.validate();
  const int w = spec.frame_size.width;
  const int h = spec.frame_size.height;
  const int t_count = spec.n_frames;

  auto object_rng = component_rng(spec.seed, 1);
  auto background_rng = component_rng(spec.seed, 2);
  auto distractor_rng = component_rng(spec.seed, 3);

  MovingShape object;
  object.polygon = random_convex_polygon(object_rng, spec.object_vertices, spec.object_radius,
                                         uniform(object_rng, 0.75, 0.95));
  object.texture = random_texture(object_rng, {0.93, 0.88, 0.78}, 0.04, 0.08, 0.45, 0.12, 4);
  object.texture.line_fx = uniform(object_rng, 0.1, 0.25);
  object.texture.line_fy = uniform(object_rng, -0.2, 0.2);
  object.texture.line_phase = uniform(object_rng, 0.0, 6.0);
  object.texture.line_width = 0.15;
  object.texture.line_gain = 0.7;
  object.texture.shade_radius = spec.object_radius;
  {
    const double margin = spec.object_radius + kBorder + 1.0;
    if (2.0 * margin >= w || 2.0 * margin >= h) {
      throw SceneError("object leaves the frame: radius too large for the frame size");
    }
    const Vec2 center(uniform(object_rng, margin, w - margin), uniform(object_rng, margin, h - margin));
    const double angle = uniform(object_rng, 0.0, 2.0 * std::numbers::pi);
    object.pose.push_back(Homography::similarity(1.0, angle, Vec2::Zero(), center));
    if (!fits(object, object.pose.front(), spec.frame_size, kBorder)) {
      throw SceneError("object leaves the frame at t=0");
    }
  }
  animate_object(object, spec, object_rng);

  const Texture background =
      random_texture(background_rng, {0.62, 0.3, 0.32}, 0.05, 0.05, 0.35, 0.25, 4);
  std::vector<Vec2> drift{Vec2::Zero()};
  std::vector<Vec2> drift_step;
  for (int t = 1; t < t_count; ++t) {
    const Vec2 d(symmetric(background_rng, spec.background_drift),
                 symmetric(background_rng, spec.background_drift));
    drift_step.push_back(d);
    drift.push_back(drift.back() + d);
  }

  std::optional<MovingShape> distractor;
  if (spec.distractor) {
    MovingShape d;
    d.polygon = random_convex_polygon(distractor_rng, 5, spec.distractor_radius, 0.6);
    d.texture = random_texture(distractor_rng, {0.55, 0.57, 0.62}, 0.03, 0.3, 0.8, 0.15, 2);
    const Vec2 center(uniform(distractor_rng, 0.0, w), uniform(distractor_rng, 0.0, h));
    d.pose.push_back(Homography::similarity(1.0, uniform(distractor_rng, 0.0, 6.28), Vec2::Zero(), center));
    animate_distractor(d, spec, distractor_rng);
    distractor = std::move(d);
  }

  CleanSequence seq;
  seq.frames = torch::zeros({t_count, 3, h, w}, torch::kDouble);
  seq.masks = torch::zeros({t_count, 1, h, w}, torch::kDouble);
  seq.velocity = torch::zeros({t_count, 2, h, w}, torch::kDouble);
  seq.object_pose = object.pose;
  seq.homographies = object.steps;

  auto fa = seq.frames.accessor<double, 4>();
  auto ma = seq.masks.accessor<double, 4>();
  auto va = seq.velocity.accessor<double, 4>();

  std::vector<std::vector<std::uint8_t>> layers(static_cast<std::size_t>(t_count),
                                                std::vector<std::uint8_t>(static_cast<std::size_t>(w * h)));
  for (int t = 0; t < t_count; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    const Homography object_inv = object.pose[ti].inverse();
    const std::optional<Homography> distractor_inv =
        distractor ? std::optional(distractor->pose[ti].inverse()) : std::nullopt;
    // Per-layer motion used for blur: backward displacement, forward at t=0.
    const auto velocity_of = [&](const std::vector<Homography>& steps, const Vec2& p) -> Vec2 {
      if (t_count < 2) return Vec2::Zero();
      if (t == 0) return steps[0].apply(p) - p;
      return p - steps[ti - 1].inverse().apply(p);
    };
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const Vec2 p(c + 0.5, r + 0.5);
        std::array<double, 3> rgb = background.at(p - drift[ti]);
        Vec2 vel = t == 0 ? (t_count > 1 ? drift_step[0] : Vec2::Zero()) : drift_step[ti - 1];
        Layer layer = kBackground;
        if (distractor_inv) {
          const Vec2 u = distractor_inv->apply(p);
          if (inside_convex(distractor->polygon, u)) {
            rgb = distractor->texture.at(u);
            vel = velocity_of(distractor->steps, p);
            layer = kDistractor;
          }
        }
        const Vec2 u = object_inv.apply(p);
        if (inside_convex(object.polygon, u)) {
          rgb = object.texture.at(u);
          vel = velocity_of(object.steps, p);
          layer = kObject;
          ma[t][0][r][c] = 1.0;
        }
        for (int ch = 0; ch < 3; ++ch) fa[t][ch][r][c] = rgb[static_cast<std::size_t>(ch)];
        va[t][0][r][c] = vel.x();
        va[t][1][r][c] = vel.y();
        layers[ti][static_cast<std::size_t>(r * w + c)] = layer;
      }
    }
  }

  // Analytic motion fields between consecutive frames, on frame t-1 pixels.
  for (int t = 1; t < t_count; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    geometry::MotionField field{torch::zeros({2, h, w}, torch::kDouble),
                                torch::ones({h, w}, torch::kBool)};
    auto fl = field.flow.accessor<double, 3>();
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const Vec2 p(c + 0.5, r + 0.5);
        Vec2 d = drift_step[ti - 1];
        switch (layers[ti - 1][static_cast<std::size_t>(r * w + c)]) {
          case kObject: d = object.steps[ti - 1].apply(p) - p; break;
          case kDistractor: d = distractor->steps[ti - 1].apply(p) - p; break;
          default: break;
        }
        fl[0][r][c] = d.x();
        fl[1][r][c] = d.y();
      }
    }
    seq.motion.push_back(std::move(field));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Degradation

namespace {

// K*K row-major weights of a linear motion blur, normalized to sum 1.
std::vector<double> kernel_weights(double vx, double vy, int k, double exposure) {
  std::vector<double> weights(static_cast<std::size_t>(k * k), 0.0);
  const double half = (k - 1) / 2.0;
  double hx = 0.5 * exposure * vx;
  double hy = 0.5 * exposure * vy;
  const double extent = std::max(std::abs(hx), std::abs(hy));
  if (extent > half && extent > 0.0) {
    hx *= half / extent;
    hy *= half / extent;
  }
  const int samples = k;
  for (int i = 0; i < samples; ++i) {
    const double s = samples == 1 ? 0.0 : -1.0 + 2.0 * i / (samples - 1);
    const double gx = half + s * hx;
    const double gy = half + s * hy;
    const int x0 = std::clamp(static_cast<int>(std::floor(gx)), 0, k - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(gy)), 0, k - 1);
    const double fx = std::clamp(gx - x0, 0.0, 1.0);
    const double fy = std::clamp(gy - y0, 0.0, 1.0);
    const auto add = [&](int x, int y, double wgt) {
      if (wgt > 0.0) weights[static_cast<std::size_t>(std::min(y, k - 1) * k + std::min(x, k - 1))] += wgt;
    };
    add(x0, y0, (1 - fx) * (1 - fy));
    add(x0 + 1, y0, fx * (1 - fy));
    add(x0, y0 + 1, (1 - fx) * fy);
    add(x0 + 1, y0 + 1, fx * fy);
  }
  double total = 0.0;
  for (double v : weights) total += v;
  for (double& v : weights) v /= total;
  return weights;
}

}  // namespace

torch::Tensor motion_kernel(double vx, double vy, int kernel_size, double exposure) {
  const auto w = kernel_weights(vx, vy, kernel_size, exposure);
  return torch::tensor(w, torch::kDouble).reshape({kernel_size, kernel_size});
}

torch::Tensor degrade(const torch::Tensor& frames, const torch::Tensor& velocity,
                      const DegradationSpec& spec, std::uint64_t seed) {
  spec.validate();
  TORCH_CHECK(frames.dim() == 4 && frames.size(1) == 3, "frames must be [T,3,H,W]");
  TORCH_CHECK(velocity.dim() == 4 && velocity.size(1) == 2 && velocity.size(0) == frames.size(0) &&
                  velocity.size(2) == frames.size(2) && velocity.size(3) == frames.size(3),
              "velocity must be [T,2,H,W] matching the frames");
  const auto src = frames.to(torch::kDouble).contiguous();
  const auto vel = velocity.to(torch::kDouble).contiguous();
  const int t_count = static_cast<int>(src.size(0));
  const int h = static_cast<int>(src.size(2));
  const int w = static_cast<int>(src.size(3));
  const int k = spec.kernel_size;
  const int half = k / 2;

  auto mapped = torch::empty_like(src);
  {
    auto in = src.accessor<double, 4>();
    auto out = mapped.accessor<double, 4>();
    for (int t = 0; t < t_count; ++t)
      for (int c = 0; c < 3; ++c)
        for (int r = 0; r < h; ++r)
          for (int x = 0; x < w; ++x) out[t][c][r][x] = spec.color_map.apply(in[t][c][r][x], c);
  }

  auto result = torch::empty_like(src);
  auto in = mapped.accessor<double, 4>();
  auto va = vel.accessor<double, 4>();
  auto out = result.accessor<double, 4>();
  for (int t = 0; t < t_count; ++t) {
    for (int r = 0; r < h; ++r) {
      for (int x = 0; x < w; ++x) {
        const auto weights = kernel_weights(va[t][0][r][x], va[t][1][r][x], k, spec.exposure);
        for (int c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (int i = 0; i < k; ++i) {
            const int rr = std::clamp(r + i - half, 0, h - 1);
            for (int j = 0; j < k; ++j) {
              const double wgt = weights[static_cast<std::size_t>(i * k + j)];
              if (wgt == 0.0) continue;
              acc += wgt * in[t][c][rr][std::clamp(x + j - half, 0, w - 1)];
            }
          }
          out[t][c][r][x] = acc;
        }
      }
    }
  }

  if (spec.eta > 0.0 || spec.sigma_gain > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int t = 0; t < t_count; ++t)
      for (int c = 0; c < 3; ++c)
        for (int r = 0; r < h; ++r)
          for (int x = 0; x < w; ++x) {
            const double y = out[t][c][r][x];
            const double signal = spec.sigma_gain * std::sqrt(std::max(y, 0.0)) * normal(rng);
            const double additive = spec.eta * normal(rng);
            out[t][c][r][x] = std::clamp(y + signal + additive, 0.0, 1.0);
          }
  }
  return result.clamp(0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Labels across scales

ScaleLabels gt_labels_at_scale(const ScaleLabels& full, int scale) {
  if (scale < 1 || scale > 3) throw std::invalid_argument("scale must be 1, 2 or 3");
  if (scale == 1) return full;
  const int times = scale - 1;
  const double factor = 1.0 / static_cast<double>(1 << times);
  ScaleLabels out;
  out.restored = blocks::area_downsample(full.restored, times);
  out.mask = (blocks::area_downsample(full.mask, times) >= 0.5).to(full.mask.scalar_type());
  out.homography = geometry::scale_homography(full.homography, factor);
  const FrameSize size{static_cast<int>(out.restored.size(3)), static_cast<int>(out.restored.size(2))};
  out.offsets = geometry::offsets_from_homography(out.homography, size);
  return out;
}

LabelPyramid gt_label_pyramid(const ScaleLabels& full) {
  LabelPyramid out;
  for (int s = 1; s <= 3; ++s) out[static_cast<std::size_t>(s - 1)] = gt_labels_at_scale(full, s);
  return out;
}

}  // namespace mostnet::synth
