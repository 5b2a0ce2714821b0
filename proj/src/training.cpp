#include "mostnet/training.hpp"

#include "mostnet/json_util.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace mostnet::training {

namespace fs = std::filesystem;
using losses::Task;

// ---------------------------------------------------------------------------
// Configuration

void AugmentConfig::validate() const {
  if (flip_h < 0.0 || flip_h > 1.0 || flip_v < 0.0 || flip_v > 1.0) {
    throw ConfigError("train.augment flip probabilities must be in [0,1]");
  }
  if (channel_perturb < 0.0 || channel_perturb >= 1.0 || color_jitter < 0.0 || color_jitter >= 1.0) {
    throw ConfigError("train.augment amplitudes must be in [0,1)");
  }
}

nlohmann::json AugmentConfig::to_json() const {
  return {{"flip_h", flip_h}, {"flip_v", flip_v}, {"channel_perturb", channel_perturb},
          {"color_jitter", color_jitter}};
}

AugmentConfig AugmentConfig::from_json(const nlohmann::json& j, AugmentConfig a) {
  constexpr std::string_view kSection = "train.augment";
  reject_unknown_keys(j, kSection, {"flip_h", "flip_v", "channel_perturb", "color_jitter"});
  read_optional(j, "flip_h", a.flip_h, kSection);
  read_optional(j, "flip_v", a.flip_v, kSection);
  read_optional(j, "channel_perturb", a.channel_perturb, kSection);
  read_optional(j, "color_jitter", a.color_jitter, kSection);
  a.validate();
  return a;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr_start > 0.0) || lr_end < 0.0 || lr_end > lr_start) {
    throw ConfigError("train learning rates must satisfy 0 <= lr_end <= lr_start, lr_start > 0");
  }
  if (steps < 1) throw ConfigError("train.steps must be >= 1");
  if (unroll_length < 2) throw ConfigError("train.unroll_length must be >= 2");
  if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip must be positive");
  if (log_every < 1 || validate_every < 0 || checkpoint_every < 0) {
    throw ConfigError("train.log_every must be >= 1, validate_every and checkpoint_every >= 0");
  }
  weights.validate();
  augment.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"lr_start", lr_start},
          {"lr_end", lr_end},
          {"steps", steps},
          {"unroll_length", unroll_length},
          {"grad_clip", grad_clip},
          {"weights", weights.to_json()},
          {"augment", augment.to_json()},
          {"seed", seed},
          {"log_every", log_every},
          {"validate_every", validate_every},
          {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  constexpr std::string_view kSection = "train";
  reject_unknown_keys(j, kSection,
                      {"batch_size", "lr_start", "lr_end", "steps", "unroll_length", "grad_clip",
                       "weights", "augment", "seed", "log_every", "validate_every",
                       "checkpoint_every"});
  read_optional(j, "batch_size", c.batch_size, kSection);
  read_optional(j, "lr_start", c.lr_start, kSection);
  read_optional(j, "lr_end", c.lr_end, kSection);
  read_optional(j, "steps", c.steps, kSection);
  read_optional(j, "unroll_length", c.unroll_length, kSection);
  read_optional(j, "grad_clip", c.grad_clip, kSection);
  if (j.contains("weights")) c.weights = losses::LossWeights::from_json(j.at("weights"), c.weights);
  if (j.contains("augment")) c.augment = AugmentConfig::from_json(j.at("augment"), c.augment);
  read_optional(j, "seed", c.seed, kSection);
  read_optional(j, "log_every", c.log_every, kSection);
  read_optional(j, "validate_every", c.validate_every, kSection);
  read_optional(j, "checkpoint_every", c.checkpoint_every, kSection);
  c.validate();
  return c;
}

double cosine_lr(const TrainConfig& cfg, int step) {
  if (step <= 0) return cfg.lr_start;
  if (step >= cfg.steps) return cfg.lr_end;
  const double progress = static_cast<double>(step) / cfg.steps;
  return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// Samples and augmentation

Sample sample_from_clip(const synth::Clip& clip, int start, int length) {
  if (start < 0 || length < 2 || start + length > clip.n_frames()) {
    throw std::out_of_range("sample window [" + std::to_string(start) + ", " +
                            std::to_string(start + length) + ") outside clip " + clip.name);
  }
  Sample s;
  s.degraded = clip.degraded.slice(0, start, start + length);
  s.restored = clip.restored.slice(0, start, start + length);
  s.masks = clip.masks.slice(0, start, start + length);
  std::vector<torch::Tensor> hs;
  for (int t = start; t < start + length - 1; ++t) {
    hs.push_back(geometry::to_tensor(clip.homographies[static_cast<std::size_t>(t)], torch::kDouble));
  }
  s.homographies = torch::stack(hs);
  return s;
}

nlohmann::json AugmentDraw::to_json() const {
  return {{"flip_h", flip_h},         {"flip_v", flip_v},         {"channel_gain", channel_gain},
          {"brightness", brightness}, {"contrast", contrast}, {"saturation", saturation}};
}

AugmentDraw draw_augment(const AugmentConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto symmetric = [&](double amp) { return amp > 0.0 ? amp * (2.0 * unit(rng) - 1.0) : 0.0; };
  AugmentDraw d;
  d.flip_h = unit(rng) < cfg.flip_h;
  d.flip_v = unit(rng) < cfg.flip_v;
  for (auto& g : d.channel_gain) g = 1.0 + symmetric(cfg.channel_perturb);
  d.brightness = symmetric(cfg.color_jitter);
  d.contrast = symmetric(cfg.color_jitter);
  d.saturation = symmetric(cfg.color_jitter);
  return d;
}

namespace {

// Reflection x -> extent - x along one axis (axis 0 = x, 1 = y).
torch::Tensor reflection(int axis, double extent) {
  auto f = torch::eye(3, torch::kDouble);
  f[axis][axis] = -1.0;
  f[axis][2] = extent;
  return f;
}

torch::Tensor photometric(const torch::Tensor& frames, const AugmentDraw& d) {
  auto x = frames * torch::tensor(std::vector<double>(d.channel_gain.begin(), d.channel_gain.end()),
                                  frames.options())
                        .view({1, 3, 1, 1});
  x = x * (1.0 + d.brightness);
  const auto mean = x.mean({1, 2, 3}, true);
  x = (x - mean) * (1.0 + d.contrast) + mean;
  const auto gray = (x * torch::tensor({0.299, 0.587, 0.114}, frames.options()).view({1, 3, 1, 1}))
                        .sum(1, true);
  x = gray + (x - gray) * (1.0 + d.saturation);
  return x.clamp(0.0, 1.0);
}

}  // namespace

Sample apply_augment(const Sample& sample, const AugmentDraw& draw) {
  Sample out = sample;
  const auto size = sample.frame_size();
  for (auto [flip, axis, dim, extent] :
       {std::tuple{draw.flip_h, 0, 3, size.width}, std::tuple{draw.flip_v, 1, 2, size.height}}) {
    if (!flip) continue;
    out.degraded = out.degraded.flip({dim});
    out.restored = out.restored.flip({dim});
    out.masks = out.masks.flip({dim});
    const auto f = reflection(axis, extent);
    auto h = f.matmul(out.homographies).matmul(f);
    out.homographies = h / h.select(1, 2).select(1, 2).view({-1, 1, 1});
  }
  const bool identity_color = draw.channel_gain == std::array<double, 3>{1.0, 1.0, 1.0} &&
                              draw.brightness == 0.0 && draw.contrast == 0.0 && draw.saturation == 0.0;
  if (!identity_color) out.degraded = photometric(out.degraded, draw);
  return out;
}

Sample augment(const Sample& sample, const AugmentConfig& cfg, std::mt19937_64& rng) {
  return apply_augment(sample, draw_augment(cfg, rng));
}

LabelPyramid batch_labels(const torch::Tensor& restored, const torch::Tensor& masks,
                          const torch::Tensor& homographies) {
  const FrameSize size{static_cast<int>(restored.size(3)), static_cast<int>(restored.size(2))};
  ScaleLabels full;
  full.restored = restored;
  full.mask = masks;
  full.homography = homographies.to(torch::kDouble);
  full.offsets = geometry::offsets_from_homography(full.homography, size);
  auto pyramid = synth::gt_label_pyramid(full);
  for (auto& level : pyramid) {
    level->homography = level->homography.to(restored.scalar_type());
    level->offsets = level->offsets.to(restored.scalar_type());
  }
  return pyramid;
}

// ---------------------------------------------------------------------------
// Training loop

nlohmann::json StepRecord::to_json() const {
  nlohmann::json j{{"step", step}, {"lr", lr}, {"loss", loss}, {"wall_s", wall_seconds}};
  for (const auto& [task, value] : task_losses) j[task] = value;
  return j;
}

namespace {

std::mt19937_64 step_rng(std::uint64_t seed, int step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step)};
  return std::mt19937_64(seq);
}

void check_clips(const std::vector<synth::Clip>& clips, int unroll) {
  if (clips.empty()) throw ConfigError("training set is empty");
  const auto size = clips.front().frame_size();
  if (size.width % 4 != 0 || size.height % 4 != 0) {
    throw ConfigError("frame size must be divisible by 4 for the three-scale pyramid");
  }
  for (const auto& c : clips) {
    if (c.frame_size() != size) throw ConfigError("all training clips must share one frame size");
    if (c.n_frames() < unroll) {
      throw ConfigError("clip " + c.name + " is shorter than train.unroll_length");
    }
  }
}

void write_dump(const fs::path& path, const nlohmann::json& info, const std::vector<torch::Tensor>& batch) {
  if (path.empty()) return;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path) << info.dump(2) << '\n';
  auto tensors = path;
  tensors.replace_extension(".pt");
  torch::save(batch, tensors.string());
}

}  // namespace

TrainResult train(MostNet& model, const std::vector<synth::Clip>& clips, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  check_clips(clips, cfg.unroll_length);

  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(cfg.lr_start));
  TrainResult result;
  int step = 0;
  if (options.resume_from) step = load_checkpoint(*options.resume_from, model, &optimizer).step;

  std::ofstream log;
  if (!options.log_path.empty()) {
    if (options.log_path.has_parent_path()) fs::create_directories(options.log_path.parent_path());
    log.open(options.log_path, std::ios::app);
    if (!log) throw std::runtime_error("cannot open training log " + options.log_path.string());
  }
  const auto save = [&](int at) {
    if (!options.checkpoint_path.empty()) {
      save_checkpoint(options.checkpoint_path, model, &optimizer, at, cfg.to_json());
    }
  };

  const auto start_time = std::chrono::steady_clock::now();
  const int unroll = cfg.unroll_length;
  model->train();
  while (step < cfg.steps) {
    const double lr = cosine_lr(cfg, step);
    for (auto& group : optimizer.param_groups()) {
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }
    auto rng = step_rng(cfg.seed, step);
    torch::manual_seed(rng());

    std::vector<torch::Tensor> deg, res, msk, hom;
    nlohmann::json batch_info = nlohmann::json::array();
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& clip = clips[std::uniform_int_distribution<std::size_t>(0, clips.size() - 1)(rng)];
      const int start = std::uniform_int_distribution<int>(0, clip.n_frames() - unroll)(rng);
      const auto draw = draw_augment(cfg.augment, rng);
      const auto sample = apply_augment(sample_from_clip(clip, start, unroll), draw);
      deg.push_back(sample.degraded);
      res.push_back(sample.restored);
      msk.push_back(sample.masks);
      hom.push_back(sample.homographies);
      batch_info.push_back({{"clip", clip.name}, {"start", start}, {"augment", draw.to_json()}});
    }
    const auto degraded = torch::stack(deg, 1);  // [T,N,...]
    const auto restored = torch::stack(res, 1);
    const auto masks = torch::stack(msk, 1);
    const auto homographies = torch::stack(hom, 1);

    auto state = model->init_state(degraded[0]);
    torch::Tensor loss;
    std::map<std::string, double> task_losses;
    for (int k = 1; k < unroll; ++k) {
      auto [outputs, next] = model->forward(state, degraded[k]);
      const auto report = losses::total_loss(outputs, batch_labels(restored[k], masks[k], homographies[k - 1]),
                                             cfg.weights);
      loss = loss.defined() ? loss + report.total : report.total;
      for (auto task : {Task::Restoration, Task::Segmentation, Task::Homography}) {
        task_losses[losses::to_string(task)] += report.task_sum(task) / (unroll - 1);
      }
      state = std::move(next);
    }
    loss = loss / static_cast<double>(unroll - 1);

    optimizer.zero_grad();
    const double loss_value = loss.item<double>();
    double grad_norm = 0.0;
    if (std::isfinite(loss_value)) {
      loss.backward();
      grad_norm = torch::nn::utils::clip_grad_norm_(model->parameters(), cfg.grad_clip);
    }
    if (!std::isfinite(loss_value) || !std::isfinite(grad_norm)) {
      const nlohmann::json info{{"step", step},       {"lr", lr},
                                {"loss", loss_value}, {"grad_norm", grad_norm},
                                {"task_losses", task_losses}, {"batch", batch_info}};
      write_dump(options.dump_path, info, {degraded, restored, masks, homographies});
      throw TrainingDiverged("non-finite " + std::string(std::isfinite(loss_value) ? "gradient" : "loss") +
                             " at step " + std::to_string(step) +
                             (options.dump_path.empty() ? "" : "; batch dumped to " + options.dump_path.string()));
    }
    optimizer.step();
    ++step;

    StepRecord record{step, lr, loss_value, task_losses,
                      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count()};
    if (log.is_open() && (step % cfg.log_every == 0 || step == 1 || step == cfg.steps)) {
      log << record.to_json().dump() << '\n' << std::flush;
    }
    if (options.on_step) options.on_step(record);
    result.history.push_back(std::move(record));

    if (options.validation && cfg.validate_every > 0 && step % cfg.validate_every == 0) {
      const auto eval = evaluate(model, *options.validation);
      auto report = eval.report.to_json();
      report.erase("fps");
      if (log.is_open()) log << nlohmann::json{{"step", step}, {"validation", report}}.dump() << '\n' << std::flush;
      model->train();
    }
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.steps) save(step);
  }
  save(step);
  model->eval();
  result.final_step = step;
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointFormat = "mostnet-checkpoint";

nlohmann::json checkpoint_metadata(const MostNet& model, int step, const nlohmann::json& train_config) {
  return {{"format", kCheckpointFormat},
          {"step", step},
          {"model", model->config().to_json()},
          {"train", train_config},
          {"fingerprint", model->config().fingerprint()}};
}

}  // namespace

void save_checkpoint(const fs::path& path, MostNet& model, torch::optim::Adam* optimizer, int step,
                     const nlohmann::json& train_config) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto meta = checkpoint_metadata(model, step, train_config);
  torch::serialize::OutputArchive archive;
  torch::serialize::OutputArchive model_archive;
  model->save(model_archive);
  archive.write("model", model_archive);
  if (optimizer) {
    torch::serialize::OutputArchive optimizer_archive;
    optimizer->save(optimizer_archive);
    archive.write("optimizer", optimizer_archive);
  }
  archive.write("metadata", c10::IValue(meta.dump()));
  auto tmp = path;
  tmp += ".tmp";
  archive.save_to(tmp.string());
  fs::rename(tmp, path);
  auto sidecar = path;
  sidecar += ".json";
  std::ofstream(sidecar) << meta.dump(2) << '\n';
}

CheckpointInfo read_checkpoint_info(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw CheckpointError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  c10::IValue value;
  try {
    archive.load_from(path.string());
    archive.read("metadata", value);
  } catch (const c10::Error& e) {
    throw CheckpointError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  const auto meta = nlohmann::json::parse(value.toStringRef());
  if (meta.value("format", "") != kCheckpointFormat) throw CheckpointError(path.string() + ": not a checkpoint");
  CheckpointInfo info;
  info.step = meta.at("step").get<int>();
  info.model = ModelConfig::from_json(meta.at("model"), ModelConfig{});
  info.train = meta.at("train");
  info.fingerprint = meta.at("fingerprint").get<std::string>();
  if (info.fingerprint != info.model.fingerprint()) {
    throw CheckpointError(path.string() + ": stored fingerprint does not match its model configuration");
  }
  return info;
}

CheckpointInfo load_checkpoint(const fs::path& path, MostNet& model, torch::optim::Adam* optimizer) {
  auto info = read_checkpoint_info(path);
  if (info.fingerprint != model->config().fingerprint()) {
    throw CheckpointError("config fingerprint mismatch: checkpoint " + info.fingerprint + ", model " +
                          model->config().fingerprint());
  }
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  torch::serialize::InputArchive model_archive;
  archive.read("model", model_archive);
  model->load(model_archive);
  if (optimizer) {
    torch::serialize::InputArchive optimizer_archive;
    if (!archive.try_read("optimizer", optimizer_archive)) {
      throw CheckpointError(path.string() + " holds no optimizer state to resume from");
    }
    optimizer->load(optimizer_archive);
  }
  return info;
}

// ---------------------------------------------------------------------------
// Evaluation

ClipPrediction predict_clip(MostNet& model, const synth::Clip& clip) {
  model->eval();
  const auto video = process_video(model, clip.degraded);
  ClipPrediction pred;
  pred.seconds = video.fps > 0.0 ? clip.n_frames() / video.fps : 0.0;
  for (int s = 1; s <= 3; ++s) {
    if (!video.steps.front().has(s)) continue;
    std::vector<torch::Tensor> r, m, h;
    for (const auto& step : video.steps) {
      const auto& out = step.at(s);
      r.push_back(out.restored);
      if (out.mask.defined()) m.push_back(out.mask);
      h.push_back(out.homography);
    }
    ClipPrediction::Scale scale{torch::cat(r), m.empty() ? torch::Tensor() : torch::cat(m), torch::cat(h)};
    pred.scales[static_cast<std::size_t>(s - 1)] = std::move(scale);
  }
  return pred;
}

namespace {

ScaleLabels full_labels(const synth::Clip& clip) {
  const auto n = clip.n_frames();
  std::vector<torch::Tensor> hs;
  for (const auto& h : clip.homographies) hs.push_back(geometry::to_tensor(h, torch::kDouble));
  ScaleLabels full;
  full.restored = clip.restored.slice(0, 1, n);
  full.mask = clip.masks.slice(0, 1, n);
  full.homography = torch::stack(hs);
  full.offsets = geometry::offsets_from_homography(full.homography, clip.frame_size());
  return full;
}

torch::Tensor upsample(const torch::Tensor& x, int factor) {
  if (factor == 1) return x;
  namespace F = torch::nn::functional;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{double(factor), double(factor)})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

std::string csv_value(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

ClipPrediction ground_truth_prediction(const synth::Clip& clip) {
  const auto full = full_labels(clip);
  ClipPrediction pred;
  for (int s = 1; s <= 3; ++s) {
    const auto labels = synth::gt_labels_at_scale(full, s);
    pred.scales[static_cast<std::size_t>(s - 1)] =
        ClipPrediction::Scale{labels.restored, labels.mask, labels.homography};
  }
  return pred;
}

EvalResult evaluate_predictions(const std::vector<synth::Clip>& clips,
                                const std::vector<ClipPrediction>& predictions) {
  if (clips.size() != predictions.size()) throw std::invalid_argument("one prediction per clip required");
  if (clips.empty()) throw std::invalid_argument("evaluation set is empty");

  struct Sums {
    double psnr = 0, ssim = 0, mace = 0, iou = 0;
    bool present = true, has_iou = true;
  };
  std::array<Sums, 3> sums;
  double frames = 0, ew_sum = 0, ew_clips = 0, seconds = 0, streamed = 0;

  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& clip = clips[i];
    const auto& pred = predictions[i];
    const auto full = full_labels(clip);
    const double n = static_cast<double>(clip.n_frames() - 1);
    const auto size = clip.frame_size();
    for (int s = 1; s <= 3; ++s) {
      auto& acc = sums[static_cast<std::size_t>(s - 1)];
      const auto& scale = pred.scales[static_cast<std::size_t>(s - 1)];
      if (!scale) {
        acc.present = false;
        continue;
      }
      const int factor = 1 << (s - 1);
      const auto restored = upsample(scale->restored.to(torch::kDouble), factor).clamp(0.0, 1.0);
      acc.psnr += n * metrics::psnr(restored, full.restored.to(torch::kDouble));
      acc.ssim += n * metrics::ssim(restored, full.restored.to(torch::kDouble));
      const auto h_full = geometry::scale_homography(scale->homography.to(torch::kDouble), factor);
      acc.mace += n * geometry::mace(geometry::offsets_from_homography(h_full, size), full.offsets).item<double>();
      if (scale->mask.defined()) {
        acc.iou += n * metrics::iou(upsample(scale->mask.to(torch::kDouble), factor), full.mask);
      } else {
        acc.has_iou = false;
      }
    }
    frames += n;
    if (pred.scales[0] && clip.n_frames() >= 3) {
      const std::vector<geometry::Homography> hs(clip.homographies.begin() + 1, clip.homographies.end());
      ew_sum += metrics::temporal_warp_error(pred.scales[0]->restored, hs, full.mask);
      ew_clips += 1;
    }
    seconds += pred.seconds;
    streamed += clip.n_frames();
  }

  EvalResult result;
  for (int s = 1; s <= 3; ++s) {
    const auto& acc = sums[static_cast<std::size_t>(s - 1)];
    auto& row = result.per_scale[static_cast<std::size_t>(s - 1)];
    row.scale = s;
    row.present = acc.present;
    if (!acc.present) continue;
    row.psnr_db = acc.psnr / frames;
    row.ssim = acc.ssim / frames;
    row.mace_px = acc.mace / frames;
    if (acc.has_iou) row.iou = acc.iou / frames;
  }
  const auto& top = result.per_scale[0];
  if (!top.present) throw std::invalid_argument("predictions carry no scale-1 outputs");
  result.report.psnr_db = top.psnr_db;
  result.report.ssim = top.ssim;
  result.report.mace_px = top.mace_px;
  result.report.iou = top.iou;
  result.report.ew = ew_clips > 0 ? ew_sum / ew_clips : 0.0;
  result.report.fps = seconds > 0.0 ? streamed / seconds : 0.0;
  result.report.n_frames = static_cast<int>(frames);
  return result;
}

EvalResult evaluate(MostNet& model, const std::vector<synth::Clip>& clips) {
  std::vector<ClipPrediction> predictions;
  for (const auto& clip : clips) predictions.push_back(predict_clip(model, clip));
  return evaluate_predictions(clips, predictions);
}

std::string EvalResult::per_scale_csv() const {
  std::ostringstream os;
  os << "scale,psnr_db,ssim,mace_px,iou\n";
  for (const auto& row : per_scale) {
    os << row.scale << ',';
    if (row.present) {
      os << csv_value(row.psnr_db) << ',' << csv_value(row.ssim) << ',' << csv_value(row.mace_px) << ',';
      if (row.iou) os << csv_value(*row.iou);
    } else {
      os << ",,,";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace mostnet::training
