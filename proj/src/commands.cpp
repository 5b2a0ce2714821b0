#include "mostnet/cli.hpp"

#include "mostnet/json_util.hpp"
#include "mostnet/metrics.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

namespace mostnet::cli {

namespace fs = std::filesystem;

Profile profile_from_string(const std::string& name) {
  if (name == "desk") return Profile::Desk;
  if (name == "paper") return Profile::Paper;
  throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
}

nlohmann::json EvalSection::to_json() const { return {{"split", split}, {"warmup", warmup}}; }

RunConfig RunConfig::for_profile(Profile profile) {
  RunConfig c;
  if (profile == Profile::Desk) {
    c.model = ModelConfig::desk();
    c.train.batch_size = 2;
    c.train.lr_start = 1e-3;
    c.train.steps = 1000;
    // Mean-reduced losses need far larger restoration/segmentation weights
    // than the paper's values to train all three heads.
    c.train.weights = {1.0, 0.1, 0.05};
  } else {
    c.model = ModelConfig::paper();
  }
  c.model.input_size = c.data.scene.frame_size;
  return c;
}

RunConfig RunConfig::from_json(const nlohmann::json& j, RunConfig c) {
  reject_unknown_keys(j, "config", {"data", "scene", "degradation", "model", "train", "eval"});
  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown_keys(d, "data", {"seed", "clips_per_split"});
    read_optional(d, "seed", c.data.seed, "data");
    if (d.contains("clips_per_split")) {
      const auto& counts = d.at("clips_per_split");
      reject_unknown_keys(counts, "data.clips_per_split", {"train", "val", "test"});
      c.data.clips_per_split.clear();
      for (const auto& [split, n] : counts.items()) c.data.clips_per_split[split] = n.get<int>();
    }
  }
  if (j.contains("scene")) c.data.scene = synth::SceneSpec::from_json(j.at("scene"), c.data.scene);
  if (j.contains("degradation")) {
    c.data.degradation = synth::DegradationSpec::from_json(j.at("degradation"), c.data.degradation);
  }
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"), c.model);
  if (!j.contains("model") || !j.at("model").contains("input_size")) {
    c.model.input_size = c.data.scene.frame_size;
  }
  if (j.contains("train")) c.train = training::TrainConfig::from_json(j.at("train"), c.train);
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown_keys(e, "eval", {"split", "warmup"});
    read_optional(e, "split", c.eval.split, "eval");
    read_optional(e, "warmup", c.eval.warmup, "eval");
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, std::move(base));
}

nlohmann::json RunConfig::to_json() const {
  return {{"data", {{"seed", data.seed}, {"clips_per_split", data.clips_per_split}}},
          {"scene", data.scene.to_json()},
          {"degradation", data.degradation.to_json()},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"eval", eval.to_json()}};
}

void RunConfig::validate() const {
  data.scene.validate();
  data.degradation.validate();
  for (const auto& [split, n] : data.clips_per_split) {
    if (std::find(synth::kSplits.begin(), synth::kSplits.end(), split) == synth::kSplits.end()) {
      throw ConfigError("data.clips_per_split: unknown split '" + split + "'");
    }
    if (n < 0) throw ConfigError("data.clips_per_split." + split + " must be >= 0");
  }
  model.validate();
  train.validate();
  if (std::find(synth::kSplits.begin(), synth::kSplits.end(), eval.split) == synth::kSplits.end()) {
    throw ConfigError("eval.split must be train, val or test");
  }
  if (eval.warmup < 0) throw ConfigError("eval.warmup must be >= 0");
  const auto size = data.scene.frame_size;
  if (size.width % 4 != 0 || size.height % 4 != 0) {
    throw ConfigError("scene.frame_size must be divisible by 4 for the three-scale pyramid");
  }
}

namespace {

struct GlobalOptions {
  std::string config;
  std::string profile = "desk";
  std::optional<std::uint64_t> seed;
  std::string device = "cpu";
  std::string workspace;
};

struct Context {
  fs::path workspace;
  RunConfig config;

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : workspace / path;
  }
};

Context make_context(const GlobalOptions& g) {
  if (g.device != "cpu") {
    throw ConfigError("device '" + g.device + "' is not supported by this build (use cpu)");
  }
  Context ctx;
  if (!g.workspace.empty()) {
    ctx.workspace = g.workspace;
  } else if (const char* env = std::getenv("MOSTNET_WORKSPACE"); env && *env) {
    ctx.workspace = env;
  } else {
    ctx.workspace = fs::current_path();
  }
  ctx.config = RunConfig::for_profile(profile_from_string(g.profile));
  if (!g.config.empty()) ctx.config = RunConfig::load(ctx.resolve(g.config), ctx.config);
  if (g.seed) {
    ctx.config.data.seed = *g.seed;
    ctx.config.train.seed = *g.seed;
  }
  ctx.config.validate();
  return ctx;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

/// Fails before any side effect when `dir` exists and is not empty.
void require_fresh_dir(const fs::path& dir) {
  if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir))) {
    throw ConfigError("output directory " + dir.string() + " already exists and is not empty");
  }
}

std::vector<synth::Clip> load_split(const fs::path& root, const std::string& split) {
  const auto index = synth::read_dataset(root);
  std::vector<synth::Clip> clips;
  for (const auto& e : index.split(split)) clips.push_back(synth::load_clip(e));
  if (clips.empty()) throw ConfigError("dataset " + root.string() + " has no '" + split + "' clips");
  return clips;
}

MostNet build_model(const RunConfig& cfg) {
  torch::manual_seed(cfg.train.seed);
  return MostNet(cfg.model);
}

/// Model configured from the checkpoint metadata, with weights loaded.
MostNet model_from_checkpoint(const fs::path& path, const RunConfig& cfg) {
  const auto info = training::read_checkpoint_info(path);
  if (info.fingerprint != cfg.model.fingerprint()) {
    throw training::CheckpointError("config fingerprint mismatch: checkpoint " + info.fingerprint +
                                    ", configured model " + cfg.model.fingerprint());
  }
  MostNet model(info.model);
  training::load_checkpoint(path, model);
  model->eval();
  return model;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_synth(const Context& ctx, const std::string& out) {
  const auto root = ctx.resolve(out);
  require_fresh_dir(root);
  const auto splits = synth::generate_dataset(ctx.config.data);
  const nlohmann::json generator{{"seed", ctx.config.data.seed},
                                 {"scene", ctx.config.data.scene.to_json()},
                                 {"degradation", ctx.config.data.degradation.to_json()}};
  const auto index = synth::write_dataset(splits, root, generator);
  std::printf("%-6s %8s %8s\n", "split", "videos", "frames");
  for (const auto& split : synth::kSplits) {
    int frames = 0;
    for (const auto& e : index.split(split)) frames += e.n_frames;
    std::printf("%-6s %8zu %8d\n", split.c_str(), index.count(split), frames);
  }
  std::printf("dataset written to %s\n", root.string().c_str());
  return kSuccess;
}

int cmd_train(const Context& ctx, const std::string& data, const std::string& out,
              const std::string& resume) {
  const auto out_dir = ctx.resolve(out);
  const auto clips = load_split(ctx.resolve(data), "train");
  std::vector<synth::Clip> validation;
  if (ctx.config.train.validate_every > 0) validation = load_split(ctx.resolve(data), "val");
  if (resume.empty()) require_fresh_dir(out_dir);

  auto model = build_model(ctx.config);
  training::TrainOptions options;
  options.log_path = out_dir / "train_log.jsonl";
  options.checkpoint_path = out_dir / "checkpoint.pt";
  options.dump_path = out_dir / "divergence_dump.json";
  if (!validation.empty()) options.validation = &validation;
  if (!resume.empty()) options.resume_from = ctx.resolve(resume);
  options.on_step = [&](const training::StepRecord& r) {
    if (r.step % ctx.config.train.log_every == 0 || r.step == ctx.config.train.steps) {
      std::printf("step %5d  lr %.3g  loss %.5f  (%.1f s)\n", r.step, r.lr, r.loss, r.wall_seconds);
      std::fflush(stdout);
    }
  };
  fs::create_directories(out_dir);
  write_json(out_dir / "run_config.json", ctx.config.to_json());
  const auto result = training::train(model, clips, ctx.config.train, options);
  std::printf("checkpoint %s (step %d)\n", options.checkpoint_path.string().c_str(), result.final_step);
  return kSuccess;
}

void export_frames(const fs::path& dir, const synth::Clip& clip, const training::ClipPrediction& pred) {
  const auto& r = pred.scales[0]->restored;
  fs::create_directories(dir / clip.name);
  for (int t = 1; t < clip.n_frames(); ++t) {
    const auto row = torch::cat({clip.degraded[t], r[t - 1].to(torch::kFloat), clip.restored[t]}, 2);
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04d.png", t);
    synth::write_png(dir / clip.name / name, row);
  }
}

int cmd_eval(const Context& ctx, const std::string& checkpoint, const std::string& data,
             const std::string& out, bool ground_truth, bool with_frames) {
  if (!ground_truth && checkpoint.empty()) throw ConfigError("eval needs --checkpoint (or --ground-truth)");
  const auto out_dir = ctx.resolve(out);
  const auto clips = load_split(ctx.resolve(data), ctx.config.eval.split);
  std::optional<MostNet> model;
  if (!ground_truth) model = model_from_checkpoint(ctx.resolve(checkpoint), ctx.config);

  std::vector<training::ClipPrediction> predictions;
  for (const auto& clip : clips) {
    predictions.push_back(ground_truth ? training::ground_truth_prediction(clip)
                                       : training::predict_clip(*model, clip));
  }
  const auto result = training::evaluate_predictions(clips, predictions);
  fs::create_directories(out_dir);
  write_json(out_dir / "report.json", result.report.to_json());
  write_text(out_dir / "per_scale.csv", result.per_scale_csv());
  if (with_frames) {
    for (std::size_t i = 0; i < clips.size(); ++i) export_frames(out_dir / "frames", clips[i], predictions[i]);
  }
  std::printf("%s\n", result.report.to_json().dump().c_str());
  std::printf("%s", result.per_scale_csv().c_str());
  return kSuccess;
}

int cmd_ablate(const Context& ctx, const std::string& data, const std::string& out) {
  const auto out_dir = ctx.resolve(out);
  require_fresh_dir(out_dir);
  const auto clips = load_split(ctx.resolve(data), "train");
  const auto eval_clips = load_split(ctx.resolve(data), ctx.config.eval.split);

  nlohmann::json rows = nlohmann::json::array();
  std::ostringstream csv;
  csv << "variant,params,steps,final_loss,psnr_db,ssim,mace_px,iou,ew\n";
  std::printf("%-5s %10s %6s %10s %8s %7s %8s %6s %8s\n", "var", "params", "steps", "loss", "psnr", "ssim",
              "mace", "iou", "ew");
  for (const auto ablation : kAllAblations) {
    auto cfg = ctx.config;
    cfg.model.ablation = ablation;
    auto model = build_model(cfg);
    const auto params = count_parameters(*model);
    const auto name = to_string(ablation);
    training::TrainOptions options;
    options.log_path = out_dir / name / "train_log.jsonl";
    options.checkpoint_path = out_dir / name / "checkpoint.pt";
    options.dump_path = out_dir / name / "divergence_dump.json";
    const auto trained = training::train(model, clips, cfg.train, options);
    const auto eval = training::evaluate(model, eval_clips);
    const auto& r = eval.report;
    const double final_loss = trained.history.back().loss;
    rows.push_back({{"variant", name},
                    {"params", params},
                    {"steps", trained.final_step},
                    {"final_loss", final_loss},
                    {"report", r.to_json()}});
    csv << name << ',' << params << ',' << trained.final_step << ',' << final_loss << ',' << r.psnr_db << ','
        << r.ssim << ',' << r.mace_px << ',' << (r.iou ? std::to_string(*r.iou) : "") << ',' << r.ew << '\n';
    std::printf("%-5s %10lld %6d %10.5f %8.3f %7.4f %8.3f %6s %8.5f\n", name.c_str(),
                static_cast<long long>(params), trained.final_step, final_loss, r.psnr_db, r.ssim, r.mace_px,
                r.iou ? fixed(*r.iou, 3).c_str() : "-", r.ew);
    std::fflush(stdout);
  }
  write_json(out_dir / "ablation.json", rows);
  write_text(out_dir / "ablation.csv", csv.str());
  return kSuccess;
}

std::vector<fs::path> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("input directory " + dir.string() + " does not exist");
  std::vector<fs::path> frames;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") frames.push_back(e.path());
  }
  std::sort(frames.begin(), frames.end());
  if (frames.size() < 2) throw ConfigError("infer needs at least two PNG frames in " + dir.string());
  return frames;
}

int cmd_infer(const Context& ctx, const std::string& checkpoint, const std::string& input,
              const std::string& out) {
  if (checkpoint.empty()) throw ConfigError("infer needs --checkpoint");
  const auto out_dir = ctx.resolve(out);
  const auto paths = list_frames(ctx.resolve(input));
  std::vector<torch::Tensor> frames;
  for (const auto& p : paths) frames.push_back(synth::read_png(p, 3));
  const auto size = frames.front().sizes();
  for (const auto& f : frames) {
    if (f.sizes() != size) throw ConfigError("input frames differ in size");
  }
  if (size[1] % 4 != 0 || size[2] % 4 != 0) throw ConfigError("frame size must be divisible by 4");
  auto model = model_from_checkpoint(ctx.resolve(checkpoint), ctx.config);

  const auto video = process_video(model, torch::stack(frames));
  fs::create_directories(out_dir / "R");
  fs::create_directories(out_dir / "M");
  std::vector<geometry::Homography> hs;
  for (std::size_t k = 0; k < video.steps.size(); ++k) {
    const auto& s1 = video.steps[k].at(1);
    const auto name = paths[k + 1].filename();
    synth::write_png(out_dir / "R" / name, s1.restored[0]);
    if (s1.mask.defined()) synth::write_png(out_dir / "M" / name, s1.mask[0]);
    hs.push_back(geometry::from_tensor(s1.homography[0].to(torch::kDouble)));
  }
  {
    std::ofstream h(out_dir / "H.txt");
    geometry::write_homographies(h, hs);
  }
  const nlohmann::json summary{{"n_inputs", paths.size()},
                               {"n_outputs", video.steps.size()},
                               {"fps", video.fps},
                               {"checkpoint", ctx.resolve(checkpoint).string()}};
  write_json(out_dir / "summary.json", summary);
  std::printf("%zu frames -> %zu outputs, %.2f fps\n", paths.size(), video.steps.size(), video.fps);
  return kSuccess;
}

int cmd_params(const Context& ctx, const std::string& ablation, bool as_json) {
  auto cfg = ctx.config.model;
  if (!ablation.empty()) cfg.ablation = ablation_from_string(ablation);
  MostNet model(cfg);
  const auto total = count_parameters(*model);
  const auto breakdown = model->parameter_breakdown();
  if (as_json) {
    std::printf("%s\n", nlohmann::json{{"ablation", to_string(cfg.ablation)},
                                       {"total", total},
                                       {"modules", breakdown}}
                            .dump(2)
                            .c_str());
    return kSuccess;
  }
  std::printf("variant %s\n", to_string(cfg.ablation).c_str());
  for (const auto& [name, count] : breakdown) std::printf("  %-16s %12lld\n", name.c_str(), static_cast<long long>(count));
  std::printf("  %-16s %12lld  (%.3f M)\n", "total", static_cast<long long>(total), total / 1e6);
  return kSuccess;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Multi-output, multi-scale, multi-task video enhancement"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--profile", g.profile, "Built-in defaults: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", g.seed, "Master seed (dataset and training)");
  app.add_option("--device", g.device, "Compute device");
  app.add_option("--workspace", g.workspace, "Root for relative paths (default: $MOSTNET_WORKSPACE or cwd)");

  std::string out, data, checkpoint, resume, input, ablation;
  bool ground_truth = false, with_frames = false, as_json = false;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--out", out, "Dataset directory")->required();

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--data", data, "Dataset directory")->required();
  train->add_option("--out", out, "Run directory")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file");
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--out", out, "Report directory")->required();
  eval->add_flag("--ground-truth", ground_truth, "Score the ground truth itself");
  eval->add_flag("--frames", with_frames, "Write side-by-side frames (input | output | target)");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate every ablation variant");
  ablate->add_option("--data", data, "Dataset directory")->required();
  ablate->add_option("--out", out, "Report directory")->required();

  auto* infer = app.add_subcommand("infer", "Enhance a directory of frames");
  infer->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  infer->add_option("--input", input, "Directory of PNG frames")->required();
  infer->add_option("--out", out, "Output directory")->required();

  auto* params = app.add_subcommand("params", "Count learnable parameters");
  params->add_option("--ablation", ablation, "FULL, NS, NE, NW or NMO");
  params->add_flag("--json", as_json, "Print JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kSuccess : kValidationError;
  }

  try {
    const auto ctx = make_context(g);
    if (*synth) return cmd_synth(ctx, out);
    if (*train) return cmd_train(ctx, data, out, resume);
    if (*eval) return cmd_eval(ctx, checkpoint, data, out, ground_truth, with_frames);
    if (*ablate) return cmd_ablate(ctx, data, out);
    if (*infer) return cmd_infer(ctx, checkpoint, input, out);
    if (*params) return cmd_params(ctx, ablation, as_json);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidationError;
  } catch (const synth::DatasetError& e) {
    std::fprintf(stderr, "dataset error: %s\n", e.what());
    return kValidationError;
  } catch (const synth::SceneError& e) {
    std::fprintf(stderr, "scene error: %s\n", e.what());
    return kValidationError;
  } catch (const training::CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return kValidationError;
  } catch (const training::TrainingDiverged& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return kRuntimeFailure;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidationError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failure: %s\n", e.what());
    return kRuntimeFailure;
  }
  return kValidationError;
}

}  // namespace mostnet::cli
