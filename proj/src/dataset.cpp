#include "mostnet/hash.hpp"
#include "mostnet/json_util.hpp"
#include "mostnet/synthdata.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

namespace mostnet::synth {

namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;
const char* const kLayers[] = {"B", "R", "M"};

std::string frame_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04d.png", t);
  return buf;
}

/// Relative paths of every file a clip directory must contain, in hashing order.
std::vector<std::string> expected_files(int n_frames) {
  std::vector<std::string> out;
  for (const char* layer : kLayers) {
    for (int t = 0; t < n_frames; ++t) out.push_back(std::string(layer) + "/" + frame_name(t));
  }
  out.emplace_back("H.txt");
  return out;
}

std::string clip_checksum(const fs::path& dir, int n_frames) {
  Sha256 sha;
  for (const auto& rel : expected_files(n_frames)) {
    sha.update(rel);
    sha.update(std::string_view("\0", 1));
    sha.update_file(dir / rel);
  }
  return sha.hex_digest();
}

int split_index(const std::string& split) {
  for (std::size_t i = 0; i < kSplits.size(); ++i) {
    if (kSplits[i] == split) return static_cast<int>(i);
  }
  throw DatasetError("unknown split '" + split + "' (expected train, val or test)");
}

}  // namespace

torch::Tensor quantize8(const torch::Tensor& x) {
  return (x.clamp(0.0, 1.0) * 255.0).round() / 255.0;
}

void write_png(const fs::path& path, const torch::Tensor& image) {
  TORCH_CHECK(image.dim() == 3 && (image.size(0) == 3 || image.size(0) == 1),
              "write_png expects [3,H,W] or [1,H,W]");
  const int channels = static_cast<int>(image.size(0));
  auto bytes = (image.detach().to(torch::kDouble).clamp(0.0, 1.0) * 255.0)
                   .round()
                   .to(torch::kUInt8);
  if (channels == 3) bytes = bytes.flip({0});  // RGB -> BGR
  bytes = bytes.permute({1, 2, 0}).contiguous();
  const cv::Mat mat(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)),
                    CV_8UC(channels), bytes.data_ptr<std::uint8_t>());
  if (!cv::imwrite(path.string(), mat)) throw DatasetError("cannot write " + path.string());
}

torch::Tensor read_png(const fs::path& path, int channels) {
  if (!fs::is_regular_file(path)) throw DatasetError("missing file: " + path.string());
  const cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw DatasetError("cannot decode " + path.string());
  if (mat.depth() != CV_8U || mat.channels() != channels) {
    throw DatasetError(path.string() + ": expected an 8-bit image with " +
                       std::to_string(channels) + " channel(s)");
  }
  const cv::Mat dense = mat.isContinuous() ? mat : mat.clone();
  auto t = torch::from_blob(dense.data, {mat.rows, mat.cols, channels}, torch::kUInt8)
               .permute({2, 0, 1})
               .to(torch::kFloat) /
           255.0;
  if (channels == 3) t = t.flip({0});
  return t.contiguous();
}

Clip make_clip(std::string name, const SceneSpec& scene, const DegradationSpec& degradation) {
  const auto seq = render_clean_sequence(scene);
  const auto degraded = degrade(seq.frames, seq.velocity, degradation, scene.seed ^ 0x9e3779b97f4a7c15ULL);
  Clip clip;
  clip.name = std::move(name);
  clip.degraded = quantize8(degraded).to(torch::kFloat);
  clip.restored = quantize8(seq.frames).to(torch::kFloat);
  clip.masks = seq.masks.to(torch::kFloat);
  clip.homographies = seq.homographies;
  return clip;
}

SceneSpec DatasetPlan::scene_for(const std::string& split, int index) const {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split_index(split)), static_cast<std::uint32_t>(index)};
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  SceneSpec s = scene;
  s.seed = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return s;
}

std::map<std::string, std::vector<Clip>> generate_dataset(const DatasetPlan& plan) {
  plan.scene.validate();
  plan.degradation.validate();
  std::map<std::string, std::vector<Clip>> out;
  for (const auto& [split, count] : plan.clips_per_split) {
    split_index(split);
    if (count < 0) throw ConfigError("clips_per_split." + split + " must be >= 0");
    auto& clips = out[split];
    for (int i = 0; i < count; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "clip_%04d", i);
      clips.push_back(make_clip(name, plan.scene_for(split, i), plan.degradation));
    }
  }
  return out;
}

std::vector<DatasetIndex::Entry> DatasetIndex::split(const std::string& name) const {
  std::vector<Entry> out;
  std::copy_if(clips.begin(), clips.end(), std::back_inserter(out),
               [&](const Entry& e) { return e.split == name; });
  return out;
}

std::size_t DatasetIndex::count(const std::string& split_name) const {
  return static_cast<std::size_t>(std::count_if(
      clips.begin(), clips.end(), [&](const Entry& e) { return e.split == split_name; }));
}

bool DatasetIndex::operator==(const DatasetIndex& other) const {
  if (clips.size() != other.clips.size()) return false;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& a = clips[i];
    const auto& b = other.clips[i];
    if (a.split != b.split || a.name != b.name || a.n_frames != b.n_frames || a.sha256 != b.sha256) {
      return false;
    }
  }
  return true;
}

DatasetIndex write_dataset(const std::map<std::string, std::vector<Clip>>& splits,
                           const fs::path& root, const nlohmann::json& generator) {
  for (const auto& [split, clips] : splits) {
    split_index(split);
    std::set<std::string> names;
    for (const auto& c : clips) {
      if (!names.insert(c.name).second) throw DatasetError("duplicate clip name " + split + "/" + c.name);
      if (c.n_frames() < 2) throw DatasetError("clip " + c.name + " needs at least 2 frames");
      if (static_cast<int>(c.homographies.size()) != c.n_frames() - 1) {
        throw DatasetError("clip " + c.name + " must carry n_frames - 1 homographies");
      }
    }
  }

  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw DatasetError("cannot create " + root.string() + ": " + ec.message());

  DatasetIndex index;
  index.root = root;
  nlohmann::json split_json = nlohmann::json::object();
  for (const auto& split : kSplits) {
    const auto it = splits.find(split);
    if (it == splits.end()) continue;
    auto& entries = split_json[split] = nlohmann::json::array();
    for (const auto& clip : it->second) {
      const fs::path dir = root / split / clip.name;
      for (const char* layer : kLayers) {
        fs::create_directories(dir / layer, ec);
        if (ec) throw DatasetError("cannot create " + (dir / layer).string() + ": " + ec.message());
      }
      for (int t = 0; t < clip.n_frames(); ++t) {
        write_png(dir / "B" / frame_name(t), clip.degraded[t]);
        write_png(dir / "R" / frame_name(t), clip.restored[t]);
        write_png(dir / "M" / frame_name(t), clip.masks[t]);
      }
      {
        std::ofstream h(dir / "H.txt");
        geometry::write_homographies(h, clip.homographies);
        if (!h) throw DatasetError("cannot write " + (dir / "H.txt").string());
      }
      DatasetIndex::Entry entry{split, clip.name, clip.n_frames(), clip_checksum(dir, clip.n_frames()), dir};
      entries.push_back({{"name", entry.name}, {"n_frames", entry.n_frames}, {"sha256", entry.sha256}});
      index.clips.push_back(std::move(entry));
    }
  }

  const nlohmann::json doc{{"format", "mostnet-dataset"},
                           {"version", kFormatVersion},
                           {"generator", generator},
                           {"splits", split_json}};
  std::ofstream out(root / "index.json");
  out << doc.dump(2) << '\n';
  if (!out) throw DatasetError("cannot write " + (root / "index.json").string());
  return index;
}

DatasetIndex read_dataset(const fs::path& root) {
  const fs::path index_path = root / "index.json";
  if (!fs::is_regular_file(index_path)) throw DatasetError("missing file: " + index_path.string());
  nlohmann::json doc;
  try {
    std::ifstream in(index_path);
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(index_path.string() + ": " + e.what());
  }
  if (doc.value("format", "") != "mostnet-dataset" || doc.value("version", 0) != kFormatVersion) {
    throw DatasetError(index_path.string() + ": not a version " + std::to_string(kFormatVersion) +
                       " mostnet dataset index");
  }

  DatasetIndex index;
  index.root = root;
  const auto& splits = doc.at("splits");
  for (const auto& [split, _] : splits.items()) split_index(split);
  for (const auto& split : kSplits) {
    const fs::path split_dir = root / split;
    std::set<std::string> listed;
    if (splits.contains(split)) {
      for (const auto& c : splits.at(split)) {
        DatasetIndex::Entry e{split, c.at("name").get<std::string>(), c.at("n_frames").get<int>(),
                              c.at("sha256").get<std::string>(), split_dir / c.at("name").get<std::string>()};
        if (e.n_frames < 2) throw DatasetError("clip " + e.dir.string() + ": n_frames must be >= 2");
        listed.insert(e.name);
        index.clips.push_back(std::move(e));
      }
    }
    if (fs::is_directory(split_dir)) {
      for (const auto& d : fs::directory_iterator(split_dir)) {
        if (!listed.contains(d.path().filename().string())) {
          throw DatasetError("unexpected file: " + d.path().string());
        }
      }
    }
  }

  for (const auto& e : index.clips) {
    if (!fs::is_directory(e.dir)) throw DatasetError("missing clip directory: " + e.dir.string());
    const auto expected = expected_files(e.n_frames);
    const std::set<std::string> wanted(expected.begin(), expected.end());
    for (const auto& rel : expected) {
      if (!fs::is_regular_file(e.dir / rel)) throw DatasetError("missing file: " + (e.dir / rel).string());
    }
    for (const auto& f : fs::recursive_directory_iterator(e.dir)) {
      if (f.is_directory()) continue;
      const auto rel = fs::relative(f.path(), e.dir).generic_string();
      if (!wanted.contains(rel)) throw DatasetError("unexpected file: " + f.path().string());
    }
    std::ifstream h(e.dir / "H.txt");
    std::size_t lines = 0;
    for (std::string line; std::getline(h, line);) lines += line.find_first_not_of(" \t\r") != std::string::npos;
    if (lines != static_cast<std::size_t>(e.n_frames - 1)) {
      throw DatasetError((e.dir / "H.txt").string() + ": expected " + std::to_string(e.n_frames - 1) +
                         " homography lines, found " + std::to_string(lines));
    }
    if (clip_checksum(e.dir, e.n_frames) != e.sha256) {
      throw DatasetError("checksum mismatch for clip " + e.dir.string());
    }
  }
  return index;
}

Clip load_clip(const DatasetIndex::Entry& entry) {
  Clip clip;
  clip.name = entry.name;
  std::vector<torch::Tensor> b, r, m;
  for (int t = 0; t < entry.n_frames; ++t) {
    b.push_back(read_png(entry.dir / "B" / frame_name(t), 3));
    r.push_back(read_png(entry.dir / "R" / frame_name(t), 3));
    m.push_back(read_png(entry.dir / "M" / frame_name(t), 1));
  }
  clip.degraded = torch::stack(b);
  clip.restored = torch::stack(r);
  clip.masks = torch::stack(m);
  if (clip.degraded.sizes() != clip.restored.sizes()) {
    throw DatasetError("clip " + entry.dir.string() + ": B and R frame sizes differ");
  }
  std::ifstream h(entry.dir / "H.txt");
  try {
    clip.homographies = geometry::read_homographies(h);
  } catch (const std::exception& e) {
    throw DatasetError((entry.dir / "H.txt").string() + ": " + e.what());
  }
  if (static_cast<int>(clip.homographies.size()) != entry.n_frames - 1) {
    throw DatasetError((entry.dir / "H.txt").string() + ": wrong number of homographies");
  }
  return clip;
}

}  // namespace mostnet::synth
