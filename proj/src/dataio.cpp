#include "mcgaze/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mcgaze/image_io.hpp"

namespace mcgaze {

namespace fs = std::filesystem;

ClipAnnotations ClipEntry::annotations() const { return ClipAnnotations{gaze, boxes, existence}; }

const ClipEntry& Manifest::clip(const std::string& id) const {
  for (const auto& c : clips)
    if (c.id == id) return c;
  throw SchemaError("manifest has no clip with id '" + id + "'");
}

namespace {

[[noreturn]] void schema_fail(const std::string& clip, const std::string& field, const std::string& what) {
  throw SchemaError("manifest clip '" + clip + "': field '" + field + "' " + what);
}

const json& need(const json& obj, const char* key, const std::string& clip) {
  auto it = obj.find(key);
  if (it == obj.end()) schema_fail(clip, key, "is missing");
  return *it;
}

std::vector<double> numbers(const json& row, std::size_t n, const std::string& clip, const std::string& field) {
  if (!row.is_array() || row.size() != n) schema_fail(clip, field, "rows must hold " + std::to_string(n) + " numbers");
  std::vector<double> out;
  for (const auto& v : row) {
    if (!v.is_number()) schema_fail(clip, field, "contains a non-numeric entry");
    out.push_back(v.get<double>());
  }
  return out;
}

ClipEntry parse_clip(const json& c, std::size_t index) {
  if (!c.is_object()) throw SchemaError("manifest clip #" + std::to_string(index) + " is not an object");
  for (const auto& [k, _] : c.items()) {
    if (k != "id" && k != "frames" && k != "gaze" && k != "boxes" && k != "existence")
      throw SchemaError("manifest clip #" + std::to_string(index) + ": unknown key '" + k + "'");
  }
  ClipEntry e;
  const json& id = need(c, "id", "#" + std::to_string(index));
  if (!id.is_string()) schema_fail("#" + std::to_string(index), "id", "must be a string");
  e.id = id.get<std::string>();

  const json& frames = need(c, "frames", e.id);
  if (!frames.is_array() || frames.empty()) schema_fail(e.id, "frames", "must be a non-empty array of paths");
  for (const auto& f : frames) {
    if (!f.is_string()) schema_fail(e.id, "frames", "must contain strings");
    e.frames.push_back(f.get<std::string>());
  }
  const std::size_t T = e.frames.size();

  const json& gaze = need(c, "gaze", e.id);
  if (!gaze.is_array() || gaze.size() != T)
    schema_fail(e.id, "gaze", "length " + std::to_string(gaze.size()) + " != frame count " + std::to_string(T));
  for (const auto& g : gaze) {
    auto v = numbers(g, 3, e.id, "gaze");
    GazeVector gv{v[0], v[1], v[2]};
    if (std::fabs(gv.norm() - 1.0) > 1e-6) schema_fail(e.id, "gaze", "entries must be unit vectors");
    e.gaze.push_back(gv);
  }

  const json& boxes = need(c, "boxes", e.id);
  const json& exist = need(c, "existence", e.id);
  if (!boxes.is_object() || boxes.size() != 3) schema_fail(e.id, "boxes", "must map exactly head, face, eye");
  if (!exist.is_object() || exist.size() != 3) schema_fail(e.id, "existence", "must map exactly head, face, eye");
  for (ClueKind clue : kAllClues) {
    const std::string name(clue_name(clue));
    auto bit = boxes.find(name);
    auto eit = exist.find(name);
    if (bit == boxes.end()) schema_fail(e.id, "boxes." + name, "is missing");
    if (eit == exist.end()) schema_fail(e.id, "existence." + name, "is missing");
    if (!bit->is_array() || bit->size() != T) schema_fail(e.id, "boxes." + name, "length != frame count");
    if (!eit->is_array() || eit->size() != T) schema_fail(e.id, "existence." + name, "length != frame count");
    auto& bv = e.boxes[clue];
    auto& ev = e.existence[clue];
    for (std::size_t t = 0; t < T; ++t) {
      auto v = numbers((*bit)[t], 4, e.id, "boxes." + name);
      bv.push_back(Box{v[0], v[1], v[2], v[3]});
      if (!(*eit)[t].is_boolean()) schema_fail(e.id, "existence." + name, "must contain booleans");
      ev.push_back((*eit)[t].get<bool>());
      if (ev.back() && !(std::isfinite(v[0]) && std::isfinite(v[1]) && v[2] > 0 && v[3] > 0))
        schema_fail(e.id, "boxes." + name, "frame " + std::to_string(t) + " needs positive width and height");
    }
  }
  return e;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

Manifest manifest_from_json(const json& j, const fs::path& base_dir, bool check_files) {
  if (!j.is_object()) throw SchemaError("manifest root must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (k != "version" && k != "clips" && k != "metadata")
      throw SchemaError("manifest: unknown top-level key '" + k + "'");
  }
  Manifest m;
  m.base_dir = base_dir;
  auto v = j.find("version");
  if (v == j.end() || !v->is_string()) throw SchemaError("manifest: key 'version' missing or not a string");
  m.version = v->get<std::string>();
  auto clips = j.find("clips");
  if (clips == j.end() || !clips->is_array()) throw SchemaError("manifest: key 'clips' missing or not an array");
  if (auto md = j.find("metadata"); md != j.end()) {
    if (!md->is_object()) throw SchemaError("manifest: key 'metadata' must be an object");
    m.metadata = *md;
  }
  for (std::size_t i = 0; i < clips->size(); ++i) m.clips.push_back(parse_clip((*clips)[i], i));
  for (std::size_t i = 0; i < m.clips.size(); ++i)
    for (std::size_t k = i + 1; k < m.clips.size(); ++k)
      if (m.clips[i].id == m.clips[k].id) throw SchemaError("manifest: duplicate clip id '" + m.clips[i].id + "'");
  if (check_files) {
    for (const auto& c : m.clips)
      for (const auto& f : c.frames)
        if (!fs::exists(base_dir / f))
          throw MissingFrameError("manifest clip '" + c.id + "': frame file missing: " + (base_dir / f).string());
  }
  return m;
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw SchemaError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

json manifest_to_json(const Manifest& m) {
  json clips = json::array();
  for (const auto& c : m.clips) {
    json g = json::array();
    for (const auto& v : c.gaze) g.push_back({v.x, v.y, v.z});
    json boxes = json::object();
    json exist = json::object();
    for (ClueKind clue : kAllClues) {
      json b = json::array();
      for (const auto& box : c.boxes.at(clue)) b.push_back({box.cx, box.cy, box.w, box.h});
      boxes[std::string(clue_name(clue))] = b;
      json e = json::array();
      for (bool flag : c.existence.at(clue)) e.push_back(flag);
      exist[std::string(clue_name(clue))] = e;
    }
    clips.push_back({{"id", c.id}, {"frames", c.frames}, {"gaze", g}, {"boxes", boxes}, {"existence", exist}});
  }
  return json{{"version", m.version}, {"clips", clips}, {"metadata", m.metadata}};
}

void save_manifest(const Manifest& m, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << manifest_to_json(m).dump(1) << '\n';
}

VideoClip load_clip(const Manifest& m, std::size_t index, int image_size) {
  const ClipEntry& e = m.clips.at(index);
  VideoClip clip;
  for (int t = 0; t < e.length(); ++t) {
    Image img = read_png(m.base_dir / e.frames[t]);
    if (image_size > 0) img = resize_image(img, image_size, image_size);
    clip.frames.push_back(std::move(img));
    clip.frame_indices.push_back(t);
  }
  clip.annotations = e.annotations();
  validate_clip(clip);
  return clip;
}

std::vector<VideoClip> load_all_clips(const Manifest& m, int image_size) {
  std::vector<VideoClip> out;
  out.reserve(m.clips.size());
  for (std::size_t i = 0; i < m.clips.size(); ++i) out.push_back(load_clip(m, i, image_size));
  return out;
}

std::vector<TrainingWindow> enumerate_training_windows(const std::vector<int>& clip_lengths, int clip_len) {
  if (clip_len < 1) throw std::invalid_argument("clip_len must be >= 1");
  std::vector<TrainingWindow> out;
  for (std::size_t c = 0; c < clip_lengths.size(); ++c)
    for (int s = 0; s + clip_len <= clip_lengths[c]; ++s) out.push_back({c, s});
  return out;
}

TrainingClipStream::TrainingClipStream(std::vector<VideoClip> sources, int clip_len, std::uint64_t seed)
    : sources_(std::move(sources)), clip_len_(clip_len), seed_(seed) {
  std::vector<int> lengths;
  for (const auto& s : sources_) lengths.push_back(s.length());
  windows_ = enumerate_training_windows(lengths, clip_len_);
  reshuffle();
}

void TrainingClipStream::reshuffle() {
  order_ = windows_;
  std::uint64_t state = splitmix64(seed_ ^ splitmix64(epoch_ + 1));
  for (std::size_t i = order_.size(); i > 1; --i) {
    state = splitmix64(state);
    std::swap(order_[i - 1], order_[state % i]);
  }
  cursor_ = 0;
}

VideoClip TrainingClipStream::next() {
  if (windows_.empty()) throw std::logic_error("training stream has no windows");
  if (cursor_ == order_.size()) {
    ++epoch_;
    reshuffle();
  }
  last_ = order_[cursor_++];
  return slice_clip(sources_[last_.clip], last_.start, last_.start + clip_len_);
}

void TrainingClipStream::seek(std::size_t pos) {
  if (windows_.empty()) return;
  epoch_ = pos / windows_.size();
  reshuffle();
  cursor_ = pos % windows_.size();
}

TrainingClipStream sample_training_clips(const Manifest& m, int clip_len, std::uint64_t seed, int image_size) {
  if (clip_len < 1) throw std::invalid_argument("clip_len must be >= 1");
  return TrainingClipStream(load_all_clips(m, image_size), clip_len, seed);
}

std::vector<std::pair<int, int>> enumerate_inference_windows(int n_frames, int clip_len, int stride) {
  if (n_frames < 1 || clip_len < 1 || stride < 1)
    throw std::invalid_argument("enumerate_inference_windows: arguments must be >= 1");
  if (n_frames <= clip_len) return {{0, n_frames}};
  // a stride longer than the window would leave uncovered frames
  stride = std::min(stride, clip_len);
  std::vector<std::pair<int, int>> out;
  int start = 0;
  for (; start + clip_len < n_frames; start += stride) out.emplace_back(start, start + clip_len);
  const int last = n_frames - clip_len;
  if (out.empty() || out.back().first != last) out.emplace_back(last, n_frames);
  return out;
}

}  // namespace mcgaze
