#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "mcgaze/dataio.hpp"
#include "mcgaze/image_io.hpp"
#include "mcgaze/synthgen.hpp"

namespace mcgaze {
namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mcgaze_test_dataio_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json one_frame_clip(const std::string& id, const std::string& frame) {
  return json{{"id", id},
              {"frames", {frame}},
              {"gaze", {{0.0, 0.0, -1.0}}},
              {"boxes", {{"head", {{0.5, 0.5, 0.8, 0.8}}}, {"face", {{0.5, 0.5, 0.4, 0.5}}}, {"eye", {{0.5, 0.4, 0.3, 0.1}}}}},
              {"existence", {{"head", {true}}, {"face", {true}}, {"eye", {false}}}}};
}

json minimal_manifest() {
  return json{{"version", "1.0"}, {"metadata", json::object()}, {"clips", {one_frame_clip("a", "f.png")}}};
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  out << j.dump();
}

TEST(LoadManifest, MinimalOneFrameClip) {
  const fs::path dir = fresh_dir("minimal");
  write_png(dir / "f.png", make_image(4, 6, 0.5f));
  write_json(dir / "m.json", minimal_manifest());
  const Manifest m = load_manifest(dir / "m.json");
  ASSERT_EQ(m.clips.size(), 1u);
  EXPECT_EQ(m.clips[0].id, "a");
  EXPECT_EQ(m.clips[0].length(), 1);
  EXPECT_FALSE(m.clips[0].existence.at(ClueKind::kEye)[0]);
  const VideoClip c = load_clip(m, 0);
  EXPECT_EQ(c.frames[0].height, 4);
  EXPECT_EQ(c.frames[0].width, 6);
  EXPECT_EQ(load_clip(m, 0, 8).frames[0].width, 8);
  fs::remove_all(dir);
}

std::string schema_message(const json& j) {
  try {
    manifest_from_json(j, ".", false);
  } catch (const SchemaError& e) {
    return e.what();
  }
  return "";
}

TEST(LoadManifest, GazeLengthMismatchNamesTheClip) {
  json j = minimal_manifest();
  j["clips"][0]["id"] = "clip_bad";
  j["clips"][0]["gaze"].push_back({0.0, 0.0, -1.0});
  const std::string msg = schema_message(j);
  EXPECT_NE(msg.find("clip_bad"), std::string::npos) << msg;
  EXPECT_NE(msg.find("gaze"), std::string::npos) << msg;
}

TEST(LoadManifest, SchemaViolations) {
  auto expect_field = [](json j, const std::string& needle) {
    const std::string msg = schema_message(j);
    EXPECT_NE(msg.find(needle), std::string::npos) << "wanted '" << needle << "' in: " << msg;
  };
  json j = minimal_manifest();
  j["extra"] = 1;
  expect_field(j, "extra");

  j = minimal_manifest();
  j["clips"][0]["gaze"][0] = {0.0, 0.0, 2.0};
  expect_field(j, "gaze");

  j = minimal_manifest();
  j["clips"][0]["existence"]["face"][0] = 1;
  expect_field(j, "existence");

  j = minimal_manifest();
  j["clips"][0]["boxes"].erase("eye");
  expect_field(j, "boxes");

  j = minimal_manifest();
  j["clips"][0]["boxes"]["head"][0] = {0.5, 0.5, 0.0, 0.2};
  expect_field(j, "boxes");

  j = minimal_manifest();
  j["clips"].push_back(one_frame_clip("a", "g.png"));
  expect_field(j, "duplicate");

  j = minimal_manifest();
  j.erase("version");
  expect_field(j, "version");
}

TEST(LoadManifest, MissingFrameFile) {
  const fs::path dir = fresh_dir("missing");
  write_json(dir / "m.json", minimal_manifest());
  EXPECT_THROW(load_manifest(dir / "m.json"), MissingFrameError);
  fs::remove_all(dir);
}

TEST(LoadManifest, InvalidJson) {
  const fs::path dir = fresh_dir("badjson");
  std::ofstream(dir / "m.json") << "{not json";
  EXPECT_THROW(load_manifest(dir / "m.json"), SchemaError);
  EXPECT_THROW(load_manifest(dir / "absent.json"), SchemaError);
  fs::remove_all(dir);
}

TEST(LoadManifest, SynthOutputRoundTrips) {
  const fs::path dir = fresh_dir("roundtrip");
  SynthConfig cfg;
  cfg.seed = 31;
  cfg.frames = 4;
  const Manifest m = load_manifest(generate_dataset(cfg, 3, dir));
  ASSERT_EQ(m.clips.size(), 3u);
  save_manifest(m, dir / "copy.json");
  const Manifest back = load_manifest(dir / "copy.json");
  EXPECT_EQ(back.clips, m.clips);
  EXPECT_EQ(back.metadata, m.metadata);
  EXPECT_EQ(manifest_to_json(back).dump(), manifest_to_json(m).dump());
  fs::remove_all(dir);
}

TEST(TrainingWindows, Counts) {
  EXPECT_EQ(enumerate_training_windows({7}, 7).size(), 1u);
  EXPECT_EQ(enumerate_training_windows({6}, 7).size(), 0u);
  const auto w = enumerate_training_windows({15}, 7);
  ASSERT_EQ(w.size(), 9u);
  for (int s = 0; s < 9; ++s) EXPECT_EQ(w[s].start, s);
  EXPECT_EQ(enumerate_training_windows({7, 6, 8}, 7).size(), 3u);
  EXPECT_THROW(enumerate_training_windows({7}, 0), std::invalid_argument);
}

VideoClip numbered_clip(int T, float tag) {
  VideoClip c;
  ClipAnnotations a;
  for (int t = 0; t < T; ++t) {
    c.frames.push_back(make_image(2, 2, tag + 0.01f * t));
    c.frame_indices.push_back(t);
    a.gaze.push_back({0, 0, -1});
    for (ClueKind k : kAllClues) {
      a.boxes[k].push_back(Box{});
      a.existence[k].push_back(true);
    }
  }
  c.annotations = a;
  return c;
}

std::vector<VideoClip> sources() { return {numbered_clip(9, 0.0f), numbered_clip(3, 0.2f), numbered_clip(7, 0.5f)}; }

TEST(TrainingStream, EpochVisitsEveryWindowOnce) {
  TrainingClipStream s(sources(), 3, 42);
  ASSERT_EQ(s.epoch_size(), 7u + 1u + 5u);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::set<std::pair<std::size_t, int>> seen;
    for (std::size_t i = 0; i < s.epoch_size(); ++i) {
      const VideoClip c = s.next();
      EXPECT_EQ(c.length(), 3);
      const auto& w = s.last_window();
      EXPECT_EQ(c.frames[0], sources()[w.clip].frames[w.start]);
      seen.emplace(w.clip, w.start);
    }
    EXPECT_EQ(seen.size(), s.epoch_size());
  }
}

TEST(TrainingStream, SeededAndReproducible) {
  TrainingClipStream a(sources(), 3, 7), b(sources(), 3, 7), c(sources(), 3, 8);
  bool differs = false;
  for (int i = 0; i < 30; ++i) {
    a.next();
    b.next();
    c.next();
    EXPECT_EQ(a.last_window().clip, b.last_window().clip);
    EXPECT_EQ(a.last_window().start, b.last_window().start);
    differs |= a.last_window().clip != c.last_window().clip || a.last_window().start != c.last_window().start;
  }
  EXPECT_TRUE(differs);
}

TEST(TrainingStream, SeekMatchesSequentialConsumption) {
  TrainingClipStream ref(sources(), 3, 5);
  std::vector<std::pair<std::size_t, int>> seq;
  for (int i = 0; i < 40; ++i) {
    ref.next();
    seq.emplace_back(ref.last_window().clip, ref.last_window().start);
  }
  for (std::size_t pos : {0u, 1u, 12u, 13u, 27u}) {
    TrainingClipStream s(sources(), 3, 5);
    s.seek(pos);
    EXPECT_EQ(s.position(), pos);
    for (std::size_t i = pos; i < seq.size(); ++i) {
      s.next();
      ASSERT_EQ(std::make_pair(s.last_window().clip, s.last_window().start), seq[i]) << "seek " << pos;
    }
  }
}

TEST(TrainingStream, EmptyManifestGivesEmptyStream) {
  TrainingClipStream s({}, 7, 1);
  EXPECT_TRUE(s.empty());
  EXPECT_THROW(s.next(), std::logic_error);
  TrainingClipStream short_only({numbered_clip(4, 0.f)}, 7, 1);
  EXPECT_TRUE(short_only.empty());
  const Manifest m;
  EXPECT_TRUE(sample_training_clips(m, 7, 1).empty());
}

TEST(InferenceWindows, Examples) {
  using W = std::vector<std::pair<int, int>>;
  EXPECT_EQ(enumerate_inference_windows(15, 7, 4), (W{{0, 7}, {4, 11}, {8, 15}}));
  EXPECT_EQ(enumerate_inference_windows(7, 7, 4), (W{{0, 7}}));
  EXPECT_EQ(enumerate_inference_windows(5, 7, 4), (W{{0, 5}}));
  EXPECT_EQ(enumerate_inference_windows(9, 7, 4), (W{{0, 7}, {2, 9}}));
  EXPECT_THROW(enumerate_inference_windows(0, 7, 4), std::invalid_argument);
}

TEST(InferenceWindowsProperty, ExactCoverage) {
  for (int len : {1, 3, 7, 10}) {
    for (int stride : {1, 2, 4, 7, 11}) {
      for (int n = 1; n <= 100; ++n) {
        const auto windows = enumerate_inference_windows(n, len, stride);
        std::vector<int> hits(n, 0);
        for (auto [b, e] : windows) {
          ASSERT_GE(b, 0);
          ASSERT_LE(e, n);
          ASSERT_EQ(e - b, std::min(len, n));
          for (int t = b; t < e; ++t) ++hits[t];
        }
        for (int t = 0; t < n; ++t) ASSERT_GE(hits[t], 1) << "n " << n << " len " << len << " stride " << stride;
        EXPECT_EQ(windows.back().second, n);
        for (std::size_t i = 1; i < windows.size(); ++i) EXPECT_GT(windows[i].first, windows[i - 1].first);
      }
    }
  }
}

}  // namespace
}  // namespace mcgaze
