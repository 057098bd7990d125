#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "mcgaze/eval.hpp"
#include "support/testing.hpp"

namespace mcgaze {
namespace {

namespace fs = std::filesystem;
using testing::uniform;

constexpr double kDeg = std::numbers::pi / 180.0;

// Gaze in the x-z plane, `deg` away from straight into the camera.
GazeVector planar(double deg) { return {std::sin(deg * kDeg), 0.0, -std::cos(deg * kDeg)}; }

ClipEntry entry(const std::string& id, const std::vector<GazeVector>& gaze, const std::vector<bool>& face) {
  ClipEntry c;
  c.id = id;
  for (std::size_t t = 0; t < gaze.size(); ++t) c.frames.push_back(id + "/" + std::to_string(t) + ".png");
  c.gaze = gaze;
  for (ClueKind k : kAllClues) {
    c.boxes[k] = std::vector<Box>(gaze.size(), Box{0.5, 0.5, 0.5, 0.5});
    c.existence[k] = k == ClueKind::kFace ? face : std::vector<bool>(gaze.size(), true);
  }
  return c;
}

TEST(AngularError, Examples) {
  const GazeVector g{0.2, -0.3, -0.9};
  EXPECT_NEAR(angular_error_deg(g, g), 0.0, 0.03);  // bounded by the cosine clamp
  EXPECT_NEAR(angular_error_deg(g, {-0.2, 0.3, 0.9}), 180.0, 0.03);
  EXPECT_NEAR(angular_error_deg({1, 0, 0}, {0, 1, 0}), 90.0, 1e-12);
  EXPECT_NEAR(angular_error_deg(planar(0), planar(37)), 37.0, 1e-9);
  EXPECT_THROW(angular_error_deg({0, 0, 0}, g), DegenerateGazeError);
  EXPECT_THROW(angular_error_deg(g, {0, 0, 1e-13}), DegenerateGazeError);
}

TEST(AngularErrorProperty, SymmetricScaleInvariantAndBounded) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const GazeVector a{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
    const GazeVector b{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
    if (a.norm() < 1e-3 || b.norm() < 1e-3) continue;
    const double k = std::pow(10.0, uniform(rng, -3, 3));
    const double e = angular_error_deg(a, b);
    EXPECT_NEAR(angular_error_deg(b, a), e, 1e-10);
    EXPECT_NEAR(angular_error_deg({k * a.x, k * a.y, k * a.z}, b), e, 1e-10);
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, 180.0);
  }
}

TEST(Splits, Definitions) {
  EXPECT_TRUE(in_front_180({0, 0, -1}));
  EXPECT_FALSE(in_front_180({0, 0, 1}));
  EXPECT_FALSE(in_front_180({1, 0, 0}));
  EXPECT_TRUE(in_front_facing(planar(19.9), 20));
  EXPECT_FALSE(in_front_facing(planar(20.1), 20));
  EXPECT_TRUE(in_front_facing(planar(25), 30));
  EXPECT_FALSE(in_front_facing(planar(180), 20));
}

TEST(Evaluate, PerfectPredictionsGiveZero) {
  Manifest m;
  m.clips.push_back(entry("a", {planar(0), planar(50), planar(120)}, {true, false, true}));
  std::vector<PredictionRecord> preds;
  for (int t = 0; t < 3; ++t) preds.push_back({"a", t, m.clips[0].gaze[t]});
  const EvalReport r = evaluate(preds, m, SplitConfig{});
  for (const SplitStats* s : {&r.all, &r.detectable_faces, &r.front_180, &r.front_facing})
    EXPECT_NEAR(s->mean_deg, 0.0, 0.03);
  EXPECT_EQ(r.all.count, 3);
  EXPECT_EQ(r.detectable_faces.count, 2);
  EXPECT_EQ(r.front_180.count, 2);
  EXPECT_EQ(r.front_facing.count, 1);
}

TEST(Evaluate, SingleFrameNinetyDegreesInEverySplit) {
  Manifest m;
  m.clips.push_back(entry("a", {{0, 0, -1}}, {true}));
  const EvalReport r = evaluate({{"a", 0, {1, 0, 0}}}, m, SplitConfig{});
  for (const SplitStats* s : {&r.all, &r.detectable_faces, &r.front_180, &r.front_facing}) {
    EXPECT_NEAR(s->mean_deg, 90.0, 1e-12);
    EXPECT_EQ(s->count, 1);
  }
}

TEST(Evaluate, TenFrameHandTable) {
  // angle off-axis, prediction error, face visible
  struct Row {
    double axis, err;
    bool face;
  };
  const std::vector<Row> rows{{0, 10, true},   {10, 20, true}, {30, 5, false}, {60, 30, true}, {100, 40, true},
                              {150, 10, false}, {-15, 6, true}, {-45, 8, false}, {180, 90, true}, {19, 2, true}};
  std::vector<GazeVector> gt;
  std::vector<bool> face;
  std::vector<PredictionRecord> preds;
  for (std::size_t t = 0; t < rows.size(); ++t) {
    gt.push_back(planar(rows[t].axis));
    face.push_back(rows[t].face);
    preds.push_back({"c", static_cast<int>(t), planar(rows[t].axis + rows[t].err)});
  }
  Manifest m;
  m.clips.push_back(entry("c", gt, face));
  const EvalReport r = evaluate(preds, m, SplitConfig{});
  // errors: 10 20 5 30 40 10 6 8 90 2
  EXPECT_NEAR(r.all.mean_deg, 221.0 / 10, 1e-9);
  EXPECT_EQ(r.all.count, 10);
  // faces: frames 0 1 3 4 6 8 9
  EXPECT_NEAR(r.detectable_faces.mean_deg, 198.0 / 7, 1e-9);
  EXPECT_EQ(r.detectable_faces.count, 7);
  // |axis| < 90: frames 0 1 2 3 6 7 9
  EXPECT_NEAR(r.front_180.mean_deg, 81.0 / 7, 1e-9);
  EXPECT_EQ(r.front_180.count, 7);
  // |axis| < 20: frames 0 1 6 9
  EXPECT_NEAR(r.front_facing.mean_deg, 38.0 / 4, 1e-9);
  EXPECT_EQ(r.front_facing.count, 4);
  ASSERT_EQ(r.frames.size(), 10u);
  EXPECT_NEAR(r.frames[8].error_deg, 90.0, 1e-9);

  SplitConfig wide;
  wide.front_facing_deg = 35;
  EXPECT_EQ(evaluate(preds, m, wide).front_facing.count, 5);
}

TEST(EvaluateProperty, SplitsDependOnlyOnGroundTruth) {
  std::mt19937_64 rng(2);
  Manifest m;
  std::vector<GazeVector> gt;
  std::vector<bool> face;
  for (int t = 0; t < 50; ++t) {
    gt.push_back(normalize_gaze({uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)}));
    face.push_back(rng() % 2);
  }
  m.clips.push_back(entry("p", gt, face));
  auto random_preds = [&] {
    std::vector<PredictionRecord> p;
    for (int t = 0; t < 50; ++t) p.push_back({"p", t, {uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, 0.1, 1)}});
    return p;
  };
  const EvalReport a = evaluate(random_preds(), m, SplitConfig{});
  for (int trial = 0; trial < 5; ++trial) {
    const EvalReport b = evaluate(random_preds(), m, SplitConfig{});
    for (int t = 0; t < 50; ++t) {
      EXPECT_EQ(a.frames[t].detectable_face, b.frames[t].detectable_face);
      EXPECT_EQ(a.frames[t].front_180, b.frames[t].front_180);
      EXPECT_EQ(a.frames[t].front_facing, b.frames[t].front_facing);
    }
    EXPECT_EQ(a.front_180.count, b.front_180.count);
    EXPECT_GE(b.all.mean_deg, 0.0);
    EXPECT_LE(b.all.mean_deg, 180.0);
  }
}

TEST(Evaluate, CoverageAndDuplicates) {
  Manifest m;
  m.clips.push_back(entry("a", {planar(0), planar(5)}, {true, true}));
  m.clips.push_back(entry("b", {planar(0)}, {true}));
  try {
    evaluate({{"a", 0, planar(0)}}, m, SplitConfig{});
    FAIL() << "expected CoverageError";
  } catch (const CoverageError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("a:1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("b:0"), std::string::npos) << msg;
    EXPECT_EQ(msg.find("a:0"), std::string::npos) << msg;
  }
  EXPECT_THROW(evaluate({{"a", 0, planar(0)}, {"a", 0, planar(1)}, {"a", 1, planar(0)}, {"b", 0, planar(0)}}, m,
                        SplitConfig{}),
               SchemaError);
  // predictions for clips outside the manifest are ignored
  const EvalReport r =
      evaluate({{"a", 0, planar(0)}, {"a", 1, planar(5)}, {"b", 0, planar(0)}, {"zz", 0, planar(90)}}, m, SplitConfig{});
  EXPECT_EQ(r.all.count, 3);
}

TEST(Evaluate, EmptySplitIsNaN) {
  Manifest m;
  m.clips.push_back(entry("a", {planar(120)}, {false}));
  const EvalReport r = evaluate({{"a", 0, planar(100)}}, m, SplitConfig{});
  EXPECT_EQ(r.front_180.count, 0);
  EXPECT_TRUE(std::isnan(r.front_180.mean_deg));
  EXPECT_TRUE(std::isnan(r.detectable_faces.mean_deg));
  EXPECT_NEAR(r.all.mean_deg, 20.0, 1e-9);
  EXPECT_FALSE(r.table().empty());
  EXPECT_EQ(r.to_json()["all"]["count"], 1);
}

TEST(Predictions, FileRoundTripAndSchema) {
  const fs::path dir = fs::temp_directory_path() / "mcgaze_eval_preds";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::vector<PredictionRecord> recs{{"a", 0, {0.1, 0.2, -0.9}}, {"a", 1, {0.125, -0.5, 0.25}}};
  save_predictions(recs, dir / "p.json");
  EXPECT_EQ(load_predictions(dir / "p.json"), recs);
  Manifest m;
  m.clips.push_back(entry("a", {{0.1, 0.2, -0.9}, {0.125, -0.5, 0.25}}, {true, true}));
  EXPECT_NEAR(evaluate(dir / "p.json", m, SplitConfig{}).all.mean_deg, 0.0, 0.03);

  std::ofstream(dir / "bad.json") << R"([{"clip_id": "a", "frame_index": 0, "gaze": [1, 2]}])";
  EXPECT_THROW(load_predictions(dir / "bad.json"), SchemaError);
  std::ofstream(dir / "bad2.json") << R"({"clip_id": "a"})";
  EXPECT_THROW(load_predictions(dir / "bad2.json"), SchemaError);
}

}  // namespace
}  // namespace mcgaze
