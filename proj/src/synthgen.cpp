#include "mcgaze/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <random>

#include "mcgaze/dataio.hpp"
#include "mcgaze/image_io.hpp"

namespace mcgaze {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
  if (frames < 1) throw ConfigError("synth.frames must be >= 1");
  if (image_size < 32) throw ConfigError("synth.image_size must be >= 32");
  if (!(walk_smoothness > 0.0 && walk_smoothness < 1.0))
    throw ConfigError("synth.walk_smoothness must lie in (0,1)");
  if (!(yaw_range >= 0.0) || !(pitch_range >= 0.0)) throw ConfigError("synth angle ranges must be >= 0");
  if (!(pitch_range < std::numbers::pi / 2)) throw ConfigError("synth.pitch_range must be below pi/2");
  if (!(occlusion_yaw >= 0.0)) throw ConfigError("synth.occlusion_yaw must be >= 0");
  if (!(head_follow >= 0.0 && head_follow <= 1.0)) throw ConfigError("synth.head_follow must lie in [0,1]");
}

void to_json(json& j, const SynthConfig& v) {
  j = json{{"seed", v.seed},
           {"frames", v.frames},
           {"image_size", v.image_size},
           {"yaw_range", v.yaw_range},
           {"pitch_range", v.pitch_range},
           {"walk_smoothness", v.walk_smoothness},
           {"occlusion_yaw", v.occlusion_yaw},
           {"head_follow", v.head_follow}};
}

void from_json(const json& j, SynthConfig& v) {
  const std::string s = "synth";
  check_keys(j,
             {"seed", "frames", "image_size", "yaw_range", "pitch_range", "walk_smoothness", "occlusion_yaw",
              "head_follow"},
             s);
  read_key(j, "seed", v.seed, s);
  read_key(j, "frames", v.frames, s);
  read_key(j, "image_size", v.image_size, s);
  read_key(j, "yaw_range", v.yaw_range, s);
  read_key(j, "pitch_range", v.pitch_range, s);
  read_key(j, "walk_smoothness", v.walk_smoothness, s);
  read_key(j, "occlusion_yaw", v.occlusion_yaw, s);
  read_key(j, "head_follow", v.head_follow, s);
}

namespace {

// Uniform doubles from the top 53 bits; avoids the implementation-defined
// std::uniform_real_distribution so clips match across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::mt19937_64 gen_;
};

using Rgb = std::array<float, 3>;

struct Appearance {
  Rgb background, hair, skin, sclera, pupil, mouth;
  double head_cx, head_cy, head_r;  // pixels
};

Appearance draw_appearance(Rng& rng, int size) {
  Appearance a;
  const float bg = static_cast<float>(rng.uniform(0.55, 0.85));
  a.background = {bg, static_cast<float>(bg * rng.uniform(0.9, 1.0)), static_cast<float>(bg * rng.uniform(0.8, 1.0))};
  const float hair = static_cast<float>(rng.uniform(0.08, 0.3));
  a.hair = {hair + 0.05f, hair, hair * 0.8f};
  const float skin = static_cast<float>(rng.uniform(0.55, 0.9));
  a.skin = {skin, skin * 0.78f, skin * 0.62f};
  a.sclera = {0.97f, 0.97f, 0.95f};
  a.pupil = {0.05f, 0.05f, 0.08f};
  a.mouth = {0.55f, 0.15f, 0.15f};
  const double s = size;
  a.head_r = 0.32 * s * rng.uniform(0.9, 1.05);
  a.head_cx = s * rng.uniform(0.44, 0.56);
  a.head_cy = s * rng.uniform(0.44, 0.56);
  return a;
}

// Coverage of a pixel whose center lies at signed distance sd from an edge.
double coverage(double sd) { return std::clamp(0.5 - sd, 0.0, 1.0); }

double disc_sd(double x, double y, double cx, double cy, double r) { return std::hypot(x - cx, y - cy) - r; }

double ellipse_sd(double x, double y, double cx, double cy, double a, double b) {
  const double k = std::hypot((x - cx) / a, (y - cy) / b);
  return (k - 1.0) * std::min(a, b);
}

void blend(Image& img, int y, int x, const Rgb& c, double alpha) {
  if (alpha <= 0.0) return;
  for (int ch = 0; ch < 3; ++ch) {
    float& v = img.at(y, x, ch);
    v = static_cast<float>(v * (1.0 - alpha) + c[ch] * alpha);
  }
}

Box pixel_box(double x1, double y1, double x2, double y2, double size) {
  return Box{(x1 + x2) / (2 * size), (y1 + y2) / (2 * size), (x2 - x1) / size, (y2 - y1) / size};
}

std::vector<std::pair<double, double>> gaze_walk(const SynthConfig& cfg, Rng& rng) {
  const double a = cfg.walk_smoothness;
  std::vector<std::pair<double, double>> out;
  double yaw = rng.uniform(-cfg.yaw_range, cfg.yaw_range);
  double pitch = rng.uniform(-cfg.pitch_range, cfg.pitch_range);
  out.emplace_back(yaw, pitch);
  for (int t = 1; t < cfg.frames; ++t) {
    yaw = a * yaw + (1 - a) * rng.uniform(-cfg.yaw_range, cfg.yaw_range);
    pitch = a * pitch + (1 - a) * rng.uniform(-cfg.pitch_range, cfg.pitch_range);
    out.emplace_back(yaw, pitch);
  }
  return out;
}

SynthFrameGeometry layout(const SynthConfig& cfg, const Appearance& app, double yaw, double pitch) {
  SynthFrameGeometry g;
  const double S = cfg.image_size;
  g.yaw = yaw;
  g.pitch = pitch;
  g.gaze = gaze_from_angles(yaw, pitch);
  g.face_visible = std::fabs(yaw) <= cfg.occlusion_yaw;
  g.head_cx = app.head_cx;
  g.head_cy = app.head_cy;
  g.head_r = app.head_r;
  const double R = app.head_r;
  const double head_yaw = cfg.head_follow * yaw;
  const double head_pitch = cfg.head_follow * pitch;
  g.face_a = 0.62 * R;
  g.face_b = 0.78 * R;
  g.face_cx = app.head_cx + 0.3 * R * std::sin(head_yaw);
  g.face_cy = app.head_cy + 0.2 * R * std::sin(head_pitch);
  g.eye_r = 0.3 * g.face_a;
  g.pupil_r = 0.5 * g.eye_r;
  g.pupil_travel = 0.45 * g.eye_r;
  g.eye_cx[0] = g.face_cx - 0.42 * g.face_a;
  g.eye_cx[1] = g.face_cx + 0.42 * g.face_a;
  g.eye_cy = g.face_cy - 0.2 * g.face_b;
  g.head_box = pixel_box(app.head_cx - R, app.head_cy - R, app.head_cx + R, app.head_cy + R, S);
  g.face_box = pixel_box(g.face_cx - g.face_a, g.face_cy - g.face_b, g.face_cx + g.face_a, g.face_cy + g.face_b, S);
  g.eye_box = pixel_box(g.eye_cx[0] - g.eye_r, g.eye_cy - g.eye_r, g.eye_cx[1] + g.eye_r, g.eye_cy + g.eye_r, S);
  return g;
}

Image render(const SynthConfig& cfg, const Appearance& app, const SynthFrameGeometry& g) {
  const int S = cfg.image_size;
  Image img = make_image(S, S);
  const double px = g.pupil_travel * g.gaze.x;
  const double py = g.pupil_travel * g.gaze.y;
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const double X = x + 0.5;
      const double Y = y + 0.5;
      // faint vertical shading keeps the background from being perfectly flat
      const float shade = static_cast<float>(1.0 - 0.08 * Y / S);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = app.background[c] * shade;
      blend(img, y, x, app.hair, coverage(disc_sd(X, Y, g.head_cx, g.head_cy, g.head_r)));
      if (!g.face_visible) continue;
      blend(img, y, x, app.skin, coverage(ellipse_sd(X, Y, g.face_cx, g.face_cy, g.face_a, g.face_b)));
      blend(img, y, x, app.mouth,
            coverage(ellipse_sd(X, Y, g.face_cx, g.face_cy + 0.5 * g.face_b, 0.3 * g.face_a, 0.09 * g.face_b)));
      for (int e = 0; e < 2; ++e) {
        const double eye = coverage(disc_sd(X, Y, g.eye_cx[e], g.eye_cy, g.eye_r));
        blend(img, y, x, app.sclera, eye);
        const double pupil = coverage(disc_sd(X, Y, g.eye_cx[e] + px, g.eye_cy + py, g.pupil_r));
        blend(img, y, x, app.pupil, std::min(pupil, eye));
      }
    }
  }
  return quantize_8bit(img);
}

}  // namespace

std::vector<SynthFrameGeometry> synth_geometry(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Appearance app = draw_appearance(rng, cfg.image_size);
  std::vector<SynthFrameGeometry> out;
  for (const auto& [yaw, pitch] : gaze_walk(cfg, rng)) out.push_back(layout(cfg, app, yaw, pitch));
  return out;
}

VideoClip generate_clip(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Appearance app = draw_appearance(rng, cfg.image_size);
  ClipAnnotations ann;
  VideoClip clip;
  int t = 0;
  for (const auto& [yaw, pitch] : gaze_walk(cfg, rng)) {
    const SynthFrameGeometry g = layout(cfg, app, yaw, pitch);
    clip.frames.push_back(render(cfg, app, g));
    clip.frame_indices.push_back(t++);
    ann.gaze.push_back(g.gaze);
    ann.boxes[ClueKind::kHead].push_back(g.head_box);
    ann.boxes[ClueKind::kFace].push_back(g.face_box);
    ann.boxes[ClueKind::kEye].push_back(g.eye_box);
    ann.existence[ClueKind::kHead].push_back(true);
    ann.existence[ClueKind::kFace].push_back(g.face_visible);
    ann.existence[ClueKind::kEye].push_back(g.face_visible);
  }
  clip.annotations = std::move(ann);
  return clip;
}

std::uint64_t derive_clip_seed(std::uint64_t seed, std::size_t index) {
  auto mix = [](std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  };
  return mix(mix(seed) ^ static_cast<std::uint64_t>(index));
}

fs::path generate_dataset(const SynthConfig& cfg, int n_clips, const fs::path& out_dir) {
  cfg.validate();
  if (n_clips < 0) throw ConfigError("synth: clip count must be >= 0");
  Manifest m;
  m.base_dir = out_dir;
  m.metadata = json{{"generator", "synthgen"}, {"synth", cfg}, {"clip_count", n_clips}};
  char buf[64];
  for (int i = 0; i < n_clips; ++i) {
    SynthConfig c = cfg;
    c.seed = derive_clip_seed(cfg.seed, static_cast<std::size_t>(i));
    const VideoClip clip = generate_clip(c);
    ClipEntry e;
    std::snprintf(buf, sizeof buf, "clip_%04d", i);
    e.id = buf;
    for (int t = 0; t < clip.length(); ++t) {
      std::snprintf(buf, sizeof buf, "frame_%04d.png", t);
      const std::string rel = "frames/" + e.id + "/" + buf;
      try {
        write_png(out_dir / rel, clip.frames[t]);
      } catch (const std::exception& ex) {
        throw std::runtime_error("synth: cannot write " + (out_dir / rel).string() + ": " + ex.what());
      }
      e.frames.push_back(rel);
    }
    e.gaze = clip.annotations->gaze;
    e.boxes = clip.annotations->boxes;
    e.existence = clip.annotations->existence;
    m.clips.push_back(std::move(e));
  }
  const fs::path path = out_dir / "manifest.json";
  save_manifest(m, path);
  return path;
}

}  // namespace mcgaze
