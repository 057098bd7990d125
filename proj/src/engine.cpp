#include "mcgaze/engine.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

namespace mcgaze {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'M', 'C', 'G', 'Z', 'C', 'K', 'P', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(const std::string& buf, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  return v;
}

struct NamedTensor {
  std::string name;
  const Tensor* tensor;
};

std::vector<NamedTensor> ordered_tensors(const Checkpoint& c) {
  std::vector<NamedTensor> out;
  for (const auto& [k, v] : c.params) out.push_back({"param/" + k, &v});
  for (const auto& [k, v] : c.adam_m) out.push_back({"adam_m/" + k, &v});
  for (const auto& [k, v] : c.adam_v) out.push_back({"adam_v/" + k, &v});
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open checkpoint " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Parses the archive into header JSON plus named tensors.
std::pair<json, std::map<std::string, Tensor>> read_archive(const fs::path& path) {
  const std::string buf = read_file(path);
  const std::string where = "checkpoint " + path.string();
  if (buf.size() < 20 || std::memcmp(buf.data(), kMagic, 8) != 0) throw SchemaError(where + ": bad magic");
  const auto version = static_cast<std::uint32_t>(get_le(buf, 8, 4));
  if (version != kCheckpointVersion)
    throw SchemaError(where + ": unsupported format version " + std::to_string(version));
  const std::uint64_t header_len = get_le(buf, 12, 8);
  if (20 + header_len > buf.size()) throw SchemaError(where + ": truncated header");
  json header;
  try {
    header = json::parse(buf.substr(20, header_len));
  } catch (const json::parse_error& e) {
    throw SchemaError(where + ": header is not valid JSON: " + e.what());
  }
  const std::size_t data_begin = 20 + header_len;
  std::map<std::string, Tensor> tensors;
  if (!header.contains("tensors") || !header["tensors"].is_array()) throw SchemaError(where + ": missing tensor index");
  for (const auto& e : header["tensors"]) {
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::uint64_t>();
    const std::size_t n = numel(shape);
    if (data_begin + offset + 4 * n > buf.size()) throw SchemaError(where + ": tensor '" + name + "' is truncated");
    Tensor t(shape);
    for (std::size_t i = 0; i < n; ++i) {
      const auto bits = static_cast<std::uint32_t>(get_le(buf, data_begin + offset + 4 * i, 4));
      t[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    tensors.emplace(name, std::move(t));
  }
  return {header, std::move(tensors)};
}

void add_report(LossReport& acc, const LossReport& r, double w) {
  acc.anchor += w * r.anchor;
  acc.gaze_fusion += w * r.gaze_fusion;
  for (const auto& [k, v] : r.gaze_per_clue) acc.gaze_per_clue[k] += w * v;
  acc.temporal += w * r.temporal;
  acc.total += w * r.total;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  json index = json::array();
  std::uint64_t offset = 0;
  const auto tensors = ordered_tensors(ckpt);
  for (const auto& nt : tensors) {
    index.push_back({{"name", nt.name}, {"shape", nt.tensor->shape()}, {"offset", offset}});
    offset += 4 * nt.tensor->size();
  }
  const json header{{"format_version", kCheckpointVersion},
                    {"model", ckpt.model},
                    {"train", ckpt.train},
                    {"iteration", ckpt.iteration},
                    {"seed", ckpt.seed},
                    {"stream_position", ckpt.stream_position},
                    {"tensors", index}};
  const std::string text = header.dump();
  std::string out(kMagic, 8);
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& nt : tensors)
    for (double v : nt.tensor->values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  auto [header, tensors] = read_archive(path);
  Checkpoint c;
  try {
    c.model = header.at("model").get<ModelConfig>();
    c.train = header.at("train").get<TrainSchedule>();
    c.iteration = header.at("iteration").get<int>();
    c.seed = header.at("seed").get<std::uint64_t>();
    c.stream_position = header.at("stream_position").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw SchemaError("checkpoint " + path.string() + ": bad header: " + e.what());
  } catch (const ConfigError& e) {
    throw SchemaError("checkpoint " + path.string() + ": bad config: " + e.what());
  }
  for (auto& [name, t] : tensors) {
    const auto slash = name.find('/');
    const std::string kind = name.substr(0, slash);
    const std::string key = name.substr(slash + 1);
    if (kind == "param") {
      c.params.emplace(key, std::move(t));
    } else if (kind == "adam_m") {
      c.adam_m.emplace(key, std::move(t));
    } else if (kind == "adam_v") {
      c.adam_v.emplace(key, std::move(t));
    } else {
      throw SchemaError("checkpoint " + path.string() + ": unknown tensor '" + name + "'");
    }
  }
  return c;
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt) {
  auto model = std::make_unique<Model>(ckpt.model, ckpt.seed);
  ParamStore& ps = model->params();
  for (const auto& name : ps.names()) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end()) throw SchemaError("checkpoint lacks parameter '" + name + "'");
    if (it->second.shape() != ps.get(name).shape())
      throw SchemaError("checkpoint parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                        ", model expects " + shape_str(ps.get(name).shape()));
    ps.assign(name, it->second);
  }
  if (ckpt.params.size() != ps.size()) throw SchemaError("checkpoint holds parameters the model does not define");
  return model;
}

Checkpoint checkpoint_from_model(const Model& model, const TrainSchedule& train, int iteration) {
  Checkpoint c;
  c.model = model.config();
  c.train = train;
  c.iteration = iteration;
  c.seed = train.seed;
  for (const auto& name : model.params().names()) c.params.emplace(name, model.params().get(name).value());
  return c;
}

int load_pretrained(Model& model, const fs::path& path, const std::string& prefix) {
  auto [header, tensors] = read_archive(path);
  int copied = 0;
  ParamStore& ps = model.params();
  for (const auto& [name, t] : tensors) {
    if (name.rfind("param/" + prefix, 0) != 0) continue;
    const std::string key = name.substr(6);
    if (!ps.contains(key)) continue;
    if (ps.get(key).shape() != t.shape())
      throw SchemaError("pretrained tensor '" + key + "' has shape " + shape_str(t.shape()) + ", model expects " +
                        shape_str(ps.get(key).shape()));
    ps.assign(key, t);
    ++copied;
  }
  return copied;
}

double AdamW::learning_rate(ParamGroup group, int iteration) const {
  const double base = group == ParamGroup::kBackbone ? sched_.lr_backbone : sched_.lr_head;
  return base * sched_.lr_scale(iteration);
}

void AdamW::step(ParamStore& params, int iteration) {
  const auto names = params.names();
  double clip_scale = 1.0;
  if (sched_.grad_clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& name : names)
      for (double g : params.get(name).grad().values()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > sched_.grad_clip_norm) clip_scale = sched_.grad_clip_norm / norm;
  }
  const int t = iteration + 1;
  const double bc1 = 1.0 - std::pow(sched_.beta1, t);
  const double bc2 = 1.0 - std::pow(sched_.beta2, t);
  for (const auto& name : names) {
    ad::Var p = params.get(name);
    Tensor& value = p.mutable_value();
    const Tensor& grad = p.grad();
    const bool has_grad = grad.size() == value.size();
    auto [mit, m_new] = m_.try_emplace(name, Tensor(value.shape()));
    auto [vit, v_new] = v_.try_emplace(name, Tensor(value.shape()));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    const double lr = learning_rate(params.group(name), iteration);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = has_grad ? grad[i] * clip_scale : 0.0;
      m[i] = sched_.beta1 * m[i] + (1.0 - sched_.beta1) * g;
      v[i] = sched_.beta2 * v[i] + (1.0 - sched_.beta2) * g * g;
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + sched_.adam_eps);
      value[i] -= lr * (update + sched_.weight_decay * value[i]);
    }
    round_to_float(value);
    round_to_float(m);
    round_to_float(v);
  }
}

LossReport clip_loss(const Model& model, const VideoClip& clip, bool accumulate_grad, double grad_scale) {
  if (!clip.annotations) throw std::invalid_argument("clip_loss: clip has no annotations");
  const ModelConfig& cfg = model.config();
  const ForwardOutput out = model.forward(clip);
  const LossTerms terms = compute_loss_terms(out.stages, *clip.annotations, cfg.loss, cfg.use_localization_head);
  LossReport report;
  const ad::Var total = total_loss(terms, cfg.loss, &report);
  if (!std::isfinite(total.item())) throw TrainingAbort("non-finite loss " + std::to_string(total.item()));
  if (accumulate_grad) ad::backward(grad_scale == 1.0 ? total : ad::mul_scalar(total, grad_scale));
  return report;
}

std::uint64_t data_seed(std::uint64_t seed) { return seed ^ 0x5DEECE66DULL; }

Trainer::Trainer(const ModelConfig& cfg, const TrainSchedule& schedule, std::vector<VideoClip> clips)
    : sched_(schedule),
      model_(std::make_unique<Model>(cfg, schedule.seed)),
      opt_(schedule),
      stream_(std::move(clips), cfg.clip_len, data_seed(schedule.seed)) {
  sched_.validate();
  if (stream_.empty() && sched_.iterations > 0)
    throw ConfigError("training data holds no window of " + std::to_string(cfg.clip_len) + " frames");
}

Trainer::Trainer(const Checkpoint& ckpt, std::vector<VideoClip> clips)
    : sched_(ckpt.train),
      model_(model_from_checkpoint(ckpt)),
      opt_(ckpt.train),
      stream_(std::move(clips), ckpt.model.clip_len, data_seed(ckpt.train.seed)),
      iteration_(ckpt.iteration) {
  sched_.validate();
  opt_.first_moments() = ckpt.adam_m;
  opt_.second_moments() = ckpt.adam_v;
  stream_.seek(ckpt.stream_position);
}

IterationLog Trainer::step() {
  ParamStore& ps = model_->params();
  ps.zero_grad();
  IterationLog log;
  log.iteration = iteration_;
  const double scale = 1.0 / sched_.batch_size;
  for (int b = 0; b < sched_.batch_size; ++b) {
    const VideoClip clip = stream_.next();
    const TrainingWindow w = stream_.last_window();
    try {
      add_report(log.loss, clip_loss(*model_, clip, true, scale), scale);
    } catch (const TrainingAbort& e) {
      throw TrainingAbort(std::string(e.what()) + " at iteration " + std::to_string(iteration_) + ", batch item " +
                          std::to_string(b) + " (source clip " + std::to_string(w.clip) + ", start frame " +
                          std::to_string(w.start) + ")");
    }
  }
  log.lr_backbone = opt_.learning_rate(ParamGroup::kBackbone, iteration_);
  log.lr_head = opt_.learning_rate(ParamGroup::kHead, iteration_);
  opt_.step(ps, iteration_);
  ++iteration_;
  return log;
}

void Trainer::run(const std::function<void(const IterationLog&)>& on_iteration) {
  while (!finished()) {
    const IterationLog log = step();
    if (on_iteration) on_iteration(log);
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c = checkpoint_from_model(*model_, sched_, iteration_);
  c.adam_m = opt_.first_moments();
  c.adam_v = opt_.second_moments();
  c.stream_position = stream_.position();
  return c;
}

std::string loss_csv_header() {
  return "iteration,total,anchor,gaze_fusion,gaze_head,gaze_face,gaze_eye,temporal,lr_backbone,lr_head";
}

std::string loss_csv_row(const IterationLog& log) {
  auto clue = [&](ClueKind k) {
    auto it = log.loss.gaze_per_clue.find(k);
    return it == log.loss.gaze_per_clue.end() ? 0.0 : it->second;
  };
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", log.iteration, log.loss.total,
                log.loss.anchor, log.loss.gaze_fusion, clue(ClueKind::kHead), clue(ClueKind::kFace),
                clue(ClueKind::kEye), log.loss.temporal, log.lr_backbone, log.lr_head);
  return buf;
}

fs::path train(const Manifest& manifest, const ModelConfig& cfg, const TrainSchedule& schedule,
               const TrainOptions& options) {
  cfg.validate();
  schedule.validate();
  std::unique_ptr<Trainer> trainer;
  if (options.resume) {
    Checkpoint ckpt = load_checkpoint(*options.resume);
    ckpt.train.iterations = schedule.iterations;
    trainer = std::make_unique<Trainer>(ckpt, load_all_clips(manifest, ckpt.model.image_size));
  } else {
    trainer = std::make_unique<Trainer>(cfg, schedule, load_all_clips(manifest, cfg.image_size));
    if (options.pretrained) load_pretrained(trainer->model(), *options.pretrained);
  }
  fs::create_directories(options.out_dir);
  const fs::path csv_path = options.out_dir / "loss.csv";
  const bool append = options.resume.has_value() && fs::exists(csv_path);
  std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  if (!append) csv << loss_csv_header() << '\n';
  const int every = trainer->schedule().checkpoint_every;
  trainer->run([&](const IterationLog& log) {
    csv << loss_csv_row(log) << '\n';
    csv.flush();
    if (every > 0 && (log.iteration + 1) % every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "ckpt_%06d.bin", log.iteration + 1);
      save_checkpoint(trainer->checkpoint(), options.out_dir / name);
    }
  });
  const fs::path final_path = options.out_dir / "final.bin";
  save_checkpoint(trainer->checkpoint(), final_path);
  return final_path;
}

GazeRows predict_window(const Model& model, const std::vector<Image>& frames) {
  const ForwardOutput out = model.forward(ad::constant(frames_to_tensor(frames)));
  const Tensor& f = out.fused.value();
  GazeRows rows(f.dim(0));
  for (int t = 0; t < f.dim(0); ++t) rows[t] = {f.at(t, 0), f.at(t, 1), f.at(t, 2)};
  return rows;
}

GazeRows stitch_windows(int n_frames, const std::vector<std::pair<int, int>>& windows,
                        const std::vector<GazeRows>& window_preds) {
  if (windows.size() != window_preds.size()) throw std::invalid_argument("stitch_windows: size mismatch");
  GazeRows sum(n_frames, {0.0, 0.0, 0.0});
  std::vector<int> count(n_frames, 0);
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto [begin, end] = windows[w];
    if (static_cast<int>(window_preds[w].size()) != end - begin)
      throw std::invalid_argument("stitch_windows: window prediction length mismatch");
    for (int t = begin; t < end; ++t) {
      for (int d = 0; d < 3; ++d) sum[t][d] += window_preds[w][t - begin][d];
      ++count[t];
    }
  }
  for (int t = 0; t < n_frames; ++t) {
    if (count[t] == 0) throw std::logic_error("stitch_windows: frame " + std::to_string(t) + " is uncovered");
    for (int d = 0; d < 3; ++d) sum[t][d] /= count[t];
  }
  return sum;
}

GazeRows smooth_sequence(const GazeRows& seq, int window) {
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("smooth_sequence: window must be odd");
  const int n = static_cast<int>(seq.size());
  const int half = window / 2;
  GazeRows out(n);
  for (int t = 0; t < n; ++t) {
    const int lo = std::max(0, t - half);
    const int hi = std::min(n - 1, t + half);
    std::array<double, 3> acc{0.0, 0.0, 0.0};
    for (int u = lo; u <= hi; ++u)
      for (int d = 0; d < 3; ++d) acc[d] += seq[u][d];
    for (int d = 0; d < 3; ++d) acc[d] /= (hi - lo + 1);
    out[t] = acc;
  }
  return out;
}

std::vector<GazeVector> infer_video(const Model& model, const std::vector<Image>& frames, const InferConfig& cfg) {
  cfg.validate();
  if (frames.empty()) return {};
  if (cfg.window_len > model.config().clip_len)
    throw ConfigError("infer.window_len " + std::to_string(cfg.window_len) + " exceeds model.clip_len " +
                      std::to_string(model.config().clip_len));
  const int n = static_cast<int>(frames.size());
  const auto windows = enumerate_inference_windows(n, cfg.window_len, cfg.stride);
  std::vector<GazeRows> preds;
  for (const auto& [begin, end] : windows)
    preds.push_back(predict_window(model, std::vector<Image>(frames.begin() + begin, frames.begin() + end)));
  const GazeRows smoothed = smooth_sequence(stitch_windows(n, windows, preds), cfg.smoothing_window);
  std::vector<GazeVector> out;
  for (const auto& r : smoothed) out.push_back(normalize_gaze(GazeVector{r[0], r[1], r[2]}));
  return out;
}

}  // namespace mcgaze
