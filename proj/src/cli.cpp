#include "mcgaze/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include "mcgaze/dataio.hpp"
#include "mcgaze/engine.hpp"
#include "mcgaze/eval.hpp"
#include "mcgaze/image_io.hpp"
#include "mcgaze/render.hpp"

namespace mcgaze {

namespace fs = std::filesystem;

namespace {

json default_config_json() {
  return json{{"model", ModelConfig{}},
              {"train", TrainSchedule{}},
              {"infer", InferConfig{}},
              {"eval", SplitConfig{}},
              {"synth", SynthConfig{}}};
}

void flatten(const json& j, const std::string& prefix, std::vector<std::string>& out) {
  if (j.is_object() && !(prefix.empty() && j.empty())) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (!prefix.empty()) {
    out.push_back(prefix);
  }
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

json read_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    json j;
    in >> j;
    if (!j.is_object()) throw ConfigError("config file " + path + " must hold a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

// Options every config-consuming subcommand shares.
struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;
  std::vector<std::string> positional;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "JSON config file");
    cmd->add_option("--set", sets, "dotted-key override, e.g. model.stages=2")->take_all();
    cmd->add_option("overrides", positional, "dotted-key overrides key=value");
  }
  RunConfig resolve() const {
    std::vector<std::string> all = sets;
    all.insert(all.end(), positional.begin(), positional.end());
    return resolve_config(read_config_file(file), all);
  }
};

int cmd_synth(const ConfigArgs& ca, const std::string& out_dir, int clips, const std::optional<std::uint64_t>& seed,
              const std::optional<int>& frames, const std::optional<int>& image_size, std::ostream& out) {
  RunConfig rc = ca.resolve();
  if (seed) rc.synth.seed = *seed;
  if (frames) rc.synth.frames = *frames;
  if (image_size) rc.synth.image_size = *image_size;
  if (clips < 0) throw ConfigError("--clips must be >= 0, got " + std::to_string(clips));
  rc.synth.validate();
  const fs::path manifest = generate_dataset(rc.synth, clips, out_dir);
  out << manifest.string() << '\n';
  return kExitOk;
}

int cmd_train(const ConfigArgs& ca, const std::string& manifest_path, const std::string& out_dir,
              const std::optional<std::uint64_t>& seed, const std::optional<int>& iterations,
              const std::string& resume, const std::string& pretrained, std::ostream& out) {
  RunConfig rc = ca.resolve();
  if (seed) rc.train.seed = *seed;
  if (iterations) rc.train.iterations = *iterations;
  rc.train.validate();
  const Manifest m = load_manifest(manifest_path);
  TrainOptions opt;
  opt.out_dir = out_dir;
  if (!resume.empty()) opt.resume = resume;
  if (!pretrained.empty()) opt.pretrained = pretrained;
  const fs::path final_ckpt = train(m, rc.model, rc.train, opt);
  out << final_ckpt.string() << '\n';
  return kExitOk;
}

int cmd_infer(const ConfigArgs& ca, const std::string& ckpt_path, const std::string& manifest_path,
              const std::string& out_path, std::ostream& out) {
  const RunConfig rc = ca.resolve();
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const auto model = model_from_checkpoint(ckpt);
  const Manifest m = load_manifest(manifest_path);
  std::vector<PredictionRecord> records;
  for (std::size_t i = 0; i < m.clips.size(); ++i) {
    const VideoClip clip = load_clip(m, i, model->config().image_size);
    const auto gazes = infer_video(*model, clip.frames, rc.infer);
    for (int t = 0; t < static_cast<int>(gazes.size()); ++t) records.push_back({m.clips[i].id, t, gazes[t]});
  }
  save_predictions(records, out_path);
  out << records.size() << " predictions written to " << out_path << '\n';
  return kExitOk;
}

int cmd_eval(const ConfigArgs& ca, const std::string& pred_path, const std::string& manifest_path,
             const std::string& out_path, std::ostream& out) {
  const RunConfig rc = ca.resolve();
  const Manifest m = load_manifest(manifest_path);
  const EvalReport report = evaluate(fs::path(pred_path), m, rc.eval);
  if (!out_path.empty()) {
    const fs::path p(out_path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + out_path);
    f << report.to_json().dump(1) << '\n';
  }
  out << report.table();
  return kExitOk;
}

int cmd_render(const std::string& manifest_path, const std::string& pred_path, bool with_gt,
               const std::vector<std::string>& only, const std::string& out_dir, std::ostream& out) {
  if (pred_path.empty() && !with_gt) throw ConfigError("render needs --predictions, --gt, or both");
  const Manifest m = load_manifest(manifest_path);
  std::map<std::pair<std::string, int>, GazeVector> preds;
  if (!pred_path.empty())
    for (const auto& r : load_predictions(pred_path)) preds[{r.clip_id, r.frame_index}] = r.gaze;
  const std::set<std::string> wanted(only.begin(), only.end());
  int written = 0;
  for (std::size_t i = 0; i < m.clips.size(); ++i) {
    const ClipEntry& e = m.clips[i];
    if (!wanted.empty() && !wanted.count(e.id)) continue;
    for (int t = 0; t < e.length(); ++t) {
      std::optional<GazeVector> pred;
      if (!pred_path.empty()) {
        auto it = preds.find({e.id, t});
        if (it == preds.end())
          throw CoverageError("no prediction for " + e.id + ":" + std::to_string(t));
        pred = it->second;
      }
      std::optional<GazeVector> gt;
      if (with_gt) gt = e.gaze[t];
      const Image frame = read_png(m.base_dir / e.frames[t]);
      char name[64];
      std::snprintf(name, sizeof name, "frame_%04d.png", t);
      write_png(fs::path(out_dir) / e.id / name, draw_gaze_arrows(frame, e.boxes.at(ClueKind::kHead)[t], pred, gt));
      ++written;
    }
  }
  out << written << " frames rendered to " << out_dir << '\n';
  return kExitOk;
}

}  // namespace

std::vector<std::string> valid_config_keys() {
  std::vector<std::string> keys;
  flatten(default_config_json(), "", keys);
  return keys;
}

json parse_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  std::string pointer;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    pointer += "/" + part;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json patch = json::object();
  patch[json::json_pointer(pointer)] = value;
  return patch;
}

RunConfig resolve_config(const json& file_json, const std::vector<std::string>& overrides) {
  json merged = file_json.is_null() ? json::object() : file_json;
  if (!merged.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& o : overrides) merged.merge_patch(parse_override(o));

  const std::vector<std::string> valid = valid_config_keys();
  const std::set<std::string> valid_set(valid.begin(), valid.end());
  std::vector<std::string> given;
  flatten(merged, "", given);
  for (const auto& k : given)
    if (!valid_set.count(k)) throw ConfigError("unknown config key '" + k + "'; valid keys: " + join(valid));

  RunConfig rc;
  try {
    const auto variant = merged.value(json::json_pointer("/model/variant"), json("toy"));
    if (variant == "full") {
      rc.model = ModelConfig::full();
      rc.train = TrainSchedule::full();
    }
    if (merged.contains("model")) from_json(merged["model"], rc.model);
    if (merged.contains("train")) from_json(merged["train"], rc.train);
    if (merged.contains("infer")) from_json(merged["infer"], rc.infer);
    if (merged.contains("eval")) from_json(merged["eval"], rc.eval);
    if (merged.contains("synth")) from_json(merged["synth"], rc.synth);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  rc.model.validate();
  rc.train.validate();
  rc.infer.validate();
  rc.eval.validate();
  rc.synth.validate();
  return rc;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-clue video gaze estimation: synth, train, infer, eval, render"};
  app.require_subcommand(1);

  ConfigArgs synth_cfg, train_cfg, infer_cfg, eval_cfg;

  auto* synth = app.add_subcommand("synth", "render a synthetic labeled dataset");
  std::string synth_out;
  int synth_clips = 10;
  std::optional<std::uint64_t> synth_seed;
  std::optional<int> synth_frames, synth_size;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--clips", synth_clips, "number of clips");
  synth->add_option("--seed", synth_seed, "dataset seed");
  synth->add_option("--frames", synth_frames, "frames per clip");
  synth->add_option("--image-size", synth_size, "frame side length in pixels");
  synth_cfg.attach(synth);

  auto* trn = app.add_subcommand("train", "train a model on a manifest");
  std::string train_manifest, train_out, train_resume, train_pretrained;
  std::optional<std::uint64_t> train_seed;
  std::optional<int> train_iters;
  trn->add_option("--manifest", train_manifest, "dataset manifest")->required();
  trn->add_option("--out", train_out, "output directory for checkpoints and loss.csv")->required();
  trn->add_option("--seed", train_seed, "training seed");
  trn->add_option("--iterations", train_iters, "total iterations");
  trn->add_option("--resume", train_resume, "checkpoint to continue from");
  trn->add_option("--pretrained", train_pretrained, "checkpoint-format file with backbone weights");
  train_cfg.attach(trn);

  auto* inf = app.add_subcommand("infer", "predict gaze for every frame of a manifest");
  std::string infer_ckpt, infer_manifest, infer_out;
  inf->add_option("--checkpoint", infer_ckpt, "trained checkpoint")->required();
  inf->add_option("--manifest", infer_manifest, "dataset manifest")->required();
  inf->add_option("--out", infer_out, "prediction JSON path")->required();
  infer_cfg.attach(inf);

  auto* evl = app.add_subcommand("eval", "score predictions against a manifest");
  std::string eval_preds, eval_manifest, eval_out;
  evl->add_option("--predictions", eval_preds, "prediction JSON")->required();
  evl->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  evl->add_option("--out", eval_out, "report JSON path");
  eval_cfg.attach(evl);

  auto* rnd = app.add_subcommand("render", "draw gaze arrows onto frames");
  std::string render_manifest, render_preds, render_out;
  bool render_gt = false;
  std::vector<std::string> render_clips;
  rnd->add_option("--manifest", render_manifest, "dataset manifest")->required();
  rnd->add_option("--predictions", render_preds, "prediction JSON (cyan arrows)");
  rnd->add_flag("--gt", render_gt, "also draw ground truth (red arrows)");
  rnd->add_option("--clip", render_clips, "restrict to these clip ids");
  rnd->add_option("--out", render_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(synth_cfg, synth_out, synth_clips, synth_seed, synth_frames, synth_size, out);
    if (*trn)
      return cmd_train(train_cfg, train_manifest, train_out, train_seed, train_iters, train_resume, train_pretrained,
                       out);
    if (*inf) return cmd_infer(infer_cfg, infer_ckpt, infer_manifest, infer_out, out);
    if (*evl) return cmd_eval(eval_cfg, eval_preds, eval_manifest, eval_out, out);
    if (*rnd) return cmd_render(render_manifest, render_preds, render_gt, render_clips, render_out, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const TrainingAbort& e) {
    err << "training aborted: " << e.what() << '\n';
    return kExitTrainAbort;
  } catch (const SchemaError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const MissingFrameError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const CoverageError& e) {
    err << "coverage error: " << e.what() << '\n';
    return kExitData;
  } catch (const InvalidBoxError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DegenerateGazeError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace mcgaze
