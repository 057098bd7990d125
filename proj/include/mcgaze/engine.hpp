#pragma once

// Training, checkpointing and sliding-window inference.
//
// Checkpoint file layout (version 1, all integers little-endian):
//
//   bytes 0..7    magic "MCGZCKPT"
//   uint32        format version
//   uint64        header length L
//   L bytes       UTF-8 JSON header:
//                   {"format_version", "model", "train", "iteration", "seed",
//                    "stream_position", "tensors": [{"name","shape","offset"}...]}
//   ...           float32 blobs; "offset" counts bytes from the end of the header
//
// Tensor names are "param/<module path>", "adam_m/<path>" and "adam_v/<path>".
// Files are written with deterministic key order so save -> load -> save is
// byte-identical.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mcgaze/config.hpp"
#include "mcgaze/dataio.hpp"
#include "mcgaze/losses.hpp"
#include "mcgaze/model.hpp"

namespace mcgaze {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  TrainSchedule train;
  int iteration = 0;
  std::uint64_t seed = 0;
  std::uint64_t stream_position = 0;  // training windows consumed so far
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> adam_m;
  std::map<std::string, Tensor> adam_v;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws SchemaError on a malformed or incompatible file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint parameters into a model built from ckpt.model.
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt);
Checkpoint checkpoint_from_model(const Model& model, const TrainSchedule& train, int iteration);

/// Loads every tensor named "param/<prefix>..." from a checkpoint file into the
/// matching parameters (e.g. pretrained backbone weights). Returns how many
/// were copied; shape mismatches throw SchemaError.
int load_pretrained(Model& model, const std::filesystem::path& path, const std::string& prefix = "backbone.");

/// Decoupled-weight-decay Adam with one learning rate per parameter group.
/// Parameters and moments are rounded to float32 after every step.
class AdamW {
 public:
  explicit AdamW(const TrainSchedule& schedule) : sched_(schedule) {}

  /// Applies one update using the gradients currently stored on the leaves.
  /// `iteration` is 0-based and selects the learning-rate multiplier.
  void step(ParamStore& params, int iteration);

  double learning_rate(ParamGroup group, int iteration) const;
  std::map<std::string, Tensor>& first_moments() { return m_; }
  std::map<std::string, Tensor>& second_moments() { return v_; }
  const std::map<std::string, Tensor>& first_moments() const { return m_; }
  const std::map<std::string, Tensor>& second_moments() const { return v_; }

 private:
  TrainSchedule sched_;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

struct IterationLog {
  int iteration = 0;  // 0-based index of the finished iteration
  LossReport loss;    // mean over the batch
  double lr_backbone = 0.0;
  double lr_head = 0.0;
};

/// Loss of one clip under the model's configured weights.
LossReport clip_loss(const Model& model, const VideoClip& clip, bool accumulate_grad, double grad_scale = 1.0);

class Trainer {
 public:
  /// Fresh run: model initialized from schedule.seed.
  Trainer(const ModelConfig& cfg, const TrainSchedule& schedule, std::vector<VideoClip> clips);
  /// Resumes from a checkpoint: parameters, moments, iteration and data order.
  Trainer(const Checkpoint& ckpt, std::vector<VideoClip> clips);

  /// One optimizer step over batch_size clips. Throws TrainingAbort on a
  /// non-finite loss, naming the iteration and the offending window.
  IterationLog step();
  /// Steps until schedule.iterations; `on_iteration` sees every log entry.
  void run(const std::function<void(const IterationLog&)>& on_iteration = {});

  int iteration() const { return iteration_; }
  bool finished() const { return iteration_ >= sched_.iterations; }
  Model& model() { return *model_; }
  const Model& model() const { return *model_; }
  const TrainSchedule& schedule() const { return sched_; }
  Checkpoint checkpoint() const;

 private:
  TrainSchedule sched_;
  std::unique_ptr<Model> model_;
  AdamW opt_;
  TrainingClipStream stream_;
  int iteration_ = 0;
};

/// Seed of the training-window shuffle, derived from the schedule seed.
std::uint64_t data_seed(std::uint64_t seed);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  std::optional<std::filesystem::path> pretrained;
};

/// Trains on every clip of the manifest. Writes out_dir/loss.csv (one row per
/// iteration), periodic out_dir/ckpt_<iter>.bin and out_dir/final.bin.
/// Returns the final checkpoint path.
std::filesystem::path train(const Manifest& manifest, const ModelConfig& cfg, const TrainSchedule& schedule,
                            const TrainOptions& options);

std::string loss_csv_header();
std::string loss_csv_row(const IterationLog& log);

// ---- inference ----

using GazeRows = std::vector<std::array<double, 3>>;

/// Final fused gaze of one window, unnormalized.
GazeRows predict_window(const Model& model, const std::vector<Image>& frames);

/// Per-frame mean over overlapping windows. Each frame's rows are summed in
/// window order, then divided by the number of windows covering it.
GazeRows stitch_windows(int n_frames, const std::vector<std::pair<int, int>>& windows,
                        const std::vector<GazeRows>& window_preds);

/// Centered moving average; the window shrinks at the ends. Neighbors are
/// summed in frame order and divided by their count.
GazeRows smooth_sequence(const GazeRows& seq, int window);

/// Windows -> stitch -> smooth -> normalize. Empty input gives empty output.
std::vector<GazeVector> infer_video(const Model& model, const std::vector<Image>& frames, const InferConfig& cfg);

}  // namespace mcgaze
