#pragma once

// Training loop, checkpoints and backbone export.

#include "sslattn/attention_addon.hpp"
#include "sslattn/clustering.hpp"
#include "sslattn/config.hpp"
#include "sslattn/dataset.hpp"
#include "sslattn/metrics.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace sslattn {

inline constexpr const char* kCheckpointFormat = "sslattn-ckpt-v1";
inline constexpr const char* kBackboneFormat = "sslattn-backbone-v1";

// Model plus optimiser with the two learning-rate groups (core, attn).
struct TrainState {
  SslModel model{nullptr};
  std::unique_ptr<torch::optim::SGD> optimizer;
  MemoryBank bank;
  std::optional<ClusterState> clusters;
  int epochs_completed = 0;
  std::int64_t global_step = 0;
};

TrainState make_train_state(const RunConfig& cfg);

struct CheckpointInfo {
  std::string format;
  int epochs_completed = 0;
  std::int64_t global_step = 0;
  RunConfig config;
};

// Written to a temporary name and renamed into place.
void save_checkpoint(const std::filesystem::path& file, const TrainState& state, const RunConfig& cfg);
// Rebuilds model and optimiser from the checkpoint's own config snapshot.
TrainState load_checkpoint(const std::filesystem::path& file, CheckpointInfo* info = nullptr);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& file);

// Backbone parameters and buffers plus the encoder settings needed to rebuild it.
void export_backbone(const std::filesystem::path& checkpoint, const std::filesystem::path& out);

struct LoadedBackbone {
  Backbone backbone{nullptr};
  RunConfig config;  // encoder and augmentation settings; other fields are defaults
};

// Accepts a full checkpoint or an exported backbone artifact.
LoadedBackbone load_backbone(const std::filesystem::path& file);

struct EpochSummary {
  int epoch = 0;  // 1-based
  int steps = 0;
  double l_ssl = 0, l_mu = 0, l_cls = 0, l_total = 0;
  std::optional<double> knn_top1;
};

class Trainer {
 public:
  Trainer(RunConfig cfg, DataSplits data);
  // Opens cfg.data.root.
  explicit Trainer(RunConfig cfg);
  ~Trainer();

  // Continues from a checkpoint; the configured epoch count still applies.
  void resume(const std::filesystem::path& checkpoint);

  // Trains until `stop_after_epoch` epochs are complete (default: all).
  // Throws NumericError on a non-finite loss; earlier checkpoints stay intact.
  std::vector<EpochSummary> run(std::optional<int> stop_after_epoch = {});

  // Fine-grained driving, used by tests. begin_epoch refreshes the bank and
  // clusters (add-on only) and fixes the shuffle; train_step runs one
  // optimiser step of the current epoch.
  void begin_epoch();
  StepRecord train_step(std::int64_t step_in_epoch);
  EpochSummary end_epoch();

  std::int64_t steps_per_epoch() const;
  const RunConfig& config() const { return cfg_; }
  TrainState& state() { return state_; }
  const DataSplits& data() const { return data_; }
  std::filesystem::path checkpoint_path(int epoch) const;
  std::filesystem::path last_checkpoint() const;

  // Called after every step row is logged.
  std::function<void(const StepRecord&)> on_step;

 private:
  struct PreparedStep;
  struct Prefetch;
  PreparedStep prepare_step(std::int64_t step_in_epoch) const;
  PreparedStep next_prepared(std::int64_t step_in_epoch);
  void ensure_log();

  RunConfig cfg_;
  DataSplits data_;
  TrainState state_;
  std::vector<std::int64_t> order_;
  std::vector<StepRecord> epoch_steps_;
  std::unique_ptr<MetricsLog> log_;
  std::unique_ptr<Prefetch> prefetch_;
  bool resumed_ = false;
};

}  // namespace sslattn
