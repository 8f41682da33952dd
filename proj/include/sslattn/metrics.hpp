#pragma once

// CSV training log. One row per optimiser step and one per epoch; epoch rows
// leave `step` and the learning rates empty, carry epoch-mean losses and the
// KNN monitor value.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace sslattn {

inline constexpr const char* kMetricsHeader = "step,epoch,l_ssl,l_mu,l_cls,l_total,lr_core,lr_attn,knn_top1";

struct StepRecord {
  std::int64_t step = 0;  // global, 0-based
  int epoch = 0;          // 1-based
  double l_ssl = 0, l_mu = 0, l_cls = 0, l_total = 0;
  double lr_core = 0, lr_attn = 0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double l_ssl = 0, l_mu = 0, l_cls = 0, l_total = 0;
  std::optional<double> knn_top1;
};

struct MetricsRow {
  std::optional<std::int64_t> step;
  int epoch = 0;
  double l_ssl = 0, l_mu = 0, l_cls = 0, l_total = 0;
  std::optional<double> lr_core, lr_attn, knn_top1;
  bool is_epoch_row() const { return !step.has_value(); }
};

class MetricsLog {
 public:
  // Starts a fresh log, or, with keep_through_epoch, keeps the existing rows
  // of epochs <= that value and appends after them.
  explicit MetricsLog(const std::filesystem::path& file, std::optional<int> keep_through_epoch = {});

  void write(const StepRecord& r);
  void write(const EpochRecord& r);

 private:
  std::ofstream out_;
};

std::vector<MetricsRow> read_metrics(const std::filesystem::path& file);

}  // namespace sslattn
