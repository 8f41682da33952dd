#pragma once

// Memory bank of per-image representations, k-means pseudo-labels and
// same-cluster positive sampling.

#include "sslattn/augment.hpp"
#include "sslattn/dataset.hpp"
#include "sslattn/encoder.hpp"
#include "sslattn/rng.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace sslattn {

class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::int64_t size, std::int64_t dim);

  void write(std::int64_t index, const torch::Tensor& z);
  // rows [len, d], indices int64 [len]
  void write_rows(const torch::Tensor& indices, const torch::Tensor& rows);

  bool complete() const;
  // Throws DatasetError naming the first unwritten row.
  void require_complete() const;

  std::int64_t size() const { return z_.defined() ? z_.size(0) : 0; }
  std::int64_t dim() const { return z_.defined() ? z_.size(1) : 0; }
  const torch::Tensor& matrix() const { return z_; }
  const std::vector<bool>& written() const { return written_; }

  // Restores a bank from a matrix whose rows are all considered written.
  static MemoryBank from_matrix(torch::Tensor z);

 private:
  torch::Tensor z_;  // float32 [N, d]
  std::vector<bool> written_;
};

// z for one deterministic eval view of every image (encoder in eval mode).
MemoryBank refresh_bank(const Dataset& data, SslModel& model, const AugmentConfig& augment,
                        std::int64_t batch_size = 256);

// Normalised pooled backbone features for every image (the backbone-only
// representation used by evaluation).
torch::Tensor embed_pooled(const Dataset& data, Backbone& backbone, const AugmentConfig& augment,
                           std::int64_t batch_size = 256);

// Stacked eval views for the given dataset indices.
torch::Tensor eval_batch(const Dataset& data, const std::vector<std::int64_t>& indices,
                         const AugmentConfig& augment);

struct ClusterState {
  torch::Tensor centroids;                  // [K_c, d] float64
  std::vector<std::int64_t> assignments;    // length N, entries in [0, K_c)
  std::vector<std::vector<std::int64_t>> members;
  double inertia = 0.0;
  std::vector<double> inertia_history;      // one entry per assignment pass
  int iterations = 0;
  bool converged = false;

  std::int64_t num_clusters() const { return centroids.defined() ? centroids.size(0) : 0; }
};

// Lloyd's algorithm with k-means++ seeding. Empty clusters are reseeded at the
// point farthest from its centroid. Stops early when assignments repeat.
ClusterState kmeans(const torch::Tensor& points, std::int64_t num_clusters, int max_iters,
                    std::uint64_t seed);
ClusterState kmeans(const MemoryBank& bank, std::int64_t num_clusters, int max_iters, std::uint64_t seed);

// Rebuilds members/inertia from centroids and assignments (checkpoint restore).
ClusterState restore_cluster_state(const torch::Tensor& points, torch::Tensor centroids,
                                   std::vector<std::int64_t> assignments);

std::int64_t pseudo_label(const ClusterState& state, std::int64_t index);

// P indices sharing source's cluster; the source is excluded when its cluster
// has other members. Without replacement while possible, then with
// replacement. Singleton cluster -> the source repeated P times.
std::vector<std::int64_t> sample_positives(const ClusterState& state, std::int64_t source_index,
                                           std::int64_t count, Rng& rng);

}  // namespace sslattn
