#include "sslattn/clustering.hpp"

#include "sslattn/errors.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace sslattn {

namespace {

// Squared distances [N,K] between rows of x and rows of c, clamped at 0.
torch::Tensor squared_distances(const torch::Tensor& x, const torch::Tensor& c) {
  auto xx = x.pow(2).sum(1, true);
  auto cc = c.pow(2).sum(1).unsqueeze(0);
  return (xx - 2.0 * torch::matmul(x, c.t()) + cc).clamp_min(0.0);
}

struct Assignment {
  std::vector<std::int64_t> labels;
  std::vector<double> dist;  // squared distance to the assigned centroid
  double inertia = 0.0;
};

Assignment assign(const torch::Tensor& x, const torch::Tensor& c) {
  auto d = squared_distances(x, c).contiguous();
  const auto n = d.size(0), k = d.size(1);
  const auto* p = d.data_ptr<double>();
  Assignment a;
  a.labels.resize(static_cast<std::size_t>(n));
  a.dist.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t best = 0;
    double best_d = p[i * k];
    for (std::int64_t j = 1; j < k; ++j) {
      if (p[i * k + j] < best_d) {
        best_d = p[i * k + j];
        best = j;
      }
    }
    a.labels[static_cast<std::size_t>(i)] = best;
    a.dist[static_cast<std::size_t>(i)] = best_d;
    a.inertia += best_d;
  }
  return a;
}

std::vector<std::int64_t> cluster_sizes(const std::vector<std::int64_t>& labels, std::int64_t k) {
  std::vector<std::int64_t> sizes(static_cast<std::size_t>(k), 0);
  for (auto l : labels) ++sizes[static_cast<std::size_t>(l)];
  return sizes;
}

// Assign, then move each empty centroid onto the point farthest from its
// centroid and reassign, until no cluster is empty.
Assignment assign_with_repair(const torch::Tensor& x, torch::Tensor& c) {
  const auto k = c.size(0);
  auto a = assign(x, c);
  for (std::int64_t round = 0; round < k; ++round) {
    auto sizes = cluster_sizes(a.labels, k);
    std::vector<std::int64_t> empty;
    for (std::int64_t j = 0; j < k; ++j) {
      if (sizes[static_cast<std::size_t>(j)] == 0) empty.push_back(j);
    }
    if (empty.empty()) break;
    std::vector<std::int64_t> order(a.dist.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t l, std::int64_t r) {
      return a.dist[static_cast<std::size_t>(l)] > a.dist[static_cast<std::size_t>(r)];
    });
    for (std::size_t e = 0; e < empty.size() && e < order.size(); ++e) {
      c[empty[e]].copy_(x[order[e]]);
    }
    a = assign(x, c);
  }
  return a;
}

torch::Tensor kmeans_plus_plus(const torch::Tensor& x, std::int64_t k, Rng& rng) {
  const auto n = x.size(0);
  auto c = torch::empty({k, x.size(1)}, x.options());
  c[0].copy_(x[static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)))]);
  auto d2 = (x - c[0]).pow(2).sum(1).contiguous();
  for (std::int64_t j = 1; j < k; ++j) {
    const auto* p = d2.data_ptr<double>();
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) total += p[i];
    std::int64_t pick = n - 1;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        acc += p[i];
        if (acc > r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
    }
    c[j].copy_(x[pick]);
    d2 = torch::minimum(d2, (x - c[j]).pow(2).sum(1)).contiguous();
  }
  return c;
}

torch::Tensor centroid_means(const torch::Tensor& x, const std::vector<std::int64_t>& labels,
                             const torch::Tensor& previous) {
  const auto k = previous.size(0);
  auto sums = torch::zeros_like(previous);
  auto idx = torch::tensor(labels, torch::kLong);
  sums.index_add_(0, idx, x);
  auto sizes = cluster_sizes(labels, k);
  auto out = previous.clone();
  for (std::int64_t j = 0; j < k; ++j) {
    const auto s = sizes[static_cast<std::size_t>(j)];
    if (s > 0) out[j].copy_(sums[j] / static_cast<double>(s));
  }
  return out;
}

void fill_members(ClusterState& state) {
  state.members.assign(static_cast<std::size_t>(state.num_clusters()), {});
  for (std::size_t i = 0; i < state.assignments.size(); ++i) {
    state.members[static_cast<std::size_t>(state.assignments[i])].push_back(static_cast<std::int64_t>(i));
  }
}

}  // namespace

MemoryBank::MemoryBank(std::int64_t size, std::int64_t dim)
    : z_(torch::zeros({size, dim}, torch::kFloat32)), written_(static_cast<std::size_t>(size), false) {
  if (size < 1 || dim < 1) throw ConfigError("memory bank needs at least one row and one column");
}

void MemoryBank::write(std::int64_t index, const torch::Tensor& z) {
  if (index < 0 || index >= size()) throw DatasetError("memory bank write index out of range");
  torch::NoGradGuard no_grad;
  z_[index].copy_(z.detach().reshape({dim()}).to(torch::kFloat32));
  written_[static_cast<std::size_t>(index)] = true;
}

void MemoryBank::write_rows(const torch::Tensor& indices, const torch::Tensor& rows) {
  auto idx = indices.to(torch::kLong).contiguous();
  if (idx.dim() != 1 || rows.dim() != 2 || rows.size(0) != idx.size(0) || rows.size(1) != dim()) {
    throw ConfigError("memory bank write_rows: shape mismatch");
  }
  const auto* p = idx.data_ptr<std::int64_t>();
  for (std::int64_t r = 0; r < idx.size(0); ++r) write(p[r], rows[r]);
}

bool MemoryBank::complete() const {
  return !written_.empty() && std::all_of(written_.begin(), written_.end(), [](bool w) { return w; });
}

void MemoryBank::require_complete() const {
  if (written_.empty()) throw DatasetError("memory bank is empty");
  for (std::size_t i = 0; i < written_.size(); ++i) {
    if (!written_[i]) throw DatasetError("memory bank row " + std::to_string(i) + " was never written");
  }
}

MemoryBank MemoryBank::from_matrix(torch::Tensor z) {
  MemoryBank bank;
  bank.z_ = z.to(torch::kFloat32).contiguous();
  bank.written_.assign(static_cast<std::size_t>(bank.z_.size(0)), true);
  return bank;
}

torch::Tensor eval_batch(const Dataset& data, const std::vector<std::int64_t>& indices,
                         const AugmentConfig& augment) {
  std::vector<torch::Tensor> views;
  views.reserve(indices.size());
  for (auto i : indices) views.push_back(make_eval_view(data.image(i), augment));
  return torch::stack(views);
}

MemoryBank refresh_bank(const Dataset& data, SslModel& model, const AugmentConfig& augment,
                        std::int64_t batch_size) {
  const auto n = data.size();
  if (n < 1) throw DatasetError("cannot refresh a memory bank from an empty dataset");
  MemoryBank bank(n, model->config().embed_dim);
  EvalModeScope eval(*model);
  torch::NoGradGuard no_grad;
  const auto dtype = model->prototypes->weight.scalar_type();
  for (std::int64_t lo = 0; lo < n; lo += batch_size) {
    const auto hi = std::min(n, lo + batch_size);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(hi - lo));
    std::iota(idx.begin(), idx.end(), lo);
    auto views = eval_batch(data, idx, augment).to(dtype);
    auto z = model->project(global_avg_pool(model->forward_features(views)));
    bank.write_rows(torch::tensor(idx, torch::kLong), z);
  }
  bank.require_complete();
  return bank;
}

torch::Tensor embed_pooled(const Dataset& data, Backbone& backbone, const AugmentConfig& augment,
                           std::int64_t batch_size) {
  const auto n = data.size();
  if (n < 1) throw DatasetError("cannot embed an empty dataset");
  EvalModeScope eval(*backbone);
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> chunks;
  for (std::int64_t lo = 0; lo < n; lo += batch_size) {
    const auto hi = std::min(n, lo + batch_size);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(hi - lo));
    std::iota(idx.begin(), idx.end(), lo);
    chunks.push_back(global_avg_pool(backbone->forward(eval_batch(data, idx, augment))));
  }
  return l2_normalize_rows(torch::cat(chunks)).to(torch::kFloat32);
}

ClusterState kmeans(const torch::Tensor& points, std::int64_t num_clusters, int max_iters, std::uint64_t seed) {
  if (points.dim() != 2 || points.size(0) < 1) throw ConfigError("kmeans expects a non-empty [N,d] matrix");
  if (num_clusters < 1) throw ConfigError("kmeans needs at least one cluster");
  if (points.size(0) < num_clusters) {
    throw ConfigError("kmeans: N=" + std::to_string(points.size(0)) + " rows cannot form K_c=" +
                      std::to_string(num_clusters) + " clusters");
  }
  if (max_iters < 1) throw ConfigError("kmeans needs max_iters >= 1");
  torch::NoGradGuard no_grad;
  auto x = points.detach().to(torch::kFloat64).contiguous();
  auto rng = Rng::derive({seed, static_cast<std::uint64_t>(Stream::kmeans)});

  ClusterState state;
  auto c = kmeans_plus_plus(x, num_clusters, rng);
  auto a = assign_with_repair(x, c);
  state.inertia_history.push_back(a.inertia);
  for (int it = 1; it <= max_iters; ++it) {
    c = centroid_means(x, a.labels, c);
    auto next = assign_with_repair(x, c);
    state.inertia_history.push_back(next.inertia);
    state.iterations = it;
    const bool same = next.labels == a.labels;
    a = std::move(next);
    if (same) {
      state.converged = true;
      break;
    }
  }
  state.centroids = c;
  state.assignments = std::move(a.labels);
  state.inertia = a.inertia;
  fill_members(state);
  return state;
}

ClusterState kmeans(const MemoryBank& bank, std::int64_t num_clusters, int max_iters, std::uint64_t seed) {
  bank.require_complete();
  return kmeans(bank.matrix(), num_clusters, max_iters, seed);
}

ClusterState restore_cluster_state(const torch::Tensor& points, torch::Tensor centroids,
                                   std::vector<std::int64_t> assignments) {
  if (centroids.dim() != 2 || static_cast<std::int64_t>(assignments.size()) != points.size(0)) {
    throw CheckpointError("cluster state does not match the memory bank");
  }
  ClusterState state;
  state.centroids = centroids.to(torch::kFloat64);
  state.assignments = std::move(assignments);
  for (auto l : state.assignments) {
    if (l < 0 || l >= state.num_clusters()) throw CheckpointError("cluster assignment out of range");
  }
  auto d = squared_distances(points.to(torch::kFloat64), state.centroids);
  auto idx = torch::tensor(state.assignments, torch::kLong).unsqueeze(1);
  state.inertia = d.gather(1, idx).sum().item<double>();
  state.converged = true;
  fill_members(state);
  return state;
}

std::int64_t pseudo_label(const ClusterState& state, std::int64_t index) {
  if (index < 0 || index >= static_cast<std::int64_t>(state.assignments.size())) {
    throw ConfigError("pseudo_label: index " + std::to_string(index) + " out of range");
  }
  return state.assignments[static_cast<std::size_t>(index)];
}

std::vector<std::int64_t> sample_positives(const ClusterState& state, std::int64_t source_index,
                                           std::int64_t count, Rng& rng) {
  if (count < 1) throw ConfigError("sample_positives needs P >= 1");
  const auto cluster = pseudo_label(state, source_index);
  const auto& members = state.members[static_cast<std::size_t>(cluster)];
  std::vector<std::int64_t> pool;
  pool.reserve(members.size());
  for (auto m : members) {
    if (m != source_index) pool.push_back(m);
  }
  if (pool.empty()) return std::vector<std::int64_t>(static_cast<std::size_t>(count), source_index);

  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(count));
  // Partial Fisher-Yates gives a uniform draw without replacement.
  const auto distinct = std::min<std::int64_t>(count, static_cast<std::int64_t>(pool.size()));
  for (std::int64_t i = 0; i < distinct; ++i) {
    const auto j = i + static_cast<std::int64_t>(rng.below(pool.size() - static_cast<std::size_t>(i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    out.push_back(pool[static_cast<std::size_t>(i)]);
  }
  while (static_cast<std::int64_t>(out.size()) < count) {
    out.push_back(pool[rng.below(pool.size())]);
  }
  return out;
}

}  // namespace sslattn
