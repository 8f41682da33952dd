#include "sslattn/trainer.hpp"

#include "sslattn/errors.hpp"
#include "sslattn/evaluation.hpp"
#include "sslattn/log.hpp"
#include "sslattn/schedule.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <deque>
#include <fstream>
#include <future>
#include <numeric>

namespace sslattn {

namespace {

namespace fs = std::filesystem;
using torch::serialize::InputArchive;
using torch::serialize::OutputArchive;

AddonOptions addon_options(const RunConfig& cfg) {
  AddonOptions o;
  o.enabled = cfg.addon.enabled;
  o.engine = cfg.ssl.engine;
  o.sinkhorn = cfg.ssl.sinkhorn;
  o.swav_temperature = cfg.ssl.temperature;
  o.tau_c = cfg.addon.tau_c;
  o.normalize_mu = cfg.addon.normalize_mu;
  o.weights = cfg.addon.weights;
  return o;
}

std::unique_ptr<torch::optim::SGD> make_optimizer(SslModel& model, const RunConfig& cfg) {
  auto opts = [&cfg] {
    return std::make_unique<torch::optim::SGDOptions>(
        torch::optim::SGDOptions(cfg.optim.core.start).momentum(cfg.optim.momentum).weight_decay(cfg.optim.weight_decay));
  };
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(model->core_parameters(), opts());
  groups.emplace_back(model->addon_parameters(), opts());
  return std::make_unique<torch::optim::SGD>(std::move(groups), *opts());
}

void set_group_lr(torch::optim::SGD& opt, std::size_t group, double lr) {
  static_cast<torch::optim::SGDOptions&>(opt.param_groups().at(group).options()).lr(lr);
}

std::string read_string(InputArchive& a, const char* key) {
  c10::IValue v;
  a.read(key, v);
  return v.toStringRef();
}

std::int64_t read_int(InputArchive& a, const char* key) {
  c10::IValue v;
  a.read(key, v);
  return v.toInt();
}

InputArchive open_archive(const fs::path& file) {
  if (!fs::exists(file)) throw CheckpointError("checkpoint not found: " + file.string());
  InputArchive a;
  try {
    a.load_from(file.string());
  } catch (const c10::Error& e) {
    throw CheckpointError("cannot read checkpoint " + file.string() + ": not a serialized archive");
  }
  return a;
}

std::string archive_format(InputArchive& a, const fs::path& file) {
  try {
    return read_string(a, "format");
  } catch (const c10::Error&) {
    throw CheckpointError(file.string() + " carries no format tag");
  }
}

void atomic_save(OutputArchive& a, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  auto tmp = file;
  tmp += ".tmp";
  a.save_to(tmp.string());
  fs::rename(tmp, file);
}

torch::Tensor stack_views(std::vector<torch::Tensor>& views) { return torch::stack(views); }

}  // namespace

TrainState make_train_state(const RunConfig& cfg) {
  cfg.validate();
  torch::manual_seed(cfg.train.seed);
  TrainState s;
  s.model = SslModel(cfg.model);
  s.optimizer = make_optimizer(s.model, cfg);
  return s;
}

void save_checkpoint(const fs::path& file, const TrainState& state, const RunConfig& cfg) {
  OutputArchive a;
  a.write("format", c10::IValue(std::string(kCheckpointFormat)));
  a.write("epochs_completed", c10::IValue(static_cast<std::int64_t>(state.epochs_completed)));
  a.write("global_step", c10::IValue(state.global_step));
  a.write("config", c10::IValue(cfg.to_yaml()));
  OutputArchive model;
  state.model->save(model);
  a.write("model", model);
  OutputArchive optim;
  state.optimizer->save(optim);
  a.write("optimizer", optim);
  if (state.bank.size() > 0) a.write("bank", state.bank.matrix());
  if (state.clusters) {
    a.write("cluster_centroids", state.clusters->centroids);
    a.write("cluster_assignments", torch::tensor(state.clusters->assignments, torch::kLong));
  }
  a.write("rng_torch", at::detail::getDefaultCPUGenerator().get_state());
  atomic_save(a, file);
}

CheckpointInfo read_checkpoint_info(const fs::path& file) {
  auto a = open_archive(file);
  CheckpointInfo info;
  info.format = archive_format(a, file);
  if (info.format != kCheckpointFormat) {
    throw CheckpointError(file.string() + ": unsupported format '" + info.format + "' (expected " +
                          kCheckpointFormat + ")");
  }
  info.epochs_completed = static_cast<int>(read_int(a, "epochs_completed"));
  info.global_step = read_int(a, "global_step");
  info.config = parse_config(read_string(a, "config"));
  return info;
}

TrainState load_checkpoint(const fs::path& file, CheckpointInfo* info_out) {
  auto info = read_checkpoint_info(file);
  auto a = open_archive(file);
  auto state = make_train_state(info.config);
  try {
    InputArchive model;
    a.read("model", model);
    state.model->load(model);
    InputArchive optim;
    a.read("optimizer", optim);
    state.optimizer->load(optim);
    torch::Tensor bank;
    if (a.try_read("bank", bank)) state.bank = MemoryBank::from_matrix(bank);
    torch::Tensor centroids, assignments;
    if (a.try_read("cluster_centroids", centroids) && a.try_read("cluster_assignments", assignments)) {
      assignments = assignments.contiguous();
      std::vector<std::int64_t> assign(assignments.data_ptr<std::int64_t>(),
                                       assignments.data_ptr<std::int64_t>() + assignments.numel());
      state.clusters = restore_cluster_state(state.bank.matrix(), centroids, std::move(assign));
    }
    torch::Tensor rng;
    if (a.try_read("rng_torch", rng)) {
      auto gen = at::detail::getDefaultCPUGenerator();
      gen.set_state(rng);
    }
  } catch (const c10::Error& e) {
    throw CheckpointError("checkpoint " + file.string() + " is incomplete or corrupt: " + e.what_without_backtrace());
  }
  state.epochs_completed = info.epochs_completed;
  state.global_step = info.global_step;
  if (info_out) *info_out = info;
  return state;
}

void export_backbone(const fs::path& checkpoint, const fs::path& out) {
  CheckpointInfo info;
  auto state = load_checkpoint(checkpoint, &info);
  OutputArchive a;
  a.write("format", c10::IValue(std::string(kBackboneFormat)));
  a.write("config", c10::IValue(info.config.to_yaml()));
  OutputArchive backbone;
  state.model->backbone->save(backbone);
  a.write("backbone", backbone);
  atomic_save(a, out);
}

LoadedBackbone load_backbone(const fs::path& file) {
  auto a = open_archive(file);
  const auto format = archive_format(a, file);
  LoadedBackbone out;
  if (format == kCheckpointFormat) {
    CheckpointInfo info;
    auto state = load_checkpoint(file, &info);
    out.backbone = state.model->backbone;
    out.config = info.config;
    return out;
  }
  if (format != kBackboneFormat) throw CheckpointError(file.string() + ": unsupported format '" + format + "'");
  out.config = parse_config(read_string(a, "config"));
  out.backbone = Backbone(out.config.model);
  try {
    InputArchive backbone;
    a.read("backbone", backbone);
    out.backbone->load(backbone);
  } catch (const c10::Error&) {
    throw CheckpointError("backbone artifact " + file.string() + " is incomplete or corrupt");
  }
  return out;
}

struct Trainer::PreparedStep {
  std::vector<StepBatch> micro;
  std::vector<torch::Tensor> indices;  // int64 per micro-batch
};

struct Trainer::Prefetch {
  std::deque<std::pair<std::int64_t, std::future<PreparedStep>>> pending;
};

Trainer::Trainer(RunConfig cfg, DataSplits data) : cfg_(std::move(cfg)), data_(std::move(data)) {
  cfg_.validate();
  if (!data_.train || data_.train->size() == 0) throw DatasetError("training split is empty");
  if (cfg_.addon.enabled && data_.train->size() < cfg_.model.num_clusters) {
    throw ConfigError("model.clusters=" + std::to_string(cfg_.model.num_clusters) + " exceeds the " +
                      std::to_string(data_.train->size()) + " training images");
  }
  torch::set_num_threads(cfg_.train.threads);
  state_ = make_train_state(cfg_);
  prefetch_ = std::make_unique<Prefetch>();
  fs::create_directories(cfg_.train.out_dir);
  std::ofstream(fs::path(cfg_.train.out_dir) / "config.yaml") << cfg_.to_yaml();
}

Trainer::Trainer(RunConfig cfg)
    : Trainer(cfg, [&cfg] {
        if (cfg.data.root.empty()) throw ConfigError("config key 'data.root' must name a dataset directory");
        return open_dataset(cfg.data.root, cfg.data.train_subset, cfg.data.test_subset, cfg.train.seed);
      }()) {}

Trainer::~Trainer() {
  if (prefetch_) {
    for (auto& p : prefetch_->pending) p.second.wait();
  }
}

void Trainer::resume(const fs::path& checkpoint) {
  CheckpointInfo info;
  auto loaded = load_checkpoint(checkpoint, &info);
  const auto mine = cfg_.model;
  const auto theirs = info.config.model;
  if (mine.backbone != theirs.backbone || mine.embed_dim != theirs.embed_dim ||
      mine.num_prototypes != theirs.num_prototypes || mine.num_clusters != theirs.num_clusters ||
      mine.input_size != theirs.input_size) {
    throw CheckpointError("checkpoint " + checkpoint.string() + " was trained with a different model configuration");
  }
  if (info.config.optim.batch_size != cfg_.optim.batch_size) {
    throw CheckpointError("checkpoint used optim.batch_size=" + std::to_string(info.config.optim.batch_size));
  }
  state_ = std::move(loaded);
  resumed_ = true;
  log_.reset();
  log::info("resumed from ", checkpoint.string(), " after epoch ", state_.epochs_completed);
}

void Trainer::ensure_log() {
  if (log_) return;
  std::optional<int> keep;
  if (resumed_) keep = state_.epochs_completed;
  log_ = std::make_unique<MetricsLog>(fs::path(cfg_.train.out_dir) / "metrics.csv", keep);
}

std::int64_t Trainer::steps_per_epoch() const {
  return std::max<std::int64_t>(1, data_.train->size() / cfg_.optim.batch_size);
}

fs::path Trainer::checkpoint_path(int epoch) const {
  char name[32];
  std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epoch);
  return fs::path(cfg_.train.out_dir) / "checkpoints" / name;
}

fs::path Trainer::last_checkpoint() const { return fs::path(cfg_.train.out_dir) / "checkpoints" / "last.ckpt"; }

void Trainer::begin_epoch() {
  ensure_log();
  prefetch_->pending.clear();
  const auto epoch = static_cast<std::uint64_t>(state_.epochs_completed);
  const auto seed = cfg_.train.seed;
  if (cfg_.addon.enabled) {
    state_.bank = refresh_bank(*data_.train, state_.model, cfg_.augment, cfg_.train.eval_batch);
    auto rng = Rng::derive({seed, epoch, static_cast<std::uint64_t>(Stream::kmeans)});
    state_.clusters = kmeans(state_.bank, cfg_.model.num_clusters, cfg_.addon.kmeans_iters, rng.next());
    if (!state_.clusters->converged) {
      log::info("epoch ", epoch + 1, ": k-means stopped at max_iters=", cfg_.addon.kmeans_iters);
    }
  }
  order_.resize(static_cast<std::size_t>(data_.train->size()));
  std::iota(order_.begin(), order_.end(), 0);
  auto rng = Rng::derive({seed, epoch, static_cast<std::uint64_t>(Stream::shuffle)});
  std::shuffle(order_.begin(), order_.end(), rng.engine());
  epoch_steps_.clear();
}

Trainer::PreparedStep Trainer::prepare_step(std::int64_t step_in_epoch) const {
  const auto n = static_cast<std::int64_t>(order_.size());
  const auto batch = std::min(cfg_.optim.batch_size, n);
  const auto lo = step_in_epoch * batch;
  const auto hi = std::min(n, lo + batch);
  const auto epoch = static_cast<std::uint64_t>(state_.epochs_completed);
  const auto seed = cfg_.train.seed;
  const auto p = cfg_.addon.positives;
  PreparedStep out;
  for (auto mlo = lo; mlo < hi; mlo += cfg_.optim.micro_batch) {
    const auto mhi = std::min(hi, mlo + cfg_.optim.micro_batch);
    std::vector<torch::Tensor> vs, vt, pos;
    std::vector<std::int64_t> idx, src_labels, pos_labels;
    for (auto j = mlo; j < mhi; ++j) {
      const auto i = order_[static_cast<std::size_t>(j)];
      const auto u = static_cast<std::uint64_t>(i);
      idx.push_back(i);
      auto image = data_.train->image(i);
      auto view_rng = Rng::derive({seed, epoch, u, static_cast<std::uint64_t>(Stream::views)});
      auto [s, t] = make_views(image, cfg_.augment, view_rng);
      vs.push_back(s);
      vt.push_back(t);
      if (!cfg_.addon.enabled) continue;
      const auto label = pseudo_label(*state_.clusters, i);
      src_labels.push_back(label);
      auto pick_rng = Rng::derive({seed, epoch, u, static_cast<std::uint64_t>(Stream::positives)});
      auto pview_rng = Rng::derive({seed, epoch, u, static_cast<std::uint64_t>(Stream::positive_views)});
      for (auto q : sample_positives(*state_.clusters, i, p, pick_rng)) {
        pos.push_back(make_positive_view(data_.train->image(q), cfg_.augment, pview_rng));
        pos_labels.push_back(label);
      }
    }
    StepBatch b;
    b.view_s = stack_views(vs);
    b.view_t = stack_views(vt);
    if (cfg_.addon.enabled) {
      b.positives = stack_views(pos);
      b.positives_per_source = p;
      b.source_labels = torch::tensor(src_labels, torch::kLong);
      b.positive_labels = torch::tensor(pos_labels, torch::kLong);
    }
    out.micro.push_back(std::move(b));
    out.indices.push_back(torch::tensor(idx, torch::kLong));
  }
  return out;
}

Trainer::PreparedStep Trainer::next_prepared(std::int64_t step_in_epoch) {
  const auto workers = cfg_.data.workers;
  if (workers == 0) return prepare_step(step_in_epoch);
  auto& q = prefetch_->pending;
  while (!q.empty() && q.front().first < step_in_epoch) {
    q.front().second.wait();
    q.pop_front();
  }
  const auto total = steps_per_epoch();
  auto next = q.empty() ? step_in_epoch : q.back().first + 1;
  for (; next < total && next <= step_in_epoch + workers; ++next) {
    q.emplace_back(next, std::async(std::launch::async, [this, next] { return prepare_step(next); }));
  }
  if (q.empty() || q.front().first != step_in_epoch) return prepare_step(step_in_epoch);
  auto prepared = q.front().second.get();
  q.pop_front();
  return prepared;
}

StepRecord Trainer::train_step(std::int64_t step_in_epoch) {
  if (order_.empty()) throw ConfigError("train_step called before begin_epoch");
  auto prepared = next_prepared(step_in_epoch);
  const auto options = addon_options(cfg_);
  auto& model = state_.model;
  auto& opt = *state_.optimizer;
  model->train();
  opt.zero_grad();

  std::int64_t total = 0;
  for (const auto& idx : prepared.indices) total += idx.size(0);
  StepRecord rec;
  rec.step = state_.global_step;
  rec.epoch = state_.epochs_completed + 1;
  std::vector<torch::Tensor> z_rows;
  for (std::size_t m = 0; m < prepared.micro.size(); ++m) {
    const double share = static_cast<double>(prepared.indices[m].size(0)) / static_cast<double>(total);
    auto out = addon_step(model, prepared.micro[m], options);
    (out.losses.total * share).backward();
    rec.l_ssl += share * out.losses.l_ssl;
    rec.l_mu += share * out.losses.l_mu;
    rec.l_cls += share * out.losses.l_cls;
    z_rows.push_back(out.z_s);
  }
  const auto& w = cfg_.addon.weights;
  rec.l_total = w.w0 * rec.l_ssl + w.w1 * rec.l_mu + w.w2 * rec.l_cls;

  rec.lr_core = lr_schedule(state_.global_step, LrGroup::core, cfg_, steps_per_epoch());
  rec.lr_attn = lr_schedule(state_.global_step, LrGroup::attn, cfg_, steps_per_epoch());
  set_group_lr(opt, 0, rec.lr_core);
  set_group_lr(opt, 1, rec.lr_attn);
  opt.step();
  if (cfg_.ssl.engine == Engine::swav) model->normalize_prototypes();

  if (cfg_.addon.enabled && cfg_.addon.online_bank_update && state_.bank.size() > 0) {
    state_.bank.write_rows(torch::cat(prepared.indices), torch::cat(z_rows));
  }
  ++state_.global_step;
  epoch_steps_.push_back(rec);
  ensure_log();
  log_->write(rec);
  if (on_step) on_step(rec);
  return rec;
}

EpochSummary Trainer::end_epoch() {
  EpochSummary s;
  s.epoch = state_.epochs_completed + 1;
  s.steps = static_cast<int>(epoch_steps_.size());
  for (const auto& r : epoch_steps_) {
    s.l_ssl += r.l_ssl;
    s.l_mu += r.l_mu;
    s.l_cls += r.l_cls;
    s.l_total += r.l_total;
  }
  if (s.steps > 0) {
    s.l_ssl /= s.steps;
    s.l_mu /= s.steps;
    s.l_cls /= s.steps;
    s.l_total /= s.steps;
  }
  if (cfg_.train.knn_monitor && data_.test && data_.test->size() > 0) {
    auto bank = embed_pooled(*data_.train, state_.model->backbone, cfg_.augment, cfg_.train.eval_batch);
    auto queries = embed_pooled(*data_.test, state_.model->backbone, cfg_.augment, cfg_.train.eval_batch);
    s.knn_top1 = knn_accuracy(bank, data_.train->labels(), queries, data_.test->labels(), data_.train->num_classes(),
                              cfg_.train.knn_k, cfg_.train.knn_tau);
  }
  ++state_.epochs_completed;
  ensure_log();
  log_->write(EpochRecord{s.epoch, s.l_ssl, s.l_mu, s.l_cls, s.l_total, s.knn_top1});
  log::info("epoch ", s.epoch, "/", cfg_.train.epochs, "  l_ssl=", s.l_ssl, " l_mu=", s.l_mu, " l_cls=", s.l_cls,
            s.knn_top1 ? "  knn_top1=" + std::to_string(*s.knn_top1) : std::string());
  if (s.epoch % cfg_.train.checkpoint_every == 0 || s.epoch == cfg_.train.epochs) {
    save_checkpoint(checkpoint_path(s.epoch), state_, cfg_);
    auto tmp = last_checkpoint();
    tmp += ".tmp";
    fs::copy_file(checkpoint_path(s.epoch), tmp, fs::copy_options::overwrite_existing);
    fs::rename(tmp, last_checkpoint());
  }
  order_.clear();
  return s;
}

std::vector<EpochSummary> Trainer::run(std::optional<int> stop_after_epoch) {
  const int until = std::min(cfg_.train.epochs, stop_after_epoch.value_or(cfg_.train.epochs));
  std::vector<EpochSummary> out;
  try {
    while (state_.epochs_completed < until) {
      begin_epoch();
      for (std::int64_t s = 0; s < steps_per_epoch(); ++s) train_step(s);
      out.push_back(end_epoch());
    }
  } catch (const NumericError& e) {
    prefetch_->pending.clear();
    log::warn("training aborted at step ", state_.global_step, ": ", e.what(),
              fs::exists(last_checkpoint()) ? "; last good checkpoint: " + last_checkpoint().string()
                                            : std::string("; no checkpoint was written yet"));
    throw;
  }
  return out;
}

}  // namespace sslattn
