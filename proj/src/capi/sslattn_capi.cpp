#include "sslattn/sslattn.h"

#include "sslattn/clustering.hpp"
#include "sslattn/config.hpp"
#include "sslattn/dataset.hpp"
#include "sslattn/errors.hpp"
#include "sslattn/evaluation.hpp"
#include "sslattn/log.hpp"
#include "sslattn/trainer.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

struct sslattn_config {
  sslattn::RunConfig cfg;
};

struct sslattn_trainer {
  std::unique_ptr<sslattn::Trainer> trainer;
};

namespace {

thread_local std::string g_last_error;

sslattn_status fail(sslattn_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
sslattn_status guarded(F&& body) {
  g_last_error.clear();
  try {
    body();
    return SSLATTN_OK;
  } catch (const sslattn::ConfigError& e) {
    return fail(SSLATTN_ERR_CONFIG, e.what());
  } catch (const sslattn::DatasetError& e) {
    return fail(SSLATTN_ERR_DATASET, e.what());
  } catch (const sslattn::NumericError& e) {
    return fail(SSLATTN_ERR_NUMERIC, e.what());
  } catch (const sslattn::CheckpointError& e) {
    return fail(SSLATTN_ERR_CHECKPOINT, e.what());
  } catch (const c10::Error& e) {
    return fail(SSLATTN_ERR_INTERNAL, e.what_without_backtrace());
  } catch (const std::exception& e) {
    return fail(SSLATTN_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(SSLATTN_ERR_INTERNAL, "unknown error");
  }
}

sslattn_status copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (!buf || cap < s.size() + 1) return fail(SSLATTN_ERR_BUFFER, "buffer too small; need " + std::to_string(s.size() + 1));
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return SSLATTN_OK;
}

void require(bool ok, const char* what) {
  if (!ok) throw sslattn::ConfigError(std::string("invalid argument: ") + what);
}

struct EvalContext {
  sslattn::LoadedBackbone model;
  sslattn::DataSplits data;
};

EvalContext open_eval(const char* model, const char* data_dir, const sslattn_eval_options* opts) {
  require(model && data_dir && opts, "model, data_dir and options are required");
  if (opts->threads > 0) torch::set_num_threads(opts->threads);
  EvalContext ctx;
  ctx.model = sslattn::load_backbone(model);
  ctx.data = sslattn::open_dataset(data_dir, opts->train_subset, opts->test_subset, opts->seed);
  return ctx;
}

sslattn::ProbeConfig probe_config(const sslattn_eval_options* opts) {
  sslattn::ProbeConfig p;
  p.epochs = opts->probe_epochs;
  p.lr = opts->probe_lr;
  p.seed = opts->seed;
  return p;
}

}  // namespace

extern "C" {

const char* sslattn_version(void) { return "0.1.0"; }

const char* sslattn_last_error(void) { return g_last_error.c_str(); }

const char* sslattn_status_name(sslattn_status status) {
  switch (status) {
    case SSLATTN_OK: return "ok";
    case SSLATTN_ERR_CONFIG: return "config error";
    case SSLATTN_ERR_DATASET: return "dataset error";
    case SSLATTN_ERR_NUMERIC: return "numeric error";
    case SSLATTN_ERR_CHECKPOINT: return "checkpoint error";
    case SSLATTN_ERR_ARGUMENT: return "invalid argument";
    case SSLATTN_ERR_BUFFER: return "buffer too small";
    case SSLATTN_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void sslattn_set_log_level(int level) {
  level = std::max(0, std::min(level, 4));
  sslattn::log::set_level(static_cast<sslattn::log::Level>(level));
}

sslattn_status sslattn_config_load(const char* path, sslattn_config** out) {
  if (!path || !out) return fail(SSLATTN_ERR_ARGUMENT, "path and out are required");
  return guarded([&] { *out = new sslattn_config{sslattn::load_config(path)}; });
}

sslattn_status sslattn_config_preset(const char* name, sslattn_config** out) {
  if (!name || !out) return fail(SSLATTN_ERR_ARGUMENT, "name and out are required");
  return guarded([&] { *out = new sslattn_config{sslattn::preset(name)}; });
}

sslattn_status sslattn_config_set(sslattn_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return fail(SSLATTN_ERR_ARGUMENT, "cfg, key and value are required");
  return guarded([&] { cfg->cfg.set(key, value); });
}

sslattn_status sslattn_config_get(const sslattn_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  if (!cfg || !key) return fail(SSLATTN_ERR_ARGUMENT, "cfg and key are required");
  std::string value;
  auto st = guarded([&] { value = cfg->cfg.get(key); });
  return st == SSLATTN_OK ? copy_out(value, buf, cap, needed) : st;
}

sslattn_status sslattn_config_apply_env(sslattn_config* cfg) {
  if (!cfg) return fail(SSLATTN_ERR_ARGUMENT, "cfg is required");
  return guarded([&] {
    for (const auto& key : sslattn::apply_env_overrides(cfg->cfg, sslattn::process_environment())) {
      sslattn::log::info("config override from environment: ", key, " = ", cfg->cfg.get(key));
    }
  });
}

sslattn_status sslattn_config_validate(const sslattn_config* cfg) {
  if (!cfg) return fail(SSLATTN_ERR_ARGUMENT, "cfg is required");
  return guarded([&] { cfg->cfg.validate(); });
}

sslattn_status sslattn_config_dump(const sslattn_config* cfg, char* buf, size_t cap, size_t* needed) {
  if (!cfg) return fail(SSLATTN_ERR_ARGUMENT, "cfg is required");
  return copy_out(cfg->cfg.to_yaml(), buf, cap, needed);
}

void sslattn_config_free(sslattn_config* cfg) { delete cfg; }

sslattn_status sslattn_trainer_create(const sslattn_config* cfg, sslattn_trainer** out) {
  if (!cfg || !out) return fail(SSLATTN_ERR_ARGUMENT, "cfg and out are required");
  return guarded([&] {
    auto t = std::make_unique<sslattn_trainer>();
    t->trainer = std::make_unique<sslattn::Trainer>(cfg->cfg);
    *out = t.release();
  });
}

sslattn_status sslattn_trainer_resume(sslattn_trainer* trainer, const char* checkpoint) {
  if (!trainer || !checkpoint) return fail(SSLATTN_ERR_ARGUMENT, "trainer and checkpoint are required");
  return guarded([&] { trainer->trainer->resume(checkpoint); });
}

sslattn_status sslattn_trainer_run(sslattn_trainer* trainer, int stop_after_epoch) {
  if (!trainer) return fail(SSLATTN_ERR_ARGUMENT, "trainer is required");
  return guarded([&] {
    if (stop_after_epoch > 0) trainer->trainer->run(stop_after_epoch);
    else trainer->trainer->run();
  });
}

sslattn_status sslattn_trainer_epochs_completed(const sslattn_trainer* trainer, int* out) {
  if (!trainer || !out) return fail(SSLATTN_ERR_ARGUMENT, "trainer and out are required");
  *out = trainer->trainer->state().epochs_completed;
  return SSLATTN_OK;
}

sslattn_status sslattn_trainer_last_checkpoint(const sslattn_trainer* trainer, char* buf, size_t cap, size_t* needed) {
  if (!trainer) return fail(SSLATTN_ERR_ARGUMENT, "trainer is required");
  return copy_out(trainer->trainer->last_checkpoint().string(), buf, cap, needed);
}

void sslattn_trainer_free(sslattn_trainer* trainer) { delete trainer; }

sslattn_status sslattn_export_backbone(const char* checkpoint, const char* out) {
  if (!checkpoint || !out) return fail(SSLATTN_ERR_ARGUMENT, "checkpoint and out are required");
  return guarded([&] { sslattn::export_backbone(checkpoint, out); });
}

void sslattn_eval_options_init(sslattn_eval_options* opts) {
  if (!opts) return;
  opts->train_subset = 0;
  opts->test_subset = 0;
  opts->knn_k = 200;
  opts->knn_tau = 0.07;
  opts->probe_epochs = 10;
  opts->probe_lr = 0.3;
  opts->query_k = 20;
  opts->export_count = 8;
  opts->seed = 0;
  opts->threads = 0;
  opts->out_dir = nullptr;
}

sslattn_status sslattn_eval_knn(const char* model, const char* data_dir, const sslattn_eval_options* opts,
                                sslattn_report* report) {
  if (!report) return fail(SSLATTN_ERR_ARGUMENT, "report is required");
  return guarded([&] {
    auto ctx = open_eval(model, data_dir, opts);
    const auto& aug = ctx.model.config.augment;
    auto bank = sslattn::embed_pooled(*ctx.data.train, ctx.model.backbone, aug);
    auto queries = sslattn::embed_pooled(*ctx.data.test, ctx.model.backbone, aug);
    report->knn_top1 = sslattn::knn_accuracy(bank, ctx.data.train->labels(), queries, ctx.data.test->labels(),
                                             ctx.data.train->num_classes(), opts->knn_k, opts->knn_tau);
    report->has_knn = 1;
  });
}

sslattn_status sslattn_eval_probe(const char* model, const char* data_dir, const sslattn_eval_options* opts,
                                  sslattn_report* report) {
  if (!report) return fail(SSLATTN_ERR_ARGUMENT, "report is required");
  return guarded([&] {
    auto ctx = open_eval(model, data_dir, opts);
    auto result = sslattn::linear_probe(ctx.model.backbone, *ctx.data.train, *ctx.data.test, ctx.model.config.augment,
                                        probe_config(opts));
    if (result.backbone_grad_norm != 0.0) throw sslattn::NumericError("linear probe leaked gradient into the backbone");
    report->probe_top1 = result.top1;
    report->has_probe = 1;
  });
}

sslattn_status sslattn_eval_interpret(const char* model, const char* data_dir, const sslattn_eval_options* opts,
                                      sslattn_report* report) {
  if (!report) return fail(SSLATTN_ERR_ARGUMENT, "report is required");
  return guarded([&] {
    auto ctx = open_eval(model, data_dir, opts);
    const auto& aug = ctx.model.config.augment;
    auto probe = sslattn::linear_probe(ctx.model.backbone, *ctx.data.train, *ctx.data.test, aug, probe_config(opts));
    sslattn::InterpretOptions io;
    if (opts->out_dir) io.export_dir = std::filesystem::path(opts->out_dir);
    io.export_count = opts->export_count;
    auto r = sslattn::interpret(ctx.model.backbone, probe.classifier, *ctx.data.test, aug, io);
    report->probe_top1 = probe.top1;
    report->has_probe = 1;
    report->avg_drop = r.avg_drop;
    report->avg_increase = r.avg_increase;
    report->avg_drop_literal = r.avg_drop_literal;
    report->avg_increase_literal = r.avg_increase_literal;
    report->has_interpret = 1;
  });
}

sslattn_status sslattn_eval_query(const char* model, const char* data_dir, const sslattn_eval_options* opts,
                                  int64_t anchor, int negative, const char* csv_out, int64_t* indices, size_t cap,
                                  size_t* count) {
  return guarded([&] {
    auto ctx = open_eval(model, data_dir, opts);
    auto bank = sslattn::embed_pooled(*ctx.data.train, ctx.model.backbone, ctx.model.config.augment);
    auto hits = sslattn::knn_query(anchor, bank, opts->query_k,
                                   negative ? sslattn::QueryMode::negative : sslattn::QueryMode::positive);
    if (csv_out) sslattn::write_query_csv(csv_out, anchor, hits, bank, ctx.data.train->labels());
    if (count) *count = hits.size();
    for (size_t i = 0; indices && i < hits.size() && i < cap; ++i) indices[i] = hits[i];
  });
}

sslattn_status sslattn_report_json(const sslattn_report* report, char* buf, size_t cap, size_t* needed) {
  if (!report) return fail(SSLATTN_ERR_ARGUMENT, "report is required");
  sslattn::Report r;
  if (report->has_knn) r.knn_top1 = report->knn_top1;
  if (report->has_probe) r.probe_top1 = report->probe_top1;
  if (report->has_interpret) {
    r.avg_drop = report->avg_drop;
    r.avg_increase = report->avg_increase;
    r.avg_drop_literal = report->avg_drop_literal;
    r.avg_increase_literal = report->avg_increase_literal;
  }
  return copy_out(sslattn::report_json(r), buf, cap, needed);
}

sslattn_status sslattn_report_write(const sslattn_report* report, const char* path) {
  if (!report || !path) return fail(SSLATTN_ERR_ARGUMENT, "report and path are required");
  size_t needed = 0;
  sslattn_report_json(report, nullptr, 0, &needed);
  std::string json(needed, '\0');
  auto st = sslattn_report_json(report, json.data(), json.size(), &needed);
  if (st != SSLATTN_OK) return st;
  json.resize(needed - 1);
  return guarded([&] {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw sslattn::DatasetError(std::string("cannot write report ") + path);
    out << json << '\n';
  });
}

sslattn_status sslattn_make_synthetic_cifar(const char* dir, int64_t train_count, int64_t test_count, uint64_t seed) {
  if (!dir) return fail(SSLATTN_ERR_ARGUMENT, "dir is required");
  return guarded([&] { sslattn::write_synthetic_cifar10(dir, train_count, test_count, seed); });
}

}  // extern "C"
