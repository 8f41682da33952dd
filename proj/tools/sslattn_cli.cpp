// sslattn: train, evaluate and export self-supervised encoders with the
// attention add-on. Talks to libsslattn through its C interface only.

#include "sslattn/sslattn.h"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

namespace {

int exit_code(sslattn_status st) {
  switch (st) {
    case SSLATTN_OK: return 0;
    case SSLATTN_ERR_CONFIG: return 3;
    case SSLATTN_ERR_DATASET: return 4;
    case SSLATTN_ERR_NUMERIC: return 5;
    case SSLATTN_ERR_CHECKPOINT: return 6;
    default: return 1;
  }
}

bool check(sslattn_status st, const char* what) {
  if (st == SSLATTN_OK) return true;
  std::fprintf(stderr, "sslattn: %s: %s: %s\n", what, sslattn_status_name(st), sslattn_last_error());
  return false;
}

struct Failure {
  sslattn_status status;
};

void must(sslattn_status st, const char* what) {
  if (!check(st, what)) throw Failure{st};
}

std::string fetch(sslattn_status (*fn)(const sslattn_config*, char*, size_t, size_t*), const sslattn_config* cfg) {
  size_t needed = 0;
  fn(cfg, nullptr, 0, &needed);
  std::string s(needed, '\0');
  must(fn(cfg, s.data(), s.size(), &needed), "read config");
  s.resize(needed - 1);
  return s;
}

struct TrainArgs {
  std::string config;
  std::string resume;
  long long seed = -1;
  int stop_after = 0;
  std::vector<std::string> overrides;
  bool dry_run = false;
};

int run_train(const TrainArgs& a) {
  sslattn_config* cfg = nullptr;
  sslattn_trainer* trainer = nullptr;
  int code = 0;
  try {
    must(sslattn_config_load(a.config.c_str(), &cfg), "load config");
    must(sslattn_config_apply_env(cfg), "environment override");
    for (const auto& kv : a.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::fprintf(stderr, "sslattn: --set expects key=value, got '%s'\n", kv.c_str());
        throw Failure{SSLATTN_ERR_CONFIG};
      }
      must(sslattn_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()), "--set");
    }
    if (a.seed >= 0) must(sslattn_config_set(cfg, "train.seed", std::to_string(a.seed).c_str()), "--seed");
    must(sslattn_config_validate(cfg), "validate config");
    if (a.dry_run) {
      std::cout << fetch(sslattn_config_dump, cfg);
      sslattn_config_free(cfg);
      return 0;
    }
    must(sslattn_trainer_create(cfg, &trainer), "create trainer");
    if (!a.resume.empty()) must(sslattn_trainer_resume(trainer, a.resume.c_str()), "resume");
    must(sslattn_trainer_run(trainer, a.stop_after), "train");
    char path[4096];
    size_t needed = 0;
    if (sslattn_trainer_last_checkpoint(trainer, path, sizeof(path), &needed) == SSLATTN_OK) {
      std::cout << "last checkpoint: " << path << '\n';
    }
  } catch (const Failure& f) {
    code = exit_code(f.status);
  }
  sslattn_trainer_free(trainer);
  sslattn_config_free(cfg);
  return code;
}

struct EvalArgs {
  std::string mode;
  std::string ckpt;
  std::string data;
  std::string out;
  std::string export_dir;
  std::string csv;
  std::string query_mode = "positive";
  long long anchor = 0;
  sslattn_eval_options opts{};
};

int run_eval(EvalArgs& a) {
  sslattn_report report{};
  if (!a.export_dir.empty()) a.opts.out_dir = a.export_dir.c_str();
  sslattn_status st = SSLATTN_OK;
  if (a.mode == "knn") {
    st = sslattn_eval_knn(a.ckpt.c_str(), a.data.c_str(), &a.opts, &report);
  } else if (a.mode == "probe") {
    st = sslattn_eval_probe(a.ckpt.c_str(), a.data.c_str(), &a.opts, &report);
  } else if (a.mode == "interpret") {
    st = sslattn_eval_interpret(a.ckpt.c_str(), a.data.c_str(), &a.opts, &report);
  } else {
    std::vector<int64_t> hits(static_cast<size_t>(std::max<long long>(a.opts.query_k, 3)));
    size_t count = 0;
    st = sslattn_eval_query(a.ckpt.c_str(), a.data.c_str(), &a.opts, a.anchor, a.query_mode == "negative",
                            a.csv.empty() ? nullptr : a.csv.c_str(), hits.data(), hits.size(), &count);
    if (!check(st, "eval query")) return exit_code(st);
    std::cout << "anchor " << a.anchor << " " << a.query_mode << ":";
    for (size_t i = 0; i < count && i < hits.size(); ++i) std::cout << ' ' << hits[i];
    std::cout << '\n';
    return 0;
  }
  if (!check(st, ("eval " + a.mode).c_str())) return exit_code(st);
  size_t needed = 0;
  sslattn_report_json(&report, nullptr, 0, &needed);
  std::string json(needed, '\0');
  sslattn_report_json(&report, json.data(), json.size(), &needed);
  json.resize(needed - 1);
  std::cout << json << '\n';
  if (!a.out.empty() && !check(sslattn_report_write(&report, a.out.c_str()), "write report")) return 1;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised representation learning with a detachable attention add-on"};
  app.require_subcommand(1);
  app.fallthrough();
  int verbosity = 1;
  app.add_option("--log-level", verbosity, "0 debug, 1 info, 2 warn, 3 error, 4 quiet")->check(CLI::Range(0, 4));

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train an encoder");
  t->add_option("--config", train.config, "YAML run configuration")->required()->check(CLI::ExistingFile);
  t->add_option("--resume", train.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  t->add_option("--seed", train.seed, "Overrides train.seed");
  t->add_option("--stop-after", train.stop_after, "Stop once this many epochs are complete");
  t->add_option("--set", train.overrides, "key=value config override (repeatable)");
  t->add_flag("--dry-run", train.dry_run, "Print the resolved config and exit");

  EvalArgs ev;
  sslattn_eval_options_init(&ev.opts);
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint or exported backbone");
  e->add_option("evaluation", ev.mode, "knn | probe | interpret | query")
      ->required()
      ->check(CLI::IsMember({"knn", "probe", "interpret", "query"}));
  e->add_option("--ckpt", ev.ckpt, "Checkpoint or exported backbone")->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--out", ev.out, "Write the JSON report here");
  e->add_option("--train-subset", ev.opts.train_subset, "Random training subset size (0 = all)");
  e->add_option("--test-subset", ev.opts.test_subset, "Random test subset size (0 = all)");
  e->add_option("--k", ev.opts.knn_k, "KNN neighbours")->capture_default_str();
  e->add_option("--tau", ev.opts.knn_tau, "KNN temperature")->capture_default_str();
  e->add_option("--probe-epochs", ev.opts.probe_epochs, "Linear-probe epochs")->capture_default_str();
  e->add_option("--probe-lr", ev.opts.probe_lr, "Linear-probe learning rate")->capture_default_str();
  e->add_option("--export-dir", ev.export_dir, "Saliency / explanation PNG directory (interpret)");
  e->add_option("--export-count", ev.opts.export_count, "Images to export (interpret)")->capture_default_str();
  e->add_option("--anchor", ev.anchor, "Anchor training-image index (query)");
  e->add_option("--mode", ev.query_mode, "positive | negative (query)")->check(CLI::IsMember({"positive", "negative"}));
  e->add_option("--query-k", ev.opts.query_k, "Neighbours returned in positive mode")->capture_default_str();
  e->add_option("--csv", ev.csv, "Write query results as CSV");
  e->add_option("--seed", ev.opts.seed, "Subset seed");
  e->add_option("--threads", ev.opts.threads, "Intra-op threads (0 = library default)");

  std::string export_ckpt, export_out;
  auto* x = app.add_subcommand("export", "Write a backbone-only artifact");
  x->add_option("--ckpt", export_ckpt, "Training checkpoint")->required()->check(CLI::ExistingFile);
  x->add_option("--out", export_out, "Output file")->required();

  std::string synth_dir;
  long long synth_train = 5000, synth_test = 1000;
  unsigned long long synth_seed = 0;
  auto* s = app.add_subcommand("synth", "Write a procedural dataset in CIFAR-10 binary layout");
  s->add_option("--out", synth_dir, "Output directory")->required();
  s->add_option("--train", synth_train, "Training images")->capture_default_str();
  s->add_option("--test", synth_test, "Test images")->capture_default_str();
  s->add_option("--seed", synth_seed, "Generator seed");

  CLI11_PARSE(app, argc, argv);
  sslattn_set_log_level(verbosity);

  if (*t) return run_train(train);
  if (*e) return run_eval(ev);
  if (*x) {
    auto st = sslattn_export_backbone(export_ckpt.c_str(), export_out.c_str());
    if (!check(st, "export")) return exit_code(st);
    std::cout << "wrote " << export_out << '\n';
    return 0;
  }
  auto st = sslattn_make_synthetic_cifar(synth_dir.c_str(), synth_train, synth_test, synth_seed);
  if (!check(st, "synth")) return exit_code(st);
  std::cout << "wrote " << synth_dir << '\n';
  return 0;
}
