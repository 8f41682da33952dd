#include "doctest.h"

#include "sslattn/sslattn.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

namespace fs = std::filesystem;

namespace {

fs::path scratch() {
  static fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("sslattn_capi_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string get(sslattn_config* cfg, const char* key) {
  size_t needed = 0;
  REQUIRE(sslattn_config_get(cfg, key, nullptr, 0, &needed) == SSLATTN_ERR_BUFFER);
  std::string buf(needed, '\0');
  REQUIRE(sslattn_config_get(cfg, key, buf.data(), buf.size(), &needed) == SSLATTN_OK);
  buf.resize(needed - 1);
  return buf;
}

sslattn_config* tiny_config(const fs::path& data, const fs::path& out) {
  sslattn_config* cfg = nullptr;
  REQUIRE(sslattn_config_preset("cifar10", &cfg) == SSLATTN_OK);
  const std::vector<std::pair<const char*, std::string>> kv = {
      {"data.root", data.string()},      {"model.backbone", "convnet"},    {"model.conv_widths", "[8, 16]"},
      {"model.conv_strides", "[2, 2]"},  {"model.input_size", "16"},       {"model.embed_dim", "8"},
      {"model.proj_hidden", "16"},       {"model.prototypes", "6"},        {"model.clusters", "4"},
      {"augment.crop_size", "16"},       {"addon.positives", "2"},         {"optim.batch_size", "16"},
      {"optim.micro_batch", "16"},       {"optim.warmup_epochs", "1"},     {"train.epochs", "2"},
      {"train.knn_k", "10"},             {"train.out_dir", out.string()},
  };
  for (const auto& [k, v] : kv) REQUIRE(sslattn_config_set(cfg, k, v.c_str()) == SSLATTN_OK);
  return cfg;
}

}  // namespace

TEST_CASE("status names, version and errors") {
  CHECK(std::string(sslattn_status_name(SSLATTN_OK)) == "ok");
  CHECK(std::string(sslattn_version()).size() > 0);
  sslattn_config* cfg = nullptr;
  CHECK(sslattn_config_preset("nope", &cfg) == SSLATTN_ERR_CONFIG);
  CHECK(cfg == nullptr);
  CHECK(std::string(sslattn_last_error()).find("nope") != std::string::npos);
  CHECK(sslattn_config_preset(nullptr, &cfg) == SSLATTN_ERR_ARGUMENT);
  sslattn_config_free(nullptr);
  sslattn_trainer_free(nullptr);
}

TEST_CASE("config handle") {
  sslattn_config* cfg = nullptr;
  REQUIRE(sslattn_config_preset("cifar10", &cfg) == SSLATTN_OK);
  CHECK(get(cfg, "model.clusters") == "30");
  CHECK(sslattn_config_set(cfg, "model.clusters", "12") == SSLATTN_OK);
  CHECK(get(cfg, "model.clusters") == "12");
  CHECK(sslattn_config_set(cfg, "model.nothing", "1") == SSLATTN_ERR_CONFIG);
  ::setenv("SSLATTN__TRAIN__SEED", "99", 1);
  CHECK(sslattn_config_apply_env(cfg) == SSLATTN_OK);
  ::unsetenv("SSLATTN__TRAIN__SEED");
  CHECK(get(cfg, "train.seed") == "99");
  CHECK(sslattn_config_validate(cfg) == SSLATTN_OK);
  size_t needed = 0;
  sslattn_config_dump(cfg, nullptr, 0, &needed);
  std::string yaml(needed, '\0');
  REQUIRE(sslattn_config_dump(cfg, yaml.data(), yaml.size(), &needed) == SSLATTN_OK);
  auto file = scratch() / "dump.yaml";
  std::ofstream(file) << yaml.c_str();
  sslattn_config* back = nullptr;
  REQUIRE(sslattn_config_load(file.c_str(), &back) == SSLATTN_OK);
  CHECK(get(back, "model.clusters") == "12");
  CHECK(get(back, "train.seed") == "99");
  sslattn_config_free(back);
  sslattn_config_free(cfg);
}

TEST_CASE("train, export and evaluate through the C API") {
  sslattn_set_log_level(3);
  const auto data = scratch() / "data";
  REQUIRE(sslattn_make_synthetic_cifar(data.c_str(), 64, 24, 5) == SSLATTN_OK);
  auto* cfg = tiny_config(data, scratch() / "run");
  sslattn_trainer* tr = nullptr;
  REQUIRE(sslattn_trainer_create(cfg, &tr) == SSLATTN_OK);
  REQUIRE(sslattn_trainer_run(tr, 1) == SSLATTN_OK);
  int done = 0;
  CHECK(sslattn_trainer_epochs_completed(tr, &done) == SSLATTN_OK);
  CHECK(done == 1);
  REQUIRE(sslattn_trainer_run(tr, 0) == SSLATTN_OK);
  sslattn_trainer_epochs_completed(tr, &done);
  CHECK(done == 2);
  char path[1024];
  size_t needed = 0;
  REQUIRE(sslattn_trainer_last_checkpoint(tr, path, sizeof(path), &needed) == SSLATTN_OK);
  sslattn_trainer_free(tr);

  const auto bb = scratch() / "bb.pt";
  REQUIRE(sslattn_export_backbone(path, bb.c_str()) == SSLATTN_OK);

  sslattn_eval_options opts;
  sslattn_eval_options_init(&opts);
  opts.knn_k = 10;
  opts.probe_epochs = 2;
  sslattn_report from_ckpt{}, from_bb{};
  REQUIRE(sslattn_eval_knn(path, data.c_str(), &opts, &from_ckpt) == SSLATTN_OK);
  REQUIRE(sslattn_eval_knn(bb.c_str(), data.c_str(), &opts, &from_bb) == SSLATTN_OK);
  CHECK(from_ckpt.has_knn);
  CHECK(from_ckpt.knn_top1 == from_bb.knn_top1);

  auto exports = scratch() / "png";
  opts.out_dir = exports.c_str();
  opts.export_count = 2;
  REQUIRE(sslattn_eval_interpret(bb.c_str(), data.c_str(), &opts, &from_bb) == SSLATTN_OK);
  CHECK(from_bb.has_interpret);
  CHECK(from_bb.has_probe);
  CHECK(from_bb.avg_drop >= 0.0);
  CHECK(from_bb.avg_drop <= 100.0);
  CHECK(fs::exists(exports / "img1_saliency.png"));

  std::string json(512, '\0');
  REQUIRE(sslattn_report_json(&from_bb, json.data(), json.size(), &needed) == SSLATTN_OK);
  CHECK(json.find("\"knn_top1\"") != std::string::npos);
  CHECK(json.find("\"avg_increase\"") != std::string::npos);

  int64_t hits[8];
  size_t count = 0;
  const auto csv = scratch() / "q.csv";
  REQUIRE(sslattn_eval_query(bb.c_str(), data.c_str(), &opts, 0, 1, csv.c_str(), hits, 8, &count) == SSLATTN_OK);
  CHECK(count == 3);
  CHECK(fs::exists(csv));
  CHECK(sslattn_eval_knn(bb.c_str(), (scratch() / "none").c_str(), &opts, &from_bb) == SSLATTN_ERR_DATASET);
  CHECK(sslattn_export_backbone((scratch() / "none.ckpt").c_str(), bb.c_str()) == SSLATTN_ERR_CHECKPOINT);
  sslattn_config_free(cfg);
  fs::remove_all(scratch());
}
