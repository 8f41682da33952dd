#include "doctest.h"
#include "test_util.hpp"

#include "sslattn/clustering.hpp"
#include "sslattn/errors.hpp"
#include "sslattn/log.hpp"
#include "sslattn/trainer.hpp"

#include <cmath>
#include <fstream>

using namespace sslattn;

namespace {

std::vector<std::string> lines_of(const std::filesystem::path& file) {
  std::ifstream in(file);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

struct Quiet {
  Quiet() { log::set_level(log::Level::warn); }
};
const Quiet quiet;

}  // namespace

TEST_CASE("full run logs every step and epoch and checkpoints") {
  testutil::TempDir dir("run");
  Trainer t(testutil::tiny_run(dir.path()), testutil::tiny_splits());
  auto summaries = t.run();
  REQUIRE(summaries.size() == 3);
  for (const auto& s : summaries) {
    CHECK(std::isfinite(s.l_ssl));
    CHECK(std::isfinite(s.l_mu));
    CHECK(std::isfinite(s.l_cls));
    REQUIRE(s.knn_top1.has_value());
    CHECK(*s.knn_top1 >= 0.0);
  }
  auto rows = read_metrics(dir / "metrics.csv");
  CHECK(rows.size() == static_cast<size_t>(3 * t.steps_per_epoch() + 3));
  int epoch_rows = 0;
  for (const auto& r : rows) {
    epoch_rows += r.is_epoch_row();
    if (!r.is_epoch_row()) {
      const auto& w = t.config().addon.weights;
      CHECK(r.l_total == w.w0 * r.l_ssl + w.w1 * r.l_mu + w.w2 * r.l_cls);
    }
  }
  CHECK(epoch_rows == 3);
  CHECK(std::filesystem::exists(t.checkpoint_path(1)));
  CHECK(std::filesystem::exists(t.last_checkpoint()));
  CHECK(std::filesystem::exists(dir / "config.yaml"));
  auto info = read_checkpoint_info(t.last_checkpoint());
  CHECK(info.format == kCheckpointFormat);
  CHECK(info.epochs_completed == 3);
  CHECK(info.global_step == 3 * t.steps_per_epoch());
  CHECK(info.config.model.num_clusters == 4);
}

TEST_CASE("checkpoint roundtrip restores every tensor") {
  testutil::TempDir dir("ckpt");
  Trainer t(testutil::tiny_run(dir.path()), testutil::tiny_splits());
  t.run(1);
  auto loaded = load_checkpoint(t.checkpoint_path(1));
  auto a = t.state().model->named_parameters();
  auto b = loaded.model->named_parameters();
  for (const auto& item : a) CHECK(torch::equal(item.value(), b[item.key()]));
  auto ab = t.state().model->named_buffers();
  auto bb = loaded.model->named_buffers();
  for (const auto& item : ab) CHECK(torch::equal(item.value(), bb[item.key()]));
  CHECK(torch::equal(t.state().bank.matrix(), loaded.bank.matrix()));
  REQUIRE(loaded.clusters.has_value());
  CHECK(loaded.clusters->assignments == t.state().clusters->assignments);
  CHECK(loaded.epochs_completed == 1);
}

TEST_CASE("resume reproduces the uninterrupted run bitwise") {
  testutil::TempDir full_dir("full"), part_dir("part");
  Trainer full(testutil::tiny_run(full_dir.path()), testutil::tiny_splits());
  full.run();
  {
    Trainer first(testutil::tiny_run(part_dir.path()), testutil::tiny_splits());
    first.run(2);
  }
  Trainer second(testutil::tiny_run(part_dir.path()), testutil::tiny_splits());
  second.resume(second.checkpoint_path(2));
  second.run();
  CHECK(lines_of(full_dir / "metrics.csv") == lines_of(part_dir / "metrics.csv"));
  auto a = full.state().model->named_parameters();
  auto b = second.state().model->named_parameters();
  for (const auto& item : a) CHECK(torch::equal(item.value(), b[item.key()]));
}

TEST_CASE("resume rejects an incompatible model") {
  testutil::TempDir dir("incompat"), other("other");
  Trainer t(testutil::tiny_run(dir.path()), testutil::tiny_splits());
  t.run(1);
  auto cfg = testutil::tiny_run(other.path());
  cfg.model.num_clusters = 5;
  Trainer u(cfg, testutil::tiny_splits());
  CHECK_THROWS_AS(u.resume(t.checkpoint_path(1)), CheckpointError);
  CHECK_THROWS_AS(u.resume(other / "missing.ckpt"), CheckpointError);
  std::ofstream(other / "junk.ckpt") << "junk";
  CHECK_THROWS_AS(load_checkpoint(other / "junk.ckpt"), CheckpointError);
}

TEST_CASE("exported backbone is smaller and gives identical features") {
  testutil::TempDir dir("export");
  Trainer t(testutil::tiny_run(dir.path()), testutil::tiny_splits());
  t.run(1);
  const auto ckpt = t.checkpoint_path(1);
  export_backbone(ckpt, dir / "backbone.pt");
  CHECK(std::filesystem::file_size(dir / "backbone.pt") < std::filesystem::file_size(ckpt));
  auto exported = load_backbone(dir / "backbone.pt");
  auto full = load_backbone(ckpt);
  exported.backbone->eval();
  full.backbone->eval();
  torch::NoGradGuard ng;
  auto x = torch::randn({4, 3, 16, 16});
  CHECK(torch::equal(exported.backbone->forward(x), full.backbone->forward(x)));
  auto data = testutil::tiny_splits().test;
  CHECK(torch::equal(embed_pooled(*data, exported.backbone, exported.config.augment),
                     embed_pooled(*data, full.backbone, full.config.augment)));
  CHECK_THROWS_AS(load_checkpoint(dir / "backbone.pt"), CheckpointError);
}

TEST_CASE("zero add-on weights follow the bare engine") {
  testutil::TempDir a_dir("abl_a"), b_dir("abl_b");
  auto with = testutil::tiny_run(a_dir.path());
  with.addon.weights.w1 = 0.0;
  with.addon.weights.w2 = 0.0;
  with.train.knn_monitor = false;
  auto bare = testutil::tiny_run(b_dir.path());
  bare.addon.enabled = false;
  bare.train.knn_monitor = false;
  Trainer ta(with, testutil::tiny_splits());
  Trainer tb(bare, testutil::tiny_splits());
  ta.begin_epoch();
  tb.begin_epoch();
  for (int s = 0; s < 3; ++s) {
    ta.train_step(s);
    tb.train_step(s);
    auto pa = ta.state().model->core_parameters();
    auto pb = tb.state().model->core_parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(torch::equal(pa[i], pb[i]));
  }
}

TEST_CASE("non-finite loss aborts and keeps the last good checkpoint") {
  testutil::TempDir dir("nan");
  Trainer t(testutil::tiny_run(dir.path()), testutil::tiny_splits());
  t.run(1);
  {
    torch::NoGradGuard ng;
    t.state().model->prototypes->weight.fill_(NAN);
  }
  CHECK_THROWS_AS(t.run(), NumericError);
  auto info = read_checkpoint_info(t.last_checkpoint());
  CHECK(info.epochs_completed == 1);
  CHECK_NOTHROW(load_checkpoint(t.last_checkpoint()));
}

TEST_CASE("startup errors") {
  testutil::TempDir dir("startup");
  auto cfg = testutil::tiny_run(dir.path());
  cfg.model.num_clusters = 60;
  CHECK_THROWS_AS(Trainer(cfg, testutil::tiny_splits()), ConfigError);
  auto missing = testutil::tiny_run(dir.path());
  missing.data.root = (dir / "no_such_dir").string();
  CHECK_THROWS_AS(Trainer{missing}, DatasetError);
}

TEST_CASE("prefetching workers do not change results") {
  testutil::TempDir a_dir("wk_a"), b_dir("wk_b");
  auto a = testutil::tiny_run(a_dir.path());
  a.train.epochs = 1;
  auto b = a;
  b.train.out_dir = b_dir.path().string();
  b.data.workers = 2;
  Trainer ta(a, testutil::tiny_splits());
  Trainer tb(b, testutil::tiny_splits());
  ta.run();
  tb.run();
  CHECK(lines_of(a_dir / "metrics.csv") == lines_of(b_dir / "metrics.csv"));
}

TEST_CASE("cosine engine trains") {
  testutil::TempDir dir("cos");
  auto cfg = testutil::tiny_run(dir.path());
  cfg.ssl.engine = Engine::cosine;
  cfg.train.epochs = 1;
  Trainer t(cfg, testutil::tiny_splits());
  auto s = t.run();
  CHECK(std::isfinite(s[0].l_total));
  CHECK(s[0].l_ssl >= -1.0);
  CHECK(s[0].l_ssl <= 1.0);
}
