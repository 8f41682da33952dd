// Acceptance checks. One line per criterion: "criterion N: PASS|FAIL|SKIP  detail".
//
//   acceptance --criteria 1,2,...      run the listed criteria
//   acceptance --require-data          exit 77 when SSLATTN_CIFAR10_DIR is unset
//   acceptance --proxy --work <dir>    criteria 8/9 procedure on generated data (labelled PROXY)
//   --cli <path>                       sslattn binary for the `eval knn` step of 9

#include "sslattn/attention_addon.hpp"
#include "sslattn/augment.hpp"
#include "sslattn/clustering.hpp"
#include "sslattn/config.hpp"
#include "sslattn/dataset.hpp"
#include "sslattn/errors.hpp"
#include "sslattn/evaluation.hpp"
#include "sslattn/log.hpp"
#include "sslattn/rng.hpp"
#include "sslattn/ssl_core.hpp"
#include "sslattn/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace sslattn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  enum Kind { pass, fail, skip } kind = fail;
  std::string detail;
};

Outcome verdict(bool ok, const std::string& detail) { return {ok ? Outcome::pass : Outcome::fail, detail}; }

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- 1

Outcome correlation_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0;
  for (int t = 0; t < 200; ++t) {
    const auto D = 1 + static_cast<int64_t>(rng.below(4)), H = 1 + static_cast<int64_t>(rng.below(3)),
               W = 1 + static_cast<int64_t>(rng.below(3)), P = 1 + static_cast<int64_t>(rng.below(3));
    std::vector<double> fs_v(D * H * W), pos_v(P * D * H * W);
    for (auto& v : fs_v) v = rng.uniform(-2, 2);
    for (auto& v : pos_v) v = rng.uniform(-2, 2);
    auto src = torch::tensor(fs_v, torch::kDouble).view({D, H, W}).to(torch::kFloat32);
    auto pos = torch::tensor(pos_v, torch::kDouble).view({P, D, H, W}).to(torch::kFloat32);
    // read back the float32 values so both sides see identical inputs
    auto sd = src.to(torch::kDouble).contiguous(), pd = pos.to(torch::kDouble).contiguous();
    const double* s = sd.data_ptr<double>();
    const double* q = pd.data_ptr<double>();
    std::vector<double> oracle(H * W, 0.0);
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < W; ++j) {
        double acc = 0;
        for (int64_t p = 0; p < P; ++p) {
          double best = -1e300;
          for (int64_t a = 0; a < H; ++a)
            for (int64_t b = 0; b < W; ++b) {
              double dot = 0;
              for (int64_t k = 0; k < D; ++k) dot += s[(k * H + i) * W + j] * q[((p * D + k) * H + a) * W + b];
              best = std::max(best, dot);
            }
          acc += best / static_cast<double>(D);
        }
        oracle[i * W + j] = acc / static_cast<double>(P);
      }
    const double lo = *std::min_element(oracle.begin(), oracle.end());
    const double hi = *std::max_element(oracle.begin(), oracle.end());
    for (bool normalize : {false, true}) {
      auto mu = correlation_mask(src, pos, normalize).to(torch::kDouble).contiguous();
      const double* m = mu.data_ptr<double>();
      for (int64_t i = 0; i < H * W; ++i) {
        const double expect = !normalize ? oracle[i] : (hi > lo ? (oracle[i] - lo) / (hi - lo) : 0.0);
        worst = std::max(worst, std::abs(m[i] - expect));
      }
    }
  }
  const double secs = seconds_since(t0);
  return verdict(worst <= 1e-6 && secs < 10.0,
                 "200 instances, max abs err " + fmt(worst) + " (<= 1e-6), " + fmt(secs) + " s (< 10 s)");
}

// ---------------------------------------------------------------- 2

Outcome sinkhorn_marginals() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(202);
  double col_default = 0, row_default = 0, row_conv = 0, col_conv = 0;
  int max_iters_used = 0;
  for (int t = 0; t < 100; ++t) {
    const auto B = 1 + static_cast<int64_t>(rng.below(16)), K = 1 + static_cast<int64_t>(rng.below(16));
    std::vector<double> v(B * K);
    for (auto& x : v) x = rng.uniform(-1, 1);  // prototype scores of unit vectors
    auto scores = torch::tensor(v, torch::kDouble).view({B, K});

    auto q = sinkhorn(scores, {0.05, 3});
    col_default = std::max(col_default, (q.sum(0) - 1.0 / K).abs().max().item<double>());
    row_default = std::max(row_default, (q.sum(1) - 1.0 / B).abs().max().item<double>());

    // same operator, iterated until the row marginals settle
    int used = 0;
    torch::Tensor qc;
    for (int cap : {100, 1000, 10000, 100000}) {
      qc = sinkhorn(scores, {0.05, cap, 1e-7});
      used = cap;
      if ((qc.sum(1) - 1.0 / B).abs().max().item<double>() <= 1e-7) break;
    }
    max_iters_used = std::max(max_iters_used, used);
    row_conv = std::max(row_conv, (qc.sum(1) - 1.0 / B).abs().max().item<double>());
    col_conv = std::max(col_conv, (qc.sum(0) - 1.0 / K).abs().max().item<double>());
  }
  const double secs = seconds_since(t0);
  const bool ok = row_conv <= 1e-4 && col_conv <= 1e-4 && col_default <= 1e-4 && secs < 10.0;
  return verdict(ok, "100 matrices B,K<=16: iterated to convergence (eps .05) row err " + fmt(row_conv) +
                         ", col err " + fmt(col_conv) + " (<= 1e-4); default 3 iterations: col err " +
                         fmt(col_default) + ", row err " + fmt(row_default) +
                         " (rows are renormalised into codes afterwards); " + fmt(secs) + " s");
}

// ---------------------------------------------------------------- 3, 4

EncoderConfig fd_encoder() {
  EncoderConfig e;
  e.backbone = BackboneKind::convnet;
  e.conv_widths = {4};
  e.conv_strides = {1};
  e.input_size = 2;
  e.proj_hidden = 4;
  e.embed_dim = 4;
  e.num_prototypes = 3;
  e.num_clusters = 3;
  return e;
}

StepBatch fd_batch(torch::ScalarType dtype, int64_t b, int64_t p, int64_t size, int64_t k) {
  StepBatch batch;
  batch.view_s = torch::randn({b, 3, size, size}).to(dtype);
  batch.view_t = torch::randn({b, 3, size, size}).to(dtype);
  batch.positives = torch::randn({b * p, 3, size, size}).to(dtype);
  batch.positives_per_source = p;
  batch.source_labels = torch::randint(k, {b}, torch::kLong);
  batch.positive_labels = batch.source_labels.repeat_interleave(p);
  return batch;
}

Outcome detachment() {
  torch::manual_seed(303);
  auto enc = fd_encoder();
  enc.conv_widths = {6, 8};
  enc.conv_strides = {1, 2};
  enc.input_size = 8;
  enc.proj_hidden = 16;
  enc.embed_dim = 8;
  enc.num_prototypes = 5;
  SslModel model(enc);
  auto batch = fd_batch(torch::kFloat32, 4, 2, 8, 3);
  AddonOptions opt;

  auto grads = [&](const StepTargets* frozen, StepTargets* seen) {
    model->zero_grad();
    auto out = addon_step(model, batch, opt, frozen);
    out.losses.total.backward();
    if (seen) *seen = out.targets;
    std::vector<torch::Tensor> g;
    for (auto& p : model->parameters()) g.push_back(p.grad().defined() ? p.grad().clone() : torch::Tensor());
    return g;
  };
  StepTargets targets;
  auto real = grads(nullptr, &targets);
  StepTargets constant = targets;
  constant.mu = torch::empty_like(targets.mu).copy_(targets.mu);
  auto copied = grads(&constant, nullptr);
  bool identical = real.size() == copied.size();
  for (size_t i = 0; identical && i < real.size(); ++i) {
    identical = real[i].defined() == copied[i].defined() && (!real[i].defined() || torch::equal(real[i], copied[i]));
  }

  // l_mu alone: positive images reach it only through mu
  auto pos = batch.positives.clone().requires_grad_(true);
  StepBatch b2 = batch;
  b2.positives = pos;
  AddonOptions only_mu = opt;
  only_mu.weights.w0 = 0.0;
  only_mu.weights.w1 = 1.0;
  only_mu.weights.w2 = 0.0;
  model->zero_grad();
  auto out = addon_step(model, b2, only_mu);
  auto g = torch::autograd::grad({out.losses.total}, {pos}, {}, std::nullopt, false, /*allow_unused=*/true)[0];
  const bool no_flow = !g.defined() || g.abs().max().item<double>() == 0.0;
  const bool mu_const = !out.targets.mu.requires_grad();
  return verdict(identical && no_flow && mu_const,
                 std::string("gradients with mu replaced by a constant copy ") +
                     (identical ? "equal the real ones bitwise" : "DIFFER") + "; d l_mu / d positives " +
                     (no_flow ? "is zero" : "is NONZERO") + "; mu requires_grad=" + (mu_const ? "false" : "true"));
}

struct FdResult {
  double worst_rel = 0;
  int checked = 0;
  int failed = 0;
  std::string worst_name;
};

FdResult finite_differences(Engine engine) {
  torch::manual_seed(engine == Engine::swav ? 404 : 405);
  SslModel model(fd_encoder());
  model->to(torch::kDouble);
  model->train();
  auto batch = fd_batch(torch::kDouble, 2, 2, 2, 3);
  AddonOptions opt;
  opt.engine = engine;
  opt.sinkhorn = {0.05, 3};

  // stop-gradient targets (codes, cosine targets, mu) are held fixed on both sides
  model->zero_grad();
  auto first = addon_step(model, batch, opt);
  first.losses.total.backward();
  const StepTargets targets = first.targets;
  auto loss_at = [&]() {
    torch::NoGradGuard ng;
    return addon_step(model, batch, opt, &targets).losses.total.item<double>();
  };

  FdResult r;
  const double h = 1e-4;
  for (auto& item : model->named_parameters()) {
    auto p = item.value();
    auto grad = p.grad().defined() ? p.grad().clone() : torch::zeros_like(p);
    auto flat = p.data().view({-1});
    auto gflat = grad.view({-1});
    for (int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      double f[4];
      const double offs[4] = {2 * h, h, -h, -2 * h};
      for (int s = 0; s < 4; ++s) {
        flat[i] = orig + offs[s];
        f[s] = loss_at();
      }
      flat[i] = orig;
      const double numeric = (-f[0] + 8 * f[1] - 8 * f[2] + f[3]) / (12 * h);
      const double analytic = gflat[i].item<double>();
      const double scale = std::max(std::abs(numeric), std::abs(analytic));
      if (scale <= 1e-8) continue;
      ++r.checked;
      const double rel = std::abs(numeric - analytic) / scale;
      if (rel >= 1e-5) ++r.failed;
      if (rel > r.worst_rel) {
        r.worst_rel = rel;
        r.worst_name = item.key() + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

Outcome gradient_check() {
  auto s = finite_differences(Engine::swav);
  auto c = finite_differences(Engine::cosine);
  auto line = [](const char* name, const FdResult& r) {
    return std::string(name) + ": " + std::to_string(r.checked) + " entries, worst rel err " + fmt(r.worst_rel) +
           " at " + r.worst_name + (r.failed ? ", " + std::to_string(r.failed) + " over 1e-5" : "");
  };
  return verdict(s.failed == 0 && c.failed == 0 && s.checked > 0 && c.checked > 0,
                 "float64 D=4 H=W=2 d=4 K=K_c=3 B=2, L_total vs central differences; " + line("swav", s) + "; " +
                     line("cosine", c));
}

// ---------------------------------------------------------------- 5

RunConfig small_run(const fs::path& out) {
  auto cfg = preset("cifar10");
  cfg.model.backbone = BackboneKind::convnet;
  cfg.model.conv_widths = {8, 16};
  cfg.model.conv_strides = {2, 2};
  cfg.model.input_size = 16;
  cfg.model.proj_hidden = 16;
  cfg.model.embed_dim = 8;
  cfg.model.num_prototypes = 6;
  cfg.model.num_clusters = 4;
  cfg.augment.crop_size = 16;
  cfg.addon.positives = 2;
  cfg.optim.batch_size = 16;
  cfg.optim.micro_batch = 8;
  cfg.optim.warmup_epochs = 1;
  cfg.train.epochs = 2;
  cfg.train.knn_monitor = false;
  cfg.train.seed = 505;
  cfg.train.out_dir = out.string();
  return cfg;
}

DataSplits small_splits() {
  DataSplits s;
  s.train = make_synthetic_dataset(64, 10, 32, 5);
  s.test = make_synthetic_dataset(16, 10, 32, 6);
  return s;
}

Outcome ablation(const fs::path& work) {
  auto with = small_run(work / "ablation_addon");
  with.addon.weights.w1 = 0.0;
  with.addon.weights.w2 = 0.0;
  auto bare = small_run(work / "ablation_bare");
  bare.addon.enabled = false;
  Trainer ta(with, small_splits());
  Trainer tb(bare, small_splits());
  ta.begin_epoch();
  tb.begin_epoch();
  bool same = true;
  std::size_t compared = 0;
  for (int s = 0; s < 3; ++s) {
    auto ra = ta.train_step(s);
    auto rb = tb.train_step(s);
    same = same && ra.l_ssl == rb.l_ssl;
    auto pa = ta.state().model->core_parameters();
    auto pb = tb.state().model->core_parameters();
    same = same && pa.size() == pb.size();
    for (std::size_t i = 0; same && i < pa.size(); ++i) same = torch::equal(pa[i], pb[i]);
    compared = pa.size();
  }
  return verdict(same, "w1=w2=0 vs add-on disabled, same seed, 3 steps: " + std::to_string(compared) +
                           " core parameter tensors " + (same ? "bitwise identical" : "DIFFER") +
                           " after every step (add-on head weights only see weight decay)");
}

// ---------------------------------------------------------------- 6

Outcome knn_blobs() {
  torch::manual_seed(606);
  const int64_t dim = 16;
  auto centers = torch::randn({3, dim});
  centers = centers / centers.norm(2, 1, true);
  auto draw = [&](int64_t per_class, std::vector<int64_t>& labels) {
    std::vector<torch::Tensor> rows;
    for (int64_t c = 0; c < 3; ++c) {
      rows.push_back(centers[c].unsqueeze(0) + 0.05 * torch::randn({per_class, dim}));
      for (int64_t i = 0; i < per_class; ++i) labels.push_back(c);
    }
    auto x = torch::cat(rows);
    return x / x.norm(2, 1, true);
  };
  std::vector<int64_t> bank_labels, query_labels;
  auto bank = draw(100, bank_labels);
  auto queries = draw(20, query_labels);
  const double acc = knn_accuracy(bank, bank_labels, queries, query_labels, 3, 5, 0.07);
  return verdict(acc == 1.0, "3 blobs sigma .05 on S^15, 300 bank / 60 queries, k=5: top-1 " + fmt(acc * 100) + "%");
}

// ---------------------------------------------------------------- 7

Outcome interpretability() {
  torch::manual_seed(707);
  EncoderConfig enc;
  enc.backbone = BackboneKind::convnet;
  enc.conv_widths = {8, 16};
  enc.conv_strides = {2, 2};
  enc.input_size = 16;
  Backbone bb(enc);
  bb->eval();
  torch::nn::Linear head(16, 10);
  auto data = make_synthetic_dataset(40, 10, 32, 7);
  auto aug = cifar_config();
  aug.crop_size = 16;

  // rendering == 1: explanation images are the originals
  std::vector<ConfidencePair> pairs;
  {
    torch::NoGradGuard ng;
    for (int64_t i = 0; i < data->size(); ++i) {
      auto img = eval_crop(data->image(i), aug);
      auto expl = explanation_image(img, torch::ones({img.size(1), img.size(2)}));
      auto conf = [&](const torch::Tensor& x) {
        auto logits = head->forward(global_avg_pool(bb->forward(normalize(x, aug).unsqueeze(0))));
        return torch::softmax(logits, 1)[0];
      };
      auto y = conf(img), o = conf(expl);
      const auto c = y.argmax().item<int64_t>();
      pairs.push_back({y[c].item<double>(), o[c].item<double>()});
    }
  }
  const double ad_id = average_drop(pairs), ai_id = average_increase(pairs);

  bool cam_ok = true;
  Rng rng(77);
  for (int t = 0; t < 100; ++t) {
    auto a = torch::randn({5, 3, 3});
    auto alpha = torch::randn({5});
    auto m = cam(a, alpha, 12, 12);
    cam_ok = cam_ok && (m.raw >= 0).all().item<bool>() && m.rendering.sizes().equals({12, 12}) &&
             (m.rendering >= 0).all().item<bool>() && (m.rendering <= 1).all().item<bool>();
  }

  std::vector<ConfidencePair> random_pairs;
  for (int i = 0; i < 100; ++i) random_pairs.push_back({rng.uniform(1e-3, 1.0), rng.uniform()});
  const double ad = average_drop(random_pairs), ai = average_increase(random_pairs);
  const bool ok = ad_id == 0.0 && ai_id == 0.0 && cam_ok && ad >= 0 && ad <= 100 && ai >= 0 && ai <= 100;
  return verdict(ok, "rendering=1 on 40 images: AD " + fmt(ad_id) + ", AI " + fmt(ai_id) + "; cam non-negative " +
                         (cam_ok ? "on 100 draws" : "VIOLATED") + "; 100 random pairs AD " + fmt(ad) + ", AI " +
                         fmt(ai) + " (in [0,100])");
}

// ---------------------------------------------------------------- 8, 9

struct SmokeSetup {
  RunConfig cfg;
  DataSplits data;
  fs::path data_dir;
  double knn_floor = 0.25;
};

std::vector<std::string> epoch_lines(const fs::path& metrics, int epoch) {
  std::vector<std::string> out;
  std::ifstream in(metrics);
  std::string line;
  std::getline(in, line);
  const std::string tag = "," + std::to_string(epoch) + ",";
  for (; std::getline(in, line);) {
    // step rows "<step>,<epoch>,..." and epoch rows ",<epoch>,..."
    const auto first = line.find(',');
    const auto second = line.find(',', first + 1);
    if (line.substr(first, second - first + 1) == tag) out.push_back(line);
  }
  return out;
}

struct SmokeResult {
  Outcome run, resume;
  bool mechanics = false;  // finite losses, all epochs, knn floor
};

SmokeResult smoke(const SmokeSetup& s, const fs::path& work, const std::string& cli) {
  const auto t0 = std::chrono::steady_clock::now();
  auto cfg = s.cfg;
  cfg.train.out_dir = (work / "run").string();
  fs::remove_all(cfg.train.out_dir);
  std::vector<EpochSummary> epochs;
  try {
    Trainer trainer(cfg, s.data);
    epochs = trainer.run();
  } catch (const std::exception& e) {
    return {verdict(false, std::string("training failed: ") + e.what()), {Outcome::skip, "training failed"}, false};
  }
  bool finite = true;
  for (const auto& row : read_metrics(fs::path(cfg.train.out_dir) / "metrics.csv")) {
    finite = finite && std::isfinite(row.l_ssl) && std::isfinite(row.l_mu) && std::isfinite(row.l_cls) &&
             std::isfinite(row.l_total);
  }
  const auto& first = epochs.front();
  const auto& last = epochs.back();
  const double knn = last.knn_top1.value_or(-1);
  int monitors = 0;
  for (const auto& e : epochs) monitors += e.knn_top1.has_value();
  std::ostringstream d8;
  d8 << epochs.size() << " epochs, " << monitors << " knn values, losses " << (finite ? "finite" : "NOT FINITE")
     << "; epoch-" << last.epoch << " knn " << fmt(knn * 100) << "% (>= " << fmt(s.knn_floor * 100)
     << "%); l_mu " << fmt(first.l_mu) << " -> " << fmt(last.l_mu) << ", l_cls " << fmt(first.l_cls) << " -> "
     << fmt(last.l_cls) << "; " << fmt(seconds_since(t0)) << " s";
  const bool mechanics = finite && epochs.size() == static_cast<size_t>(cfg.train.epochs) &&
                         monitors == cfg.train.epochs && knn >= s.knn_floor;
  const bool ok8 = mechanics && last.l_mu < first.l_mu && last.l_cls < first.l_cls;

  // 9: resume from epoch 5 into a fresh directory, compare epoch 6 rows
  auto rcfg = cfg;
  rcfg.train.out_dir = (work / "resumed").string();
  fs::remove_all(rcfg.train.out_dir);
  bool same6 = false;
  std::size_t rows6 = 0;
  try {
    Trainer original(cfg, s.data);
    Trainer resumed(rcfg, s.data);
    resumed.resume(original.checkpoint_path(5));
    resumed.run(6);
    auto a = epoch_lines(fs::path(cfg.train.out_dir) / "metrics.csv", 6);
    auto b = epoch_lines(fs::path(rcfg.train.out_dir) / "metrics.csv", 6);
    rows6 = a.size();
    same6 = !a.empty() && a == b;
  } catch (const std::exception& e) {
    return {verdict(ok8, d8.str()), verdict(false, std::string("resume failed: ") + e.what()), mechanics};
  }

  const auto ckpt = fs::path(cfg.train.out_dir) / "checkpoints" / "last.ckpt";
  const auto exported = work / "backbone.pt";
  const auto report = work / "knn.json";
  export_backbone(ckpt, exported);
  bool knn_ok = false;
  std::string knn_detail = "no CLI given";
  if (!cli.empty()) {
    std::ostringstream cmd;
    cmd << '"' << cli << "\" --log-level 3 eval knn --ckpt \"" << exported.string() << "\" --data \""
        << s.data_dir.string() << "\" --train-subset " << cfg.data.train_subset << " --test-subset "
        << cfg.data.test_subset << " --seed " << cfg.train.seed << " --k " << cfg.train.knn_k << " --out \""
        << report.string() << "\" > \"" << (work / "knn.stdout").string() << '"';
    const int rc = std::system(cmd.str().c_str());
    if (rc == 0 && fs::exists(report)) {
      std::ifstream in(report);
      auto j = nlohmann::json::parse(in);
      const double standalone = j["knn_top1"].get<double>();
      knn_ok = standalone == knn;
      knn_detail = "standalone eval knn " + fmt(standalone * 100) + "% vs monitor " + fmt(knn * 100) + "%";
    } else {
      knn_detail = "eval knn exited " + std::to_string(rc);
    }
  }
  return {verdict(ok8, d8.str()),
          verdict(same6 && knn_ok, "resume@5 epoch-6 rows (" + std::to_string(rows6) + ") " +
                                       (same6 ? "bitwise identical" : "DIFFER") + "; exported backbone " +
                                       std::to_string(fs::file_size(exported)) + " B < checkpoint " +
                                       std::to_string(fs::file_size(ckpt)) + " B; " + knn_detail),
          mechanics};
}

RunConfig cifar_smoke_config(const fs::path& data_dir) {
  auto cfg = preset("cifar10");
  cfg.data.root = data_dir.string();
  cfg.data.train_subset = 5000;
  cfg.train.epochs = 10;
  cfg.optim.warmup_epochs = 1;
  cfg.train.seed = 0;
  return cfg;
}

RunConfig proxy_config(const fs::path& data_dir) {
  auto cfg = cifar_smoke_config(data_dir);
  cfg.data.train_subset = 0;
  cfg.model.backbone = BackboneKind::convnet;
  cfg.model.conv_widths = {16, 32, 64};
  cfg.model.conv_strides = {1, 2, 2};
  cfg.model.num_prototypes = 10;
  cfg.model.num_clusters = 10;
  cfg.optim.batch_size = 100;
  cfg.optim.micro_batch = 50;
  cfg.train.knn_k = 50;
  cfg.train.eval_batch = 200;
  return cfg;
}

void print(int id, const Outcome& o, const std::string& prefix = "criterion") {
  static const char* names[] = {"PASS", "FAIL", "SKIP"};
  std::cout << prefix << ' ' << id << ": " << names[o.kind] << "  " << o.detail << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> criteria{1, 2, 3, 4, 5, 6, 7, 8, 9};
  bool require_data = false, proxy = false;
  std::string work = (fs::temp_directory_path() / "sslattn_acceptance").string();
  std::string cli;
  app.add_option("--criteria", criteria, "Comma-separated criterion numbers")->delimiter(',');
  app.add_flag("--require-data", require_data, "Exit 77 when SSLATTN_CIFAR10_DIR is unusable");
  app.add_flag("--proxy", proxy, "Run the 8/9 procedure on generated data");
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--cli", cli, "sslattn binary used for eval knn");
  CLI11_PARSE(app, argc, argv);
  log::set_level(log::Level::warn);
  torch::set_num_threads(1);
  fs::create_directories(work);

  if (proxy) {
    const auto data_dir = fs::path(work) / "proxy_data";
    write_synthetic_cifar10(data_dir, 1000, 300, 11);
    SmokeSetup s{proxy_config(data_dir), open_dataset(data_dir, 0, 0, 0), data_dir, 0.25};
    auto r = smoke(s, fs::path(work) / "proxy", cli);
    print(8, r.run, "PROXY (generated data, not CIFAR-10) criterion");
    print(9, r.resume, "PROXY (generated data, not CIFAR-10) criterion");
    // exit status covers the pipeline only; the loss directions are printed above
    std::cout << "proxy pipeline (finite losses, knn floor, resume, export, eval knn): "
              << (r.mechanics && r.resume.kind == Outcome::pass ? "ok" : "BROKEN") << std::endl;
    return r.mechanics && r.resume.kind == Outcome::pass ? 0 : 1;
  }

  const std::set<int> want(criteria.begin(), criteria.end());
  const char* cifar = std::getenv("SSLATTN_CIFAR10_DIR");
  const bool have_data = cifar && *cifar && looks_like_cifar10(cifar);
  if (require_data && !have_data) {
    for (int id : {8, 9}) {
      if (want.count(id)) print(id, {Outcome::skip, "SSLATTN_CIFAR10_DIR does not point at the CIFAR-10 binary batches"});
    }
    return 77;
  }

  int failures = 0;
  auto report = [&](int id, const Outcome& o) {
    print(id, o);
    failures += o.kind == Outcome::fail;
  };
  auto guarded = [&](int id, auto fn) {
    if (!want.count(id)) return;
    try {
      report(id, fn());
    } catch (const std::exception& e) {
      report(id, verdict(false, std::string("exception: ") + e.what()));
    }
  };
  guarded(1, correlation_oracle);
  guarded(2, sinkhorn_marginals);
  guarded(3, detachment);
  guarded(4, gradient_check);
  guarded(5, [&] { return ablation(work); });
  guarded(6, knn_blobs);
  guarded(7, interpretability);
  if (want.count(8) || want.count(9)) {
    if (!have_data) {
      if (want.count(8)) report(8, {Outcome::skip, "blocked: CIFAR-10 not available (set SSLATTN_CIFAR10_DIR)"});
      if (want.count(9)) report(9, {Outcome::skip, "blocked: CIFAR-10 not available (set SSLATTN_CIFAR10_DIR)"});
    } else {
      const fs::path dir(cifar);
      auto cfg = cifar_smoke_config(dir);
      SmokeSetup s{cfg, open_dataset(dir, cfg.data.train_subset, cfg.data.test_subset, cfg.train.seed), dir, 0.25};
      auto r = smoke(s, fs::path(work) / "cifar10", cli);
      if (want.count(8)) report(8, r.run);
      if (want.count(9)) report(9, r.resume);
    }
  }
  return failures == 0 ? 0 : 1;
}
