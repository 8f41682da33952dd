#include "sslattn/evaluation.hpp"

#include "sslattn/clustering.hpp"
#include "sslattn/errors.hpp"
#include "sslattn/log.hpp"
#include "sslattn/rng.hpp"

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace sslattn {

namespace {

torch::ScalarType param_dtype(torch::nn::Module& m) {
  auto params = m.parameters();
  return params.empty() ? torch::kFloat32 : params.front().scalar_type();
}

void check_bank(const torch::Tensor& bank, const std::vector<std::int64_t>& labels) {
  if (!bank.defined() || bank.dim() != 2 || bank.size(0) == 0) throw DatasetError("knn: empty memory bank");
  if (static_cast<std::int64_t>(labels.size()) != bank.size(0)) {
    throw DatasetError("knn: bank has " + std::to_string(bank.size(0)) + " rows but " +
                       std::to_string(labels.size()) + " labels");
  }
}

// Indices other than `anchor`, by descending similarity then ascending index.
std::vector<std::int64_t> ranked_neighbors(std::int64_t anchor, const torch::Tensor& sims) {
  auto s = sims.to(torch::kFloat64).contiguous();
  const auto* p = s.data_ptr<double>();
  std::vector<std::int64_t> order;
  order.reserve(static_cast<std::size_t>(s.size(0)));
  for (std::int64_t i = 0; i < s.size(0); ++i) {
    if (i != anchor) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [p](std::int64_t a, std::int64_t b) { return p[a] > p[b]; });
  return order;
}

cv::Mat to_mat_u8(const torch::Tensor& image) {
  auto t = image.detach().to(torch::kFloat32);
  if (t.dim() == 2) t = t.unsqueeze(0);
  if (t.dim() != 3 || (t.size(0) != 1 && t.size(0) != 3)) throw ConfigError("write_png expects [H,W] or [1|3,H,W]");
  auto u8 = (t.clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).permute({1, 2, 0}).contiguous();
  const int h = static_cast<int>(u8.size(0)), w = static_cast<int>(u8.size(1)), c = static_cast<int>(u8.size(2));
  cv::Mat mat(h, w, c == 1 ? CV_8UC1 : CV_8UC3, u8.data_ptr<std::uint8_t>());
  cv::Mat out = mat.clone();
  if (c == 3) cv::cvtColor(out, out, cv::COLOR_RGB2BGR);
  return out;
}

void write_mat(const std::filesystem::path& file, const cv::Mat& mat) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  if (!cv::imwrite(file.string(), mat)) throw DatasetError("could not write image " + file.string());
}

void check_pairs(const std::vector<ConfidencePair>& pairs) {
  for (const auto& p : pairs) {
    if (!(p.y >= 0.0 && p.y <= 1.0 && p.o >= 0.0 && p.o <= 1.0)) {
      throw ConfigError("confidence pairs must be probabilities in [0,1]");
    }
  }
}

}  // namespace

std::vector<std::int64_t> knn_predict_batch(const torch::Tensor& queries, const torch::Tensor& bank,
                                            const std::vector<std::int64_t>& labels, std::int64_t num_classes,
                                            std::int64_t k, double tau) {
  check_bank(bank, labels);
  if (queries.dim() != 2 || queries.size(1) != bank.size(1)) throw ConfigError("knn: query width differs from bank");
  if (k < 1) throw ConfigError("knn: k must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("knn: temperature must be > 0");
  for (auto l : labels) {
    if (l < 0 || l >= num_classes) throw DatasetError("knn: bank label out of range");
  }
  torch::NoGradGuard no_grad;
  const auto kk = std::min<std::int64_t>(k, bank.size(0));
  auto b = bank.detach().to(torch::kFloat64);
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(queries.size(0)));
  std::vector<double> score(static_cast<std::size_t>(num_classes));
  constexpr std::int64_t kChunk = 256;
  for (std::int64_t lo = 0; lo < queries.size(0); lo += kChunk) {
    auto q = queries.narrow(0, lo, std::min(kChunk, queries.size(0) - lo)).detach().to(torch::kFloat64);
    auto [sims, idx] = torch::matmul(q, b.t()).topk(kk, 1);
    sims = sims.contiguous();
    idx = idx.contiguous();
    const auto* sp = sims.data_ptr<double>();
    const auto* ip = idx.data_ptr<std::int64_t>();
    for (std::int64_t r = 0; r < q.size(0); ++r) {
      std::fill(score.begin(), score.end(), 0.0);
      for (std::int64_t j = 0; j < kk; ++j) {
        score[static_cast<std::size_t>(labels[static_cast<std::size_t>(ip[r * kk + j])])] +=
            std::exp(sp[r * kk + j] / tau);
      }
      out.push_back(std::distance(score.begin(), std::max_element(score.begin(), score.end())));
    }
  }
  return out;
}

std::int64_t knn_predict(const torch::Tensor& query, const torch::Tensor& bank,
                         const std::vector<std::int64_t>& labels, std::int64_t num_classes, std::int64_t k,
                         double tau) {
  return knn_predict_batch(query.reshape({1, -1}), bank, labels, num_classes, k, tau).front();
}

double top1(const std::vector<std::int64_t>& predicted, const std::vector<std::int64_t>& truth) {
  if (predicted.size() != truth.size() || truth.empty()) throw ConfigError("top1: size mismatch or empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double knn_accuracy(const torch::Tensor& bank, const std::vector<std::int64_t>& bank_labels,
                    const torch::Tensor& queries, const std::vector<std::int64_t>& query_labels,
                    std::int64_t num_classes, std::int64_t k, double tau) {
  return top1(knn_predict_batch(queries, bank, bank_labels, num_classes, k, tau), query_labels);
}

torch::nn::Linear train_linear_classifier(const torch::Tensor& features, const std::vector<std::int64_t>& labels,
                                          std::int64_t num_classes, const ProbeConfig& cfg) {
  if (features.dim() != 2 || features.size(0) != static_cast<std::int64_t>(labels.size()) || labels.empty()) {
    throw ConfigError("linear probe: features [N,D] must match N labels");
  }
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.lr > 0.0)) throw ConfigError("linear probe: bad optimiser settings");
  const auto n = features.size(0);
  auto x = features.detach();
  auto y = torch::tensor(labels, torch::kLong);

  torch::nn::Linear head(torch::nn::LinearOptions(x.size(1), num_classes));
  head->to(x.scalar_type());
  {
    torch::NoGradGuard no_grad;
    head->weight.zero_();
    head->bias.zero_();
  }
  torch::optim::SGD opt(head->parameters(),
                        torch::optim::SGDOptions(cfg.lr).momentum(cfg.momentum).weight_decay(cfg.weight_decay));
  const auto steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const auto total = static_cast<double>(steps_per_epoch * cfg.epochs);
  std::int64_t step = 0;
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    auto rng = Rng::derive({cfg.seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(Stream::probe)});
    std::shuffle(order.begin(), order.end(), rng.engine());
    auto perm = torch::tensor(order, torch::kLong);
    for (std::int64_t lo = 0; lo < n; lo += cfg.batch_size, ++step) {
      const double lr = 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total));
      for (auto& group : opt.param_groups()) static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
      auto idx = perm.narrow(0, lo, std::min(cfg.batch_size, n - lo));
      opt.zero_grad();
      auto loss = torch::nn::functional::cross_entropy(head->forward(x.index_select(0, idx)), y.index_select(0, idx));
      loss.backward();
      opt.step();
    }
  }
  return head;
}

std::vector<std::int64_t> predict_linear(torch::nn::Linear& classifier, const torch::Tensor& features) {
  torch::NoGradGuard no_grad;
  auto pred = classifier->forward(features.to(classifier->weight.scalar_type())).argmax(1).contiguous();
  return {pred.data_ptr<std::int64_t>(), pred.data_ptr<std::int64_t>() + pred.numel()};
}

torch::Tensor pooled_features(const Dataset& data, Backbone& backbone, const AugmentConfig& augment,
                              std::int64_t batch_size) {
  const auto n = data.size();
  if (n < 1) throw DatasetError("cannot extract features from an empty dataset");
  EvalModeScope eval(*backbone);
  torch::NoGradGuard no_grad;
  const auto dtype = param_dtype(*backbone);
  std::vector<torch::Tensor> chunks;
  for (std::int64_t lo = 0; lo < n; lo += batch_size) {
    const auto hi = std::min(n, lo + batch_size);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(hi - lo));
    std::iota(idx.begin(), idx.end(), lo);
    chunks.push_back(global_avg_pool(backbone->forward(eval_batch(data, idx, augment).to(dtype))));
  }
  return torch::cat(chunks);
}

ProbeResult linear_probe(Backbone& backbone, const Dataset& train, const Dataset& test, const AugmentConfig& augment,
                         const ProbeConfig& cfg) {
  auto params = backbone->parameters();
  std::vector<bool> flags;
  for (auto& p : params) {
    flags.push_back(p.requires_grad());
    p.set_requires_grad(false);
  }
  ProbeResult result;
  try {
    auto train_x = pooled_features(train, backbone, augment);
    auto test_x = pooled_features(test, backbone, augment);
    result.classifier = train_linear_classifier(train_x, train.labels(), train.num_classes(), cfg);
    result.top1 = top1(predict_linear(result.classifier, test_x), test.labels());
  } catch (...) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].set_requires_grad(flags[i]);
    throw;
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].grad().defined()) sq += params[i].grad().to(torch::kFloat64).pow(2).sum().item<double>();
    params[i].set_requires_grad(flags[i]);
  }
  result.backbone_grad_norm = std::sqrt(sq);
  return result;
}

SaliencyMap cam(const torch::Tensor& activations, const torch::Tensor& alpha, std::int64_t out_h,
                std::int64_t out_w) {
  if (activations.dim() != 3 || alpha.dim() != 1 || alpha.size(0) != activations.size(0)) {
    throw ConfigError("cam expects activations [D,H,W] and weights [D]");
  }
  torch::NoGradGuard no_grad;
  SaliencyMap out;
  auto a = activations.detach();
  out.raw = torch::relu((alpha.detach().to(a.scalar_type()).view({-1, 1, 1}) * a).sum(0));
  auto up = resize_bilinear(out.raw.unsqueeze(0), out_h, out_w).squeeze(0).clamp_min(0.0);
  const double peak = up.max().item<double>();
  out.rendering = peak > 0.0 ? (up / peak).clamp_max(1.0) : torch::zeros_like(up);
  return out;
}

torch::Tensor explanation_image(const torch::Tensor& image, const torch::Tensor& rendering) {
  if (image.dim() != 3 || rendering.dim() != 2 || image.size(1) != rendering.size(0) ||
      image.size(2) != rendering.size(1)) {
    throw ConfigError("explanation_image: rendering must match the image's spatial size");
  }
  return image * rendering.to(image.scalar_type()).unsqueeze(0);
}

double average_drop(const std::vector<ConfidencePair>& pairs) {
  check_pairs(pairs);
  double sum = 0.0;
  std::size_t n = 0, dropped = 0;
  for (const auto& p : pairs) {
    if (p.y <= 0.0) {
      ++dropped;
      continue;
    }
    sum += std::max(0.0, p.y - p.o) / p.y;
    ++n;
  }
  if (dropped > 0) log::warn("average drop: excluded ", dropped, " pair(s) with zero original confidence");
  return n == 0 ? 0.0 : 100.0 * sum / static_cast<double>(n);
}

double average_increase(const std::vector<ConfidencePair>& pairs) {
  check_pairs(pairs);
  if (pairs.empty()) return 0.0;
  std::size_t up = 0;
  for (const auto& p : pairs) up += p.o > p.y;
  return 100.0 * static_cast<double>(up) / static_cast<double>(pairs.size());
}

double average_drop_literal(const std::vector<ConfidencePair>& pairs) {
  double sum = 0.0;
  for (const auto& p : pairs) {
    if (p.y > 0.0) sum += std::max(0.0, p.y - p.o) / p.y;
  }
  return 10.0 * sum;
}

double average_increase_literal(const std::vector<ConfidencePair>& pairs) {
  if (pairs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : pairs) sum += static_cast<double>((p.y > p.o) - (p.y < p.o));
  return sum / static_cast<double>(pairs.size());
}

InterpretResult interpret(Backbone& backbone, torch::nn::Linear& classifier, const Dataset& data,
                          const AugmentConfig& augment, const InterpretOptions& options) {
  const auto n = data.size();
  if (n < 1) throw DatasetError("interpret: empty dataset");
  EvalModeScope eval(*backbone);
  torch::NoGradGuard no_grad;
  const auto dtype = param_dtype(*backbone);
  auto head_w = classifier->weight.detach();

  auto confidences = [&](const std::vector<torch::Tensor>& images) {
    std::vector<torch::Tensor> normed;
    for (const auto& im : images) normed.push_back(normalize(im, augment));
    auto f = backbone->forward(torch::stack(normed).to(dtype));
    auto probs = torch::softmax(classifier->forward(global_avg_pool(f).to(head_w.scalar_type())), 1);
    return std::make_pair(f, probs.to(torch::kFloat64));
  };

  InterpretResult result;
  for (std::int64_t lo = 0; lo < n; lo += options.batch_size) {
    const auto hi = std::min(n, lo + options.batch_size);
    std::vector<torch::Tensor> crops;
    for (auto i = lo; i < hi; ++i) crops.push_back(eval_crop(data.image(i), augment));
    auto [f, probs] = confidences(crops);
    auto cls = probs.argmax(1);
    std::vector<torch::Tensor> explained;
    std::vector<torch::Tensor> renderings;
    for (std::int64_t b = 0; b < hi - lo; ++b) {
      const auto c = cls[b].item<std::int64_t>();
      auto sal = cam(f[b], head_w[c], crops[static_cast<std::size_t>(b)].size(1), crops[static_cast<std::size_t>(b)].size(2));
      explained.push_back(explanation_image(crops[static_cast<std::size_t>(b)], sal.rendering));
      renderings.push_back(sal.rendering);
    }
    auto probs_o = confidences(explained).second;
    for (std::int64_t b = 0; b < hi - lo; ++b) {
      const auto c = cls[b].item<std::int64_t>();
      result.classes.push_back(c);
      result.pairs.push_back({probs[b][c].item<double>(), probs_o[b][c].item<double>()});
      const auto index = lo + b;
      if (options.export_dir && index < options.export_count) {
        const auto stem = *options.export_dir / ("img" + std::to_string(index));
        cv::Mat heat;
        cv::applyColorMap(to_mat_u8(renderings[static_cast<std::size_t>(b)]), heat, cv::COLORMAP_JET);
        write_mat(stem.string() + "_saliency.png", heat);
        write_png(stem.string() + "_input.png", crops[static_cast<std::size_t>(b)]);
        write_png(stem.string() + "_explanation.png", explained[static_cast<std::size_t>(b)]);
      }
    }
  }
  result.avg_drop = average_drop(result.pairs);
  result.avg_increase = average_increase(result.pairs);
  result.avg_drop_literal = average_drop_literal(result.pairs);
  result.avg_increase_literal = average_increase_literal(result.pairs);
  return result;
}

QueryMode parse_query_mode(const std::string& name) {
  if (name == "positive") return QueryMode::positive;
  if (name == "negative") return QueryMode::negative;
  throw ConfigError("unknown query mode '" + name + "' (expected positive or negative)");
}

std::vector<std::int64_t> knn_query(std::int64_t anchor, const torch::Tensor& bank, std::int64_t k, QueryMode mode,
                                    std::int64_t neighborhood, std::int64_t negatives) {
  if (!bank.defined() || bank.dim() != 2 || bank.size(0) == 0) throw DatasetError("knn_query: empty memory bank");
  if (anchor < 0 || anchor >= bank.size(0)) throw ConfigError("knn_query: anchor index out of range");
  torch::NoGradGuard no_grad;
  auto b = bank.detach().to(torch::kFloat64);
  auto order = ranked_neighbors(anchor, torch::matmul(b, b[anchor]));
  if (mode == QueryMode::positive) {
    order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(std::max<std::int64_t>(k, 0))));
    return order;
  }
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(std::max<std::int64_t>(neighborhood, 0))));
  const auto take = std::min<std::size_t>(order.size(), static_cast<std::size_t>(std::max<std::int64_t>(negatives, 0)));
  std::vector<std::int64_t> out(order.rbegin(), order.rbegin() + static_cast<std::ptrdiff_t>(take));
  return out;
}

std::string report_json(const Report& report) {
  nlohmann::ordered_json j;
  auto put = [&j](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
    else j[key] = nullptr;
  };
  put("knn_top1", report.knn_top1);
  put("probe_top1", report.probe_top1);
  put("avg_drop", report.avg_drop);
  put("avg_increase", report.avg_increase);
  if (report.avg_drop_literal) j["avg_drop_literal"] = *report.avg_drop_literal;
  if (report.avg_increase_literal) j["avg_increase_literal"] = *report.avg_increase_literal;
  return j.dump(2);
}

void write_report(const std::filesystem::path& file, const Report& report) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw DatasetError("could not open report file " + file.string());
  out << report_json(report) << '\n';
}

void write_png(const std::filesystem::path& file, const torch::Tensor& image) { write_mat(file, to_mat_u8(image)); }

void write_query_csv(const std::filesystem::path& file, std::int64_t anchor, const std::vector<std::int64_t>& hits,
                     const torch::Tensor& bank, const std::vector<std::int64_t>& labels) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw DatasetError("could not open query file " + file.string());
  auto b = bank.detach().to(torch::kFloat64);
  auto sims = torch::matmul(b, b[anchor]).contiguous();
  out << "anchor,rank,index,similarity,label\n";
  out.precision(9);
  for (std::size_t r = 0; r < hits.size(); ++r) {
    const auto i = hits[r];
    out << anchor << ',' << r + 1 << ',' << i << ',' << sims[i].item<double>() << ','
        << (static_cast<std::size_t>(i) < labels.size() ? labels[static_cast<std::size_t>(i)] : -1) << '\n';
  }
}

}  // namespace sslattn
