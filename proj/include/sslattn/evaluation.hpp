#pragma once

// Weighted KNN, linear probe, CAM saliency, explanation images, AD/AI and
// nearest-neighbour image queries.

#include "sslattn/augment.hpp"
#include "sslattn/dataset.hpp"
#include "sslattn/encoder.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace sslattn {

// Class of `query` [d] against a bank [N,d] of unit rows: top-k cosine
// neighbours vote with exp(sim / tau); ties go to the smallest class index.
// k is clamped to N. Throws DatasetError on an empty bank.
std::int64_t knn_predict(const torch::Tensor& query, const torch::Tensor& bank,
                         const std::vector<std::int64_t>& labels, std::int64_t num_classes,
                         std::int64_t k = 200, double tau = 0.07);

std::vector<std::int64_t> knn_predict_batch(const torch::Tensor& queries, const torch::Tensor& bank,
                                            const std::vector<std::int64_t>& labels, std::int64_t num_classes,
                                            std::int64_t k = 200, double tau = 0.07);

// Top-1 accuracy in [0,1].
double knn_accuracy(const torch::Tensor& bank, const std::vector<std::int64_t>& bank_labels,
                    const torch::Tensor& queries, const std::vector<std::int64_t>& query_labels,
                    std::int64_t num_classes, std::int64_t k = 200, double tau = 0.07);

double top1(const std::vector<std::int64_t>& predicted, const std::vector<std::int64_t>& truth);

struct ProbeConfig {
  int epochs = 100;
  double lr = 0.3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::int64_t batch_size = 256;
  std::uint64_t seed = 0;
};

// Affine classifier on fixed features, cross-entropy, SGD with a per-step
// cosine schedule.
torch::nn::Linear train_linear_classifier(const torch::Tensor& features, const std::vector<std::int64_t>& labels,
                                          std::int64_t num_classes, const ProbeConfig& cfg);

std::vector<std::int64_t> predict_linear(torch::nn::Linear& classifier, const torch::Tensor& features);

struct ProbeResult {
  double top1 = 0.0;
  double backbone_grad_norm = 0.0;  // accumulated on backbone parameters while training the head
  torch::nn::Linear classifier{nullptr};
};

// Pooled (not normalised) backbone features of eval views, backbone in eval mode.
torch::Tensor pooled_features(const Dataset& data, Backbone& backbone, const AugmentConfig& augment,
                              std::int64_t batch_size = 256);

// Freezes the backbone, trains the head on `train`, reports top-1 on `test`.
ProbeResult linear_probe(Backbone& backbone, const Dataset& train, const Dataset& test,
                         const AugmentConfig& augment, const ProbeConfig& cfg);

struct SaliencyMap {
  torch::Tensor raw;        // [H,W] >= 0
  torch::Tensor rendering;  // [H_in,W_in] in [0,1]
};

// relu(sum_j alpha_j A_j) for A [D,H,W], alpha [D]; bilinear upsample to
// (out_h, out_w) and divide by the max when it is positive.
SaliencyMap cam(const torch::Tensor& activations, const torch::Tensor& alpha, std::int64_t out_h,
                std::int64_t out_w);

// image [C,H,W] times rendering [H,W] on every channel.
torch::Tensor explanation_image(const torch::Tensor& image, const torch::Tensor& rendering);

struct ConfidencePair {
  double y = 0.0;  // confidence on the original image
  double o = 0.0;  // confidence on the explanation image
};

// (100/N) sum max(0, Y-O)/Y; pairs with Y = 0 are dropped with a warning.
double average_drop(const std::vector<ConfidencePair>& pairs);
// (100/N) sum [O > Y].
double average_increase(const std::vector<ConfidencePair>& pairs);
// Literal formula forms, kept for side-by-side reporting:
// 10 sum max(0,Y-O)/Y and (1/N) sum sgn(Y-O).
double average_drop_literal(const std::vector<ConfidencePair>& pairs);
double average_increase_literal(const std::vector<ConfidencePair>& pairs);

struct InterpretResult {
  std::vector<ConfidencePair> pairs;
  std::vector<std::int64_t> classes;  // class c used per image
  double avg_drop = 0.0;
  double avg_increase = 0.0;
  double avg_drop_literal = 0.0;
  double avg_increase_literal = 0.0;
};

struct InterpretOptions {
  std::int64_t batch_size = 64;
  // When set, saliency and explanation PNGs for the first `export_count` images go here.
  std::optional<std::filesystem::path> export_dir;
  std::int64_t export_count = 8;
};

// CAM of the classifier's predicted class per image, explanation images from
// the normalised rendering, and AD/AI from softmax confidences. Images are
// multiplied before normalisation, in [0,1] pixel space.
InterpretResult interpret(Backbone& backbone, torch::nn::Linear& classifier, const Dataset& data,
                          const AugmentConfig& augment, const InterpretOptions& options = {});

enum class QueryMode { positive, negative };
QueryMode parse_query_mode(const std::string& name);

// positive: top-k rows by cosine, anchor excluded. negative: the `negatives`
// least similar members of the anchor's top-`neighborhood` set. Ordering is
// by similarity (descending for positive, ascending for negative), ties by index.
std::vector<std::int64_t> knn_query(std::int64_t anchor, const torch::Tensor& bank, std::int64_t k,
                                    QueryMode mode, std::int64_t neighborhood = 20, std::int64_t negatives = 3);

struct Report {
  std::optional<double> knn_top1;
  std::optional<double> probe_top1;
  std::optional<double> avg_drop;
  std::optional<double> avg_increase;
  std::optional<double> avg_drop_literal;
  std::optional<double> avg_increase_literal;
};

std::string report_json(const Report& report);
void write_report(const std::filesystem::path& file, const Report& report);

// [H,W] or [1|3,H,W] float in [0,1] -> 8-bit PNG (RGB order on input).
void write_png(const std::filesystem::path& file, const torch::Tensor& image);

// anchor,rank,index,similarity,label
void write_query_csv(const std::filesystem::path& file, std::int64_t anchor, const std::vector<std::int64_t>& hits,
                     const torch::Tensor& bank, const std::vector<std::int64_t>& labels);

}  // namespace sslattn
