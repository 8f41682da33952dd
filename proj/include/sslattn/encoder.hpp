#pragma once

// Backbone network and every head that hangs off it.
//
// Tensor contract:
//   images      [B, 3, S, S]
//   features f  [B, D, H, W]   (last backbone stage, before pooling)
//   pooled      [B, D]
//   z           [B, d]         (unit rows)
//   beta        [B, 1, H, W]   (attention mask, strictly inside (0, 1))
//   logits      [B, K_c]

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace sslattn {

enum class BackboneKind {
  resnet18_cifar,  // 3x3 stem, stride 1, no max-pool; D=512, H=W=S/8
  resnet50,        // torchvision layout; D=2048, H=W=S/32
  convnet,         // plain conv-BN-ReLU stack, for tests and desk-scale runs
};

enum class PredictorMode { mlp, identity };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(const std::string& name);
std::string to_string(PredictorMode mode);
PredictorMode parse_predictor_mode(const std::string& name);

struct EncoderConfig {
  BackboneKind backbone = BackboneKind::resnet50;
  // convnet only: output channels and stride of each 3x3 conv stage.
  std::vector<std::int64_t> conv_widths{32, 64, 128, 128};
  std::vector<std::int64_t> conv_strides{1, 2, 2, 2};
  std::int64_t input_size = 224;
  // 0 selects the backbone's feature depth.
  std::int64_t proj_hidden = 0;
  std::int64_t embed_dim = 128;
  PredictorMode predictor = PredictorMode::mlp;
  std::int64_t num_prototypes = 3000;
  std::int64_t num_clusters = 3000;

  std::int64_t feature_depth() const;
  std::int64_t total_stride() const;
  std::int64_t feature_size() const { return input_size / total_stride(); }
};

class BasicBlockImpl : public torch::nn::Module {
 public:
  BasicBlockImpl(std::int64_t in_planes, std::int64_t planes, std::int64_t stride);
  torch::Tensor forward(torch::Tensor x);

 private:
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
  torch::nn::Sequential shortcut{nullptr};
};
TORCH_MODULE(BasicBlock);

class BottleneckImpl : public torch::nn::Module {
 public:
  static constexpr std::int64_t kExpansion = 4;
  BottleneckImpl(std::int64_t in_planes, std::int64_t planes, std::int64_t stride);
  torch::Tensor forward(torch::Tensor x);

 private:
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
  torch::nn::Sequential shortcut{nullptr};
};
TORCH_MODULE(Bottleneck);

// Produces the feature map f; everything after pooling lives in the heads.
class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(const EncoderConfig& cfg);

  // Throws ConfigError when the input is not [B,3,S,S] with S a positive
  // multiple of the backbone's total stride.
  torch::Tensor forward(const torch::Tensor& images);

  std::int64_t feature_depth() const { return depth_; }
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  std::int64_t depth_ = 0;
  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(Backbone);

// Linear -> BN -> ReLU -> Linear, followed by L2 normalisation.
class ProjectionHeadImpl : public torch::nn::Module {
 public:
  ProjectionHeadImpl(std::int64_t in_dim, std::int64_t hidden, std::int64_t out_dim);
  torch::Tensor forward(const torch::Tensor& pooled);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
  torch::nn::BatchNorm1d bn{nullptr};
};
TORCH_MODULE(ProjectionHead);

// The h of the transform-consistency loss: 2-layer MLP d -> d/2 -> d with a
// BN+ReLU hidden layer, or the identity.
class PredictionHeadImpl : public torch::nn::Module {
 public:
  PredictionHeadImpl(std::int64_t dim, PredictorMode mode);
  torch::Tensor forward(const torch::Tensor& z);
  PredictorMode mode() const { return mode_; }

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
  torch::nn::BatchNorm1d bn{nullptr};

 private:
  PredictorMode mode_;
};
TORCH_MODULE(PredictionHead);

// beta = sigmoid(conv1x1(relu(f))).
class AttentionHeadImpl : public torch::nn::Module {
 public:
  explicit AttentionHeadImpl(std::int64_t depth);
  torch::Tensor forward(const torch::Tensor& f);

  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(AttentionHead);

class SslModelImpl : public torch::nn::Module {
 public:
  explicit SslModelImpl(const EncoderConfig& cfg);

  torch::Tensor forward_features(const torch::Tensor& images);
  torch::Tensor project(const torch::Tensor& pooled);
  torch::Tensor predict_head(const torch::Tensor& z);
  torch::Tensor attention_head(const torch::Tensor& f);
  torch::Tensor classify(const torch::Tensor& pooled_explanation);
  // Prototype scores z . W for W with unit prototype vectors.
  torch::Tensor prototype_scores(const torch::Tensor& z);

  // Rescale every prototype vector to unit norm, in place and outside autograd.
  void normalize_prototypes();

  // Backbone, projection, predictor and prototypes.
  std::vector<torch::Tensor> core_parameters() const;
  // Attention head and explanation-map classifier.
  std::vector<torch::Tensor> addon_parameters() const;

  const EncoderConfig& config() const { return cfg_; }

  Backbone backbone{nullptr};
  ProjectionHead projection{nullptr};
  PredictionHead predictor{nullptr};
  torch::nn::Linear prototypes{nullptr};  // weight [K, d], rows are prototypes
  AttentionHead attention{nullptr};
  torch::nn::Linear classifier{nullptr};

 private:
  EncoderConfig cfg_;
};
TORCH_MODULE(SslModel);

// Restores the module's train/eval flag on scope exit.
class EvalModeScope {
 public:
  explicit EvalModeScope(torch::nn::Module& m) : module_(m), was_training_(m.is_training()) { m.eval(); }
  ~EvalModeScope() { module_.train(was_training_); }
  EvalModeScope(const EvalModeScope&) = delete;
  EvalModeScope& operator=(const EvalModeScope&) = delete;

 private:
  torch::nn::Module& module_;
  bool was_training_;
};

// Global average pooling over the spatial grid: [B,D,H,W] -> [B,D].
torch::Tensor global_avg_pool(const torch::Tensor& f);

// Row-wise x / (||x|| + 1e-12).
torch::Tensor l2_normalize_rows(const torch::Tensor& x);

}  // namespace sslattn
