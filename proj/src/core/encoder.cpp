#include "sslattn/encoder.hpp"

#include "sslattn/errors.hpp"

#include <sstream>

namespace sslattn {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv3x3(std::int64_t in, std::int64_t out, std::int64_t stride) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false));
}

nn::Conv2d conv1x1(std::int64_t in, std::int64_t out, std::int64_t stride) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 1).stride(stride).bias(false));
}

}  // namespace

std::string to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::resnet18_cifar: return "resnet18_cifar";
    case BackboneKind::resnet50: return "resnet50";
    case BackboneKind::convnet: return "convnet";
  }
  return "?";
}

BackboneKind parse_backbone_kind(const std::string& name) {
  if (name == "resnet18_cifar") return BackboneKind::resnet18_cifar;
  if (name == "resnet50") return BackboneKind::resnet50;
  if (name == "convnet") return BackboneKind::convnet;
  throw ConfigError("unknown backbone '" + name + "' (expected resnet18_cifar|resnet50|convnet)");
}

std::string to_string(PredictorMode mode) {
  return mode == PredictorMode::mlp ? "mlp" : "identity";
}

PredictorMode parse_predictor_mode(const std::string& name) {
  if (name == "mlp") return PredictorMode::mlp;
  if (name == "identity") return PredictorMode::identity;
  throw ConfigError("unknown predictor '" + name + "' (expected mlp|identity)");
}

std::int64_t EncoderConfig::feature_depth() const {
  switch (backbone) {
    case BackboneKind::resnet18_cifar: return 512;
    case BackboneKind::resnet50: return 512 * BottleneckImpl::kExpansion;
    case BackboneKind::convnet:
      if (conv_widths.empty()) throw ConfigError("convnet backbone needs at least one stage");
      return conv_widths.back();
  }
  return 0;
}

std::int64_t EncoderConfig::total_stride() const {
  switch (backbone) {
    case BackboneKind::resnet18_cifar: return 8;
    case BackboneKind::resnet50: return 32;
    case BackboneKind::convnet: {
      std::int64_t s = 1;
      for (auto v : conv_strides) s *= v;
      return s;
    }
  }
  return 1;
}

BasicBlockImpl::BasicBlockImpl(std::int64_t in_planes, std::int64_t planes, std::int64_t stride)
    : conv1(conv3x3(in_planes, planes, stride)),
      conv2(conv3x3(planes, planes, 1)),
      bn1(planes),
      bn2(planes) {
  register_module("conv1", conv1);
  register_module("bn1", bn1);
  register_module("conv2", conv2);
  register_module("bn2", bn2);
  if (stride != 1 || in_planes != planes) {
    shortcut = nn::Sequential(conv1x1(in_planes, planes, stride), nn::BatchNorm2d(planes));
    register_module("shortcut", shortcut);
  }
}

torch::Tensor BasicBlockImpl::forward(torch::Tensor x) {
  auto out = torch::relu(bn1(conv1(x)));
  out = bn2(conv2(out));
  out = out + (shortcut ? shortcut->forward(x) : x);
  return torch::relu(out);
}

BottleneckImpl::BottleneckImpl(std::int64_t in_planes, std::int64_t planes, std::int64_t stride)
    : conv1(conv1x1(in_planes, planes, 1)),
      conv2(conv3x3(planes, planes, stride)),
      conv3(conv1x1(planes, planes * kExpansion, 1)),
      bn1(planes),
      bn2(planes),
      bn3(planes * kExpansion) {
  register_module("conv1", conv1);
  register_module("bn1", bn1);
  register_module("conv2", conv2);
  register_module("bn2", bn2);
  register_module("conv3", conv3);
  register_module("bn3", bn3);
  if (stride != 1 || in_planes != planes * kExpansion) {
    shortcut = nn::Sequential(conv1x1(in_planes, planes * kExpansion, stride),
                              nn::BatchNorm2d(planes * kExpansion));
    register_module("shortcut", shortcut);
  }
}

torch::Tensor BottleneckImpl::forward(torch::Tensor x) {
  auto out = torch::relu(bn1(conv1(x)));
  out = torch::relu(bn2(conv2(out)));
  out = bn3(conv3(out));
  out = out + (shortcut ? shortcut->forward(x) : x);
  return torch::relu(out);
}

BackboneImpl::BackboneImpl(const EncoderConfig& cfg) : cfg_(cfg), depth_(cfg.feature_depth()) {
  body = nn::Sequential();
  switch (cfg.backbone) {
    case BackboneKind::resnet18_cifar: {
      body->push_back(conv3x3(3, 64, 1));
      body->push_back(nn::BatchNorm2d(64));
      body->push_back(nn::Functional(torch::relu));
      std::int64_t in = 64;
      const std::int64_t planes[] = {64, 128, 256, 512};
      const std::int64_t strides[] = {1, 2, 2, 2};
      for (int stage = 0; stage < 4; ++stage) {
        for (int b = 0; b < 2; ++b) {
          body->push_back(BasicBlock(in, planes[stage], b == 0 ? strides[stage] : 1));
          in = planes[stage];
        }
      }
      break;
    }
    case BackboneKind::resnet50: {
      body->push_back(nn::Conv2d(nn::Conv2dOptions(3, 64, 7).stride(2).padding(3).bias(false)));
      body->push_back(nn::BatchNorm2d(64));
      body->push_back(nn::Functional(torch::relu));
      body->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1)));
      std::int64_t in = 64;
      const std::int64_t planes[] = {64, 128, 256, 512};
      const std::int64_t blocks[] = {3, 4, 6, 3};
      const std::int64_t strides[] = {1, 2, 2, 2};
      for (int stage = 0; stage < 4; ++stage) {
        for (int b = 0; b < blocks[stage]; ++b) {
          body->push_back(Bottleneck(in, planes[stage], b == 0 ? strides[stage] : 1));
          in = planes[stage] * BottleneckImpl::kExpansion;
        }
      }
      break;
    }
    case BackboneKind::convnet: {
      if (cfg.conv_widths.size() != cfg.conv_strides.size()) {
        throw ConfigError("convnet: conv_widths and conv_strides must have equal length");
      }
      std::int64_t in = 3;
      for (std::size_t i = 0; i < cfg.conv_widths.size(); ++i) {
        if (cfg.conv_widths[i] <= 0 || cfg.conv_strides[i] <= 0) {
          throw ConfigError("convnet: widths and strides must be positive");
        }
        body->push_back(conv3x3(in, cfg.conv_widths[i], cfg.conv_strides[i]));
        body->push_back(nn::BatchNorm2d(cfg.conv_widths[i]));
        body->push_back(nn::Functional(torch::relu));
        in = cfg.conv_widths[i];
      }
      break;
    }
  }
  register_module("body", body);
}

torch::Tensor BackboneImpl::forward(const torch::Tensor& images) {
  const auto stride = cfg_.total_stride();
  if (images.dim() != 4 || images.size(1) != 3) {
    std::ostringstream os;
    os << "backbone expects images [B,3,S,S], got " << images.sizes();
    throw ConfigError(os.str());
  }
  const auto h = images.size(2), w = images.size(3);
  if (images.size(0) < 1 || h < stride || w < stride || h % stride != 0 || w % stride != 0) {
    std::ostringstream os;
    os << "input " << images.sizes() << " incompatible with " << to_string(cfg_.backbone)
       << " (spatial size must be a positive multiple of " << stride << ")";
    throw ConfigError(os.str());
  }
  return body->forward(images);
}

ProjectionHeadImpl::ProjectionHeadImpl(std::int64_t in_dim, std::int64_t hidden, std::int64_t out_dim)
    : fc1(in_dim, hidden), fc2(hidden, out_dim), bn(hidden) {
  register_module("fc1", fc1);
  register_module("bn", bn);
  register_module("fc2", fc2);
}

torch::Tensor ProjectionHeadImpl::forward(const torch::Tensor& pooled) {
  auto h = torch::relu(bn(fc1(pooled)));
  return l2_normalize_rows(fc2(h));
}

PredictionHeadImpl::PredictionHeadImpl(std::int64_t dim, PredictorMode mode) : mode_(mode) {
  if (mode_ == PredictorMode::mlp) {
    const auto hidden = std::max<std::int64_t>(1, dim / 2);
    fc1 = register_module("fc1", nn::Linear(dim, hidden));
    bn = register_module("bn", nn::BatchNorm1d(hidden));
    fc2 = register_module("fc2", nn::Linear(hidden, dim));
  }
}

torch::Tensor PredictionHeadImpl::forward(const torch::Tensor& z) {
  if (mode_ == PredictorMode::identity) return z;
  return fc2(torch::relu(bn(fc1(z))));
}

AttentionHeadImpl::AttentionHeadImpl(std::int64_t depth)
    : conv(nn::Conv2dOptions(depth, 1, 1).stride(1).bias(true)) {
  register_module("conv", conv);
}

torch::Tensor AttentionHeadImpl::forward(const torch::Tensor& f) {
  return torch::sigmoid(conv(torch::relu(f)));
}

SslModelImpl::SslModelImpl(const EncoderConfig& cfg) : cfg_(cfg) {
  if (cfg.embed_dim <= 0 || cfg.num_prototypes <= 0 || cfg.num_clusters <= 0) {
    throw ConfigError("embed_dim, num_prototypes and num_clusters must be positive");
  }
  const auto depth = cfg.feature_depth();
  const auto hidden = cfg.proj_hidden > 0 ? cfg.proj_hidden : depth;
  backbone = register_module("backbone", Backbone(cfg));
  projection = register_module("projection", ProjectionHead(depth, hidden, cfg.embed_dim));
  predictor = register_module("predictor", PredictionHead(cfg.embed_dim, cfg.predictor));
  prototypes = register_module(
      "prototypes", nn::Linear(nn::LinearOptions(cfg.embed_dim, cfg.num_prototypes).bias(false)));
  attention = register_module("attention", AttentionHead(depth));
  classifier = register_module("classifier", nn::Linear(depth, cfg.num_clusters));
  normalize_prototypes();
}

torch::Tensor SslModelImpl::forward_features(const torch::Tensor& images) {
  return backbone->forward(images);
}

torch::Tensor SslModelImpl::project(const torch::Tensor& pooled) { return projection->forward(pooled); }

torch::Tensor SslModelImpl::predict_head(const torch::Tensor& z) { return predictor->forward(z); }

torch::Tensor SslModelImpl::attention_head(const torch::Tensor& f) { return attention->forward(f); }

torch::Tensor SslModelImpl::classify(const torch::Tensor& pooled_explanation) {
  return classifier->forward(pooled_explanation);
}

torch::Tensor SslModelImpl::prototype_scores(const torch::Tensor& z) { return prototypes->forward(z); }

void SslModelImpl::normalize_prototypes() {
  torch::NoGradGuard no_grad;
  auto& w = prototypes->weight;
  w.copy_(l2_normalize_rows(w));
}

std::vector<torch::Tensor> SslModelImpl::core_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto* m : {static_cast<const torch::nn::Module*>(backbone.get()),
                        static_cast<const torch::nn::Module*>(projection.get()),
                        static_cast<const torch::nn::Module*>(predictor.get()),
                        static_cast<const torch::nn::Module*>(prototypes.get())}) {
    for (const auto& p : m->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<torch::Tensor> SslModelImpl::addon_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& p : attention->parameters()) out.push_back(p);
  for (const auto& p : classifier->parameters()) out.push_back(p);
  return out;
}

torch::Tensor global_avg_pool(const torch::Tensor& f) {
  if (f.dim() != 4) throw ConfigError("global_avg_pool expects [B,D,H,W]");
  return f.mean({2, 3});
}

torch::Tensor l2_normalize_rows(const torch::Tensor& x) {
  return x / (x.norm(2, 1, /*keepdim=*/true) + 1e-12);
}

}  // namespace sslattn
