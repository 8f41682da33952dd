#include "sslattn/attention_addon.hpp"

#include "sslattn/errors.hpp"

#include <cmath>
#include <sstream>

namespace sslattn {

namespace {

void require_finite(const torch::Tensor& value, const char* name) {
  const double v = value.item<double>();
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << "non-finite loss component " << name << " = " << v << "; aborting step";
    throw NumericError(os.str());
  }
}

torch::Tensor minmax_rescale(const torch::Tensor& masks) {
  // masks [B,H,W]; each mask rescaled independently.
  auto flat = masks.flatten(1);
  auto lo = std::get<0>(flat.min(1, true));
  auto hi = std::get<0>(flat.max(1, true));
  auto range = hi - lo;
  auto scaled = torch::where(range > 0, (flat - lo) / torch::where(range > 0, range, torch::ones_like(range)),
                             torch::zeros_like(flat));
  return scaled.view_as(masks);
}

}  // namespace

torch::Tensor correlation_score(const torch::Tensor& f_s, const torch::Tensor& f_p) {
  if (f_s.dim() != 3 || !f_s.sizes().equals(f_p.sizes())) {
    throw ConfigError("correlation_score expects two feature maps [D,H,W] of equal shape");
  }
  return correlation_masks(f_s.unsqueeze(0), f_p.unsqueeze(0).unsqueeze(0), false).squeeze(0);
}

torch::Tensor correlation_mask(const torch::Tensor& f_s, const torch::Tensor& positives, bool normalize) {
  if (positives.dim() != 4 || positives.size(0) < 1) {
    throw ConfigError("correlation_mask needs at least one positive feature map [P,D,H,W]");
  }
  if (f_s.dim() != 3 || !f_s.sizes().equals(positives.sizes().slice(1))) {
    throw ConfigError("correlation_mask: source and positive feature maps differ in shape");
  }
  return correlation_masks(f_s.unsqueeze(0), positives.unsqueeze(0), normalize).squeeze(0);
}

torch::Tensor correlation_masks(const torch::Tensor& sources, const torch::Tensor& positives, bool normalize) {
  if (sources.dim() != 4 || positives.dim() != 5 || positives.size(0) != sources.size(0) ||
      !positives.sizes().slice(2).equals(sources.sizes().slice(1))) {
    throw ConfigError("correlation_masks expects sources [B,D,H,W] and positives [B,P,D,H,W]");
  }
  if (positives.size(1) < 1) throw ConfigError("correlation_masks: empty positive set");
  torch::NoGradGuard no_grad;
  const auto b = sources.size(0), d = sources.size(1), h = sources.size(2), w = sources.size(3);
  auto src = sources.detach().flatten(2).transpose(1, 2).unsqueeze(1);  // [B,1,HW,D]
  auto pos = positives.detach().flatten(3);                              // [B,P,D,HW]
  auto inner = torch::matmul(src, pos);                                  // [B,P,HW,HW]
  auto rho = std::get<0>(inner.max(-1)) / static_cast<double>(d);        // [B,P,HW]
  auto mu = rho.mean(1).view({b, h, w});
  if (normalize) mu = minmax_rescale(mu);
  return mu;
}

torch::Tensor mu_loss(const torch::Tensor& beta, const torch::Tensor& mu) {
  auto b = beta.dim() == 4 ? beta.squeeze(1) : beta.dim() == 3 && beta.size(0) == 1 && mu.dim() == 2
                                                    ? beta.squeeze(0)
                                                    : beta;
  if (!b.sizes().equals(mu.sizes())) {
    std::ostringstream os;
    os << "mu_loss: attention mask " << beta.sizes() << " does not match correlation mask " << mu.sizes();
    throw ConfigError(os.str());
  }
  return (b - mu.detach()).pow(2).mean();
}

torch::Tensor explanation_map(const torch::Tensor& f, const torch::Tensor& beta) {
  if (f.dim() != beta.dim() || beta.size(-3) != 1 || !f.sizes().slice(f.dim() - 2).equals(beta.sizes().slice(beta.dim() - 2))) {
    throw ConfigError("explanation_map: feature map and attention mask shapes are incompatible");
  }
  return f * beta;
}

torch::Tensor cls_loss(const torch::Tensor& logits, const torch::Tensor& labels, double tau_c) {
  if (!(tau_c > 0.0)) throw ConfigError("cls_loss: tau_c must be > 0");
  if (logits.dim() != 2 || labels.dim() != 1 || labels.size(0) != logits.size(0)) {
    throw ConfigError("cls_loss expects logits [N,K] and labels [N]");
  }
  auto lab = labels.to(torch::kLong);
  if (lab.numel() > 0) {
    const auto lo = lab.min().item<std::int64_t>(), hi = lab.max().item<std::int64_t>();
    if (lo < 0 || hi >= logits.size(1)) {
      throw ConfigError("cls_loss: pseudo-label outside [0, " + std::to_string(logits.size(1)) + ")");
    }
  }
  return torch::nn::functional::cross_entropy(logits / tau_c, lab);
}

LossBundle total_loss(const torch::Tensor& l_ssl, const torch::Tensor& l_mu, const torch::Tensor& l_cls,
                      const LossWeights& weights) {
  require_finite(l_ssl, "l_ssl");
  require_finite(l_mu, "l_mu");
  require_finite(l_cls, "l_cls");
  LossBundle out;
  out.weights = weights;
  out.l_ssl = l_ssl.item<double>();
  out.l_mu = l_mu.item<double>();
  out.l_cls = l_cls.item<double>();
  out.l_total = weights.w0 * out.l_ssl + weights.w1 * out.l_mu + weights.w2 * out.l_cls;
  out.total = weights.w0 * l_ssl + weights.w1 * l_mu + weights.w2 * l_cls;
  return out;
}

StepOutputs addon_step(SslModel& model, const StepBatch& batch, const AddonOptions& options,
                       const StepTargets* frozen) {
  if (batch.view_s.dim() != 4 || !batch.view_s.sizes().equals(batch.view_t.sizes())) {
    throw ConfigError("addon_step: source and target views must share a shape [B,3,S,S]");
  }
  const auto b = batch.view_s.size(0);
  StepOutputs out;

  auto f = model->forward_features(torch::cat({batch.view_s, batch.view_t}));
  auto z = model->project(global_avg_pool(f));
  auto z_s = z.narrow(0, 0, b);
  auto z_t = z.narrow(0, b, b);

  torch::Tensor l_ssl;
  if (options.engine == Engine::swav) {
    auto scores = model->prototype_scores(z);
    auto scores_s = scores.narrow(0, 0, b);
    auto scores_t = scores.narrow(0, b, b);
    if (frozen) {
      out.targets.codes_s = frozen->codes_s;
      out.targets.codes_t = frozen->codes_t;
    } else {
      out.targets.codes_s = codes_from_plan(sinkhorn(scores_s, options.sinkhorn));
      out.targets.codes_t = codes_from_plan(sinkhorn(scores_t, options.sinkhorn));
    }
    l_ssl = swapped_prediction_loss(scores_s, scores_t, out.targets.codes_s, out.targets.codes_t,
                                    options.swav_temperature);
  } else {
    auto p = model->predict_head(z);
    out.targets.target_s = frozen ? frozen->target_s : z_s.detach().clone();
    out.targets.target_t = frozen ? frozen->target_t : z_t.detach().clone();
    l_ssl = cosine_consistency_loss(p.narrow(0, 0, b), p.narrow(0, b, b), out.targets.target_s,
                                    out.targets.target_t);
  }
  out.z_s = z_s.detach();

  if (!options.enabled) {
    auto zero = torch::zeros({}, l_ssl.options());
    out.losses = total_loss(l_ssl, zero, zero, options.weights);
    return out;
  }

  const auto per_source = batch.positives_per_source;
  if (per_source < 1 || !batch.positives.defined() || batch.positives.size(0) != b * per_source) {
    throw ConfigError("addon_step: expected B*P positive views grouped by source");
  }
  auto f_s = f.narrow(0, 0, b);
  auto beta_s = model->attention_head(f_s);
  auto f_pos = model->forward_features(batch.positives);

  if (frozen) {
    out.targets.mu = frozen->mu;
  } else {
    auto grouped = f_pos.view({b, per_source, f_pos.size(1), f_pos.size(2), f_pos.size(3)});
    out.targets.mu = correlation_masks(f_s, grouped, options.normalize_mu);
  }
  auto l_mu = mu_loss(beta_s, out.targets.mu);

  auto beta_pos = model->attention_head(f_pos);
  auto explained = torch::cat({explanation_map(f_s, beta_s), explanation_map(f_pos, beta_pos)});
  auto logits = model->classify(global_avg_pool(explained));
  auto labels = torch::cat({batch.source_labels, batch.positive_labels}).to(torch::kLong);
  auto l_cls = cls_loss(logits, labels, options.tau_c);

  out.beta = beta_s.detach();
  out.losses = total_loss(l_ssl, l_mu, l_cls, options.weights);
  return out;
}

}  // namespace sslattn
