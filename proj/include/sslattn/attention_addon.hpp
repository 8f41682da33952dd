#pragma once

// Correlation-mask supervision for the attention head, explanation-map
// classification against k-means pseudo-labels, and the combined objective
//
//   L = w0 * L_ssl + w1 * L_mu + w2 * L_cls.

#include "sslattn/encoder.hpp"
#include "sslattn/ssl_core.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <vector>

namespace sslattn {

// rho[i,j] = (1/D) max_{i',j'} <f_s[:,i,j], f_p[:,i',j']>. Inputs [D,H,W].
torch::Tensor correlation_score(const torch::Tensor& f_s, const torch::Tensor& f_p);

// mu = mean_p rho(f_s, positives[p]); positives is [P,D,H,W] with P >= 1.
// With `normalize`, mu is min-max rescaled to [0,1] (constant masks -> 0).
// The result is computed outside autograd and never carries gradient.
torch::Tensor correlation_mask(const torch::Tensor& f_s, const torch::Tensor& positives, bool normalize);

// Batched form: sources [B,D,H,W], positives [B,P,D,H,W] -> masks [B,H,W].
torch::Tensor correlation_masks(const torch::Tensor& sources, const torch::Tensor& positives, bool normalize);

// Mean over the batch of (1/(H W)) sum_ij (beta_ij - mu_ij)^2.
// beta [B,1,H,W] or [1,H,W]; mu [B,H,W] or [H,W]. Gradient flows through beta only.
torch::Tensor mu_loss(const torch::Tensor& beta, const torch::Tensor& mu);

// e[b,k,i,j] = f[b,k,i,j] * beta[b,0,i,j]; works on single maps [D,H,W] / [1,H,W] too.
torch::Tensor explanation_map(const torch::Tensor& f, const torch::Tensor& beta);

// Mean cross-entropy of softmax(logits / tau_c) against labels.
torch::Tensor cls_loss(const torch::Tensor& logits, const torch::Tensor& labels, double tau_c);

struct LossWeights {
  double w0 = 1.0;
  double w1 = 0.05;
  double w2 = 0.1;
};

struct LossBundle {
  double l_ssl = 0.0;
  double l_mu = 0.0;
  double l_cls = 0.0;
  double l_total = 0.0;
  LossWeights weights;
  torch::Tensor total;  // differentiable w0 l_ssl + w1 l_mu + w2 l_cls
};

// Weighted sum; l_total is formed from the logged component scalars so the
// decomposition identity holds exactly. Throws NumericError on a non-finite
// component.
LossBundle total_loss(const torch::Tensor& l_ssl, const torch::Tensor& l_mu, const torch::Tensor& l_cls,
                      const LossWeights& weights);

struct AddonOptions {
  bool enabled = true;
  Engine engine = Engine::swav;
  SinkhornOptions sinkhorn;
  double swav_temperature = 0.1;
  double tau_c = 0.05;
  bool normalize_mu = true;
  LossWeights weights;
};

// One micro-batch of training input.
struct StepBatch {
  torch::Tensor view_s;     // [B,3,S,S]
  torch::Tensor view_t;     // [B,3,S,S]
  torch::Tensor positives;  // [B*P,3,S,S], grouped by source; may be undefined when the add-on is off
  std::int64_t positives_per_source = 0;
  torch::Tensor source_labels;    // int64 [B]
  torch::Tensor positive_labels;  // int64 [B*P]
};

// Everything that is held constant with respect to the parameters in a step.
struct StepTargets {
  torch::Tensor codes_s, codes_t;    // swav
  torch::Tensor target_s, target_t;  // cosine stop-gradient targets
  torch::Tensor mu;                  // [B,H,W]
};

struct StepOutputs {
  LossBundle losses;
  torch::Tensor z_s;   // detached source representations, for online bank updates
  torch::Tensor beta;  // detached source attention masks
  StepTargets targets;
};

// Forward pass of one micro-batch: core loss on (view_s, view_t); with the
// add-on enabled, positives are forwarded separately, mu is built from
// detached features, and source plus positive explanation maps are classified
// against their pseudo-labels. When `frozen` is given, its targets replace the
// ones computed from the current parameters.
StepOutputs addon_step(SslModel& model, const StepBatch& batch, const AddonOptions& options,
                       const StepTargets* frozen = nullptr);

}  // namespace sslattn
