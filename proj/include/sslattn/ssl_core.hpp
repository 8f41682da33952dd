#pragma once

// Transform-consistency losses for the two core engines.
//
// swav:   swapped prediction of Sinkhorn codes over learnable prototypes.
// cosine: symmetric negative cosine similarity with a stop-gradient target.

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <string>

namespace sslattn {

enum class Engine { swav, cosine };

std::string to_string(Engine engine);
Engine parse_engine(const std::string& name);

struct SinkhornOptions {
  double eps = 0.05;
  int iterations = 3;
  // > 0: `iterations` becomes a cap and the loop stops once every row sum is
  // within tolerance of 1/B after a column pass.
  double tolerance = 0.0;
};

// Equal-marginal transport plan Q [B,K] for scores [B,K]:
// Q = diag(u) exp(scores/eps) diag(v), alternating a row pass (rows sum to
// 1/B) and a column pass (columns sum to 1/K) per iteration, ending on the
// column pass. Scores are stabilised by subtracting each row's max before
// exponentiation. Runs outside autograd; the result never requires grad.
torch::Tensor sinkhorn(const torch::Tensor& scores, const SinkhornOptions& options = {});

// Per-item soft codes: Q rescaled so every row sums to 1.
torch::Tensor codes_from_plan(const torch::Tensor& plan);

// Cross-entropy of the swapped prediction given fixed codes:
// -1/2 mean_b [ sum_k codes_t log softmax(scores_s/temp) + sum_k codes_s log softmax(scores_t/temp) ].
torch::Tensor swapped_prediction_loss(const torch::Tensor& scores_s, const torch::Tensor& scores_t,
                                      const torch::Tensor& codes_s, const torch::Tensor& codes_t,
                                      double temperature);

// Full swapped loss for unit representations and a prototype matrix
// `prototypes` of shape [K, d] (unit rows). Codes come from sinkhorn on
// detached scores.
torch::Tensor swav_swapped_loss(const torch::Tensor& z_s, const torch::Tensor& z_t,
                                const torch::Tensor& prototypes, double temperature,
                                const SinkhornOptions& options = {});

// S(p, z) = -mean_b cos(p_b, z_b). The caller decides whether z is detached.
torch::Tensor negative_cosine(const torch::Tensor& p, const torch::Tensor& z);

using PredictorFn = std::function<torch::Tensor(const torch::Tensor&)>;

// 1/2 S(h(z_s), sg(z_t)) + 1/2 S(h(z_t), sg(z_s)).
torch::Tensor cosine_consistency_loss(const torch::Tensor& z_s, const torch::Tensor& z_t,
                                      const PredictorFn& h);

// Same loss with explicit stop-gradient targets; used when the targets must
// be frozen (finite-difference checks).
torch::Tensor cosine_consistency_loss(const torch::Tensor& p_s, const torch::Tensor& p_t,
                                      const torch::Tensor& target_s, const torch::Tensor& target_t);

}  // namespace sslattn
