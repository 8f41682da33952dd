#include "sslattn/ssl_core.hpp"

#include "sslattn/errors.hpp"

namespace sslattn {

std::string to_string(Engine engine) { return engine == Engine::swav ? "swav" : "cosine"; }

Engine parse_engine(const std::string& name) {
  if (name == "swav") return Engine::swav;
  if (name == "cosine") return Engine::cosine;
  throw ConfigError("unknown engine '" + name + "' (expected swav|cosine)");
}

torch::Tensor sinkhorn(const torch::Tensor& scores, const SinkhornOptions& options) {
  if (scores.dim() != 2 || scores.size(0) < 1 || scores.size(1) < 1) {
    throw ConfigError("sinkhorn expects a non-empty [B,K] score matrix");
  }
  if (!(options.eps > 0.0) || options.iterations < 1 || options.tolerance < 0.0) {
    throw ConfigError("sinkhorn needs eps > 0 and at least one iteration");
  }
  torch::NoGradGuard no_grad;
  const auto batch = static_cast<double>(scores.size(0));
  const auto protos = static_cast<double>(scores.size(1));

  auto logits = scores.detach() / options.eps;
  logits = logits - std::get<0>(logits.max(1, /*keepdim=*/true));
  auto q = logits.exp();
  q = q / q.sum();
  for (int it = 0; it < options.iterations; ++it) {
    q = q / q.sum(1, true) / batch;
    q = q / q.sum(0, true) / protos;
    if (options.tolerance > 0.0 && (q.sum(1) - 1.0 / batch).abs().max().item<double>() <= options.tolerance) break;
  }
  return q;
}

torch::Tensor codes_from_plan(const torch::Tensor& plan) {
  torch::NoGradGuard no_grad;
  return plan / plan.sum(1, true);
}

torch::Tensor swapped_prediction_loss(const torch::Tensor& scores_s, const torch::Tensor& scores_t,
                                      const torch::Tensor& codes_s, const torch::Tensor& codes_t,
                                      double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("swapped prediction temperature must be > 0");
  auto log_p_s = torch::log_softmax(scores_s / temperature, 1);
  auto log_p_t = torch::log_softmax(scores_t / temperature, 1);
  auto ce = (codes_t * log_p_s).sum(1) + (codes_s * log_p_t).sum(1);
  return -0.5 * ce.mean();
}

torch::Tensor swav_swapped_loss(const torch::Tensor& z_s, const torch::Tensor& z_t,
                                const torch::Tensor& prototypes, double temperature,
                                const SinkhornOptions& options) {
  auto scores_s = torch::matmul(z_s, prototypes.t());
  auto scores_t = torch::matmul(z_t, prototypes.t());
  auto codes_s = codes_from_plan(sinkhorn(scores_s, options));
  auto codes_t = codes_from_plan(sinkhorn(scores_t, options));
  return swapped_prediction_loss(scores_s, scores_t, codes_s, codes_t, temperature);
}

torch::Tensor negative_cosine(const torch::Tensor& p, const torch::Tensor& z) {
  return -torch::cosine_similarity(p, z, 1, 1e-12).mean();
}

torch::Tensor cosine_consistency_loss(const torch::Tensor& z_s, const torch::Tensor& z_t,
                                      const PredictorFn& h) {
  return cosine_consistency_loss(h(z_s), h(z_t), z_s.detach(), z_t.detach());
}

torch::Tensor cosine_consistency_loss(const torch::Tensor& p_s, const torch::Tensor& p_t,
                                      const torch::Tensor& target_s, const torch::Tensor& target_t) {
  return 0.5 * negative_cosine(p_s, target_t.detach()) + 0.5 * negative_cosine(p_t, target_s.detach());
}

}  // namespace sslattn
