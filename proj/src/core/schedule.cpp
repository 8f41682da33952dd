#include "sslattn/schedule.hpp"

#include "sslattn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sslattn {

double lr_schedule(std::int64_t step, std::int64_t warmup_steps, std::int64_t total_steps, const LrAnchors& a) {
  if (total_steps < 1 || warmup_steps < 0) throw ConfigError("lr_schedule: need total_steps >= 1 and warmup >= 0");
  const auto last = total_steps - 1;
  const auto warm = std::min(warmup_steps, last);
  step = std::clamp<std::int64_t>(step, 0, last);
  if (step < warm) {
    return a.start + (a.peak - a.start) * static_cast<double>(step) / static_cast<double>(warm);
  }
  if (last == warm) return warm == 0 ? a.final : a.peak;
  if (step == last) return a.final;
  const double t = static_cast<double>(step - warm) / static_cast<double>(last - warm);
  return a.final + 0.5 * (a.peak - a.final) * (1.0 + std::cos(std::numbers::pi * t));
}

double lr_schedule(std::int64_t step, LrGroup group, const RunConfig& cfg, std::int64_t steps_per_epoch) {
  const double scale = static_cast<double>(cfg.optim.batch_size) / static_cast<double>(cfg.optim.reference_batch);
  auto a = group == LrGroup::core ? cfg.optim.core : cfg.optim.attn;
  a.start *= scale;
  a.peak *= scale;
  a.final *= scale;
  return lr_schedule(step, static_cast<std::int64_t>(cfg.optim.warmup_epochs) * steps_per_epoch,
                     static_cast<std::int64_t>(cfg.train.epochs) * steps_per_epoch, a);
}

}  // namespace sslattn
