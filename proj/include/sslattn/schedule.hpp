#pragma once

#include "sslattn/config.hpp"

#include <cstdint>

namespace sslattn {

enum class LrGroup { core, attn };

// Linear warmup from a.start (step 0) to a.peak (step warmup_steps), then
// cosine decay reaching a.final at step total_steps - 1. Steps past the end
// hold a.final.
double lr_schedule(std::int64_t step, std::int64_t warmup_steps, std::int64_t total_steps, const LrAnchors& a);

// Group anchors scaled by batch_size / reference_batch, warmup in whole epochs.
double lr_schedule(std::int64_t step, LrGroup group, const RunConfig& cfg, std::int64_t steps_per_epoch);

}  // namespace sslattn
