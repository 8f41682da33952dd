#pragma once

// Run configuration: a nested YAML file, layered over a named preset, with
// environment overrides of the form SSLATTN__<SECTION>__<KEY>=<value>.

#include "sslattn/attention_addon.hpp"
#include "sslattn/augment.hpp"
#include "sslattn/encoder.hpp"
#include "sslattn/ssl_core.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace sslattn {

struct LrAnchors {
  double start = 0.0;
  double peak = 0.0;
  double final = 0.0;
};

struct RunConfig {
  struct Data {
    std::string root;
    std::int64_t train_subset = 0;  // 0 = whole split
    std::int64_t test_subset = 0;
    std::int64_t workers = 0;       // prefetched steps; 0 loads inline
  } data;

  EncoderConfig model;

  struct Ssl {
    Engine engine = Engine::swav;
    double temperature = 0.1;
    SinkhornOptions sinkhorn;
  } ssl;

  struct Addon {
    bool enabled = true;
    std::int64_t positives = 4;
    double tau_c = 0.05;
    LossWeights weights;
    bool normalize_mu = true;
    int kmeans_iters = 20;
    bool online_bank_update = true;
  } addon;

  std::string augment_preset = "imagenet";
  AugmentConfig augment = imagenet_config();

  struct Optim {
    std::int64_t batch_size = 256;
    std::int64_t micro_batch = 64;
    // Learning rates are multiplied by batch_size / reference_batch.
    std::int64_t reference_batch = 2048;
    double momentum = 0.9;
    double weight_decay = 1e-6;
    int warmup_epochs = 10;
    LrAnchors core{0.3, 3.6, 0.0036};
    LrAnchors attn{0.015, 0.03, 0.000001};
  } optim;

  struct Train {
    int epochs = 200;
    std::uint64_t seed = 0;
    std::string out_dir = "runs/default";
    int checkpoint_every = 1;
    bool knn_monitor = true;
    std::int64_t knn_k = 200;
    double knn_tau = 0.07;
    std::int64_t eval_batch = 256;
    int threads = 1;
  } train;

  struct Eval {
    int probe_epochs = 10;
    double probe_lr = 0.3;
    double probe_momentum = 0.9;
    double probe_weight_decay = 1e-4;
    std::int64_t probe_batch = 256;
    std::int64_t query_k = 20;
    std::int64_t export_count = 8;
  } eval;

  // Throws ConfigError naming the offending key.
  void validate() const;

  // Dotted-key access ("optim.core.peak"); values use YAML scalar/list syntax.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  std::vector<std::string> keys() const;

  std::string to_yaml() const;
};

// "cifar10" or "imagenet" (ResNet-50, K=3000) or "imagenet50" (K_c=150).
RunConfig preset(const std::string& name);

// Preset named by the file's top-level `preset:` key (default imagenet), then
// the file's keys. Unknown keys are errors.
RunConfig load_config(const std::filesystem::path& file);
RunConfig parse_config(const std::string& yaml_text);

inline constexpr const char* kEnvPrefix = "SSLATTN__";

// Applies SSLATTN__SECTION__KEY variables from `env` (name -> value); returns
// the dotted keys that were set.
std::vector<std::string> apply_env_overrides(RunConfig& cfg, const std::map<std::string, std::string>& env);
std::map<std::string, std::string> process_environment();

}  // namespace sslattn
