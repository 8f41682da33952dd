#include "sslattn/config.hpp"

#include "sslattn/errors.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cctype>
#include <fstream>
#include <functional>
#include <sstream>

extern char** environ;

namespace sslattn {

namespace {

struct Field {
  std::string name;
  std::function<void(const YAML::Node&)> set;
  std::function<YAML::Node()> get;
};

// shortest text that reads back to the same double
YAML::Node number(double v) {
  char buf[32];
  auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
  return YAML::Node(std::string(buf, end));
}

template <typename T>
Field field(const std::string& name, T& ref) {
  return {name, [&ref](const YAML::Node& n) { ref = n.as<T>(); }, [&ref] {
            if constexpr (std::is_same_v<T, double>) return number(ref);
            else return YAML::Node(ref);
          }};
}

Field bind_array(const std::string& name, std::array<double, 3>& ref) {
  return {name,
          [&ref, name](const YAML::Node& n) {
            auto v = n.as<std::vector<double>>();
            if (v.size() != 3) throw ConfigError(name + " needs exactly 3 values");
            std::copy(v.begin(), v.end(), ref.begin());
          },
          [&ref] {
            YAML::Node n;
            for (auto x : ref) n.push_back(number(x));
            n.SetStyle(YAML::EmitterStyle::Flow);
            return n;
          }};
}

Field bind_list(const std::string& name, std::vector<std::int64_t>& ref) {
  return {name, [&ref](const YAML::Node& n) { ref = n.as<std::vector<std::int64_t>>(); },
          [&ref] {
            YAML::Node n;
            for (auto x : ref) n.push_back(x);
            n.SetStyle(YAML::EmitterStyle::Flow);
            return n;
          }};
}

template <typename E>
Field bind_enum(const std::string& name, E& ref, E (*parse)(const std::string&)) {
  return {name, [&ref, parse](const YAML::Node& n) { ref = parse(n.as<std::string>()); },
          [&ref] { return YAML::Node(to_string(ref)); }};
}

std::vector<Field> fields(RunConfig& c) {
  std::vector<Field> f;
  f.push_back(field("data.root", c.data.root));
  f.push_back(field("data.train_subset", c.data.train_subset));
  f.push_back(field("data.test_subset", c.data.test_subset));
  f.push_back(field("data.workers", c.data.workers));

  f.push_back(bind_enum("model.backbone", c.model.backbone, &parse_backbone_kind));
  f.push_back(bind_list("model.conv_widths", c.model.conv_widths));
  f.push_back(bind_list("model.conv_strides", c.model.conv_strides));
  f.push_back(field("model.input_size", c.model.input_size));
  f.push_back(field("model.proj_hidden", c.model.proj_hidden));
  f.push_back(field("model.embed_dim", c.model.embed_dim));
  f.push_back(bind_enum("model.predictor", c.model.predictor, &parse_predictor_mode));
  f.push_back(field("model.prototypes", c.model.num_prototypes));
  f.push_back(field("model.clusters", c.model.num_clusters));

  f.push_back(bind_enum("ssl.engine", c.ssl.engine, &parse_engine));
  f.push_back(field("ssl.temperature", c.ssl.temperature));
  f.push_back(field("ssl.sinkhorn_eps", c.ssl.sinkhorn.eps));
  f.push_back(field("ssl.sinkhorn_iters", c.ssl.sinkhorn.iterations));
  f.push_back(field("ssl.sinkhorn_tolerance", c.ssl.sinkhorn.tolerance));

  f.push_back(field("addon.enabled", c.addon.enabled));
  f.push_back(field("addon.positives", c.addon.positives));
  f.push_back(field("addon.tau_c", c.addon.tau_c));
  f.push_back(field("addon.w0", c.addon.weights.w0));
  f.push_back(field("addon.w1", c.addon.weights.w1));
  f.push_back(field("addon.w2", c.addon.weights.w2));
  f.push_back(field("addon.normalize_mu", c.addon.normalize_mu));
  f.push_back(field("addon.kmeans_iters", c.addon.kmeans_iters));
  f.push_back(field("addon.online_bank_update", c.addon.online_bank_update));

  f.push_back({"augment.preset",
               [&c](const YAML::Node& n) {
                 const auto name = n.as<std::string>();
                 if (name == "cifar") c.augment = cifar_config();
                 else if (name == "imagenet") c.augment = imagenet_config();
                 else throw ConfigError("augment.preset must be cifar or imagenet, got '" + name + "'");
                 c.augment_preset = name;
               },
               [&c] { return YAML::Node(c.augment_preset); }});
  f.push_back(field("augment.crop_size", c.augment.crop_size));
  f.push_back(field("augment.scale_min", c.augment.crop_scale_min));
  f.push_back(field("augment.scale_max", c.augment.crop_scale_max));
  f.push_back(field("augment.jitter_strength", c.augment.jitter_strength));
  f.push_back(field("augment.jitter_prob", c.augment.jitter_prob));
  f.push_back(field("augment.grayscale_prob", c.augment.grayscale_prob));
  f.push_back(field("augment.flip_prob", c.augment.flip_prob));
  f.push_back(field("augment.blur", c.augment.blur.enabled));
  f.push_back(field("augment.blur_kernel", c.augment.blur.kernel));
  f.push_back(field("augment.blur_sigma_min", c.augment.blur.sigma_min));
  f.push_back(field("augment.blur_sigma_max", c.augment.blur.sigma_max));
  f.push_back(field("augment.blur_prob", c.augment.blur.prob));
  f.push_back(field("augment.eval_resize", c.augment.eval_resize));
  f.push_back(bind_array("augment.mean", c.augment.mean));
  f.push_back(bind_array("augment.std", c.augment.std));

  f.push_back(field("optim.batch_size", c.optim.batch_size));
  f.push_back(field("optim.micro_batch", c.optim.micro_batch));
  f.push_back(field("optim.reference_batch", c.optim.reference_batch));
  f.push_back(field("optim.momentum", c.optim.momentum));
  f.push_back(field("optim.weight_decay", c.optim.weight_decay));
  f.push_back(field("optim.warmup_epochs", c.optim.warmup_epochs));
  f.push_back(field("optim.core.start", c.optim.core.start));
  f.push_back(field("optim.core.peak", c.optim.core.peak));
  f.push_back(field("optim.core.final", c.optim.core.final));
  f.push_back(field("optim.attn.start", c.optim.attn.start));
  f.push_back(field("optim.attn.peak", c.optim.attn.peak));
  f.push_back(field("optim.attn.final", c.optim.attn.final));

  f.push_back(field("train.epochs", c.train.epochs));
  f.push_back(field("train.seed", c.train.seed));
  f.push_back(field("train.out_dir", c.train.out_dir));
  f.push_back(field("train.checkpoint_every", c.train.checkpoint_every));
  f.push_back(field("train.knn_monitor", c.train.knn_monitor));
  f.push_back(field("train.knn_k", c.train.knn_k));
  f.push_back(field("train.knn_tau", c.train.knn_tau));
  f.push_back(field("train.eval_batch", c.train.eval_batch));
  f.push_back(field("train.threads", c.train.threads));

  f.push_back(field("eval.probe_epochs", c.eval.probe_epochs));
  f.push_back(field("eval.probe_lr", c.eval.probe_lr));
  f.push_back(field("eval.probe_momentum", c.eval.probe_momentum));
  f.push_back(field("eval.probe_weight_decay", c.eval.probe_weight_decay));
  f.push_back(field("eval.probe_batch", c.eval.probe_batch));
  f.push_back(field("eval.query_k", c.eval.query_k));
  f.push_back(field("eval.export_count", c.eval.export_count));
  return f;
}

Field& find_field(std::vector<Field>& all, const std::string& key) {
  auto it = std::find_if(all.begin(), all.end(), [&](const Field& f) { return f.name == key; });
  if (it == all.end()) throw ConfigError("unknown config key '" + key + "'");
  return *it;
}

void set_node(RunConfig& cfg, const std::string& key, const YAML::Node& value) {
  auto all = fields(cfg);
  auto& field = find_field(all, key);
  try {
    field.set(value);
  } catch (const YAML::Exception& e) {
    throw ConfigError("config key '" + key + "': cannot parse value (" + e.msg + ")");
  }
}

void flatten(const YAML::Node& node, const std::string& prefix, std::vector<std::pair<std::string, YAML::Node>>& out) {
  for (const auto& kv : node) {
    const auto key = prefix.empty() ? kv.first.as<std::string>() : prefix + "." + kv.first.as<std::string>();
    if (kv.second.IsMap()) flatten(kv.second, key, out);
    else out.emplace_back(key, kv.second);
  }
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("config key '" + key + "': " + what);
}

void check_anchors(const LrAnchors& a, const std::string& group) {
  require(a.start > 0.0 && a.peak > 0.0 && a.final > 0.0, "optim." + group, "learning rates must be > 0");
  require(a.start <= a.peak, "optim." + group + ".start", "warmup must rise to the peak (start <= peak)");
  require(a.final <= a.peak, "optim." + group + ".final", "cosine phase must decay (final <= peak)");
}

}  // namespace

void RunConfig::validate() const {
  require(data.train_subset >= 0 && data.test_subset >= 0, "data.train_subset", "must be >= 0");
  require(data.workers >= 0, "data.workers", "must be >= 0");
  require(model.input_size > 0 && model.input_size % model.total_stride() == 0, "model.input_size",
          "must be a positive multiple of the backbone stride " + std::to_string(model.total_stride()));
  require(model.backbone != BackboneKind::convnet ||
              (!model.conv_widths.empty() && model.conv_widths.size() == model.conv_strides.size()),
          "model.conv_widths", "needs one stride per width");
  require(model.embed_dim > 0, "model.embed_dim", "must be > 0");
  require(model.proj_hidden >= 0, "model.proj_hidden", "must be >= 0");
  require(model.num_prototypes > 0, "model.prototypes", "must be > 0");
  require(model.num_clusters > 0, "model.clusters", "must be > 0");
  require(ssl.temperature > 0.0, "ssl.temperature", "must be > 0");
  require(ssl.sinkhorn.eps > 0.0, "ssl.sinkhorn_eps", "must be > 0");
  require(ssl.sinkhorn.iterations >= 1, "ssl.sinkhorn_iters", "must be >= 1");
  require(ssl.sinkhorn.tolerance >= 0.0, "ssl.sinkhorn_tolerance", "must be >= 0");
  require(addon.positives >= 1, "addon.positives", "must be >= 1");
  require(addon.tau_c > 0.0, "addon.tau_c", "must be > 0");
  require(addon.weights.w0 >= 0.0 && addon.weights.w1 >= 0.0 && addon.weights.w2 >= 0.0, "addon.w0..w2",
          "must be >= 0");
  require(addon.kmeans_iters >= 1, "addon.kmeans_iters", "must be >= 1");
  try {
    augment.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("augment: ") + e.what());
  }
  require(augment.crop_size == model.input_size, "augment.crop_size", "must equal model.input_size");
  require(optim.batch_size >= 1, "optim.batch_size", "must be >= 1");
  require(optim.micro_batch >= 1 && optim.micro_batch <= optim.batch_size, "optim.micro_batch",
          "must be in [1, batch_size]");
  require(optim.reference_batch >= 1, "optim.reference_batch", "must be >= 1");
  require(optim.momentum >= 0.0 && optim.momentum < 1.0, "optim.momentum", "must be in [0,1)");
  require(optim.weight_decay >= 0.0, "optim.weight_decay", "must be >= 0");
  require(optim.warmup_epochs >= 0, "optim.warmup_epochs", "must be >= 0");
  check_anchors(optim.core, "core");
  check_anchors(optim.attn, "attn");
  require(train.epochs >= 1, "train.epochs", "must be >= 1");
  require(!train.out_dir.empty(), "train.out_dir", "must be set");
  require(train.checkpoint_every >= 1, "train.checkpoint_every", "must be >= 1");
  require(train.knn_k >= 1, "train.knn_k", "must be >= 1");
  require(train.knn_tau > 0.0, "train.knn_tau", "must be > 0");
  require(train.eval_batch >= 1, "train.eval_batch", "must be >= 1");
  require(train.threads >= 1, "train.threads", "must be >= 1");
  require(eval.probe_epochs >= 1, "eval.probe_epochs", "must be >= 1");
  require(eval.probe_lr > 0.0, "eval.probe_lr", "must be > 0");
  require(eval.probe_batch >= 1, "eval.probe_batch", "must be >= 1");
  require(eval.query_k >= 1, "eval.query_k", "must be >= 1");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  YAML::Node node;
  try {
    node = YAML::Load(value);
  } catch (const YAML::Exception& e) {
    throw ConfigError("config key '" + key + "': cannot parse value '" + value + "' (" + e.msg + ")");
  }
  set_node(*this, key, node);
}

std::string RunConfig::get(const std::string& key) const {
  auto all = fields(const_cast<RunConfig&>(*this));
  YAML::Emitter out;
  out << find_field(all, key).get();
  return out.c_str();
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& f : fields(const_cast<RunConfig&>(*this))) out.push_back(f.name);
  return out;
}

std::string RunConfig::to_yaml() const {
  // Keys are grouped by section in registration order; emit one nested map.
  std::vector<std::pair<std::vector<std::string>, YAML::Node>> entries;
  for (const auto& f : fields(const_cast<RunConfig&>(*this))) {
    std::stringstream ss(f.name);
    std::vector<std::string> parts;
    for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
    entries.emplace_back(std::move(parts), f.get());
  }
  YAML::Emitter out;
  std::function<void(std::size_t, std::size_t, std::size_t)> emit = [&](std::size_t lo, std::size_t hi, std::size_t depth) {
    out << YAML::BeginMap;
    for (auto i = lo; i < hi;) {
      const auto& name = entries[i].first[depth];
      if (entries[i].first.size() == depth + 1) {
        out << YAML::Key << name << YAML::Value << entries[i].second;
        ++i;
        continue;
      }
      auto j = i;
      while (j < hi && entries[j].first.size() > depth + 1 && entries[j].first[depth] == name) ++j;
      out << YAML::Key << name << YAML::Value;
      emit(i, j, depth + 1);
      i = j;
    }
    out << YAML::EndMap;
  };
  emit(0, entries.size(), 0);
  return std::string(out.c_str()) + "\n";
}

RunConfig preset(const std::string& name) {
  RunConfig c;
  if (name == "imagenet" || name == "imagenet50") {
    c.model.backbone = BackboneKind::resnet50;
    c.model.input_size = 224;
    c.model.num_prototypes = 3000;
    c.model.num_clusters = name == "imagenet" ? 3000 : 150;
    c.augment_preset = "imagenet";
    c.augment = imagenet_config();
    c.optim.micro_batch = 32;
    return c;
  }
  if (name == "cifar10") {
    c.model.backbone = BackboneKind::resnet18_cifar;
    c.model.input_size = 32;
    c.model.num_prototypes = 30;
    c.model.num_clusters = 30;
    c.augment_preset = "cifar";
    c.augment = cifar_config();
    c.optim.batch_size = 256;
    c.optim.reference_batch = 256;
    c.optim.core = {0.3, 2.6, 0.0026};
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected cifar10, imagenet or imagenet50)");
}

RunConfig parse_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("config is not valid YAML: " + e.msg);
  }
  if (root.IsNull()) return preset("imagenet");
  if (!root.IsMap()) throw ConfigError("config must be a mapping of sections");
  RunConfig cfg = preset(root["preset"] ? root["preset"].as<std::string>() : "imagenet");
  std::vector<std::pair<std::string, YAML::Node>> entries;
  flatten(root, "", entries);
  // augment.preset replaces the whole augment section, so it goes first.
  for (const auto& [key, value] : entries) {
    if (key == "augment.preset") set_node(cfg, key, value);
  }
  for (const auto& [key, value] : entries) {
    if (key != "preset" && key != "augment.preset") set_node(cfg, key, value);
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::vector<std::string> apply_env_overrides(RunConfig& cfg, const std::map<std::string, std::string>& env) {
  const std::string prefix = kEnvPrefix;
  std::vector<std::pair<std::string, std::string>> pending;
  for (const auto& [name, value] : env) {
    if (name.rfind(prefix, 0) != 0) continue;
    std::string key;
    auto rest = name.substr(prefix.size());
    for (std::size_t i = 0; i < rest.size(); ++i) {
      if (rest.compare(i, 2, "__") == 0) {
        key += '.';
        ++i;
      } else {
        key += static_cast<char>(std::tolower(static_cast<unsigned char>(rest[i])));
      }
    }
    pending.emplace_back(key, value);
  }
  std::stable_partition(pending.begin(), pending.end(), [](const auto& e) { return e.first == "augment.preset"; });
  std::vector<std::string> applied;
  for (const auto& [key, value] : pending) {
    cfg.set(key, value);
    applied.push_back(key);
  }
  return applied;
}

std::map<std::string, std::string> process_environment() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e && *e; ++e) {
    std::string entry(*e);
    const auto eq = entry.find('=');
    if (eq != std::string::npos) env.emplace(entry.substr(0, eq), entry.substr(eq + 1));
  }
  return env;
}

}  // namespace sslattn
