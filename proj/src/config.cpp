// SPDX-License-Identifier: Apache-2.0
#include "demo/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "demo/errors.hpp"

namespace demo {

namespace fs = std::filesystem;

namespace {

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct Entry {
  ConfigKey key;
  Setter set;
  Getter get;  // empty for write-only keys
};

[[noreturn]] void bad_value(const std::string& what, const std::string& value) {
  throw ConfigError("invalid value '" + value + "' (expected " + what + ")");
}

Index to_index(const std::string& v) {
  Index out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value("an integer", v);
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value("a non-negative integer", v);
  return out;
}

double to_double(const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) bad_value("a number", v);
  return out;
}

bool to_bool(const std::string& v) {
  std::string s = v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad_value("a boolean", v);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(Index v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }

// Builds an entry for a member reached through `access`.
template <typename T, typename Access>
Entry make(std::string name, std::string doc, Access access) {
  Entry e;
  e.key = {std::move(name), std::move(doc)};
  e.set = [access](ExperimentConfig& c, const std::string& v) {
    T& ref = access(c);
    if constexpr (std::is_same_v<T, bool>) {
      ref = to_bool(v);
    } else if constexpr (std::is_same_v<T, double>) {
      ref = to_double(v);
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      ref = to_u64(v);
    } else {
      ref = to_index(v);
    }
  };
  e.get = [access](const ExperimentConfig& c) {
    return fmt(access(const_cast<ExperimentConfig&>(c)));
  };
  return e;
}

#define DEMO_KEY(T, name, doc, expr) \
  make<T>(name, doc, [](ExperimentConfig& c) -> T& { return expr; })

std::vector<Entry> build_entries() {
  std::vector<Entry> t;
  // encoder
  t.push_back(DEMO_KEY(Index, "encoder.image_height", "input height in pixels", c.train.model.encoder.image_height));
  t.push_back(DEMO_KEY(Index, "encoder.image_width", "input width in pixels", c.train.model.encoder.image_width));
  t.push_back(DEMO_KEY(Index, "encoder.patch_size", "square patch side; must divide height and width", c.train.model.encoder.patch_size));
  t.push_back(DEMO_KEY(Index, "encoder.channels", "input channels", c.train.model.encoder.channels));
  t.push_back(DEMO_KEY(Index, "encoder.embed_dim", "token width C", c.train.model.encoder.embed_dim));
  t.push_back(DEMO_KEY(Index, "encoder.depth", "transformer blocks per stream", c.train.model.encoder.depth));
  t.push_back(DEMO_KEY(Index, "encoder.num_heads", "encoder attention heads", c.train.model.encoder.num_heads));
  t.push_back(DEMO_KEY(Index, "encoder.mlp_ratio", "MLP hidden width / C", c.train.model.encoder.mlp_ratio));
  t.push_back(DEMO_KEY(bool, "encoder.share_weights", "one encoder for all three modalities", c.train.model.encoder.share_across_modalities));
  t.push_back(DEMO_KEY(std::uint64_t, "encoder.seed", "parameter initialisation seed", c.train.model.encoder.seed));
  // model
  t.push_back(DEMO_KEY(bool, "model.use_pife", "patch-integrated modality features", c.train.model.use_pife));
  t.push_back(DEMO_KEY(bool, "model.use_hdm", "hierarchical decoupling module", c.train.model.use_hdm));
  t.push_back(DEMO_KEY(bool, "model.use_atmoe", "attention-triggered mixture of experts (needs use_hdm)", c.train.model.use_atmoe));
  {
    Entry e;
    e.key = {"model.variant", "A-E: sets the module flags and inference streams of that model"};
    e.set = [](ExperimentConfig& c, const std::string& v) {
      if (v.size() != 1) bad_value("one of A, B, C, D, E", v);
      c.train.model = c.train.model.with_variant(static_cast<char>(std::toupper(v[0])));
    };
    t.push_back(std::move(e));
  }
  auto enum_entry = [&](std::string name, std::string doc, auto set, auto get) {
    Entry e;
    e.key = {std::move(name), std::move(doc)};
    e.set = set;
    e.get = get;
    t.push_back(std::move(e));
  };
  enum_entry("model.inference", "joint | joint_and_modality",
             [](ExperimentConfig& c, const std::string& v) { c.train.model.inference = parse_inference_streams(v); },
             [](const ExperimentConfig& c) { return std::string(to_string(c.train.model.inference)); });
  enum_entry("model.pooling", "average | max | gem",
             [](ExperimentConfig& c, const std::string& v) { c.train.model.pooling = parse_pooling_mode(v); },
             [](const ExperimentConfig& c) { return std::string(to_string(c.train.model.pooling)); });
  enum_entry("model.interaction",
             "cross_attention | cross_attention_no_fused | no_interaction | transformer_block",
             [](ExperimentConfig& c, const std::string& v) { c.train.model.interaction = parse_hdm_interaction(v); },
             [](const ExperimentConfig& c) { return std::string(to_string(c.train.model.interaction)); });
  t.push_back(DEMO_KEY(Index, "model.hdm_heads", "HDM attention heads; 0 reuses encoder.num_heads", c.train.model.hdm_heads));
  enum_entry("model.gating", "attention | simple_add | simple_concat",
             [](ExperimentConfig& c, const std::string& v) { c.train.model.gating = parse_gating_variant(v); },
             [](const ExperimentConfig& c) { return std::string(to_string(c.train.model.gating)); });
  t.push_back(DEMO_KEY(Index, "model.moe_heads", "gate heads H of the attention gating", c.train.model.moe_heads));
  enum_entry("model.expert", "simple | bottleneck | ffn",
             [](ExperimentConfig& c, const std::string& v) { c.train.model.expert = parse_expert_structure(v); },
             [](const ExperimentConfig& c) { return std::string(to_string(c.train.model.expert)); });
  // loss
  t.push_back(DEMO_KEY(double, "loss.smoothing", "label smoothing of the ID loss", c.train.model.loss.smoothing));
  t.push_back(DEMO_KEY(double, "loss.margin", "triplet margin", c.train.model.loss.margin));
  t.push_back(DEMO_KEY(Index, "loss.num_classes", "classifier width; set from the training identities", c.train.model.loss.num_classes));
  // train
  t.push_back(DEMO_KEY(Index, "train.epochs", "training epochs", c.train.epochs));
  t.push_back(DEMO_KEY(Index, "train.max_steps", "cap on optimizer steps; 0 = none", c.train.max_steps));
  t.push_back(DEMO_KEY(double, "train.base_lr", "learning rate of the new modules", c.train.base_lr));
  t.push_back(DEMO_KEY(double, "train.encoder_lr", "learning rate of the encoder", c.train.encoder_lr));
  t.push_back(DEMO_KEY(double, "train.weight_decay", "L2 penalty", c.train.weight_decay));
  t.push_back(DEMO_KEY(bool, "train.cosine", "cosine decay instead of constant learning rates", c.train.cosine));
  t.push_back(DEMO_KEY(Index, "train.p", "identities per batch", c.train.p));
  t.push_back(DEMO_KEY(Index, "train.k", "instances per identity per batch", c.train.k));
  t.push_back(DEMO_KEY(std::uint64_t, "train.seed", "sampling and augmentation seed", c.train.seed));
  t.push_back(DEMO_KEY(Index, "train.val_instances", "held-out instances per identity; 0 validates on training data", c.train.val_instances));
  t.push_back(DEMO_KEY(Index, "train.eval_every", "epochs between validations; 0 = never", c.train.eval_every));
  // augment
  t.push_back(DEMO_KEY(bool, "augment.enabled", "apply flip, pad-crop and erasing", c.train.augment.enabled));
  t.push_back(DEMO_KEY(double, "augment.flip_prob", "horizontal flip probability", c.train.augment.flip_prob));
  t.push_back(DEMO_KEY(Index, "augment.pad", "pad before random crop; -1 = 4% of height", c.train.augment.pad));
  t.push_back(DEMO_KEY(double, "augment.erase_prob", "random erasing probability", c.train.augment.erase_prob));
  t.push_back(DEMO_KEY(double, "augment.erase_area_min", "smallest erased area fraction", c.train.augment.erase_area_min));
  t.push_back(DEMO_KEY(double, "augment.erase_area_max", "largest erased area fraction", c.train.augment.erase_area_max));
  t.push_back(DEMO_KEY(double, "augment.erase_aspect_min", "smallest erased aspect ratio", c.train.augment.erase_aspect_min));
  // eval
  enum_entry("eval.metric", "euclidean | cosine",
             [](ExperimentConfig& c, const std::string& v) { c.train.eval.metric = parse_metric(v); },
             [](const ExperimentConfig& c) { return std::string(to_string(c.train.eval.metric)); });
  t.push_back(DEMO_KEY(bool, "eval.normalize", "L2-normalise features before distances", c.train.eval.normalize));
  t.push_back(DEMO_KEY(Index, "eval.max_rank", "length of the CMC curve", c.train.eval.max_rank));
  t.push_back(DEMO_KEY(Index, "eval.top_k", "gallery tiles per rank-list figure", c.top_k));
  // data / output
  enum_entry("data.root", "dataset directory holding RGB/, NI/, TI/",
             [](ExperimentConfig& c, const std::string& v) { c.data_root = v; },
             [](const ExperimentConfig& c) { return c.data_root.string(); });
  enum_entry("output.dir", "output directory; relative paths resolve under $DEMO_OUTPUT_ROOT",
             [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; },
             [](const ExperimentConfig& c) { return c.output_dir.string(); });
  // synth
  t.push_back(DEMO_KEY(Index, "synth.num_identities", "identities to render", c.synth.num_identities));
  t.push_back(DEMO_KEY(Index, "synth.instances", "instances per identity", c.synth.instances_per_identity));
  t.push_back(DEMO_KEY(Index, "synth.height", "image height", c.synth.height));
  t.push_back(DEMO_KEY(Index, "synth.width", "image width", c.synth.width));
  t.push_back(DEMO_KEY(Index, "synth.cameras", "cameras cycled over instances", c.synth.cameras));
  t.push_back(DEMO_KEY(std::uint64_t, "synth.seed", "rendering seed", c.synth.seed));
  const char* tags[3] = {"rgb", "nir", "tir"};
  for (int m = 0; m < 3; ++m) {
    Entry s;
    s.key = {std::string("synth.signal_") + tags[m], "identity signal strength in [0, 1]"};
    s.set = [m](ExperimentConfig& c, const std::string& v) { c.synth.signal[m] = to_double(v); };
    s.get = [m](const ExperimentConfig& c) { return fmt(c.synth.signal[m]); };
    t.push_back(std::move(s));
    Entry n;
    n.key = {std::string("synth.noise_") + tags[m], "pixel noise standard deviation"};
    n.set = [m](ExperimentConfig& c, const std::string& v) { c.synth.noise[m] = to_double(v); };
    n.get = [m](const ExperimentConfig& c) { return fmt(c.synth.noise[m]); };
    t.push_back(std::move(n));
  }
  return t;
}

#undef DEMO_KEY

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = build_entries();
  return table;
}

const Entry& lookup(const std::string& key) {
  for (const auto& e : entries()) {
    if (e.key.name == key) return e;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& e : entries()) out.push_back(e.key);
    return out;
  }();
  return keys;
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  const Entry& e = lookup(key);
  try {
    e.set(config, trim(value));
  } catch (const ConfigError& err) {
    throw ConfigError(key + ": " + err.what());
  }
}

std::string get_config_value(const ExperimentConfig& config, const std::string& key) {
  const Entry& e = lookup(key);
  if (!e.get) throw ConfigError("config key '" + key + "' is write-only");
  return e.get(config);
}

void load_config_file(ExperimentConfig& config, const fs::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(path.string() + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, node] : tree) {
    if (node.empty()) {
      throw ConfigError(path.string() + ": key '" + section + "' must be inside a [section]");
    }
    for (const auto& [key, value] : node) {
      set_config_value(config, section + "." + key, value.get_value<std::string>());
    }
  }
}

void apply_overrides(ExperimentConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("override '" + o + "' is not of the form section.key=value");
    }
    set_config_value(config, trim(o.substr(0, eq)), o.substr(eq + 1));
  }
}

std::map<std::string, std::string> to_key_values(const ExperimentConfig& config) {
  std::map<std::string, std::string> kv;
  for (const auto& e : entries()) {
    if (e.get) kv[e.key.name] = e.get(config);
  }
  return kv;
}

void from_key_values(ExperimentConfig& config, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) set_config_value(config, k, v);
}

std::string to_ini(const ExperimentConfig& config) {
  std::ostringstream os;
  std::string current;
  for (const auto& e : entries()) {
    if (!e.get) continue;
    const auto dot = e.key.name.find('.');
    const std::string section = e.key.name.substr(0, dot);
    if (section != current) {
      if (!current.empty()) os << '\n';
      os << '[' << section << "]\n";
      current = section;
    }
    os << "# " << e.key.doc << '\n' << e.key.name.substr(dot + 1) << " = " << e.get(config) << '\n';
  }
  return os.str();
}

fs::path resolve_output_dir(const fs::path& dir) {
  if (dir.is_absolute()) return dir;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / dir;
  return dir;
}

}  // namespace demo
