#include "rescbm/run_config.hpp"

#include "rescbm/error.hpp"
#include "rescbm/keyvalue.hpp"

#include <functional>

namespace rescbm {

namespace fs = std::filesystem;

namespace {

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&, const fs::path&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
  std::string key;
  Setter set;
  Getter get;
};

void check(bool ok, const std::string& where, const std::string& key, const std::string& range) {
  if (!ok) throw ValidationError(where + ": " + key + " must be " + range);
}

Field path_field(std::string key, fs::path RunConfig::*member) {
  return {key,
          [member](RunConfig& c, const std::string& v, const std::string&, const fs::path& base) {
            const fs::path p(v);
            c.*member = (p.is_relative() && !base.empty()) ? base / p : p;
          },
          [member](const RunConfig& c) { return (c.*member).generic_string(); }};
}

Field real_field(std::string key, double RunConfig::*member, std::function<bool(double)> ok, std::string range) {
  return {key,
          [key, member, ok, range](RunConfig& c, const std::string& v, const std::string& where, const fs::path&) {
            const double x = parse_double(v, where + ": " + key);
            check(ok(x), where, key, range);
            c.*member = x;
          },
          [member](const RunConfig& c) { return format_double(c.*member); }};
}

Field count_field(std::string key, std::size_t RunConfig::*member, long long min) {
  return {key,
          [key, member, min](RunConfig& c, const std::string& v, const std::string& where, const fs::path&) {
            const long long x = parse_integer(v, where + ": " + key);
            check(x >= min, where, key, ">= " + std::to_string(min));
            c.*member = static_cast<std::size_t>(x);
          },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      path_field("features", &RunConfig::features),
      path_field("labels", &RunConfig::labels),
      path_field("classes", &RunConfig::classes),
      path_field("base_bank", &RunConfig::base_bank),
      path_field("candidate_bank", &RunConfig::candidate_bank),
      path_field("class_embeddings", &RunConfig::class_embeddings),
      path_field("output_dir", &RunConfig::output_dir),
      real_field("lambda", &RunConfig::lambda, [](double x) { return x >= 0.0; }, ">= 0"),
      real_field("l1_ratio", &RunConfig::l1_ratio, [](double x) { return x >= 0.0 && x <= 1.0; }, "in [0, 1]"),
      count_field("residual_count", &RunConfig::residual_count, 0),
      real_field("alpha", &RunConfig::alpha, [](double x) { return x >= 0.0; }, ">= 0"),
      count_field("top_m", &RunConfig::top_m, 1),
      real_field("learning_rate", &RunConfig::learning_rate, [](double x) { return x > 0.0; }, "> 0"),
      count_field("epochs", &RunConfig::epochs, 1),
      count_field("batch_size", &RunConfig::batch_size, 1),
      count_field("patience", &RunConfig::patience, 0),
      real_field("noise_scale", &RunConfig::noise_scale, [](double x) { return x >= 0.0; }, ">= 0"),
      real_field("epsilon", &RunConfig::epsilon, [](double x) { return x > 0.0; }, "> 0"),
      count_field("discovery_epochs", &RunConfig::discovery_epochs, 1),
      real_field("discovery_learning_rate", &RunConfig::discovery_learning_rate, [](double x) { return x > 0.0; },
                 "> 0"),
      real_field("train_fraction", &RunConfig::train_fraction, [](double x) { return x > 0.0 && x < 1.0; },
                 "in (0, 1)"),
      {"seed",
       [](RunConfig& c, const std::string& v, const std::string& where, const fs::path&) {
         const long long x = parse_integer(v, where + ": seed");
         check(x >= 0, where, "seed", ">= 0");
         c.seed = static_cast<std::uint64_t>(x);
       },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

}  // namespace

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void set_run_config_value(RunConfig& config, const std::string& key, const std::string& value,
                          const std::string& where, const fs::path& base_dir) {
  const Field* f = find_field(key);
  if (f == nullptr) throw ValidationError(where + ": unknown key '" + key + "'");
  f->set(config, value, where, base_dir);
}

RunConfig parse_run_config(const std::string& text, const std::string& source_name, const fs::path& base_dir,
                           RunConfig defaults) {
  int section = 0;
  const auto entries = parse_key_values(text, source_name, &section);
  if (section != 0) {
    throw ValidationError(source_name + ":" + std::to_string(section) + ": sections are not allowed in a config");
  }
  to_map(entries, source_name);  // rejects duplicate keys
  for (const auto& e : entries) {
    set_run_config_value(defaults, e.key, e.value, source_name + ":" + std::to_string(e.line), base_dir);
  }
  return defaults;
}

RunConfig load_run_config(const fs::path& path, RunConfig defaults) {
  return parse_run_config(read_text_file(path), path.string(), path.parent_path(), std::move(defaults));
}

std::map<std::string, std::string> run_config_values(const RunConfig& config) {
  std::map<std::string, std::string> out;
  for (const auto& f : fields()) out[f.key] = f.get(config);
  return out;
}

std::string format_run_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) {
    const std::string v = f.get(config);
    if (!v.empty()) out += f.key + " = " + v + "\n";
  }
  return out;
}

void require_paths(const RunConfig& config, const std::vector<std::string>& keys) {
  for (const auto& key : keys) {
    const Field* f = find_field(key);
    if (f == nullptr) throw ValidationError("unknown key '" + key + "'");
    const std::string v = f->get(config);
    if (v.empty()) throw ValidationError("config key '" + key + "' is required");
    if (!fs::exists(v)) throw ValidationError(key + ": no such file '" + v + "'");
  }
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.regularizer = RegularizerSpec{c.lambda, c.l1_ratio};
  t.residual_count = c.residual_count;
  t.learning_rate = c.learning_rate;
  t.epochs = c.epochs;
  t.batch_size = c.batch_size;
  t.patience = c.patience;
  t.epsilon = c.epsilon;
  t.seed = c.seed;
  return t;
}

DiscoveryConfig discovery_config(const RunConfig& c) {
  DiscoveryConfig d;
  d.alpha = c.alpha;
  d.top_m = c.top_m;
  d.noise_scale = c.noise_scale;
  d.epochs = c.discovery_epochs;
  d.learning_rate = c.discovery_learning_rate;
  return d;
}

}  // namespace rescbm
