#include "config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "errors.hpp"

namespace geoloc {
namespace {

// Schema: every known key with its default. Commands resolve the handful of
// derived defaults (frustum depth, exclusion radius, encoder hidden width)
// at use and record them in the resolved dump.
const std::vector<std::pair<const char*, const char*>>& schema() {
  static const std::vector<std::pair<const char*, const char*>> kSchema = {
      {"seed", "0"},
      {"threads", "0"},
      {"world.center_lat_deg", "47.0"},
      {"world.center_lon_deg", "8.0"},
      {"world.radius_m", "60000"},
      {"world.latent_dim", "32"},
      {"world.n_low_freq", "24"},
      {"world.n_high_freq", "24"},
      {"world.ground_dim", "96"},
      {"world.aerial_dim", "80"},
      {"world.noise_sigma", "0.1"},
      {"world.scale", "8"},
      {"data.train_places", "7000"},
      {"data.test_places", "1500"},
      {"data.bumps", "6"},
      {"data.bump_sigma_m", "5000"},
      {"data.bump_weight", "12"},
      {"levels.prototype", "12"},
      {"levels.aerial", "13"},
      {"encoder.dim", "64"},
      {"encoder.hidden", "0"},
      {"train.steps", "5000"},
      {"train.batch_size", "256"},
      {"train.lr_encoders", "0.003"},
      {"train.lr_prototypes", "0.01"},
      {"train.lr_floor", "1e-6"},
      {"train.shard_count", "1"},
      {"train.checkpoint_every", "0"},
      {"train.loss_kind", "ms"},
      {"loss.alpha", "0.2"},
      {"loss.beta", "100"},
      {"loss.lambda", "0.2"},
      {"loss.neg_exclusion_radius_m", "0"},
      {"loss.detach_ap", "true"},
      {"loss.ground_interp", "frustum"},
      {"loss.aerial_interp", "bilinear"},
      {"loss.renormalize_interp", "false"},
      {"loss.edge_ga", "true"},
      {"loss.edge_gp", "true"},
      {"loss.edge_ap", "true"},
      {"loss.frustum_depth_m", "0"},
      {"eval.ks", "1,5,100"},
      {"eval.distances_m", "1600,8000"},
      {"db.kappa", "0"},
      {"db.fallback_aerial_only", "false"},
      {"infonce.tau", "0.0277777777777778"},
      {"infonce.label_smoothing", "0.1"},
      {"haversine.tau_m", "200"},
      {"baseline.init_temperature", "0.01"},
      {"hier.num_levels", "4"},
      {"cosface.margin", "0.35"},
      {"cosface.scale", "64"},
  };
  return kSchema;
}

bool known_key(const std::string& key) {
  for (const auto& [k, v] : schema())
    if (key == k) return true;
  return false;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  for (const auto& [k, v] : schema()) cfg.values_[k] = v;
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open config: " + path);
  RunConfig cfg = defaults();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                            ": expected key = value",
                        lineno);
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (!known_key(key))
      throw ConfigError(path + ":" + std::to_string(lineno) +
                            ": unknown key '" + key + "'",
                        lineno);
    if (value.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) +
                            ": empty value for '" + key + "'",
                        lineno);
    cfg.values_[key] = value;
  }
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known_key(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

bool RunConfig::has(const std::string& key) const {
  return values_.count(key) > 0;
}

std::string RunConfig::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end())
    throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("config key '" + key + "' is not a number: " + v);
  return x;
}

int RunConfig::get_int(const std::string& key) const {
  const double x = get_double(key);
  const int i = static_cast<int>(x);
  if (static_cast<double>(i) != x)
    throw ConfigError("config key '" + key + "' is not an integer");
  return i;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string v = get_string(key);
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("config key '" + key + "' is not an unsigned integer: " + v);
  return static_cast<std::uint64_t>(x);
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' is not a boolean: " + v);
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::stringstream ss(get_string(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    char* end = nullptr;
    const long x = std::strtol(item.c_str(), &end, 10);
    if (end == item.c_str() || *end != '\0')
      throw ConfigError("config key '" + key + "' has a non-integer item: " + item);
    out.push_back(static_cast<int>(x));
  }
  if (out.empty())
    throw ConfigError("config key '" + key + "' is an empty list");
  return out;
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(get_string(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    char* end = nullptr;
    const double x = std::strtod(item.c_str(), &end);
    if (end == item.c_str() || *end != '\0')
      throw ConfigError("config key '" + key + "' has a non-numeric item: " + item);
    out.push_back(x);
  }
  if (out.empty())
    throw ConfigError("config key '" + key + "' is an empty list");
  return out;
}

void RunConfig::write_resolved(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot open for writing: " + path);
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
}

}  // namespace geoloc
