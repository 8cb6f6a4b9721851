#include "cli/config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "opent/edoracle/edoracle.hpp"

namespace opent::cli {

using Json = nlohmann::ordered_json;

namespace {

void check_keys(const Json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(fmt::format("{} must be an object", where.empty() ? "config" : where));
  for (const auto& [k, v] : obj.items())
    if (!allowed.contains(k)) throw ConfigError(fmt::format("unknown key '{}{}'", where.empty() ? "" : where + ".", k));
}

template <class T>
T get(const Json& obj, const std::string& key, const std::string& field, T fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  try {
    if constexpr (std::is_same_v<T, int>) {
      if (!it->is_number_integer()) throw ConfigError(fmt::format("{} must be an integer", field));
    } else if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw ConfigError(fmt::format("{} must be a number", field));
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError(fmt::format("{} must be a string", field));
    }
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(fmt::format("{} has the wrong type", field));
  }
}

}  // namespace

void RunConfig::validate() const {
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(fmt::format("model: {}", e.what()));
  }
  if (chi_max < 1) throw ConfigError(fmt::format("chi_max must be >= 1, got {}", chi_max));
  if (!(eps_trunc >= 0.0 && eps_trunc < 1.0)) throw ConfigError(fmt::format("eps_trunc must lie in [0, 1), got {}", eps_trunc));
  if (!(t_max > 0.0) || !std::isfinite(t_max)) throw ConfigError(fmt::format("t_max must be positive, got {}", t_max));
  if (observe_every < 1) throw ConfigError(fmt::format("observe_every must be >= 1, got {}", observe_every));
  if (bonds.empty()) throw ConfigError("bonds must not be empty");
  for (int b : bonds)
    if (b != 0 && b != 1) throw ConfigError(fmt::format("bonds entries must be 0 or 1, got {}", b));
  if (std::set<int>(bonds.begin(), bonds.end()).size() != bonds.size()) throw ConfigError("bonds has duplicates");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (checkpoint_every < 0) throw ConfigError(fmt::format("checkpoint_every must be >= 0, got {}", checkpoint_every));
  if (oracle) {
    if (oracle->n_sites < edoracle::kMinSites || oracle->n_sites > edoracle::kMaxSites)
      throw ConfigError(fmt::format("oracle.n_sites must lie in [{}, {}], got {}", edoracle::kMinSites,
                                    edoracle::kMaxSites, oracle->n_sites));
    if (oracle->n_sites % 2 != 0) throw ConfigError("oracle.n_sites must be even for pair-product initial states");
    if (!(oracle->tol > 0.0)) throw ConfigError(fmt::format("oracle.tol must be positive, got {}", oracle->tol));
  }
}

RunConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  check_keys(j, "",
             {"schema_version", "model", "state", "chi_max", "eps_trunc", "t_max", "observe_every", "bonds",
              "output_dir", "checkpoint_every", "oracle"});
  if (!j.contains("schema_version")) throw ConfigError("schema_version is missing");
  const int version = get<int>(j, "schema_version", "schema_version", 0);
  if (version != kSchemaVersion)
    throw ConfigError(fmt::format("schema_version {} is not supported (expected {})", version, kSchemaVersion));

  RunConfig c;
  if (j.contains("model")) {
    const Json& m = j["model"];
    check_keys(m, "model", {"J", "gamma", "dt"});
    c.model.J = get<double>(m, "J", "model.J", c.model.J);
    c.model.gamma = get<double>(m, "gamma", "model.gamma", c.model.gamma);
    c.model.dt = get<double>(m, "dt", "model.dt", c.model.dt);
  }
  if (j.contains("state")) {
    const auto s = get<std::string>(j, "state", "state", "");
    try {
      c.state = impdo::parse_initial_state(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(fmt::format("state: {}", e.what()));
    }
  }
  c.chi_max = get<int>(j, "chi_max", "chi_max", c.chi_max);
  c.eps_trunc = get<double>(j, "eps_trunc", "eps_trunc", c.eps_trunc);
  c.t_max = get<double>(j, "t_max", "t_max", c.t_max);
  c.observe_every = get<int>(j, "observe_every", "observe_every", c.observe_every);
  if (j.contains("bonds")) {
    if (!j["bonds"].is_array()) throw ConfigError("bonds must be an array");
    c.bonds.clear();
    for (const auto& b : j["bonds"]) {
      if (!b.is_number_integer()) throw ConfigError("bonds entries must be integers");
      c.bonds.push_back(b.get<int>());
    }
  }
  c.output_dir = get<std::string>(j, "output_dir", "output_dir", c.output_dir);
  c.checkpoint_every = get<int>(j, "checkpoint_every", "checkpoint_every", c.checkpoint_every);
  if (j.contains("oracle") && !j["oracle"].is_null()) {
    const Json& o = j["oracle"];
    check_keys(o, "oracle", {"n_sites", "tol"});
    OracleSettings os;
    os.n_sites = get<int>(o, "n_sites", "oracle.n_sites", os.n_sites);
    os.tol = get<double>(o, "tol", "oracle.tol", os.tol);
    c.oracle = os;
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& c) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["model"] = {{"J", c.model.J}, {"gamma", c.model.gamma}, {"dt", c.model.dt}};
  j["state"] = impdo::to_string(c.state);
  j["chi_max"] = c.chi_max;
  j["eps_trunc"] = c.eps_trunc;
  j["t_max"] = c.t_max;
  j["observe_every"] = c.observe_every;
  j["bonds"] = c.bonds;
  j["output_dir"] = c.output_dir;
  j["checkpoint_every"] = c.checkpoint_every;
  if (c.oracle) j["oracle"] = {{"n_sites", c.oracle->n_sites}, {"tol", c.oracle->tol}};
  return j.dump(2) + "\n";
}

}  // namespace opent::cli
