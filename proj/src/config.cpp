#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "gfi/harness.hpp"

namespace gfi::harness {

ModelKind parse_model_kind(const std::string& name) {
  if (name == "tensor") return ModelKind::tensor;
  if (name == "mc") return ModelKind::mc;
  if (name == "network") return ModelKind::network;
  if (name == "linear") return ModelKind::linear;
  throw ContractError("unknown model '" + name + "'");
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::tensor: return "tensor";
    case ModelKind::mc: return "mc";
    case ModelKind::network: return "network";
    case ModelKind::linear: return "linear";
  }
  return "unknown";
}

void ExperimentConfig::validate() const {
  if (replicates < 1) throw ContractError("config: replicates must be >= 1");
  if (draws < 2) throw ContractError("config: draws must be >= 2");
  if (levels.empty()) throw ContractError("config: levels must not be empty");
  for (double l : levels) {
    if (!(l > 0.0 && l < 1.0)) throw ContractError("config: levels must lie in (0, 1)");
  }
  if (!(gfi.c >= 0.0 && gfi.c < 1.0)) throw ContractError("config: c must lie in [0, 1)");
  if (gfi.lambda && !(*gfi.lambda >= 0.0)) throw ContractError("config: lambda must be >= 0");
  if (gfi.sigma && !(*gfi.sigma > 0.0)) throw ContractError("config: sigma must be > 0");
  if (!gfi.lambda && (gfi.cv_folds < 2 || gfi.cv_grid_size < 1)) {
    throw ContractError("config: cross-validation needs >= 2 folds and a non-empty grid");
  }
  if (scenario.n == 0) throw ContractError("config: scenario n must be >= 1");
  if (!(scenario.sigma >= 0.0)) throw ContractError("config: scenario sigma must be >= 0");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

struct Value {
  std::string raw;
  std::string where;

  [[noreturn]] void fail(const std::string& what) const {
    throw ContractError("config " + where + ": " + what);
  }

  std::string str() const {
    if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
      return raw.substr(1, raw.size() - 2);
    }
    return raw;
  }

  double number() const {
    const std::string s = str();
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) fail("expected a number, got '" + raw + "'");
    return v;
  }

  std::uint64_t integer() const {
    const std::string s = str();
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      fail("expected a non-negative integer, got '" + raw + "'");
    }
    return v;
  }

  std::size_t count() const { return static_cast<std::size_t>(integer()); }

  bool boolean() const {
    const std::string s = str();
    if (s == "true") return true;
    if (s == "false") return false;
    fail("expected true or false, got '" + raw + "'");
  }

  std::vector<double> numbers() const {
    if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']') fail("expected a list");
    std::vector<double> out;
    std::stringstream ss(raw.substr(1, raw.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      out.push_back(Value{item, where}.number());
    }
    return out;
  }
};

void apply(ExperimentConfig& cfg, const std::string& section, const std::string& key,
           const Value& v) {
  if (section == "experiment") {
    if (key == "model") cfg.model = parse_model_kind(v.str());
    else if (key == "replicates") cfg.replicates = v.count();
    else if (key == "draws") cfg.draws = v.count();
    else if (key == "levels") cfg.levels = v.numbers();
    else if (key == "seed") cfg.seed = v.integer();
    else if (key == "workers") cfg.workers = v.count();
    else v.fail("unknown key");
  } else if (section == "gfi") {
    auto& g = cfg.gfi;
    if (key == "c") g.c = v.number();
    else if (key == "lambda") g.lambda = v.str() == "cv" ? std::nullopt : std::optional(v.number());
    else if (key == "sigma") g.sigma = v.str() == "estimate" ? std::nullopt : std::optional(v.number());
    else if (key == "gauss_newton_only") g.gauss_newton_only = v.boolean();
    else if (key == "cv_folds") g.cv_folds = v.count();
    else if (key == "cv_grid_size") g.cv_grid_size = v.count();
    else if (key == "tol") g.tol = v.number();
    else if (key == "max_iters") g.max_iters = v.count();
    else if (key == "literal_refit") g.literal_refit = v.boolean();
    else v.fail("unknown key");
  } else if (section == "scenario") {
    auto& s = cfg.scenario;
    if (key == "n") s.n = v.count();
    else if (key == "R") s.rank = v.count();
    else if (key == "p") s.p = v.number();
    else if (key == "p_w") s.p_w = v.number();
    else if (key == "p_b") s.p_b = v.number();
    else if (key == "s") s.s = v.number();
    else if (key == "sigma") s.sigma = v.number();
    else if (key == "image") s.image = v.str();
    else if (key == "image_size") s.image_size = v.count();
    else v.fail("unknown key");
  } else {
    v.fail("key outside a known section");
  }
}

}  // namespace

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig cfg;
  std::string section;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    if (line.front() == '[' && line.back() == ']' && line.find('=') == std::string::npos) {
      section = trim(line.substr(1, line.size() - 2));
      if (section != "experiment" && section != "gfi" && section != "scenario") {
        throw ContractError("config " + where + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ContractError("config " + where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    Value v{trim(line.substr(eq + 1)), where + " (" + key + ")"};
    if (v.raw.empty()) v.fail("missing value");
    apply(cfg, section, key, v);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot open config file " + path.string());
  return parse_config(in);
}

}  // namespace gfi::harness
