#include "mgfc/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace mgfc {

namespace {

const std::vector<std::pair<std::string, std::string>>& defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"attention.cap", "4096"},
      {"attention.heads", "1"},
      {"backbone.channels", "64"},
      {"backbone.image", "64"},
      {"backbone.layers", "4"},
      {"backbone.patch", "4"},
      {"backbone.seed", "0"},
      {"cluster.eps", "auto"},
      {"cluster.k", "5"},
      {"cluster.method", "dbscan"},
      {"cluster.min_pts", "4"},
      {"data.classes", "4"},
      {"data.max_shapes", "3"},
      {"data.min_shapes", "1"},
      {"data.source", "200"},
      {"data.target", "50"},
      {"optim.lr", "1e-4"},
      {"optim.weight_decay", "0.05"},
      {"seed", "0"},
      {"tokens.m", "16"},
      {"train.batch", "4"},
      {"train.checkpoint_every", "500"},
      {"train.iters", "2000"},
      {"train.limit", "0"},
      {"train.log_every", "10"},
      {"tuners.enable", "cgt,mgt,fgt"},
  };
  return d;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

}  // namespace

Precision precision_from_env() {
  const char* v = std::getenv("MGFC_PRECISION");
  if (!v || std::string(v).empty() || std::string(v) == "32") return Precision::f32;
  if (std::string(v) == "64") return Precision::f64;
  throw ConfigError("MGFC_PRECISION must be 32 or 64, got '" + std::string(v) + "'");
}

TunerSet parse_tuner_set(const std::string& text) {
  TunerSet t{false, false, false};
  const std::string all = trim(text);
  if (all == "none" || all.empty()) return t;
  std::stringstream in(all);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item == "cgt") t.cgt = true;
    else if (item == "mgt") t.mgt = true;
    else if (item == "fgt") t.fgt = true;
    else throw ConfigError("tuners.enable: unknown tuner '" + item + "' (expected cgt, mgt, fgt or none)");
  }
  return t;
}

RunConfig::RunConfig() {
  for (const auto& [k, v] : defaults()) values_[k] = v;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [key, v] : defaults()) out.push_back(key);
    return out;
  }();
  return k;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig c;
  c.merge_text(text);
  return c;
}

void RunConfig::merge_text(const std::string& text) {
  std::stringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(number) + ": expected key=value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw ConfigError("config: unknown key '" + key + "'");
  if (key == "cluster.method") {
    if (value != "dbscan" && value != "kmeans" && value != "single")
      throw ConfigError("cluster.method must be dbscan, kmeans or single");
  } else if (key == "cluster.eps") {
    if (value != "auto" && !(parse_double(key, value) > 0.0)) throw ConfigError("cluster.eps must be auto or positive");
  } else if (key == "tuners.enable") {
    parse_tuner_set(value);
  } else if (key == "optim.lr" || key == "optim.weight_decay") {
    if (parse_double(key, value) < 0.0) throw ConfigError(key + " must be non-negative");
  } else if (parse_int(key, value) < 0) {
    throw ConfigError(key + " must be non-negative");
  }
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
  return it->second;
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) > 0; }

int RunConfig::get_int(const std::string& key) const { return static_cast<int>(parse_int(key, get(key))); }

double RunConfig::get_double(const std::string& key) const { return parse_double(key, get(key)); }

std::string RunConfig::resolved_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::string RunConfig::content_hash() const {
  const std::string body = resolved_text();
  const std::string framed = "config " + std::to_string(body.size()) + '\0' + body;
  const auto digest = sha256(std::span(reinterpret_cast<const std::uint8_t*>(framed.data()), framed.size()));
  return to_hex(digest);
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.backbone.layers = get_int("backbone.layers");
  m.backbone.channels = get_int("backbone.channels");
  m.backbone.patch = get_int("backbone.patch");
  m.backbone.image_height = m.backbone.image_width = get_int("backbone.image");
  m.backbone.seed = static_cast<std::uint64_t>(parse_int("backbone.seed", get("backbone.seed")));
  m.backbone.validate();
  m.tokens = get_int("tokens.m");
  const std::string method = get("cluster.method");
  m.cluster.method = method == "kmeans" ? ClusterMethod::kmeans : method == "single" ? ClusterMethod::single : ClusterMethod::dbscan;
  if (get("cluster.eps") != "auto") m.cluster.eps = get_double("cluster.eps");
  m.cluster.min_pts = get_int("cluster.min_pts");
  m.cluster.k = get_int("cluster.k");
  m.cluster.seed = static_cast<std::uint64_t>(parse_int("seed", get("seed")));
  if (m.cluster.k < 1) throw ConfigError("cluster.k must be at least 1");
  if (m.cluster.min_pts < 1) throw ConfigError("cluster.min_pts must be at least 1");
  m.tuners = parse_tuner_set(get("tuners.enable"));
  m.heads = get_int("attention.heads");
  if (m.heads < 1 || m.backbone.channels % m.heads != 0)
    throw ConfigError("attention.heads must divide backbone.channels");
  m.attention_cap = get_int("attention.cap");
  m.classes = get_int("data.classes");
  if (m.classes < 2 || m.classes > 4) throw ConfigError("data.classes must lie in [2, 4]");
  m.seed = static_cast<std::uint64_t>(parse_int("seed", get("seed")));
  return m;
}

DatasetConfig RunConfig::dataset() const {
  DatasetConfig d;
  d.scene.height = d.scene.width = get_int("backbone.image");
  d.scene.classes = get_int("data.classes");
  d.scene.min_shapes = get_int("data.min_shapes");
  d.scene.max_shapes = get_int("data.max_shapes");
  if (d.scene.max_shapes < d.scene.min_shapes) throw ConfigError("data.max_shapes must be >= data.min_shapes");
  d.source_count = get_int("data.source");
  d.target_count = get_int("data.target");
  d.seed = static_cast<std::uint64_t>(parse_int("seed", get("seed")));
  return d;
}

TrainOptions RunConfig::train() const {
  TrainOptions t;
  t.iters = get_int("train.iters");
  t.batch = get_int("train.batch");
  if (t.batch < 1) throw ConfigError("train.batch must be at least 1");
  t.log_every = get_int("train.log_every");
  t.checkpoint_every = get_int("train.checkpoint_every");
  t.limit = get_int("train.limit");
  t.seed = static_cast<std::uint64_t>(parse_int("seed", get("seed")));
  t.optim.lr = get_double("optim.lr");
  t.optim.weight_decay = get_double("optim.weight_decay");
  return t;
}

}  // namespace mgfc
