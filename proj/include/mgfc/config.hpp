#pragma once

// Flat key=value run configuration.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mgfc/data.hpp"
#include "mgfc/model.hpp"
#include "mgfc/optim.hpp"

namespace mgfc {

struct TrainOptions {
  int iters = 2000;
  int batch = 4;
  int log_every = 10;
  int checkpoint_every = 500;
  int limit = 0;  // use only the first `limit` source samples when > 0
  std::uint64_t seed = 0;
  AdamWConfig optim;
};

enum class Precision { f32, f64 };

// Reads MGFC_PRECISION (32 or 64, default 32).
Precision precision_from_env();

class RunConfig {
 public:
  RunConfig();

  static RunConfig from_file(const std::filesystem::path& path);
  // Parses `key=value` lines; blank lines and `#` comments are skipped.
  static RunConfig from_text(const std::string& text);

  void merge_text(const std::string& text);
  // Throws ConfigError for unknown keys or malformed values.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const;

  static const std::vector<std::string>& keys();

  // Canonical, sorted `key=value` listing of every setting.
  std::string resolved_text() const;
  std::string content_hash() const;

  ModelConfig model() const;
  DatasetConfig dataset() const;
  TrainOptions train() const;

 private:
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;

  std::map<std::string, std::string> values_;
};

TunerSet parse_tuner_set(const std::string& text);

}  // namespace mgfc
