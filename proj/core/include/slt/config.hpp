#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace slt {

// Flat "key = value" configuration with '#' comment lines. Dotted keys
// namespace the modules; unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();

  static RunConfig from_file(const std::filesystem::path& path);
  void load_file(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has_key(const std::string& key) const;

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  int64_t get_i64(const std::string& key) const;
  uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool is_default(const std::string& key) const;

  // Full key set with effective values, sorted by key.
  std::map<std::string, std::string> resolved() const;
  std::string resolved_text() const;
  void write_resolved(const std::filesystem::path& path) const;

  // Path helpers: empty path-like keys resolve to defaults under out_dir.
  std::filesystem::path out_dir() const;
  std::filesystem::path tokenizer_path() const;
  std::filesystem::path truecaser_path() const;

 private:
  std::map<std::string, std::string> values_;
};

std::pair<std::string, std::string> parse_config_line(const std::string& line);  // key/value or empty key

}  // namespace slt
