#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

// Flat key=value configuration. One `key = value` per line, `#` comments.
// Serialization is sorted by key so equal maps produce identical bytes.

namespace lamp {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text);
  static Config load_file(const std::string& path);
  std::string serialize() const;

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) {
    kv_[key] = value;
  }
  void set_int(const std::string& key, std::int64_t v);
  void set_double(const std::string& key, double v);  // round-trip exact

  std::string get_str(const std::string& key, const std::string& dflt) const;
  std::int64_t get_int(const std::string& key, std::int64_t dflt) const;
  double get_double(const std::string& key, double dflt) const;

  // Throwing accessors for required keys.
  std::string require_str(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace lamp
