#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lamp/config.hpp"
#include "lamp/nn.hpp"

// "LAMPCK1" checkpoint container: a config snapshot plus named parameter
// blobs as 32-bit little-endian floats, ended by an FNV-1a 64 content hash.
// Byte layout is documented in the README.

namespace lamp {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  Config config;
  // Insertion-ordered named blobs.
  std::vector<std::pair<std::string, std::vector<float>>> blobs;

  void add(const std::string& name, std::vector<float> values);
  const std::vector<float>& blob(const std::string& name) const;
  bool has_blob(const std::string& name) const;

  void add_params(const ParamRefs<float>& params);
  // Loads values into matching parameters; throws on missing names or size
  // mismatches.
  void load_params(const ParamRefs<float>& params) const;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lamp
