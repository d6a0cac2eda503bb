#include "lamp/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace lamp {

namespace {

constexpr char kMagic[8] = {'L', 'A', 'M', 'P', 'C', 'K', '1', '\0'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

template <typename T>
void put(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size())
    throw CheckpointError("truncated checkpoint");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void Checkpoint::add(const std::string& name, std::vector<float> values) {
  blobs.emplace_back(name, std::move(values));
}

const std::vector<float>& Checkpoint::blob(const std::string& name) const {
  for (const auto& [n, v] : blobs)
    if (n == name) return v;
  throw CheckpointError("checkpoint has no blob named " + name);
}

bool Checkpoint::has_blob(const std::string& name) const {
  for (const auto& [n, v] : blobs)
    if (n == name) return true;
  return false;
}

void Checkpoint::add_params(const ParamRefs<float>& params) {
  for (const auto* p : params) add(p->name, p->tensor.values());
}

void Checkpoint::load_params(const ParamRefs<float>& params) const {
  for (auto* p : params) {
    const auto& v = blob(p->name);
    if (v.size() != p->tensor.values().size())
      throw CheckpointError("parameter " + p->name + " size mismatch: file " +
                            std::to_string(v.size()) + " vs model " +
                            std::to_string(p->tensor.values().size()));
    p->tensor.values() = v;
  }
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::string payload;
  put(payload, kVersion);
  const std::string cfg = ck.config.serialize();
  put(payload, static_cast<std::uint32_t>(cfg.size()));
  payload += cfg;
  put(payload, static_cast<std::uint32_t>(ck.blobs.size()));
  for (const auto& [name, values] : ck.blobs) {
    put(payload, static_cast<std::uint32_t>(name.size()));
    payload += name;
    put(payload, static_cast<std::uint32_t>(values.size()));
    payload.append(reinterpret_cast<const char*>(values.data()),
                   values.size() * sizeof(float));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  const std::uint64_t h = fnv1a(payload);
  os.write(reinterpret_cast<const char*>(&h), sizeof(h));
  if (!os) throw CheckpointError("write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(is)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t))
    throw CheckpointError("checkpoint too small: " + path);
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("bad checkpoint magic in " + path);
  const std::string payload =
      bytes.substr(sizeof(kMagic),
                   bytes.size() - sizeof(kMagic) - sizeof(std::uint64_t));
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - sizeof(stored),
              sizeof(stored));
  if (stored != fnv1a(payload))
    throw CheckpointError("checkpoint hash mismatch in " + path);
  std::size_t pos = 0;
  const auto version = take<std::uint32_t>(payload, pos);
  if (version != kVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  Checkpoint ck;
  const auto cfg_len = take<std::uint32_t>(payload, pos);
  if (pos + cfg_len > payload.size())
    throw CheckpointError("truncated checkpoint config");
  ck.config = Config::parse(payload.substr(pos, cfg_len));
  pos += cfg_len;
  const auto nblobs = take<std::uint32_t>(payload, pos);
  for (std::uint32_t i = 0; i < nblobs; ++i) {
    const auto name_len = take<std::uint32_t>(payload, pos);
    if (pos + name_len > payload.size())
      throw CheckpointError("truncated blob name");
    std::string name = payload.substr(pos, name_len);
    pos += name_len;
    const auto count = take<std::uint32_t>(payload, pos);
    if (pos + count * sizeof(float) > payload.size())
      throw CheckpointError("truncated blob " + name);
    std::vector<float> values(count);
    std::memcpy(values.data(), payload.data() + pos, count * sizeof(float));
    pos += count * sizeof(float);
    ck.blobs.emplace_back(std::move(name), std::move(values));
  }
  return ck;
}

}  // namespace lamp
