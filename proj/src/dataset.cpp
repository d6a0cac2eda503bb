#include "lamp/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace lamp {

namespace {

constexpr char kMagic[8] = {'L', 'A', 'M', 'P', 'D', 'S', '1', '\0'};
constexpr std::uint32_t kVersion = 1;

class Fnv1a {
 public:
  void update(const void* data, std::size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001B3ULL;
    }
  }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

// Little-endian writer that hashes everything it emits.
class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void bytes(const void* p, std::size_t n) {
    os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    hash_.update(p, n);
  }
  template <typename T>
  void pod(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    bytes(&v, sizeof(T));
  }
  void f32s(const std::vector<float>& v) {
    if (!v.empty()) bytes(v.data(), v.size() * sizeof(float));
  }
  std::uint64_t digest() const { return hash_.digest(); }

 private:
  std::ostream& os_;
  Fnv1a hash_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}
  void bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is_) throw IoError("unexpected end of file");
    hash_.update(p, n);
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  void f32s(std::vector<float>& v, std::size_t n) {
    v.resize(n);
    if (n) bytes(v.data(), n * sizeof(float));
  }
  std::uint64_t digest() const { return hash_.digest(); }

 private:
  std::istream& is_;
  Fnv1a hash_;
};

}  // namespace

void fit_normalizers(Dataset& ds) {
  // Scene flow is mostly exact zeros (static keypoints) with a sparse set of
  // large increments on moving entities. A plain z-score over all entries
  // puts the moving values at 15-30 standard deviations, which makes the
  // squared-error training objective heavy-tailed and unstable. Instead the
  // motion normalizer keeps mean 0 (zeros stay exactly zero) and scales each
  // channel by the root mean square of its *active* entries.
  double msq[3] = {0, 0, 0};
  std::uint64_t mcount[3] = {0, 0, 0};
  double asum[4] = {0, 0, 0, 0}, asq[4] = {0, 0, 0, 0};
  std::uint64_t acount = 0;
  const int t = ds.grid.t_steps;
  for (const auto& r : ds.records) {
    for (int i = 0; i < ds.grid.keypoints(); ++i) {
      if (!r.valid[i]) continue;
      for (int s = 0; s < t; ++s)
        for (int c = 0; c < 3; ++c) {
          const double v = r.flow[(static_cast<std::size_t>(i) * t + s) * 3 + c];
          if (v == 0.0) continue;
          msq[c] += v * v;
          ++mcount[c];
        }
    }
    for (int s = 0; s < ds.chunk_h; ++s)
      for (int c = 0; c < 4; ++c) {
        const double v = r.actions[static_cast<std::size_t>(s) * 4 + c];
        asum[c] += v;
        asq[c] += v * v;
      }
    acount += ds.chunk_h;
  }
  for (int c = 0; c < 3; ++c) {
    const double n = mcount[c] ? static_cast<double>(mcount[c]) : 1.0;
    ds.motion_norm.mean[c] = 0.0;
    ds.motion_norm.stddev[c] = std::max(std::sqrt(msq[c] / n), 1e-6);
  }
  ds.motion_norm.fitted = true;
  for (int c = 0; c < 4; ++c) {
    const double n = acount ? static_cast<double>(acount) : 1.0;
    ds.action_norm.mean[c] = asum[c] / n;
    const double var = std::max(
        asq[c] / n - ds.action_norm.mean[c] * ds.action_norm.mean[c], 0.0);
    ds.action_norm.stddev[c] = std::max(std::sqrt(var), 1e-6);
  }
  ds.action_norm.fitted = true;
}

Dataset generate_dataset(const DatagenConfig& cfg, Rng& rng) {
  cfg.grid.validate();
  using namespace toyworld;
  Dataset ds;
  ds.grid = cfg.grid;
  ds.chunk_h = cfg.chunk_h;
  const CameraPose cam = default_camera(cfg.grid.image_w, cfg.grid.image_h);
  const int horizon = std::max(cfg.grid.t_steps, cfg.chunk_h);

  for (int ep = 0; ep < cfg.episodes; ++ep) {
    Rng ep_rng = rng.fork(static_cast<std::uint64_t>(ep));
    const TaskKind kind = cfg.task_mix[ep % cfg.task_mix.size()];
    bool done = false;
    for (int attempt = 0; attempt <= cfg.max_resamples_per_episode && !done;
         ++attempt) {
      const int color = static_cast<int>(ep_rng.next_below(2));
      const TaskSpec task = make_task(kind, color);
      WorldState s = reset(task, ep_rng);
      std::vector<WorldState> states{s};
      std::vector<std::array<double, 4>> actions;
      bool failed = false;
      while (static_cast<int>(actions.size()) < cfg.max_episode_steps) {
        double a[4];
        scripted_expert(states.back(), task, a, &failed);
        if (failed) break;
        actions.push_back({a[0], a[1], a[2], a[3]});
        states.push_back(step(states.back(), a));
        if (progress_score(states, task) >= 1.0) break;
      }
      if (failed || progress_score(states, task) < 1.0) {
        ++ds.expert_resamples;
        continue;
      }
      // Pad with holds so every decision step has full flow/action context.
      for (int i = 0; i < horizon; ++i) {
        const double hold[4] = {0, 0, 0,
                                states.back().gripper_open < 0.5 ? 1.0 : 0.0};
        actions.push_back({hold[0], hold[1], hold[2], hold[3]});
        states.push_back(step(states.back(), hold));
      }
      const int usable = static_cast<int>(actions.size()) - horizon;
      for (int t0 = 0; t0 < usable; t0 += cfg.chunk_h) {
        EpisodeRecord rec;
        const Observation obs = render(states[t0], cam);
        rec.rgb = obs.rgb;
        rec.depth = obs.depth;
        rec.instruction_id = static_cast<std::uint32_t>(task.instruction_id);
        rec.state[0] = static_cast<float>(states[t0].gripper[0]);
        rec.state[1] = static_cast<float>(states[t0].gripper[1]);
        rec.state[2] = static_cast<float>(states[t0].gripper[2]);
        rec.state[3] = static_cast<float>(states[t0].gripper_open);
        std::vector<WorldState> window(states.begin() + t0,
                                       states.begin() + t0 + cfg.grid.t_steps + 1);
        std::vector<CameraPose> cams(window.size(), cam);
        FlowResult fr = ground_truth_flow(window, cams, cam, cfg.grid);
        rec.flow.assign(fr.field.values.begin(), fr.field.values.end());
        rec.valid = std::move(fr.valid);
        rec.actions.resize(static_cast<std::size_t>(cfg.chunk_h) * 4);
        for (int h = 0; h < cfg.chunk_h; ++h)
          for (int c = 0; c < 4; ++c)
            rec.actions[static_cast<std::size_t>(h) * 4 + c] =
                static_cast<float>(actions[t0 + h][c]);
        ds.records.push_back(std::move(rec));
      }
      done = true;
    }
    if (!done)
      throw toyworld::GenerationError(
          "expert failure rate above threshold for episode " +
          std::to_string(ep));
  }
  fit_normalizers(ds);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  Writer w(os);
  w.bytes(kMagic, sizeof(kMagic));
  w.pod(kVersion);
  w.pod(static_cast<std::uint32_t>(ds.records.size()));
  w.pod(static_cast<std::uint32_t>(ds.grid.k_h));
  w.pod(static_cast<std::uint32_t>(ds.grid.k_w));
  w.pod(static_cast<std::uint32_t>(ds.grid.t_steps));
  w.pod(static_cast<std::uint32_t>(ds.grid.image_w));
  w.pod(static_cast<std::uint32_t>(ds.grid.image_h));
  w.pod(static_cast<std::uint32_t>(ds.chunk_h));
  w.pod(ds.expert_resamples);
  for (int c = 0; c < 3; ++c) w.pod(ds.motion_norm.mean[c]);
  for (int c = 0; c < 3; ++c) w.pod(ds.motion_norm.stddev[c]);
  for (int c = 0; c < 4; ++c) w.pod(ds.action_norm.mean[c]);
  for (int c = 0; c < 4; ++c) w.pod(ds.action_norm.stddev[c]);
  // Index table: record byte sizes are uniform; offsets kept explicit so
  // readers can seek.
  const std::size_t plane =
      static_cast<std::size_t>(ds.grid.image_w) * ds.grid.image_h;
  const std::size_t rec_bytes =
      (3 * plane + plane) * 4 + 4 + 16 +
      static_cast<std::size_t>(ds.grid.keypoints()) * ds.grid.t_steps * 3 * 4 +
      static_cast<std::size_t>(ds.chunk_h) * 16 +
      static_cast<std::size_t>(ds.grid.keypoints());
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    w.pod(offset);
    offset += rec_bytes;
  }
  for (const auto& r : ds.records) {
    w.f32s(r.rgb);
    w.f32s(r.depth);
    w.pod(r.instruction_id);
    w.bytes(r.state, sizeof(r.state));
    w.f32s(r.flow);
    w.f32s(r.actions);
    if (!r.valid.empty()) w.bytes(r.valid.data(), r.valid.size());
  }
  const std::uint64_t digest = w.digest();
  os.write(reinterpret_cast<const char*>(&digest), sizeof(digest));
  if (!os) throw IoError("write failure on " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  Reader r(is);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("bad dataset magic in " + path);
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion)
    throw IoError("unsupported dataset version " + std::to_string(version));
  Dataset ds;
  const auto count = r.pod<std::uint32_t>();
  ds.grid.k_h = static_cast<int>(r.pod<std::uint32_t>());
  ds.grid.k_w = static_cast<int>(r.pod<std::uint32_t>());
  ds.grid.t_steps = static_cast<int>(r.pod<std::uint32_t>());
  ds.grid.image_w = static_cast<int>(r.pod<std::uint32_t>());
  ds.grid.image_h = static_cast<int>(r.pod<std::uint32_t>());
  ds.chunk_h = static_cast<int>(r.pod<std::uint32_t>());
  ds.expert_resamples = r.pod<std::uint32_t>();
  for (int c = 0; c < 3; ++c) ds.motion_norm.mean[c] = r.pod<double>();
  for (int c = 0; c < 3; ++c) ds.motion_norm.stddev[c] = r.pod<double>();
  ds.motion_norm.fitted = true;
  for (int c = 0; c < 4; ++c) ds.action_norm.mean[c] = r.pod<double>();
  for (int c = 0; c < 4; ++c) ds.action_norm.stddev[c] = r.pod<double>();
  ds.action_norm.fitted = true;
  for (std::uint32_t i = 0; i < count; ++i) (void)r.pod<std::uint64_t>();
  const std::size_t plane =
      static_cast<std::size_t>(ds.grid.image_w) * ds.grid.image_h;
  ds.records.resize(count);
  for (auto& rec : ds.records) {
    r.f32s(rec.rgb, 3 * plane);
    r.f32s(rec.depth, plane);
    rec.instruction_id = r.pod<std::uint32_t>();
    r.bytes(rec.state, sizeof(rec.state));
    r.f32s(rec.flow, static_cast<std::size_t>(ds.grid.keypoints()) *
                         ds.grid.t_steps * 3);
    r.f32s(rec.actions, static_cast<std::size_t>(ds.chunk_h) * 4);
    rec.valid.resize(ds.grid.keypoints());
    if (!rec.valid.empty()) r.bytes(rec.valid.data(), rec.valid.size());
  }
  const std::uint64_t expect = r.digest();
  std::uint64_t stored;
  is.read(reinterpret_cast<char*>(&stored), sizeof(stored));
  if (!is || stored != expect)
    throw IoError("dataset checksum mismatch in " + path);
  return ds;
}

}  // namespace lamp
