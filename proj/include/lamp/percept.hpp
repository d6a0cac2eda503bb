#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lamp/nn.hpp"
#include "lamp/toyworld.hpp"

// Desk-scale stand-in for the frozen vision-language backbone: patch-embeds
// the RGB-D observation, prepends one instruction-embedding token, and runs
// a small transformer. Trained jointly with the Motion Expert in Stage 1,
// frozen afterwards.

namespace lamp {

struct PerceptConfig {
  int image_w = 32;
  int image_h = 32;
  int patch = 8;
  int d_z = 64;
  int layers = 2;
  int heads = 4;
  int vocab = 8;
  double far_depth = toyworld::kFarDepth;

  int visual_tokens() const {
    return (image_w / patch) * (image_h / patch);
  }
  int context_tokens() const { return 1 + visual_tokens(); }
};

template <typename S>
struct PerceptionEncoder {
  PerceptConfig cfg;
  Linear<S> patch_embed;
  Parameter<S> instr_table;  // [vocab x d_z]
  Parameter<S> pos_emb;      // [context_tokens x d_z]
  std::vector<TransformerBlock<S>> blocks;
  LayerNormLayer<S> ln_f;

  PerceptionEncoder() = default;
  PerceptionEncoder(const PerceptConfig& c, Rng& rng) : cfg(c) {
    if (c.image_w % c.patch || c.image_h % c.patch)
      throw ShapeError("image extents must be divisible by patch size");
    const std::int64_t in = static_cast<std::int64_t>(c.patch) * c.patch * 4;
    patch_embed = Linear<S>(in, c.d_z, rng, "percept.patch_embed");
    instr_table = {"percept.instr_table",
                   Tensor<S>::gaussian({c.vocab, c.d_z}, rng, S(0.5), true)};
    pos_emb = {"percept.pos_emb",
               Tensor<S>::gaussian({c.context_tokens(), c.d_z}, rng, S(0.02),
                                   true)};
    for (int i = 0; i < c.layers; ++i)
      blocks.emplace_back(c.d_z, c.heads, rng,
                          "percept.block" + std::to_string(i));
    ln_f = LayerNormLayer<S>(c.d_z, "percept.ln_f");
  }

  // obs: rgb [3][H][W] in [0,1], depth [H][W] in meters.
  Tensor<S> encode(const std::vector<float>& rgb,
                   const std::vector<float>& depth, int instruction_id) const {
    const std::size_t plane =
        static_cast<std::size_t>(cfg.image_w) * cfg.image_h;
    if (rgb.size() != 3 * plane || depth.size() != plane)
      throw ShapeError("observation extents do not match encoder config");
    if (instruction_id < 0 || instruction_id >= cfg.vocab)
      throw ShapeError("instruction id out of range");
    const int np = cfg.visual_tokens();
    const int per_row = cfg.image_w / cfg.patch;
    const std::int64_t feat = static_cast<std::int64_t>(cfg.patch) * cfg.patch * 4;
    std::vector<S> patches(static_cast<std::size_t>(np) * feat);
    for (int p = 0; p < np; ++p) {
      const int py = (p / per_row) * cfg.patch;
      const int px = (p % per_row) * cfg.patch;
      std::size_t o = static_cast<std::size_t>(p) * feat;
      for (int y = 0; y < cfg.patch; ++y)
        for (int x = 0; x < cfg.patch; ++x) {
          const std::size_t pix =
              static_cast<std::size_t>(py + y) * cfg.image_w + (px + x);
          patches[o++] = static_cast<S>(rgb[pix]);
          patches[o++] = static_cast<S>(rgb[plane + pix]);
          patches[o++] = static_cast<S>(rgb[2 * plane + pix]);
          patches[o++] = static_cast<S>(depth[pix] / cfg.far_depth);
        }
    }
    auto vis = patch_embed.forward(
        Tensor<S>::from_values({np, feat}, std::move(patches)));
    auto instr = embedding_lookup(instr_table.tensor,
                                  {static_cast<std::int64_t>(instruction_id)});
    auto x = add(concat_rows<S>({instr, vis}), pos_emb.tensor);
    for (const auto& b : blocks) x = b.forward(x);
    return ln_f.forward(x);
  }

  void collect(ParamRefs<S>& out) {
    patch_embed.collect(out);
    out.push_back(&instr_table);
    out.push_back(&pos_emb);
    for (auto& b : blocks) b.collect(out);
    ln_f.collect(out);
  }

  void freeze() {
    ParamRefs<S> ps;
    collect(ps);
    set_frozen(ps, true);
  }
};

}  // namespace lamp
