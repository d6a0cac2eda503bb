#include "lamp/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace lamp {

namespace {

struct Rgb8 {
  unsigned char r, g, b;
};

// Blue at s = 0, red at s = 1.
Rgb8 ramp(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return {static_cast<unsigned char>(255 * s), 40,
          static_cast<unsigned char>(255 * (1.0 - s))};
}

void draw_line(std::vector<Rgb8>& img, int w, int h, double x0, double y0,
               double x1, double y1, Rgb8 c) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const int n = std::max(1, static_cast<int>(std::ceil(len)));
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    const int x = static_cast<int>(std::lround(x0 + (x1 - x0) * t));
    const int y = static_cast<int>(std::lround(y0 + (y1 - y0) * t));
    if (x >= 0 && x < w && y >= 0 && y < h) img[y * w + x] = c;
  }
}

}  // namespace

void visualize_motion(ModelBundle& models, const toyworld::Observation& obs,
                      int instruction_id, Rng& rng, const std::string& out_ppm,
                      const std::string& out_svg, int upscale) {
  const GridSpec& grid = models.mcfg.grid;
  auto z = models.percept.encode(obs.rgb, obs.depth, instruction_id);
  MotionNormalizer norm = models.motion_norm;
  if (models.depth_masked) {
    norm.mean[2] = 0.0;
    norm.stddev[2] = 1.0;
  }
  auto field = models.motion.generate_flow(
      z, SolverSchedule(models.motion_solver_steps), rng, norm);

  // Anchors: grid centers at the observed depth.
  auto centers = make_grid(grid);
  std::vector<double> anchors(centers.size() * 3);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const int px = std::clamp(static_cast<int>(centers[i][0]), 0,
                              obs.width - 1);
    const int py = std::clamp(static_cast<int>(centers[i][1]), 0,
                              obs.height - 1);
    anchors[i * 3 + 0] = centers[i][0];
    anchors[i * 3 + 1] = centers[i][1];
    anchors[i * 3 + 2] = obs.depth[static_cast<std::size_t>(py) * obs.width +
                                   px];
  }
  auto tracks = increments_to_tracks(field, anchors);

  const int w = obs.width * upscale, h = obs.height * upscale;
  std::vector<Rgb8> img(static_cast<std::size_t>(w) * h);
  const std::size_t plane = static_cast<std::size_t>(obs.width) * obs.height;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t pix =
          static_cast<std::size_t>(y / upscale) * obs.width + x / upscale;
      img[static_cast<std::size_t>(y) * w + x] = {
          static_cast<unsigned char>(255 * obs.rgb[pix]),
          static_cast<unsigned char>(255 * obs.rgb[plane + pix]),
          static_cast<unsigned char>(255 * obs.rgb[2 * plane + pix])};
    }

  const int k = grid.keypoints(), t_steps = grid.t_steps;
  for (int i = 0; i < k; ++i)
    for (int t = 0; t < t_steps; ++t) {
      const std::size_t a = (static_cast<std::size_t>(i) * (t_steps + 1) + t) * 3;
      draw_line(img, w, h, tracks[a] * upscale, tracks[a + 1] * upscale,
                tracks[a + 3] * upscale, tracks[a + 4] * upscale,
                ramp(t_steps > 1 ? static_cast<double>(t) / (t_steps - 1)
                                 : 1.0));
    }

  std::ofstream ppm(out_ppm, std::ios::binary);
  if (!ppm) throw IoError("cannot open " + out_ppm);
  ppm << "P6\n" << w << " " << h << "\n255\n";
  ppm.write(reinterpret_cast<const char*>(img.data()),
            static_cast<std::streamsize>(img.size() * 3));

  std::ofstream svg(out_svg, std::ios::binary);
  if (!svg) throw IoError("cannot open " + out_svg);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
      << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << " " << h
      << "\">\n";
  char buf[160];
  for (int i = 0; i < k; ++i)
    for (int t = 0; t < t_steps; ++t) {
      const std::size_t a = (static_cast<std::size_t>(i) * (t_steps + 1) + t) * 3;
      const Rgb8 c = ramp(
          t_steps > 1 ? static_cast<double>(t) / (t_steps - 1) : 1.0);
      std::snprintf(buf, sizeof buf,
                    "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" "
                    "stroke=\"rgb(%d,%d,%d)\" stroke-width=\"1.5\"/>\n",
                    tracks[a] * upscale, tracks[a + 1] * upscale,
                    tracks[a + 3] * upscale, tracks[a + 4] * upscale, c.r, c.g,
                    c.b);
      svg << buf;
    }
  svg << "</svg>\n";
}

}  // namespace lamp
