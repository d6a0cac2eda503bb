#pragma once

#include <string>

#include "lamp/toyworld.hpp"
#include "lamp/trainer.hpp"

// Overlays predicted keypoint tracks on an observation: a PPM raster with
// the upscaled image under the polylines, and an SVG with one polyline per
// keypoint. Track color runs blue (earliest step) to red (latest).

namespace lamp {

void visualize_motion(ModelBundle& models, const toyworld::Observation& obs,
                      int instruction_id, Rng& rng, const std::string& out_ppm,
                      const std::string& out_svg, int upscale = 8);

}  // namespace lamp
