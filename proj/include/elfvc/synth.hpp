#pragma once

// Deterministic synthetic video: analytic textures sampled under simple
// motion models, so clips are reproducible from a seed and translate clips
// carry exact per-frame flow sidecars.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "elfvc/rng.hpp"
#include "elfvc/tensor.hpp"

namespace elfvc {

struct SyntheticClipSpec {
  int width = 64;
  int height = 64;
  int frames = 4;
  std::string motion = "translate";  // translate | rotate | zoom | static
  std::string texture = "noise";     // noise (band-limited) | gradient (smooth)
  double vx = 1.0, vy = 0.0;         // translate velocity, px/frame
  double omega = 0.02;               // rotate, radians/frame (about the center)
  double zoom = 1.01;                // zoom factor/frame (about the center)
  uint64_t seed = 1;

  void validate() const;  // throws std::invalid_argument
};

struct Clip {
  std::vector<Tensor> frames;                  // (3,H,W) each, values in [0,1]
  // Exact warp flow for frame t (t >= 1): sampling frame t-1 at +(dx,dy)
  // reproduces frame t in the interior.  Filled only for translate/static.
  std::vector<std::array<double, 2>> flow;
  bool has_exact_flow = false;
};

// Same spec twice -> identical clip (all randomness from spec.seed).
Clip synth_clip(const SyntheticClipSpec& spec);

// frame000.ppm ... plus flow.txt when the clip has exact flow.
void write_clip(const std::string& dir, const Clip& clip);
Clip read_clip(const std::string& dir);

// A varied-seed batch: motions and textures cycled deterministically, and
// translate velocities drawn from [-2, 2].  Used by training and tests.
std::vector<SyntheticClipSpec> dataset_specs(int count, int width, int height,
                                             int frames, uint64_t base_seed);

}  // namespace elfvc
