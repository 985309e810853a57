#include "elfvc/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "elfvc/dataio.hpp"
#include "elfvc/mathfn.hpp"

namespace elfvc {

void SyntheticClipSpec::validate() const {
  if (width < 8 || height < 8) {
    throw std::invalid_argument("synth: resolution must be at least 8x8");
  }
  if (frames < 1) throw std::invalid_argument("synth: need at least one frame");
  if (motion != "translate" && motion != "rotate" && motion != "zoom" &&
      motion != "static") {
    throw std::invalid_argument("synth: unknown motion model '" + motion + "'");
  }
  if (texture != "noise" && texture != "gradient") {
    throw std::invalid_argument("synth: unknown texture '" + texture + "'");
  }
  if (!(zoom > 0.5 && zoom < 2.0)) {
    throw std::invalid_argument("synth: zoom factor out of range");
  }
}

namespace {

// A texture is a bounded sum of plane waves, evaluated analytically at any
// real coordinate: value_c(x, y) = 0.5 + sum_k A_k sin(2pi f_k . (x,y) + phase_kc).
struct WaveTexture {
  struct Wave {
    double fx, fy, amp;
    std::array<double, 3> phase;
  };
  std::vector<Wave> waves;

  double eval(int c, double x, double y) const {
    double v = 0.5;
    for (const Wave& w : waves) {
      v += w.amp * det_sin(mathconst::kTwoPi * (w.fx * x + w.fy * y) + w.phase[c]);
    }
    return v;
  }
};

WaveTexture make_texture(const SyntheticClipSpec& spec, Rng& rng) {
  // Wavelength bands: "noise" is busier, "gradient" is a few very long waves.
  const bool busy = spec.texture == "noise";
  const int count = busy ? 6 : 3;
  const double lam_lo = busy ? 12.0 : 56.0;
  const double lam_hi = busy ? 40.0 : 160.0;

  WaveTexture tex;
  std::vector<double> raw_amp(count);
  double total = 0.0;
  for (int k = 0; k < count; ++k) {
    raw_amp[k] = rng.uniform(0.3, 1.0);
    total += raw_amp[k];
  }
  // Total swing capped at 0.45 so values stay inside (0, 1) with margin.
  const double budget = 0.45 * rng.uniform(0.8, 1.0);
  for (int k = 0; k < count; ++k) {
    WaveTexture::Wave w;
    const double lambda = rng.uniform(lam_lo, lam_hi);
    const double angle = rng.uniform(0.0, mathconst::kTwoPi);
    w.fx = det_cos(angle) / lambda;
    w.fy = det_sin(angle) / lambda;
    w.amp = budget * raw_amp[k] / total;
    for (int c = 0; c < 3; ++c) w.phase[c] = rng.uniform(0.0, mathconst::kTwoPi);
    tex.waves.push_back(w);
  }
  return tex;
}

}  // namespace

Clip synth_clip(const SyntheticClipSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const WaveTexture tex = make_texture(spec, rng);

  const double cx = (spec.width - 1) / 2.0;
  const double cy = (spec.height - 1) / 2.0;

  Clip clip;
  clip.has_exact_flow = spec.motion == "translate" || spec.motion == "static";
  const double vx = spec.motion == "translate" ? spec.vx : 0.0;
  const double vy = spec.motion == "translate" ? spec.vy : 0.0;

  for (int t = 0; t < spec.frames; ++t) {
    Tensor frame = Tensor::zeros({3, spec.height, spec.width});
    const int64_t plane = static_cast<int64_t>(spec.height) * spec.width;
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        // Source coordinate of this pixel at time t under the motion model.
        double u = x, v = y;
        if (spec.motion == "translate") {
          u = x - vx * t;
          v = y - vy * t;
        } else if (spec.motion == "rotate") {
          const double a = -spec.omega * t;
          const double dx = x - cx, dy = y - cy;
          u = cx + det_cos(a) * dx - det_sin(a) * dy;
          v = cy + det_sin(a) * dx + det_cos(a) * dy;
        } else if (spec.motion == "zoom") {
          double s = 1.0;
          for (int i = 0; i < t; ++i) s *= spec.zoom;
          u = cx + (x - cx) / s;
          v = cy + (y - cy) / s;
        }
        for (int c = 0; c < 3; ++c) {
          frame[c * plane + static_cast<int64_t>(y) * spec.width + x] =
              tex.eval(c, u, v);
        }
      }
    }
    clip.frames.push_back(std::move(frame));
    if (t >= 1 && clip.has_exact_flow) {
      clip.flow.push_back({-vx, -vy});
    }
  }
  return clip;
}

void write_clip(const std::string& dir, const Clip& clip) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  char name[32];
  for (size_t t = 0; t < clip.frames.size(); ++t) {
    std::snprintf(name, sizeof(name), "frame%03zu.ppm", t);
    write_ppm(dir + "/" + name, clip.frames[t]);
  }
  if (clip.has_exact_flow) {
    std::ostringstream os;
    os.precision(17);
    os << "# frame dx dy (warp offsets reproducing the frame from its predecessor)\n";
    for (size_t i = 0; i < clip.flow.size(); ++i) {
      os << (i + 1) << " " << clip.flow[i][0] << " " << clip.flow[i][1] << "\n";
    }
    const std::string text = os.str();
    write_file(dir + "/flow.txt", std::vector<uint8_t>(text.begin(), text.end()));
  }
}

Clip read_clip(const std::string& dir) {
  Clip clip;
  const std::vector<std::string> files = list_files(dir, ".ppm");
  if (files.empty()) {
    throw std::runtime_error("clip directory '" + dir + "' has no .ppm frames");
  }
  for (const std::string& f : files) clip.frames.push_back(read_ppm(f));

  const std::string flow_path = dir + "/flow.txt";
  if (std::filesystem::exists(flow_path)) {
    const std::vector<uint8_t> bytes = read_file(flow_path);
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      int t = 0;
      double dx = 0.0, dy = 0.0;
      if (!(ls >> t >> dx >> dy)) {
        throw std::runtime_error(flow_path + ": malformed line '" + line + "'");
      }
      if (t != static_cast<int>(clip.flow.size()) + 1) {
        throw std::runtime_error(flow_path + ": frame indices must be 1,2,...");
      }
      clip.flow.push_back({dx, dy});
    }
    clip.has_exact_flow = clip.flow.size() + 1 == clip.frames.size();
    if (!clip.has_exact_flow) {
      throw std::runtime_error(flow_path + ": expected " +
                               std::to_string(clip.frames.size() - 1) + " entries, got " +
                               std::to_string(clip.flow.size()));
    }
  }
  return clip;
}

std::vector<SyntheticClipSpec> dataset_specs(int count, int width, int height,
                                             int frames, uint64_t base_seed) {
  if (count < 1) throw std::invalid_argument("dataset_specs: count must be >= 1");
  static const char* kMotions[4] = {"translate", "rotate", "zoom", "static"};
  Rng master(base_seed);
  std::vector<SyntheticClipSpec> specs;
  specs.reserve(count);
  for (int i = 0; i < count; ++i) {
    SyntheticClipSpec s;
    s.width = width;
    s.height = height;
    s.frames = frames;
    s.motion = kMotions[i % 4];
    s.texture = (i / 4) % 2 == 0 ? "noise" : "gradient";
    s.vx = master.uniform(-2.0, 2.0);
    s.vy = master.uniform(-2.0, 2.0);
    s.omega = master.uniform(-0.05, 0.05);
    s.zoom = 1.0 + master.uniform(-0.015, 0.015);
    s.seed = master.next_u64();
    specs.push_back(std::move(s));
  }
  return specs;
}

}  // namespace elfvc
