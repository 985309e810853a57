// Support tooling: byte/file IO, weight serialization, configs, quality and
// rate-distortion metrics, and the synthetic clip generator.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>

#include "doctest.h"
#include "elfvc/dataio.hpp"
#include "elfvc/mathfn.hpp"
#include "elfvc/metrics.hpp"
#include "elfvc/motion.hpp"
#include "elfvc/rng.hpp"
#include "elfvc/synth.hpp"

using namespace elfvc;

namespace {

std::filesystem::path temp_dir(const char* leaf) {
  auto p = std::filesystem::temp_directory_path() / leaf;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

RDPoint rd(double bpp, double psnr, double level = 0.0, std::string tag = "t") {
  RDPoint p;
  p.tag = std::move(tag);
  p.level = level;
  p.bpp = bpp;
  p.psnr_db = psnr;
  return p;
}

std::vector<RDPoint> curve(std::initializer_list<std::pair<double, double>> pts) {
  std::vector<RDPoint> out;
  for (const auto& [b, q] : pts) out.push_back(rd(b, q));
  return out;
}

}  // namespace

// ------------------------------------------------------------------ dataio --

TEST_CASE("crc32 matches the standard check vectors") {
  const char* nine = "123456789";
  CHECK(crc32(reinterpret_cast<const uint8_t*>(nine), 9) == 0xCBF43926u);
  CHECK(crc32(nullptr, 0) == 0x00000000u);
  const char* a = "a";
  CHECK(crc32(reinterpret_cast<const uint8_t*>(a), 1) == 0xE8B7BE43u);
}

TEST_CASE("fnv1a64 matches the standard check vectors") {
  CHECK(fnv1a64(nullptr, 0) == 14695981039346656037ull);
  const char* a = "a";
  CHECK(fnv1a64(reinterpret_cast<const uint8_t*>(a), 1) == 0xaf63dc4c8601ec8cull);
  const char* foobar = "foobar";
  CHECK(fnv1a64(reinterpret_cast<const uint8_t*>(foobar), 6) == 0x85944171f73967e8ull);
}

TEST_CASE("byte writer/reader roundtrip little-endian primitives") {
  ByteWriter w;
  w.u8(0xAB);
  w.u16(0x1234);
  w.u32(0xDEADBEEF);
  w.u64(0x0102030405060708ull);
  w.f32(1.5f);
  w.text("hi");
  // Little-endian layout is pinned, not platform-defined.
  CHECK(w.bytes[0] == 0xAB);
  CHECK(w.bytes[1] == 0x34);
  CHECK(w.bytes[2] == 0x12);
  CHECK(w.bytes[3] == 0xEF);

  ByteReader r(w.bytes);
  CHECK(r.u8() == 0xAB);
  CHECK(r.u16() == 0x1234);
  CHECK(r.u32() == 0xDEADBEEFu);
  CHECK(r.u64() == 0x0102030405060708ull);
  CHECK(r.f32() == 1.5f);
  CHECK(r.text(2) == "hi");
  CHECK_THROWS_AS(r.u8(), std::runtime_error);  // past the end
}

TEST_CASE("ppm roundtrip preserves 8-bit-grid values and clamps writes") {
  const auto dir = temp_dir("elfvc_ppm_test");
  Tensor img = Tensor::zeros({3, 2, 3});
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = (static_cast<double>(i * 13 % 256)) / 255.0;
  const auto path = (dir / "img.ppm").string();
  write_ppm(path, img);
  const Tensor back = read_ppm(path);
  CHECK(back.shape == img.shape);
  CHECK(back.data == img.data);

  // Off-grid values land on the nearest 8-bit level.
  Tensor off = Tensor::full({3, 1, 1}, 0.5);
  write_ppm(path, off);
  const Tensor q = read_ppm(path);
  CHECK(q[0] == 128.0 / 255.0);  // round(0.5*255) = 128
  std::filesystem::remove_all(dir);
}

TEST_CASE("pgm roundtrip for single-channel maps") {
  const auto dir = temp_dir("elfvc_pgm_test");
  Tensor map = Tensor::zeros({1, 3, 2});
  for (int64_t i = 0; i < map.numel(); ++i) map[i] = static_cast<double>(i) / 255.0 * 40.0;
  for (auto& v : map.data) v = std::min(v, 1.0);
  const auto path = (dir / "map.pgm").string();
  write_pgm(path, map);
  const Tensor back = read_pgm(path);
  CHECK(back.shape == map.shape);
  for (int64_t i = 0; i < map.numel(); ++i) {
    CHECK(back[i] == std::floor(map[i] * 255.0 + 0.5) / 255.0);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("weight files roundtrip exactly and reject corruption") {
  std::vector<std::pair<std::string, Tensor>> named;
  named.emplace_back("enc.w", Tensor::from({2, 3}, {1, -2, 3.25, 0.5, 0, 7}));
  named.emplace_back("enc.b", Tensor::from({3}, {0.125, -0.25, 9}));
  const auto bytes = serialize_weights(named);
  CHECK(bytes.size() >= 4u + 1 + 4);
  CHECK(std::memcmp(bytes.data(), "ELFW", 4) == 0);

  const auto back = parse_weights(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "enc.w");
  CHECK(back[0].second.shape == std::vector<int>{2, 3});
  CHECK(back[0].second.data == named[0].second.data);  // f32-exact values
  CHECK(back[1].second.data == named[1].second.data);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse_weights(bad_magic), std::runtime_error);

  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  CHECK_THROWS_AS(parse_weights(truncated), std::runtime_error);

  auto bad_version = bytes;
  bad_version[4] = 99;
  CHECK_THROWS_AS(parse_weights(bad_version), std::runtime_error);
}

TEST_CASE("weight files quantize to f32 on write") {
  std::vector<std::pair<std::string, Tensor>> named;
  const double fine = 1.0 + 1e-12;  // not representable in f32
  named.emplace_back("t", Tensor::from({1}, {fine}));
  const auto back = parse_weights(serialize_weights(named));
  CHECK(back[0].second[0] == static_cast<double>(static_cast<float>(fine)));
  CHECK(back[0].second[0] != fine);
}

TEST_CASE("config parser handles comments, types, and errors") {
  const std::string text =
      "# a comment\n"
      "steps = 120\n"
      "lr = 0.0001\n"
      "name = tiny run\n"
      "flag = true\n"
      "off = false\n"
      "\n";
  const Config cfg = parse_config(text);
  CHECK(cfg.get_int("steps", 0) == 120);
  CHECK(cfg.get_double("lr", 0.0) == 0.0001);
  CHECK(cfg.get_str("name", "") == "tiny run");
  CHECK(cfg.get_bool("flag", false));
  CHECK(!cfg.get_bool("off", true));
  CHECK(cfg.get_int("missing", 7) == 7);  // absent key -> default
  CHECK(!cfg.has("missing"));
  CHECK(cfg.has("steps"));
  CHECK_THROWS_AS(cfg.get_int("name", 0), std::runtime_error);   // not a number
  CHECK_THROWS_AS(cfg.get_bool("steps", false), std::runtime_error);
  CHECK_THROWS_AS(parse_config("novalue\n"), std::runtime_error);
  // Duplicate keys follow last-wins file semantics.
  CHECK(parse_config("a = 1\na = 2\n").get_int("a", 0) == 2);
}

// ----------------------------------------------------------------- metrics --

TEST_CASE("psnr hand values") {
  Tensor a = Tensor::zeros({1, 2, 2});
  Tensor b = Tensor::full({1, 2, 2}, 0.1);  // MSE 0.01
  CHECK(psnr_db(a, b) == doctest::Approx(20.0).epsilon(1e-12));
  Tensor c = Tensor::full({1, 2, 2}, 1.0);  // MSE 1
  CHECK(psnr_db(a, c) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::isinf(psnr_db(a, a)));
  CHECK(psnr_db(a, a) > 0);
  CHECK_THROWS_AS(psnr_db(a, Tensor::zeros({1, 2, 3})), std::invalid_argument);
}

TEST_CASE("rd consolidation applies the dominance and hull rules") {
  // Worked hull example: the middle point sits below the chord in
  // (log10 bpp, psnr) and is dropped.
  auto hull = consolidate_rd(curve({{0.1, 30.0}, {0.2, 31.0}, {0.3, 34.0}}));
  REQUIRE(hull.size() == 2);
  CHECK(hull[0].bpp == 0.1);
  CHECK(hull[1].bpp == 0.3);

  // A concave middle point stays.
  auto keep = consolidate_rd(curve({{0.1, 30.0}, {0.2, 33.0}, {0.3, 34.0}}));
  CHECK(keep.size() == 3);

  // Pareto pass: higher rate with lower quality is dominated.
  auto dom = consolidate_rd(curve({{0.1, 30.0}, {0.15, 29.0}, {0.3, 34.0}}));
  REQUIRE(dom.size() == 2);
  CHECK(dom[0].psnr_db == 30.0);
  CHECK(dom[1].psnr_db == 34.0);

  // Input order does not matter.
  auto shuffled = consolidate_rd(curve({{0.3, 34.0}, {0.1, 30.0}, {0.2, 31.0}}));
  CHECK(shuffled.size() == 2);

  CHECK_THROWS_AS(consolidate_rd(curve({{0.0, 30.0}})), std::invalid_argument);
}

TEST_CASE("pchip reproduces linear data exactly, including integrals") {
  const std::vector<double> xs = {0.0, 1.0, 2.0, 4.0};
  const std::vector<double> ys = {1.0, 3.0, 5.0, 9.0};  // y = 2x + 1
  const Pchip p = Pchip::fit(xs, ys);
  CHECK(p.eval(0.0) == 1.0);
  CHECK(p.eval(4.0) == 9.0);
  CHECK(p.eval(3.0) == doctest::Approx(7.0).epsilon(1e-14));
  CHECK(p.eval(0.25) == doctest::Approx(1.5).epsilon(1e-14));
  // integral of 2x+1 over [0,4] = 20; over [1,3] = 10
  CHECK(p.integrate(0.0, 4.0) == doctest::Approx(20.0).epsilon(1e-13));
  CHECK(p.integrate(1.0, 3.0) == doctest::Approx(10.0).epsilon(1e-13));
  CHECK_THROWS_AS(p.eval(-0.1), std::invalid_argument);
  CHECK_THROWS_AS(p.eval(4.1), std::invalid_argument);
  CHECK_THROWS_AS(p.integrate(-1.0, 2.0), std::invalid_argument);
}

TEST_CASE("pchip stays monotone on monotone data") {
  const std::vector<double> xs = {0.0, 1.0, 2.0, 3.0, 4.0};
  const std::vector<double> ys = {0.0, 0.1, 0.2, 5.0, 5.1};  // sharp knee
  const Pchip p = Pchip::fit(xs, ys);
  double prev = p.eval(0.0);
  for (int i = 1; i <= 400; ++i) {
    const double x = 4.0 * i / 400.0;
    const double y = p.eval(x);
    CHECK(y >= prev - 1e-12);  // no overshoot oscillation
    prev = y;
  }
  CHECK(p.eval(2.5) <= 5.0);
  CHECK(p.eval(2.5) >= 0.2);
}

TEST_CASE("bd-rate of a curve against itself is exactly zero") {
  const auto c = curve({{0.05, 30.0}, {0.1, 33.0}, {0.2, 36.0}, {0.4, 39.0}});
  CHECK(bd_rate_percent(c, c) == 0.0);
}

TEST_CASE("bd-rate of rate-scaled curves is -50% and +100%") {
  const auto ref = curve({{0.05, 30.0}, {0.1, 33.0}, {0.2, 36.0}, {0.4, 39.0}});
  auto half = ref;
  for (auto& p : half) p.bpp *= 0.5;
  auto twice = ref;
  for (auto& p : twice) p.bpp *= 2.0;
  CHECK(std::abs(bd_rate_percent(ref, half) - (-50.0)) < 0.1);
  CHECK(std::abs(bd_rate_percent(ref, twice) - 100.0) < 0.2);
  // Antisymmetry in log-rate: swapping roles inverts the ratio.
  CHECK(std::abs(bd_rate_percent(half, ref) - 100.0) < 0.2);
}

TEST_CASE("bd-rate validates its inputs") {
  const auto ref = curve({{0.05, 30.0}, {0.1, 33.0}, {0.2, 36.0}, {0.4, 39.0}});
  const auto three = curve({{0.05, 30.0}, {0.1, 33.0}, {0.2, 36.0}});
  CHECK_THROWS_AS(bd_rate_percent(ref, three), std::invalid_argument);
  CHECK_THROWS_AS(bd_rate_percent(three, ref), std::invalid_argument);
  // Disjoint quality ranges have no overlap to average over.
  const auto high = curve({{0.05, 50.0}, {0.1, 53.0}, {0.2, 56.0}, {0.4, 59.0}});
  CHECK_THROWS_AS(bd_rate_percent(ref, high), std::invalid_argument);
}

TEST_CASE("rd csv roundtrips values exactly, including infinities") {
  std::vector<RDPoint> pts;
  pts.push_back(rd(0.123456789012345678, 30.5, 1.5, "clipA"));
  pts.push_back(rd(0.25, std::numeric_limits<double>::infinity(), 2.0, "clipB"));
  const std::string text = write_rd_csv(pts);
  CHECK(text.rfind("tag,level,bpp,psnr_db\n", 0) == 0);
  const auto back = parse_rd_csv(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].tag == "clipA");
  CHECK(back[0].level == 1.5);
  CHECK(back[0].bpp == pts[0].bpp);
  CHECK(back[0].psnr_db == 30.5);
  CHECK(std::isinf(back[1].psnr_db));
  CHECK_THROWS_AS(parse_rd_csv("bpp,psnr\n1,2\n"), std::runtime_error);
  CHECK_THROWS_AS(parse_rd_csv("tag,level,bpp,psnr_db\nx,1,notanumber,3\n"),
                  std::runtime_error);
}

// ------------------------------------------------------------------- synth --

TEST_CASE("synthetic clips are deterministic in the spec") {
  SyntheticClipSpec spec;
  spec.seed = 77;
  spec.motion = "rotate";
  const Clip a = synth_clip(spec);
  const Clip b = synth_clip(spec);
  REQUIRE(a.frames.size() == b.frames.size());
  for (size_t i = 0; i < a.frames.size(); ++i) {
    CHECK(a.frames[i].data == b.frames[i].data);
  }
  SyntheticClipSpec other = spec;
  other.seed = 78;
  const Clip c = synth_clip(other);
  CHECK(a.frames[0].data != c.frames[0].data);
}

TEST_CASE("static motion repeats the first frame bitwise") {
  SyntheticClipSpec spec;
  spec.motion = "static";
  spec.frames = 3;
  spec.seed = 5;
  const Clip clip = synth_clip(spec);
  CHECK(clip.has_exact_flow);
  for (int t = 1; t < 3; ++t) {
    CHECK(clip.frames[t].data == clip.frames[0].data);
    CHECK(clip.flow[t - 1][0] == 0.0);
    CHECK(clip.flow[t - 1][1] == 0.0);
  }
}

TEST_CASE("integer translation shifts samples bitwise") {
  SyntheticClipSpec spec;
  spec.motion = "translate";
  spec.vx = 2.0;
  spec.vy = 0.0;
  spec.frames = 3;
  spec.width = 32;
  spec.height = 16;
  spec.seed = 9;
  const Clip clip = synth_clip(spec);
  REQUIRE(clip.has_exact_flow);
  CHECK(clip.flow[0][0] == -2.0);
  CHECK(clip.flow[0][1] == 0.0);
  const Chw d = chw(clip.frames[0]);
  for (int t = 1; t < 3; ++t) {
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < d.h; ++y) {
        for (int x = 2 * t; x < d.w; ++x) {
          const double now = clip.frames[t][(static_cast<int64_t>(c) * d.h + y) * d.w + x];
          const double was =
              clip.frames[0][(static_cast<int64_t>(c) * d.h + y) * d.w + (x - 2 * t)];
          REQUIRE(now == was);
        }
      }
    }
  }
}

TEST_CASE("flow sidecar matches warp semantics on integer translation") {
  SyntheticClipSpec spec;
  spec.motion = "translate";
  spec.vx = 1.0;
  spec.vy = 0.0;
  spec.frames = 2;
  spec.width = 16;
  spec.height = 12;
  spec.seed = 21;
  const Clip clip = synth_clip(spec);
  REQUIRE(clip.has_exact_flow);
  // Build a (3,H,W) flow tensor: dx everywhere, dy everywhere, sigma=0.
  Tensor flow = Tensor::zeros({3, 12, 16});
  for (int64_t i = 0; i < 12 * 16; ++i) {
    flow[i] = clip.flow[0][0];             // dx = -vx
    flow[12 * 16 + i] = clip.flow[0][1];   // dy = -vy
  }
  NoGradScope ng;
  const Var warped = scale_space_warp(constant(clip.frames[0]), constant(flow));
  // Interior columns (x >= 1) must reproduce frame 1 exactly: integer offsets
  // make the bilinear weights {1, 0} and sigma 0 selects the sharp slice.
  const Tensor& f1 = clip.frames[1];
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 12; ++y) {
      for (int x = 1; x < 16; ++x) {
        const int64_t i = (static_cast<int64_t>(c) * 12 + y) * 16 + x;
        REQUIRE(warped->value[i] == doctest::Approx(f1[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("rotation clips have no exact-flow sidecar") {
  SyntheticClipSpec spec;
  spec.motion = "rotate";
  spec.seed = 3;
  const Clip clip = synth_clip(spec);
  CHECK(!clip.has_exact_flow);
  CHECK(clip.flow.empty());
  // Frames still change over time.
  CHECK(clip.frames[0].data != clip.frames[1].data);
}

TEST_CASE("clip files roundtrip through ppm plus sidecar") {
  const auto dir = temp_dir("elfvc_clip_roundtrip");
  SyntheticClipSpec spec;
  spec.motion = "translate";
  spec.vx = -1.5;
  spec.vy = 0.25;
  spec.frames = 3;
  spec.width = 20;
  spec.height = 8;
  spec.seed = 15;
  const Clip clip = synth_clip(spec);
  write_clip(dir.string(), clip);
  const Clip back = read_clip(dir.string());
  REQUIRE(back.frames.size() == 3);
  CHECK(back.has_exact_flow);
  REQUIRE(back.flow.size() == 2);
  CHECK(back.flow[0][0] == 1.5);
  CHECK(back.flow[0][1] == -0.25);
  for (size_t t = 0; t < 3; ++t) {
    CHECK(back.frames[t].shape == clip.frames[t].shape);
    for (int64_t i = 0; i < back.frames[t].numel(); ++i) {
      // Values survive modulo the 8-bit file grid.
      CHECK(back.frames[t][i] ==
            std::floor(clip.frames[t][i] * 255.0 + 0.5) / 255.0);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset specs cycle motions and stay in velocity bounds") {
  const auto specs = dataset_specs(8, 48, 32, 5, 1234);
  REQUIRE(specs.size() == 8);
  CHECK(specs[0].motion == "translate");
  CHECK(specs[1].motion == "rotate");
  CHECK(specs[2].motion == "zoom");
  CHECK(specs[3].motion == "static");
  CHECK(specs[4].motion == "translate");
  CHECK(specs[0].texture == "noise");
  CHECK(specs[4].texture == "gradient");
  for (const auto& s : specs) {
    CHECK_NOTHROW(s.validate());
    CHECK(s.width == 48);
    CHECK(s.height == 32);
    CHECK(s.frames == 5);
    CHECK(std::abs(s.vx) <= 2.0);
    CHECK(std::abs(s.vy) <= 2.0);
  }
  // Seeds differ so textures differ.
  CHECK(specs[0].seed != specs[4].seed);
  // Same master seed reproduces the same batch.
  const auto again = dataset_specs(8, 48, 32, 5, 1234);
  CHECK(again[3].seed == specs[3].seed);
}

TEST_CASE("clip spec validation rejects malformed requests") {
  SyntheticClipSpec bad;
  bad.motion = "warp9";
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  SyntheticClipSpec tiny;
  tiny.width = 0;
  CHECK_THROWS_AS(tiny.validate(), std::invalid_argument);
  SyntheticClipSpec none;
  none.frames = 0;
  CHECK_THROWS_AS(none.validate(), std::invalid_argument);
  SyntheticClipSpec badtex;
  badtex.texture = "checker";
  CHECK_THROWS_AS(badtex.validate(), std::invalid_argument);
}
