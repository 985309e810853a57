// Training driver: determinism, schedule, logging shape, abort semantics.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "elfvc/dataio.hpp"
#include "elfvc/model.hpp"
#include "elfvc/synth.hpp"
#include "elfvc/train.hpp"

using namespace elfvc;

namespace {

std::vector<std::vector<Tensor>> tiny_clips(int count, int size, int frames) {
  std::vector<std::vector<Tensor>> clips;
  for (const auto& spec : dataset_specs(count, size, size, frames, 421))
    clips.push_back(synth_clip(spec).frames);
  return clips;
}

TrainConfig tiny_config() {
  TrainConfig tc;
  tc.steps = 8;
  tc.batch = 1;
  tc.unroll = 2;
  tc.log_every = 4;
  tc.seed = 11;
  return tc;
}

}  // namespace

TEST_CASE("same seed, same data, same config: identical run") {
  auto clips = tiny_clips(2, 16, 4);
  uint64_t hash1 = 0, hash2 = 0;
  std::string csv1, csv2;
  {
    ModelConfig mc;
    mc.init_seed = 5;
    CodecModel model(mc);
    TrainResult r = train_model(model, clips, tiny_config());
    REQUIRE_FALSE(r.aborted);
    hash1 = model_hash(model);
    csv1 = train_log_csv(r);
  }
  {
    ModelConfig mc;
    mc.init_seed = 5;
    CodecModel model(mc);
    TrainResult r = train_model(model, clips, tiny_config());
    hash2 = model_hash(model);
    csv2 = train_log_csv(r);
  }
  CHECK(hash1 == hash2);
  CHECK(csv1 == csv2);
  CHECK(csv1.find("step,lr,loss,bpp_l0") == 0);
}

TEST_CASE("training changes the weights and completes the requested steps") {
  auto clips = tiny_clips(1, 16, 3);
  ModelConfig mc;
  mc.init_seed = 5;
  CodecModel model(mc);
  const uint64_t before = model_hash(model);
  TrainResult r = train_model(model, clips, tiny_config());
  CHECK_FALSE(r.aborted);
  CHECK(r.completed_steps == 8);
  CHECK(model_hash(model) != before);
}

TEST_CASE("staged learning-rate drops appear in the log") {
  auto clips = tiny_clips(1, 16, 3);
  ModelConfig mc;
  mc.init_seed = 3;
  CodecModel model(mc);
  TrainConfig tc = tiny_config();
  tc.steps = 20;
  tc.log_every = 1;
  tc.lr = 1e-3;
  tc.lr_drop = 5.0;
  tc.drop1 = 0.5;   // drops at step 10
  tc.drop2 = 0.75;  // and step 15
  TrainResult r = train_model(model, clips, tc);
  REQUIRE_FALSE(r.aborted);
  REQUIRE(r.log.size() == 20);
  CHECK(r.log[9].lr == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(r.log[10].lr == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(r.log[14].lr == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(r.log[15].lr == doctest::Approx(4e-5).epsilon(1e-12));
}

TEST_CASE("log rows carry per-level probes and modulator tables") {
  auto clips = tiny_clips(1, 16, 3);
  ModelConfig mc;
  mc.init_seed = 9;
  CodecModel model(mc);
  TrainConfig tc = tiny_config();
  TrainResult r = train_model(model, clips, tc);
  REQUIRE_FALSE(r.aborted);
  REQUIRE(r.log.size() == 2);  // 8 steps, log every 4
  for (const auto& row : r.log) {
    REQUIRE(row.level_bpp.size() == 4);
    REQUIRE(row.level_psnr.size() == 4);
    REQUIRE(row.mu.size() == static_cast<size_t>(tc.unroll * 4));
    for (double b : row.level_bpp) {
      CHECK(std::isfinite(b));
      CHECK(b > 0.0);
    }
    for (double p : row.level_psnr) CHECK(std::isfinite(p));
    for (double m : row.mu) {
      CHECK(m >= 1.0);
      CHECK(m <= 10.0);
    }
  }
}

TEST_CASE("modulator switch off pins every mu at 1") {
  auto clips = tiny_clips(1, 16, 3);
  ModelConfig mc;
  mc.init_seed = 9;
  CodecModel model(mc);
  TrainConfig tc = tiny_config();
  tc.use_modulator = false;
  TrainResult r = train_model(model, clips, tc);
  REQUIRE_FALSE(r.aborted);
  for (const auto& row : r.log)
    for (double m : row.mu) CHECK(m == 1.0);
}

TEST_CASE("a non-finite loss aborts and restores the checkpoint") {
  auto clips = tiny_clips(1, 16, 3);
  ModelConfig mc;
  mc.init_seed = 5;
  CodecModel model(mc);
  // Poison one weight: the first forward produces a NaN distortion.
  Var w = model.params().find("iframe.stack.enc.head.w");
  REQUIRE(w != nullptr);
  w->value.data[0] = std::nan("");
  const auto entry = snapshot_model(model);
  TrainResult r = train_model(model, clips, tiny_config());
  CHECK(r.aborted);
  CHECK(r.completed_steps == 0);
  CHECK(r.abort_reason.find("non-finite") != std::string::npos);
  // Restored to the entry checkpoint, poison included: the driver never
  // commits a partial step.
  const auto after = snapshot_model(model);
  REQUIRE(after.size() == entry.size());
  for (size_t i = 0; i < entry.size(); ++i) {
    REQUIRE(after[i].first == entry[i].first);
    REQUIRE(after[i].second.numel() == entry[i].second.numel());
    for (int64_t j = 0; j < entry[i].second.numel(); ++j) {
      const double a = after[i].second.data[j], b = entry[i].second.data[j];
      CHECK(((a == b) || (std::isnan(a) && std::isnan(b))));
    }
  }
}

TEST_CASE("config and data validation") {
  auto clips = tiny_clips(1, 16, 3);
  ModelConfig mc;
  mc.init_seed = 2;
  CodecModel model(mc);
  TrainConfig tc = tiny_config();

  SUBCASE("unroll below 2") {
    tc.unroll = 1;
    CHECK_THROWS_AS(train_model(model, clips, tc), std::invalid_argument);
  }
  SUBCASE("no clips") {
    CHECK_THROWS_AS(train_model(model, {}, tc), std::invalid_argument);
  }
  SUBCASE("clip shorter than the window") {
    tc.unroll = 4;
    CHECK_THROWS_AS(train_model(model, tiny_clips(1, 16, 3), tc),
                    std::invalid_argument);
  }
  SUBCASE("lambda levels must match the model") {
    tc.lambda.levels = 5;
    CHECK_THROWS_AS(train_model(model, clips, tc), std::invalid_argument);
  }
  SUBCASE("non-multiple-of-4 frames") {
    std::vector<std::vector<Tensor>> bad = {
        {Tensor::zeros({3, 10, 10}), Tensor::zeros({3, 10, 10})}};
    CHECK_THROWS_AS(train_model(model, bad, tc), std::invalid_argument);
  }
}
