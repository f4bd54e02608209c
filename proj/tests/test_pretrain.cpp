#include <doctest.h>

#include "nmsr/pipeline.hpp"
#include "nmsr/synth.hpp"
#include "support.hpp"

using namespace nmsr;

namespace {

ImageSequence sequence(std::uint64_t seed) {
  FlowSpec spec;
  spec.u = 2.0;
  spec.v = -1.0;
  spec.frames = 4;
  spec.seed = seed;
  return generate(spec).sequence;
}

// Mean loss over a window spanning whole cycles of the pair list.
double window_mean(const std::vector<LossRecord>& curve, std::size_t end, std::size_t window) {
  double s = 0.0;
  for (std::size_t i = end - window; i < end; ++i) s += curve[i].loss;
  return s / static_cast<double>(window);
}

}  // namespace

TEST_CASE("a pretrained initialization reaches the fresh final loss in half the steps") {
  RegistrationConfig cfg;
  cfg.schedule.scales = {Scale{1}};
  cfg.schedule.steps = 300;
  cfg.seed = 11;
  const std::vector<ImageSequence> train{sequence(101), sequence(102), sequence(103), sequence(104)};
  const auto dir = testing::scratch_dir("pretrain_family");
  pretrain(train, cfg, 1200, dir);

  const auto held_out = sequence(200);
  const auto fresh = run_nmsr(held_out, cfg);
  const std::size_t window = 30;  // 10 cycles of the 3 pairs
  const auto& fresh_curve = fresh.scales[0].curve;
  const double target = window_mean(fresh_curve, fresh_curve.size(), window);

  cfg.schedule.warm_start = WarmStart::from_checkpoint;
  cfg.schedule.checkpoint_dir = dir;
  const auto warm = run_nmsr(held_out, cfg);
  const auto& warm_curve = warm.scales[0].curve;
  std::size_t reached = warm_curve.size() + 1;
  for (std::size_t end = window; end <= warm_curve.size(); ++end) {
    if (window_mean(warm_curve, end, window) <= target) {
      reached = end;
      break;
    }
  }
  INFO("fresh final loss " << target << ", pretrained reached it after " << reached << " steps");
  CHECK(reached <= warm_curve.size() / 2);
}
