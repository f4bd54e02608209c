#include <doctest.h>

#include <limits>

#include "nmsr/error.hpp"
#include "nmsr/pipeline.hpp"
#include "nmsr/synth.hpp"
#include "support.hpp"

using namespace nmsr;

namespace {

const ArchDescriptor kMini{{4, 4}, {4, 4}};

ImageSequence translation_sequence(std::int64_t size, int frames, double u, double v,
                                   std::uint64_t seed) {
  FlowSpec spec;
  spec.u = u;
  spec.v = v;
  spec.width = spec.height = size;
  spec.frames = frames;
  spec.seed = seed;
  return generate(spec).sequence;
}

RegistrationConfig mini_config(int steps, std::vector<Scale> scales = {Scale{4}, Scale{2}, Scale{1}}) {
  RegistrationConfig cfg;
  cfg.arch = kMini;
  cfg.schedule.scales = std::move(scales);
  cfg.schedule.steps = steps;
  cfg.seed = 3;
  return cfg;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!std::equal(ta[i].data().begin(), ta[i].data().end(), tb[i].data().begin())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("schedule validation") {
  ScaleSchedule s;
  CHECK(s.scales_str() == "1/8,1/4,1/2,1");
  CHECK(s.steps == 3500);
  CHECK_NOTHROW(s.validate());
  s.scales = {Scale{2}, Scale{4}, Scale{1}};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.scales = {Scale{4}, Scale{2}};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.scales = {Scale{1}};
  s.steps = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.steps = 1;
  s.warm_start = WarmStart::from_checkpoint;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  CHECK(parse_scale_list("1/8,1/4,1/2,1").size() == 4);
  CHECK(parse_variant("single_scale") == Variant::single_scale);
  CHECK(parse_warm_start("from_previous_scale") == WarmStart::from_previous_scale);
  CHECK_THROWS_AS(parse_warm_start("sometimes"), ConfigError);
}

TEST_CASE("zero network outputs leave the accumulated field at zero") {
  const auto seq = translation_sequence(32, 3, 1.0, 0.5, 1);
  auto cfg = mini_config(3);
  cfg.adam.lr = 0.0;
  // A zero head makes every prediction exactly zero; lr 0 keeps it that way.
  const auto dir = testing::scratch_dir("zero_head");
  for (const Scale s : cfg.schedule.scales) {
    auto p = init_params(kMini, 1);
    for (auto& v : p.layers.back().kernel.data()) v = 0.0;
    save_checkpoint(checkpoint_path(dir, s), p);
  }
  cfg.schedule.warm_start = WarmStart::from_checkpoint;
  cfg.schedule.checkpoint_dir = dir;
  const auto result = run_nmsr(seq, cfg);
  REQUIRE(result.fields.size() == 2);
  for (const auto& f : result.fields) CHECK(f == FlowField(32, 32));

  const std::vector<FlowField> zero(2, FlowField(32, 32));
  for (const Scale s : cfg.schedule.scales) {
    const auto inputs = prepare_scale_inputs(seq, zero, s);
    for (std::size_t t = 0; t < 2; ++t) {
      CHECK(inputs[t].moving == downsample(seq.frames[t], s));
      CHECK(inputs[t].fixed == downsample(seq.frames[t + 1], s));
    }
  }
}

TEST_CASE("run_scale resolution contract") {
  const auto seq = translation_sequence(32, 3, 1.0, 0.0, 2);
  auto cfg = mini_config(4);
  const std::vector<FlowField> acc(2, FlowField(32, 32));
  auto params = init_params(kMini, 1);
  const auto out = run_scale(seq, acc, Scale{2}, params, cfg);
  REQUIRE(out.fields.size() == 2);
  CHECK(out.fields[0].width() == 16);
  CHECK(out.fields[0].height() == 16);
  CHECK(promote_field(out.fields[0], 32, 32).width() == 32);
  CHECK(out.report.curve.size() == 4);
  // Pairs are visited in order, cycling.
  CHECK(out.report.curve[0].pair_index == 1);
  CHECK(out.report.curve[1].pair_index == 2);
  CHECK(out.report.curve[2].pair_index == 1);

  const auto odd = translation_sequence(40, 3, 1.0, 0.0, 2);
  const std::vector<FlowField> acc_odd(2, FlowField(40, 40));
  CHECK_THROWS_AS(run_scale(odd, acc_odd, Scale{4}, params, cfg), InvalidShape);
}

TEST_CASE("run_nmsr result shape, padding and variants") {
  FlowSpec spec;
  spec.u = 1.0;
  spec.width = 44;
  spec.height = 36;
  spec.frames = 3;
  const auto seq = generate(spec).sequence;
  auto cfg = mini_config(5);
  const auto result = run_nmsr(seq, cfg);
  REQUIRE(result.fields.size() == 2);
  for (const auto& f : result.fields) {
    CHECK(f.width() == 44);
    CHECK(f.height() == 36);
    CHECK(f.all_finite());
  }
  REQUIRE(result.scales.size() == 3);
  for (const auto& s : result.scales) CHECK(s.curve.size() == 5);
  CHECK(result.params.size() == 3);

  cfg.variant = Variant::single_scale;
  const auto single = run_nmsr(seq, cfg);
  REQUIRE(single.scales.size() == 1);
  CHECK(single.scales[0].scale == Scale{1});

  // An explicit {1} schedule is the single-scale variant.
  auto only_one = mini_config(5, {Scale{1}});
  CHECK(run_nmsr(seq, only_one).fields == single.fields);
}

TEST_CASE("run_nmsr is bit-deterministic") {
  const auto seq = translation_sequence(32, 3, 1.5, -0.5, 4);
  const auto cfg = mini_config(6);
  const auto a = run_nmsr(seq, cfg);
  const auto b = run_nmsr(seq, cfg);
  CHECK(a.fields == b.fields);
  for (std::size_t i = 0; i < a.scales.size(); ++i) {
    for (std::size_t k = 0; k < a.scales[i].curve.size(); ++k) {
      CHECK(a.scales[i].curve[k].loss == b.scales[i].curve[k].loss);
    }
  }
}

TEST_CASE("warm starts") {
  const auto seq = translation_sequence(32, 3, 1.5, 0.0, 5);
  SUBCASE("from_previous_scale copies values, not storage") {
    auto cfg = mini_config(1, {Scale{2}, Scale{1}});
    cfg.adam.lr = 0.0;
    cfg.schedule.warm_start = WarmStart::from_previous_scale;
    const auto r = run_nmsr(seq, cfg);
    CHECK(same_params(r.params[0], r.params[1]));
    CHECK_FALSE(r.params[0].layers[0].kernel.same_storage(r.params[1].layers[0].kernel));
    cfg.schedule.warm_start = WarmStart::none;
    const auto cold = run_nmsr(seq, cfg);
    CHECK_FALSE(same_params(cold.params[0], cold.params[1]));
  }
  SUBCASE("from_checkpoint errors") {
    auto cfg = mini_config(1, {Scale{2}, Scale{1}});
    cfg.schedule.warm_start = WarmStart::from_checkpoint;
    cfg.schedule.checkpoint_dir = testing::scratch_dir("empty_ckpt");
    CHECK_THROWS_AS(run_nmsr(seq, cfg), ConfigError);
    save_checkpoint(checkpoint_path(cfg.schedule.checkpoint_dir, Scale{2}), init_params(ArchDescriptor{}, 0));
    CHECK_THROWS_AS(run_nmsr(seq, cfg), ConfigError);
  }
}

TEST_CASE("pretraining on copies of one sequence equals registering it") {
  const auto seq = translation_sequence(32, 3, 1.0, 1.0, 6);
  const auto cfg = mini_config(7);
  const auto dir = testing::scratch_dir("pretrain_copies");
  const std::vector<ImageSequence> copies(3, seq);
  const auto pre = pretrain(copies, cfg, cfg.schedule.steps, dir);
  const auto direct = run_nmsr(seq, cfg);
  REQUIRE(pre.size() == direct.params.size());
  for (std::size_t i = 0; i < pre.size(); ++i) {
    CHECK(same_params(pre[i], direct.params[i]));
    CHECK(same_params(load_checkpoint(checkpoint_path(dir, cfg.schedule.scales[i])), pre[i]));
  }

  const std::vector<ImageSequence> mixed{seq, translation_sequence(48, 3, 1.0, 1.0, 6)};
  CHECK_THROWS_AS(pretrain(mixed, cfg, 2, dir), ConfigError);
  CHECK_THROWS_AS(pretrain(std::vector<ImageSequence>{}, cfg, 2, dir), ConfigError);
}

TEST_CASE("non-finite loss raises NumericDivergence with the step") {
  auto seq = translation_sequence(32, 3, 1.0, 0.0, 7);
  seq.frames[1].at(5, 5) = std::numeric_limits<double>::quiet_NaN();
  try {
    run_nmsr(seq, mini_config(3));
    FAIL("expected NumericDivergence");
  } catch (const NumericDivergence& e) {
    CHECK(e.step() == 0);
    CHECK(e.scale_factor() == 4);
  }
}

TEST_CASE("training loss decreases on a translating sequence") {
  const auto seq = translation_sequence(64, 4, 2.0, -1.0, 8);
  RegistrationConfig cfg;
  cfg.variant = Variant::single_scale;
  cfg.schedule.steps = 300;
  const auto r = run_nmsr(seq, cfg);
  const auto& curve = r.scales[0].curve;
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 100; ++i) {
    first += curve[i].loss;
    last += curve[curve.size() - 100 + i].loss;
  }
  CHECK(last < first);
}

TEST_CASE("results directory layout") {
  const auto seq = translation_sequence(32, 3, 1.0, 0.0, 9);
  const auto r = run_nmsr(seq, mini_config(4));
  const auto dir = testing::scratch_dir("results");
  write_results(dir, r, seq, {{"note", "x"}});
  CHECK(std::filesystem::exists(dir / "flow_0001.flo"));
  CHECK(std::filesystem::exists(dir / "flow_0002.flo"));
  CHECK_FALSE(std::filesystem::exists(dir / "flow_0003.flo"));
  const auto csv = testing::read_bytes(dir / "loss_scale_1_4.csv");
  CHECK(csv.rfind("step,pair_index,loss,ncc,smooth\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  const auto kv = read_key_values(dir / "manifest.txt");
  CHECK(find_value(kv, "scales") == "1/4,1/2,1");
  CHECK(find_value(kv, "note") == "x");
  CHECK(find_value(kv, "seconds_scale_1_2").has_value());
}
