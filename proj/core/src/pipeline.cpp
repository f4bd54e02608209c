#include "nmsr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nmsr/error.hpp"

namespace nmsr {
namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join(const std::vector<int>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + std::to_string(values[i]);
  return s;
}

// One frame pair ready for optimization at a fixed scale.
struct PairProblem {
  Tensor moving;
  Tensor fixed;
  LossConfig loss;
};

// A sequence padded to the schedule's stride multiple, with its
// per-pair accumulated full-resolution fields.
struct WorkItem {
  ImageSequence padded;
  std::optional<Mask> valid;
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<FlowField> accumulated;
};

WorkItem make_work_item(const ImageSequence& seq, const RegistrationConfig& cfg) {
  seq.validate();
  const auto scales = cfg.effective_scales();
  const std::int64_t multiple = static_cast<std::int64_t>(scales.front().factor) *
                                cfg.arch.stride_multiple();
  auto round_up = [multiple](std::int64_t v) { return (v + multiple - 1) / multiple * multiple; };
  WorkItem item;
  item.width = seq.width();
  item.height = seq.height();
  const auto pw = round_up(item.width);
  const auto ph = round_up(item.height);
  item.padded.id = seq.id;
  for (const auto& f : seq.frames) item.padded.frames.push_back(reflect_pad(f, pw, ph));
  for (const auto& m : seq.masks) item.padded.masks.push_back(pad_mask(m, pw, ph));
  if (pw != item.width || ph != item.height) {
    item.valid = pad_mask(Mask(item.width, item.height, true), pw, ph);
  }
  item.accumulated.assign(seq.pair_count(), FlowField(pw, ph));
  return item;
}

std::vector<PairProblem> make_problems(const std::vector<WorkItem>& items, Scale s,
                                       const LossConfig& base) {
  std::vector<PairProblem> problems;
  for (const auto& item : items) {
    for (auto& in : prepare_scale_inputs(item.padded, item.accumulated, s, item.valid)) {
      LossConfig loss = base;
      loss.region_mask = std::move(in.loss_mask);
      problems.push_back({to_tensor(in.moving), to_tensor(in.fixed), std::move(loss)});
    }
  }
  return problems;
}

ModelParams initial_params(const RegistrationConfig& cfg, Scale s,
                           const std::optional<ModelParams>& previous) {
  switch (cfg.schedule.warm_start) {
    case WarmStart::none: break;
    case WarmStart::from_previous_scale:
      if (previous) return previous->clone();
      break;
    case WarmStart::from_checkpoint: {
      const auto path = checkpoint_path(cfg.schedule.checkpoint_dir, s);
      if (!std::filesystem::exists(path)) {
        throw ConfigError("missing pretrained checkpoint " + path.string());
      }
      return load_checkpoint(path, cfg.arch);
    }
  }
  return init_params(cfg.arch, scale_seed(cfg.seed, s));
}

ScaleReport optimize(std::vector<PairProblem>& problems, Scale s, ModelParams& params,
                     const RegistrationConfig& cfg, int steps) {
  ScaleReport report;
  report.scale = s;
  report.curve.reserve(static_cast<std::size_t>(steps));
  Adam adam(cfg.adam);
  auto tensors = params.tensors();
  const auto start = std::chrono::steady_clock::now();
  for (long step = 0; step < steps; ++step) {
    const auto k = static_cast<std::size_t>(step) % problems.size();
    auto& pair = problems[k];
    params.zero_grad();
    Graph g;
    const Tensor flow = unet_forward(g, params, pair.moving, pair.fixed);
    const Tensor warped = ops::grid_sample_bilinear(g, pair.moving, flow);
    const auto terms = total_loss(g, warped, pair.fixed, flow, pair.loss);
    const double loss = terms.total.item();
    if (!std::isfinite(loss)) throw NumericDivergence(s.factor, step);
    g.backward(terms.total);
    adam.step(tensors);
    report.curve.push_back({step, static_cast<int>(k) + 1, loss, terms.ncc.item(), terms.smooth.item()});
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::vector<FlowField> predict_all(const std::vector<PairProblem>& problems,
                                   const ModelParams& params) {
  std::vector<FlowField> fields;
  for (const auto& pair : problems) {
    Graph g;
    auto f = flow_from_tensor(unet_forward(g, params, pair.moving, pair.fixed));
    if (!f.all_finite()) throw NumericDivergence(0, -1);
    fields.push_back(std::move(f));
  }
  return fields;
}

struct ScheduleRun {
  std::vector<ScaleReport> reports;
  std::vector<ModelParams> params;
};

// Shared by run_nmsr (one sequence) and pretrain (many).
ScheduleRun run_schedule(std::vector<WorkItem>& items, const RegistrationConfig& cfg, int steps) {
  ScheduleRun run;
  std::optional<ModelParams> previous;
  for (const Scale s : cfg.effective_scales()) {
    auto problems = make_problems(items, s, cfg.loss);
    ModelParams params = initial_params(cfg, s, previous);
    auto report = optimize(problems, s, params, cfg, steps);
    const auto fields = predict_all(problems, params);
    std::size_t k = 0;
    for (auto& item : items) {
      for (auto& acc : item.accumulated) {
        const auto promoted = promote_field(fields[k++], acc.width(), acc.height());
        // The moving frame was pulled through `acc` before the network saw
        // it, so the refinement is applied first when pulling I_t.
        acc = compose(promoted, acc);
      }
    }
    run.reports.push_back(std::move(report));
    run.params.push_back(params);
    previous = std::move(params);
  }
  return run;
}

}  // namespace

std::string to_string(Variant v) {
  return v == Variant::single_scale ? "single_scale" : "multi_scale";
}

std::string to_string(WarmStart w) {
  switch (w) {
    case WarmStart::none: return "none";
    case WarmStart::from_previous_scale: return "from_previous_scale";
    case WarmStart::from_checkpoint: return "from_checkpoint";
  }
  return "unknown";
}

Variant parse_variant(const std::string& text) {
  if (text == "single_scale" || text == "single") return Variant::single_scale;
  if (text == "multi_scale" || text == "multi") return Variant::multi_scale;
  throw ConfigError("unknown variant '" + text + "'");
}

WarmStart parse_warm_start(const std::string& text) {
  if (text == "none") return WarmStart::none;
  if (text == "from_previous_scale" || text == "previous") return WarmStart::from_previous_scale;
  if (text == "from_checkpoint" || text == "checkpoint") return WarmStart::from_checkpoint;
  throw ConfigError("unknown warm start '" + text + "'");
}

void ScaleSchedule::validate() const {
  if (scales.empty()) throw ConfigError("schedule has no scales");
  for (std::size_t i = 1; i < scales.size(); ++i) {
    if (scales[i].factor >= scales[i - 1].factor) {
      throw ConfigError("scales must be strictly increasing: " + scales_str());
    }
  }
  if (scales.back().factor != 1) throw ConfigError("schedule must end at scale 1: " + scales_str());
  if (steps < 1) throw ConfigError("steps per scale must be >= 1");
  if (warm_start == WarmStart::from_checkpoint && checkpoint_dir.empty()) {
    throw ConfigError("warm start from checkpoint needs a checkpoint directory");
  }
}

std::string ScaleSchedule::scales_str() const {
  std::string s;
  for (std::size_t i = 0; i < scales.size(); ++i) s += (i ? "," : "") + scales[i].str();
  return s;
}

std::vector<Scale> parse_scale_list(const std::string& text) {
  std::vector<Scale> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_scale(item));
  if (out.empty()) throw ConfigError("empty scale list");
  return out;
}

std::vector<Scale> RegistrationConfig::effective_scales() const {
  if (variant == Variant::single_scale) return {Scale{1}};
  return schedule.scales;
}

void RegistrationConfig::validate() const {
  schedule.validate();
  loss.validate();
  arch.validate();
  if (!(adam.lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
}

double ScaleReport::final_loss(std::size_t window) const {
  if (curve.empty()) return 0.0;
  window = std::clamp<std::size_t>(window, 1, curve.size());
  double acc = 0.0;
  for (std::size_t i = curve.size() - window; i < curve.size(); ++i) acc += curve[i].loss;
  return acc / static_cast<double>(window);
}

std::vector<ScaleInputs> prepare_scale_inputs(const ImageSequence& seq,
                                              std::span<const FlowField> accumulated, Scale s,
                                              const std::optional<Mask>& valid) {
  if (accumulated.size() != seq.pair_count()) {
    throw ContractError("prepare_scale_inputs: need one accumulated field per pair");
  }
  std::vector<ScaleInputs> out;
  for (std::size_t t = 0; t < seq.pair_count(); ++t) {
    ScaleInputs in;
    in.moving = downsample(warp(seq.frames[t], accumulated[t]), s);
    in.fixed = downsample(seq.frames[t + 1], s);
    std::optional<Mask> region = valid;
    if (!seq.masks.empty()) region = region ? (*region & seq.masks[t + 1]) : seq.masks[t + 1];
    if (region) {
      in.loss_mask = downsample(*region, s);
      if (in.loss_mask->count() == 0) {
        throw ConfigError("region mask of pair " + std::to_string(t + 1) + " vanishes at scale " +
                          s.str());
      }
    }
    out.push_back(std::move(in));
  }
  return out;
}

ScaleOutcome run_scale(const ImageSequence& seq, std::span<const FlowField> accumulated, Scale s,
                       ModelParams& params, const RegistrationConfig& cfg) {
  seq.validate();
  cfg.loss.validate();
  const auto multiple = static_cast<std::int64_t>(s.factor) * params.arch.stride_multiple();
  if (seq.width() % multiple != 0 || seq.height() % multiple != 0) {
    throw InvalidShape("run_scale: frames " + std::to_string(seq.width()) + "x" +
                       std::to_string(seq.height()) + " must be divisible by " +
                       std::to_string(multiple) + " at scale " + s.str() +
                       "; use run_nmsr, which pads");
  }
  if (cfg.schedule.steps < 1) throw ConfigError("steps per scale must be >= 1");
  std::vector<PairProblem> problems;
  for (auto& in : prepare_scale_inputs(seq, accumulated, s)) {
    LossConfig loss = cfg.loss;
    loss.region_mask = std::move(in.loss_mask);
    problems.push_back({to_tensor(in.moving), to_tensor(in.fixed), std::move(loss)});
  }
  ScaleOutcome out;
  out.report = optimize(problems, s, params, cfg, cfg.schedule.steps);
  out.fields = predict_all(problems, params);
  return out;
}

RegistrationResult run_nmsr(const ImageSequence& seq, const RegistrationConfig& cfg) {
  cfg.validate();
  std::vector<WorkItem> items{make_work_item(seq, cfg)};
  auto run = run_schedule(items, cfg, cfg.schedule.steps);
  RegistrationResult result;
  result.config = cfg;
  result.scales = std::move(run.reports);
  result.params = std::move(run.params);
  for (const auto& acc : items.front().accumulated) {
    result.fields.push_back(crop(acc, items.front().width, items.front().height));
  }
  return result;
}

std::vector<ModelParams> pretrain(std::span<const ImageSequence> train_set,
                                  const RegistrationConfig& cfg, int iterations,
                                  const std::filesystem::path& out_dir) {
  if (train_set.empty()) throw ConfigError("pretrain: empty training set");
  if (iterations < 1) throw ConfigError("pretrain: iterations must be >= 1");
  if (cfg.schedule.warm_start == WarmStart::from_checkpoint) {
    throw ConfigError("pretrain: warm start from checkpoint is not meaningful here");
  }
  cfg.validate();
  for (const auto& seq : train_set) {
    if (seq.width() != train_set.front().width() || seq.height() != train_set.front().height()) {
      throw ConfigError("pretrain: training sequences must share frame dimensions");
    }
  }
  std::vector<WorkItem> items;
  for (const auto& seq : train_set) items.push_back(make_work_item(seq, cfg));
  auto run = run_schedule(items, cfg, iterations);
  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());
    const auto scales = cfg.effective_scales();
    for (std::size_t i = 0; i < scales.size(); ++i) {
      save_checkpoint(checkpoint_path(out_dir, scales[i]), run.params[i]);
    }
  }
  return run.params;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, Scale s) {
  return dir / ("scale_" + std::to_string(s.factor) + ".ckpt");
}

std::uint64_t scale_seed(std::uint64_t seed, Scale s) {
  return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(s.factor);
}

std::string loss_curve_name(Scale s) {
  std::string name = s.str();
  std::replace(name.begin(), name.end(), '/', '_');
  return "loss_scale_" + name + ".csv";
}

std::string loss_curve_csv(const ScaleReport& report) {
  std::string out = "step,pair_index,loss,ncc,smooth\n";
  char line[160];
  for (const auto& r : report.curve) {
    std::snprintf(line, sizeof line, "%ld,%d,%.17g,%.17g,%.17g\n", r.step, r.pair_index, r.loss,
                  r.ncc, r.smooth);
    out += line;
  }
  return out;
}

KeyValues manifest_entries(const RegistrationResult& result, const ImageSequence& seq) {
  const auto& cfg = result.config;
  std::string scales;
  for (const auto& s : cfg.effective_scales()) scales += (scales.empty() ? "" : ",") + s.str();
  KeyValues kv{
      {"sequence_id", seq.id},
      {"frames", std::to_string(seq.frames.size())},
      {"width", std::to_string(seq.width())},
      {"height", std::to_string(seq.height())},
      {"variant", to_string(cfg.variant)},
      {"scales", scales},
      {"steps_per_scale", std::to_string(cfg.schedule.steps)},
      {"warm_start", to_string(cfg.schedule.warm_start)},
      {"checkpoint_dir", cfg.schedule.checkpoint_dir.string()},
      {"lambda", fmt(cfg.loss.lambda)},
      {"ncc_radius", std::to_string(cfg.loss.ncc_radius)},
      {"ncc_epsilon", fmt(cfg.loss.epsilon)},
      {"optimizer", "adam"},
      {"learning_rate", fmt(cfg.adam.lr)},
      {"adam_beta1", fmt(cfg.adam.beta1)},
      {"adam_beta2", fmt(cfg.adam.beta2)},
      {"adam_eps", fmt(cfg.adam.eps)},
      {"seed", std::to_string(cfg.seed)},
      {"encoder_channels", join(cfg.arch.encoder)},
      {"decoder_channels", join(cfg.arch.decoder)},
      {"activation", "leaky_relu(" + fmt(kLeakySlope) + ")"},
  };
  for (const auto& r : result.scales) {
    const auto tag = loss_curve_name(r.scale).substr(5, loss_curve_name(r.scale).size() - 9);
    kv.emplace_back("seconds_" + tag, fmt(r.seconds));
    kv.emplace_back("final_loss_" + tag, fmt(r.curve.empty() ? 0.0 : r.curve.back().loss));
  }
  return kv;
}

void write_results(const std::filesystem::path& dir, const RegistrationResult& result,
                   const ImageSequence& seq, const KeyValues& extra) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  for (std::size_t i = 0; i < result.fields.size(); ++i) {
    write_flo(dir / flow_name(i + 1), result.fields[i]);
  }
  for (const auto& r : result.scales) {
    std::ofstream out(dir / loss_curve_name(r.scale), std::ios::trunc);
    if (!out) throw IoError("cannot write loss curve in '" + dir.string() + "'");
    out << loss_curve_csv(r);
  }
  auto kv = manifest_entries(result, seq);
  kv.insert(kv.end(), extra.begin(), extra.end());
  write_key_values(dir / "manifest.txt", kv);
}

}  // namespace nmsr
