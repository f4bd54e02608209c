#include "nmsr_cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "nmsr/error.hpp"
#include "nmsr/metrics.hpp"
#include "nmsr/pipeline.hpp"
#include "nmsr/selftest.hpp"
#include "nmsr/synth.hpp"

namespace nmsr::cli {
namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::vector<int> parse_channels(const std::string& text, const char* what) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad ") + what + " channel list '" + text + "'");
    }
  }
  return out;
}

RegistrationConfig to_registration_config(const RunConfig& rc) {
  RegistrationConfig cfg;
  cfg.schedule.scales = parse_scale_list(rc.scales);
  cfg.schedule.steps = rc.steps;
  cfg.schedule.warm_start = parse_warm_start(rc.warm_start);
  cfg.schedule.checkpoint_dir = rc.checkpoint;
  cfg.loss.lambda = rc.lambda;
  cfg.loss.ncc_radius = rc.ncc_radius;
  cfg.adam.lr = rc.lr;
  cfg.arch.encoder = parse_channels(rc.encoder, "encoder");
  cfg.arch.decoder = parse_channels(rc.decoder, "decoder");
  cfg.seed = rc.seed;
  cfg.variant = parse_variant(rc.variant);
  cfg.validate();
  return cfg;
}

// Runs `task` over every index with up to `jobs` threads. Each job owns its
// state; failures are collected and the first one is rethrown after all jobs
// finish.
void for_each_job(std::size_t count, int jobs, const std::function<void(std::size_t)>& task) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n_threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, count);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

fs::path output_for(const RunConfig& cfg, std::size_t i) {
  if (cfg.inputs.size() == 1) return cfg.output;
  fs::path in(cfg.inputs[i]);
  auto name = in.filename().string();
  if (name.empty()) name = in.parent_path().filename().string();
  return fs::path(cfg.output) / name;
}

}  // namespace

KeyValues RunConfig::echo() const {
  std::string joined;
  for (const auto& in : inputs) joined += (joined.empty() ? "" : ",") + in;
  return {
      {"run.subcommand", subcommand},
      {"run.input", joined},
      {"run.output", output},
      {"run.scales", scales},
      {"run.steps", std::to_string(steps)},
      {"run.lambda", fmt(lambda)},
      {"run.ncc_radius", std::to_string(ncc_radius)},
      {"run.lr", fmt(lr)},
      {"run.variant", variant},
      {"run.warm_start", warm_start},
      {"run.checkpoint", checkpoint},
      {"run.seed", std::to_string(seed)},
      {"run.encoder", encoder},
      {"run.decoder", decoder},
      {"run.jobs", std::to_string(jobs)},
  };
}

void cmd_gen(const GenOptions& opt, std::ostream& out) {
  FlowSpec spec;
  spec.kind = parse_flow_kind(opt.kind);
  spec.frames = opt.frames;
  spec.width = opt.width > 0 ? opt.width : opt.size;
  spec.height = opt.height > 0 ? opt.height : opt.size;
  spec.u = opt.u;
  spec.v = opt.v;
  if (opt.center_x) spec.center_x = *opt.center_x;
  if (opt.center_y) spec.center_y = *opt.center_y;
  spec.omega = opt.omega;
  spec.core_radius = opt.core_radius;
  spec.circulation = opt.max_speed
                         ? lamb_oseen_circulation_for_peak(*opt.max_speed, opt.core_radius)
                         : opt.circulation;
  spec.rate = opt.rate;
  spec.noise_sigma = opt.noise;
  spec.grain = opt.grain;
  spec.seed = opt.seed;
  const auto syn = generate(spec);
  write_sequence_dir(opt.out, SequenceDir{syn.sequence, syn.truth, syn.metadata});
  out << "wrote " << syn.sequence.frames.size() << " frames (" << spec.width << "x"
      << spec.height << ", " << to_string(spec.kind) << ", max displacement "
      << syn.max_displacement << " px) to " << opt.out << "\n";
}

void cmd_register(const RunConfig& rc, std::ostream& out) {
  const auto cfg = to_registration_config(rc);
  std::mutex out_mutex;
  for_each_job(rc.inputs.size(), rc.jobs, [&](std::size_t i) {
    const auto dir = read_sequence_dir(rc.inputs[i]);
    const auto result = run_nmsr(dir.sequence, cfg);
    const auto dest = output_for(rc, i);
    write_results(dest, result, dir.sequence, rc.echo());
    std::ostringstream msg;
    msg << rc.inputs[i] << ": " << result.fields.size() << " fields -> " << dest.string() << "\n";
    for (const auto& s : result.scales) {
      msg << "  scale " << s.scale.str() << ": " << s.curve.size() << " steps, "
          << s.seconds << " s, final loss " << s.curve.back().loss << "\n";
    }
    const std::lock_guard lock(out_mutex);
    out << msg.str();
  });
}

void cmd_pretrain(const RunConfig& rc, int iterations, std::ostream& out) {
  const auto cfg = to_registration_config(rc);
  std::vector<ImageSequence> train;
  for (const auto& in : rc.inputs) train.push_back(read_sequence_dir(in).sequence);
  const auto params = pretrain(train, cfg, iterations, rc.output);
  const auto scales = cfg.effective_scales();
  for (std::size_t i = 0; i < scales.size(); ++i) {
    out << "scale " << scales[i].str() << ": " << params[i].parameter_count() << " parameters -> "
        << checkpoint_path(rc.output, scales[i]).string() << "\n";
  }
}

void cmd_eval(const EvalOptions& opt, std::ostream& out) {
  const auto dir = read_sequence_dir(opt.sequence);
  const auto flows = read_flow_dir(opt.flows);
  const auto& seq = dir.sequence;
  if (flows.size() != seq.pair_count()) {
    throw ConfigError("expected " + std::to_string(seq.pair_count()) + " flow files in '" +
                      opt.flows + "', found " + std::to_string(flows.size()));
  }
  EvalReport report;
  for (std::size_t t = 0; t < flows.size(); ++t) {
    if (flows[t].width() != seq.width() || flows[t].height() != seq.height()) {
      throw ConfigError("flow " + std::to_string(t + 1) + " does not match the frame size");
    }
    const Mask mask = seq.masks.empty() ? Mask(seq.width(), seq.height(), true) : seq.masks[t + 1];
    const Image recon = warp(seq.frames[t], flows[t]);
    report.mse.push_back(mse(recon, seq.frames[t + 1], mask));
    report.mean_cc.push_back(mean_cc(recon, seq.frames[t + 1], mask));
    if (!dir.flows.empty()) {
      const auto e = epe_oracle(flows[t], dir.flows[t], mask);
      report.epe.push_back(e.mean_epe);
      report.angular_error.push_back(e.mean_angular_error_deg);
    }
  }
  report.write(opt.output.empty() ? opt.flows : opt.output);
  out << report.to_table();
}

void cmd_viz(const VizOptions& opt, std::ostream& out) {
  const auto flows = read_flow_dir(opt.flows);
  if (flows.empty()) throw IoError("no flow files in '" + opt.flows + "'");
  const fs::path dest = opt.output.empty() ? opt.flows : opt.output;
  std::error_code ec;
  fs::create_directories(dest, ec);
  if (ec) throw IoError("cannot create '" + dest.string() + "': " + ec.message());
  for (std::size_t i = 0; i < flows.size(); ++i) {
    auto name = flow_name(i + 1);
    name.replace(name.size() - 4, 4, ".ppm");
    write_ppm(dest / name, flow_to_color(flows[i], opt.max_magnitude));
  }
  out << "rendered " << flows.size() << " fields to " << dest.string() << "\n";
}

int cmd_selftest(const SelftestCliOptions& opt, std::ostream& out) {
  SelftestOptions options;
  options.corrupt_conv_backward = opt.corrupt_conv_backward;
  const auto report = run_selftest(options);
  out << report.to_text();
  return report.passed() ? kSuccess : kSelftestFailure;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale self-supervised registration of 2D image sequences", "nmsr"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic speckle sequence with known flow");
  gen_cmd->add_option("--kind", gen.kind, "translation | rotation | vortex | contraction")
      ->capture_default_str();
  gen_cmd->add_option("--frames", gen.frames, "Number of frames")->capture_default_str();
  gen_cmd->add_option("--size", gen.size, "Frame width and height")->capture_default_str();
  gen_cmd->add_option("--width", gen.width, "Frame width (overrides --size)");
  gen_cmd->add_option("--height", gen.height, "Frame height (overrides --size)");
  gen_cmd->add_option("--u", gen.u, "Translation dx, px/frame");
  gen_cmd->add_option("--v", gen.v, "Translation dy, px/frame");
  gen_cmd->add_option("--center-x", gen.center_x, "Flow centre x (default: image centre)");
  gen_cmd->add_option("--center-y", gen.center_y, "Flow centre y (default: image centre)");
  gen_cmd->add_option("--omega", gen.omega, "Rotation, rad/frame");
  gen_cmd->add_option("--circulation", gen.circulation, "Vortex circulation, px^2/frame");
  gen_cmd->add_option("--max-speed", gen.max_speed, "Vortex peak speed, px/frame");
  gen_cmd->add_option("--core-radius", gen.core_radius, "Vortex core radius, px")
      ->capture_default_str();
  gen_cmd->add_option("--rate", gen.rate, "Contraction rate per frame");
  gen_cmd->add_option("--noise", gen.noise, "Additive noise sigma")->capture_default_str();
  gen_cmd->add_option("--grain", gen.grain, "Speckle grain, px")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  RunConfig reg;
  auto add_run_options = [](CLI::App* cmd, RunConfig& rc) {
    cmd->add_option("--scales", rc.scales, "Coarse-to-fine scales")->capture_default_str();
    cmd->add_option("--steps", rc.steps, "Optimization steps per scale")->capture_default_str();
    cmd->add_option("--lambda", rc.lambda, "Smoothness weight")->capture_default_str();
    cmd->add_option("--ncc-radius", rc.ncc_radius, "Local NCC window radius")
        ->capture_default_str();
    cmd->add_option("--lr", rc.lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--variant", rc.variant, "multi_scale | single_scale")->capture_default_str();
    cmd->add_option("--seed", rc.seed, "Network initialization seed")->capture_default_str();
    cmd->add_option("--encoder", rc.encoder, "Encoder channels")->capture_default_str();
    cmd->add_option("--decoder", rc.decoder, "Decoder channels")->capture_default_str();
  };
  auto* reg_cmd = app.add_subcommand("register", "Register every consecutive frame pair");
  reg_cmd->add_option("--input,-i", reg.inputs, "Sequence directories")->required();
  reg_cmd->add_option("--output,-o", reg.output, "Results directory")->required();
  add_run_options(reg_cmd, reg);
  reg_cmd->add_option("--warm-start", reg.warm_start,
                      "none | from_previous_scale | from_checkpoint")
      ->capture_default_str();
  reg_cmd->add_option("--checkpoint", reg.checkpoint, "Directory of scale_<k>.ckpt files");
  reg_cmd->add_option("--jobs,-j", reg.jobs, "Sequences registered in parallel")
      ->capture_default_str();

  RunConfig pre;
  pre.warm_start = "from_previous_scale";
  int iterations = 3500;
  auto* pre_cmd = app.add_subcommand("pretrain", "Optimize per-scale networks on training sequences");
  pre_cmd->add_option("--input,-i", pre.inputs, "Training sequence directories")->required();
  pre_cmd->add_option("--output,-o", pre.output, "Checkpoint directory")->required();
  pre_cmd->add_option("--iterations", iterations, "Steps per scale")->capture_default_str();
  add_run_options(pre_cmd, pre);
  pre_cmd->add_option("--warm-start", pre.warm_start, "none | from_previous_scale")
      ->capture_default_str();

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score flows against a sequence");
  eval_cmd->add_option("--sequence,-s", ev.sequence, "Sequence directory")->required();
  eval_cmd->add_option("--flows,-f", ev.flows, "Directory of flow_*.flo")->required();
  eval_cmd->add_option("--output,-o", ev.output, "Report directory (default: flows directory)");

  VizOptions viz;
  auto* viz_cmd = app.add_subcommand("viz", "Render flows as colour-wheel PPM images");
  viz_cmd->add_option("--flows,-f", viz.flows, "Directory of flow_*.flo")->required();
  viz_cmd->add_option("--output,-o", viz.output, "Image directory (default: flows directory)");
  viz_cmd->add_option("--max-mag", viz.max_magnitude, "Fixed magnitude for full saturation");

  SelftestCliOptions st;
  auto* st_cmd = app.add_subcommand("selftest", "Gradient, oracle and field-algebra checks");
  st_cmd->add_flag("--corrupt-conv-backward", st.corrupt_conv_backward,
                   "Negative control: deliberately break the conv2d backward");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kInputError;
  }

  try {
    if (*gen_cmd) {
      cmd_gen(gen, out);
    } else if (*reg_cmd) {
      reg.subcommand = "register";
      cmd_register(reg, out);
    } else if (*pre_cmd) {
      pre.subcommand = "pretrain";
      pre.steps = iterations;
      cmd_pretrain(pre, iterations, out);
    } else if (*eval_cmd) {
      cmd_eval(ev, out);
    } else if (*viz_cmd) {
      cmd_viz(viz, out);
    } else if (*st_cmd) {
      return cmd_selftest(st, out);
    }
  } catch (const NumericDivergence& e) {
    err << "error: " << e.what() << "\n";
    return kNumericDivergence;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kSuccess;
}

}  // namespace nmsr::cli
