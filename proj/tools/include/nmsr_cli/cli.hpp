#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nmsr/io.hpp"

namespace nmsr::cli {

enum ExitCode : int {
  kSuccess = 0,
  kSelftestFailure = 1,
  kInputError = 2,
  kNumericDivergence = 3,
};

/// Options shared by `register` and `pretrain`, kept as typed on the command
/// line so the manifest can echo them back unchanged.
struct RunConfig {
  std::string subcommand;
  std::vector<std::string> inputs;
  std::string output;
  std::string scales = "1/8,1/4,1/2,1";
  int steps = 3500;
  double lambda = 10.0;
  int ncc_radius = 6;
  double lr = 1e-3;
  std::string variant = "multi_scale";
  std::string warm_start = "none";
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::string encoder = "16,32,32,32";
  std::string decoder = "32,32,32,16";
  int jobs = 1;

  KeyValues echo() const;
};

struct GenOptions {
  std::string kind = "translation";
  int frames = 8;
  int size = 64;
  int width = 0;   // 0 means use size
  int height = 0;
  double u = 0.0;
  double v = 0.0;
  std::optional<double> center_x;
  std::optional<double> center_y;
  double omega = 0.0;
  double circulation = 0.0;
  std::optional<double> max_speed;  // vortex: overrides circulation
  double core_radius = 20.0;
  double rate = 0.0;
  double noise = 0.02;
  double grain = 2.0;
  std::uint64_t seed = 0;
  std::string out;
};

struct EvalOptions {
  std::string sequence;
  std::string flows;
  std::string output;  // defaults to the flows directory
};

struct VizOptions {
  std::string flows;
  std::string output;  // defaults to the flows directory
  std::optional<double> max_magnitude;
};

struct SelftestCliOptions {
  bool corrupt_conv_backward = false;
};

// Each command reports progress on `out` and throws nmsr::Error subclasses on
// failure; run() maps those onto exit codes.
void cmd_gen(const GenOptions& opt, std::ostream& out);
void cmd_register(const RunConfig& cfg, std::ostream& out);
void cmd_pretrain(const RunConfig& cfg, int iterations, std::ostream& out);
void cmd_eval(const EvalOptions& opt, std::ostream& out);
void cmd_viz(const VizOptions& opt, std::ostream& out);
/// Returns kSuccess or kSelftestFailure.
int cmd_selftest(const SelftestCliOptions& opt, std::ostream& out);

/// Parses `args` (without the program name) and runs the subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nmsr::cli
