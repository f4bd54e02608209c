#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>

#include "nmsr/image.hpp"
#include "nmsr/io.hpp"
#include "nmsr/sequence.hpp"

namespace nmsr {

enum class FlowKind { translation, rotation, lamb_oseen_vortex, radial_contraction };

std::string to_string(FlowKind kind);
/// Accepts translation, rotation, vortex (or lamb_oseen_vortex), contraction.
FlowKind parse_flow_kind(const std::string& text);

/// Parameters of a synthetic speckle sequence with a stationary analytic flow.
/// Centres default to the image centre when NaN.
struct FlowSpec {
  FlowKind kind = FlowKind::translation;
  double u = 0.0;  // translation, pixels/frame
  double v = 0.0;
  double center_x = std::numeric_limits<double>::quiet_NaN();
  double center_y = std::numeric_limits<double>::quiet_NaN();
  double omega = 0.0;          // rotation, radians/frame
  double circulation = 0.0;    // vortex, pixels^2/frame
  double core_radius = 20.0;   // vortex, pixels
  double rate = 0.0;           // contraction, fraction of radius per frame
  int frames = 8;
  std::int64_t width = 64;
  std::int64_t height = 64;
  double noise_sigma = 0.02;
  double grain = 2.0;  // speckle grain size, pixels
  std::uint64_t seed = 0;

  void validate() const;
};

/// Tangential speed Gamma/(2 pi r) (1 - exp(-r^2/rc^2)); 0 at the centre.
double lamb_oseen_speed(double circulation, double core_radius, double r);
/// Circulation whose peak tangential speed equals `max_speed`.
double lamb_oseen_circulation_for_peak(double max_speed, double core_radius);

/// Analytic displacement at image coordinates (x, y).
std::array<double, 2> flow_at(const FlowSpec& spec, double x, double y);
FlowField analytic_flow(const FlowSpec& spec);

struct SyntheticSequence {
  ImageSequence sequence;
  std::vector<FlowField> truth;  // one per consecutive pair
  Mask mask;                     // interior eroded by the max displacement
  double max_displacement = 0.0;
  KeyValues metadata;
};

/// Speckle texture (Gaussian tissue blobs x blurred exponential noise) on a
/// margin-extended canvas; frame t+1 is the clean frame t pulled through the
/// analytic flow, and each emitted frame gets fresh additive Gaussian noise.
SyntheticSequence generate(const FlowSpec& spec);

struct EpeResult {
  double mean_epe = 0.0;
  double mean_angular_error_deg = 0.0;
};

/// Endpoint and angular ((u,v,1) convention) error averaged over the mask.
EpeResult epe_oracle(const FlowField& pred, const FlowField& truth, const Mask& mask);

}  // namespace nmsr
