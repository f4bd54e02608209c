#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nmsr/image.hpp"

namespace nmsr {

inline constexpr int kMeanCcRadius = 10;
inline constexpr double kMeanCcEpsilon = 1e-5;

/// Mean of (recon - target)^2 over the mask.
double mse(const Image& recon, const Image& target, const Mask& mask);

/// Mean over masked pixels of the windowed squared normalized correlation
/// (the same kernel as the reconstruction loss); lies in [0,1].
double mean_cc(const Image& recon, const Image& target, const Mask& mask,
               int radius = kMeanCcRadius, double epsilon = kMeanCcEpsilon);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

MeanStd mean_std(const std::vector<double>& values);

struct EvalReport {
  std::vector<double> mse;
  std::vector<double> mean_cc;
  std::vector<double> epe;  // empty without ground truth
  std::vector<double> angular_error;

  MeanStd mse_summary() const { return mean_std(mse); }
  MeanStd mean_cc_summary() const { return mean_std(mean_cc); }
  bool has_epe() const { return !epe.empty(); }

  /// Aligned text table: one row per pair plus mean and std rows.
  std::string to_table() const;
  /// Header "pair,mse,mean_cc[,epe,angular_error_deg]", one row per pair.
  std::string to_csv() const;
  void write(const std::filesystem::path& dir) const;
};

}  // namespace nmsr
