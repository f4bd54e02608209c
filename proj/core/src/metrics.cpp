#include "nmsr/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "nmsr/error.hpp"
#include "nmsr/window_stats.hpp"

namespace nmsr {
namespace {

void check_inputs(const Image& a, const Image& b, const Mask& mask, const char* what) {
  if (a.width() != b.width() || a.height() != b.height() || mask.width() != a.width() ||
      mask.height() != a.height()) {
    throw InvalidShape(std::string(what) + ": dimension mismatch");
  }
  if (mask.count() == 0) throw ContractError(std::string(what) + ": mask is empty");
}

std::string num(double v, const char* fmt = "%.9g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace

double mse(const Image& recon, const Image& target, const Mask& mask) {
  check_inputs(recon, target, mask, "mse");
  double acc = 0.0;
  const auto a = recon.pixels();
  const auto b = target.pixels();
  for (std::int64_t i = 0; i < recon.size(); ++i) {
    if (!mask.contains(i)) continue;
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(mask.count());
}

double mean_cc(const Image& recon, const Image& target, const Mask& mask, int radius,
               double epsilon) {
  check_inputs(recon, target, mask, "mean_cc");
  const auto stats =
      window_stats(recon.pixels(), target.pixels(), recon.height(), recon.width(), radius);
  const auto cc = local_ncc_squared(stats, epsilon);
  double acc = 0.0;
  for (std::int64_t i = 0; i < recon.size(); ++i) {
    if (mask.contains(i)) acc += cc[static_cast<std::size_t>(i)];
  }
  return acc / static_cast<double>(mask.count());
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) return {};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

std::string EvalReport::to_table() const {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-8s %16s %16s", "pair", "MSE", "MeanCC");
  out += line;
  if (has_epe()) {
    std::snprintf(line, sizeof line, " %16s %16s", "EPE", "AE(deg)");
    out += line;
  }
  out += '\n';
  auto row = [&](const std::string& label, double m, double c, double e, double a) {
    std::snprintf(line, sizeof line, "%-8s %16.9g %16.9g", label.c_str(), m, c);
    out += line;
    if (has_epe()) {
      std::snprintf(line, sizeof line, " %16.9g %16.9g", e, a);
      out += line;
    }
    out += '\n';
  };
  for (std::size_t i = 0; i < mse.size(); ++i) {
    row(std::to_string(i + 1), mse[i], mean_cc[i], has_epe() ? epe[i] : 0.0,
        has_epe() ? angular_error[i] : 0.0);
  }
  const auto ms = mse_summary();
  const auto cs = mean_cc_summary();
  const auto es = mean_std(epe);
  const auto as = mean_std(angular_error);
  row("mean", ms.mean, cs.mean, es.mean, as.mean);
  row("std", ms.std, cs.std, es.std, as.std);
  return out;
}

std::string EvalReport::to_csv() const {
  std::string out = has_epe() ? "pair,mse,mean_cc,epe,angular_error_deg\n" : "pair,mse,mean_cc\n";
  for (std::size_t i = 0; i < mse.size(); ++i) {
    out += std::to_string(i + 1) + "," + num(mse[i], "%.17g") + "," + num(mean_cc[i], "%.17g");
    if (has_epe()) out += "," + num(epe[i], "%.17g") + "," + num(angular_error[i], "%.17g");
    out += '\n';
  }
  return out;
}

void EvalReport::write(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  for (const auto& [name, text] : {std::pair{"report.txt", to_table()}, std::pair{"report.csv", to_csv()}}) {
    std::ofstream out(dir / name, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + (dir / name).string() + "'");
    out << text;
  }
}

}  // namespace nmsr
