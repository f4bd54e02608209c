#include "nmsr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "nmsr/rng.hpp"

namespace nmsr {
namespace {

double evaluate(const LossBuilder& build) {
  Graph g;
  return build(g).item();
}

std::vector<std::vector<double>> analytic_grads(const LossBuilder& build,
                                                std::span<Tensor> inputs) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  Graph g;
  Tensor loss = build(g);
  g.backward(loss);
  std::vector<std::vector<double>> grads;
  for (auto& t : inputs) {
    if (t.has_grad()) {
      grads.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      grads.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
    }
  }
  return grads;
}

double relative_error(double num_sq, double a_sq, double n_sq) {
  const double denom = std::sqrt(std::max(a_sq, n_sq));
  if (denom == 0.0) return 0.0;
  return std::sqrt(num_sq) / denom;
}

}  // namespace

GradCheckResult gradcheck(const LossBuilder& build, std::span<Tensor> inputs, double step) {
  const auto analytic = analytic_grads(build, inputs);
  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].data();
    double diff_sq = 0.0;
    double a_sq = 0.0;
    double n_sq = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double plus = evaluate(build);
      values[i] = saved - step;
      const double minus = evaluate(build);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[k][i];
      diff_sq += (a - numeric) * (a - numeric);
      a_sq += a * a;
      n_sq += numeric * numeric;
    }
    result.relative_error.push_back(relative_error(diff_sq, a_sq, n_sq));
  }
  for (double e : result.relative_error) {
    result.max_relative_error = std::max(result.max_relative_error, e);
  }
  return result;
}

GradCheckResult directional_gradcheck(const LossBuilder& build, std::span<Tensor> inputs,
                                      std::uint64_t seed, double step) {
  const auto analytic = analytic_grads(build, inputs);
  Rng rng(seed);
  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].data();
    std::vector<double> direction(values.size());
    double norm = 0.0;
    for (auto& d : direction) {
      d = rng.normal();
      norm += d * d;
    }
    norm = std::sqrt(norm);
    for (auto& d : direction) d /= norm;
    const std::vector<double> saved(values.begin(), values.end());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = saved[i] + step * direction[i];
    const double plus = evaluate(build);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = saved[i] - step * direction[i];
    const double minus = evaluate(build);
    std::copy(saved.begin(), saved.end(), values.begin());
    const double numeric = (plus - minus) / (2.0 * step);
    double a = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) a += analytic[k][i] * direction[i];
    result.relative_error.push_back(relative_error((a - numeric) * (a - numeric), a * a,
                                                   numeric * numeric));
  }
  for (double e : result.relative_error) {
    result.max_relative_error = std::max(result.max_relative_error, e);
  }
  return result;
}

}  // namespace nmsr
