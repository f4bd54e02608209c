#include "nmsr/optimizer.hpp"

#include <cmath>

#include "nmsr/error.hpp"

namespace nmsr {

void Adam::step(std::span<Tensor> params) {
  if (state_.m.empty()) {
    for (const auto& p : params) {
      state_.m.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
      state_.v.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
  }
  if (state_.m.size() != params.size()) {
    throw ContractError("Adam::step: parameter count changed between steps");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (static_cast<std::int64_t>(state_.m[k].size()) != params[k].numel()) {
      throw ContractError("Adam::step: parameter " + std::to_string(k) + " changed shape");
    }
    if (!params[k].has_grad()) {
      throw ContractError("Adam::step: parameter " + std::to_string(k) + " has no gradient");
    }
  }
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].data();
    auto g = params[k].grad();
    auto& m = state_.m[k];
    auto& v = state_.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

}  // namespace nmsr
