#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "hetsyn/autograd.hpp"

namespace hetsyn::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // parameter name and entry of the largest error
  std::size_t checked = 0;
};

/// Compares backprop gradients of a scalar loss with central differences,
/// entry by entry. `loss` records the loss on the given tape. The relative
/// error of an entry is |a - n| / max(|a|, |n|, floor).
inline GradCheckResult check_gradients(const nn::ParameterList<double>& params,
                                       const std::function<nn::Var(nn::Tape<double>&)>& loss,
                                       double step = 1e-5, double floor = 1e-6) {
  nn::zero_grads(params);
  {
    nn::Tape<double> t;
    t.backward(loss(t));
  }
  auto value = [&] {
    nn::Tape<double> t(false);
    return t.scalar(loss(t));
  };
  GradCheckResult r;
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + step;
      const double up = value();
      x = saved - step;
      const double down = value();
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad.data()[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), floor});
      ++r.checked;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst = p->name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                  " numeric=" + std::to_string(numeric);
      }
    }
  }
  return r;
}

}  // namespace hetsyn::testing
