#pragma once

// Central finite-difference oracle for the autograd engine. Test-only: it
// evaluates the loss through forward passes alone and never reads the
// engine's backward rules.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tsgnn/tensor.hpp"

namespace tsgnn::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// The 1e-6 floor only matters for derivatives that are zero up to
// finite-difference noise.
inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1e-6, std::abs(analytic), std::abs(numeric)});
}

// `loss_fn` builds the scalar loss on the given tape from the current values
// of `params`.
inline GradCheck check_gradients(std::vector<Tensor> params,
                                 const std::function<Tensor(Tape&)>& loss_fn, double h = 1e-5) {
  for (auto& p : params) p.clear_grad();
  {
    Tape tape;
    Tensor loss = loss_fn(tape);
    tape.backward(loss);
  }
  GradCheck out;
  for (auto& p : params) {
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto w = p.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + h;
      double plus, minus;
      {
        Tape tape;
        plus = loss_fn(tape).item();
      }
      w[i] = saved - h;
      {
        Tape tape;
        minus = loss_fn(tape).item();
      }
      w[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      out.max_rel_error = std::max(out.max_rel_error, rel_error(analytic[i], numeric));
      ++out.checked;
    }
    p.clear_grad();
  }
  return out;
}

}  // namespace tsgnn::testing
