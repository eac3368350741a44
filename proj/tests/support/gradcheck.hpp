#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tptkit/autodiff.hpp"
#include "tptkit/rng.hpp"

namespace tptkit::testing {

struct GradCheck {
  double max_rel = 0.0;
  std::string worst; // "input k[i]"
  std::size_t checked = 0;
};

using LossFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

/// Compares reverse-mode gradients of `fn` with central differences for
/// every element of every input. Relative error is |a - n| / max(|a|, |n|,
/// floor).
inline GradCheck gradcheck(const LossFn& fn, std::vector<ad::Tensor> inputs,
                           double h = 1e-6, double floor = 1e-6) {
  std::vector<std::vector<double>> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& t : inputs) {
      vars.push_back(tape.parameter(t));
    }
    ad::Var out = fn(tape, vars);
    tape.backward(out);
    for (const auto& v : vars) {
      analytic.push_back(tape.grad(v.id).data);
    }
  }
  auto eval = [&]() {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& t : inputs) {
      vars.push_back(tape.constant(t));
    }
    return fn(tape, vars).value().data[0];
  };
  GradCheck r;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k].data[i];
      inputs[k].data[i] = x0 + h;
      const double fp = eval();
      inputs[k].data[i] = x0 - h;
      const double fm = eval();
      inputs[k].data[i] = x0;
      const double num = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      const double rel =
          std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      ++r.checked;
      if (rel > r.max_rel) {
        r.max_rel = rel;
        r.worst = "input " + std::to_string(k) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

inline ad::Tensor random_tensor(Rng& rng, std::vector<int> shape, double scale = 1.0) {
  ad::Tensor t(std::move(shape));
  for (double& v : t.data) {
    v = rng.uniform(-scale, scale);
  }
  return t;
}

} // namespace tptkit::testing
