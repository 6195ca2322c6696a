#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "defo/numcore/tape.hpp"

namespace defo {

/// Scalar-valued function of one tensor, recorded on the supplied tape.
template <class T>
using scalar_fn = std::function<basic_var<T>(basic_tape<T>&, basic_var<T>)>;

template <class T>
T evaluate_scalar(const scalar_fn<T>& f, const basic_tensor<T>& at) {
  basic_tape<T> tape;
  basic_var<T> out = f(tape, tape.constant_ref(at));
  if (out.size() != 1) throw dimension_error("gradcheck: function is not scalar-valued");
  return out.value()[0];
}

/// Analytic gradient of f at `at` via one reverse sweep.
template <class T>
std::vector<T> analytic_gradient(const scalar_fn<T>& f, const basic_tensor<T>& at) {
  basic_tensor<T> x = at;
  x.requires_grad = true;
  x.grad.clear();
  basic_tape<T> tape;
  basic_var<T> out = f(tape, tape.leaf(x));
  tape.backward(out);
  if (x.grad.empty()) x.grad.assign(x.size(), T{0});
  return x.grad;
}

/// Central-difference gradient, independent of the tape's backward pass.
template <class T>
std::vector<T> numeric_gradient(const scalar_fn<T>& f, const basic_tensor<T>& at, T step) {
  basic_tensor<T> x = at;
  x.requires_grad = false;
  std::vector<T> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = x[i];
    x[i] = orig + step;
    const T up = evaluate_scalar(f, x);
    x[i] = orig - step;
    const T down = evaluate_scalar(f, x);
    x[i] = orig;
    g[i] = (up - down) / (T(2) * step);
  }
  return g;
}

/// max_i |analytic_i − numeric_i| / max(1, |numeric_i|).
template <class T>
T gradcheck(const scalar_fn<T>& f, const basic_tensor<T>& at, T step = T(1e-5)) {
  const auto a = analytic_gradient(f, at);
  const auto n = numeric_gradient(f, at, step);
  T worst{0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - n[i]) / std::max(T(1), std::abs(n[i])));
  }
  return worst;
}

}  // namespace defo
