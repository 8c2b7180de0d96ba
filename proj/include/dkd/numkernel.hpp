#pragma once

#include <functional>
#include <span>

#include "dkd/types.hpp"

namespace dkd {

// Max-subtracted softmax. Throws InvalidArgument on an empty input.
Vec softmax(std::span<const double> v);

// KL(softmax(v_t) || softmax(v_s)) computed from log-softmax, so it is
// nonnegative and exactly zero when the two distributions coincide.
double kd_divergence(std::span<const double> v_s, std::span<const double> v_t);

// d kd_divergence / d v_s = softmax(v_s) - softmax(v_t).
Vec kd_gradient(std::span<const double> v_s, std::span<const double> v_t);

using ScalarFn = std::function<double(std::span<const double>)>;

// Central differences (f(x + h e_k) - f(x - h e_k)) / 2h.
Vec finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h = 1e-6);

// ||a - b|| / max(||a||, ||b||, floor); the metric every gradient check uses.
double relative_error(std::span<const double> a, std::span<const double> b,
                      double floor = 1e-8);

}  // namespace dkd
