#include "dkd/numkernel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dkd {
namespace {

void log_softmax_into(std::span<const double> v, Vec& out) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - mx);
  const double lse = mx + std::log(sum);
  out.resize(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = v[k] - lse;
}

void check_pair(std::span<const double> a, std::span<const double> b, const char* who) {
  if (a.empty()) throw InvalidArgument(std::string(who) + ": empty vector");
  if (a.size() != b.size())
    throw InvalidArgument(std::string(who) + ": length mismatch (" + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()) + ")");
}

}  // namespace

Vec softmax(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("softmax: empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  Vec out(v.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    out[k] = std::exp(v[k] - mx);
    sum += out[k];
  }
  for (double& x : out) x /= sum;
  return out;
}

double kd_divergence(std::span<const double> v_s, std::span<const double> v_t) {
  check_pair(v_s, v_t, "kd_divergence");
  Vec ls, lt;
  log_softmax_into(v_s, ls);
  log_softmax_into(v_t, lt);
  double acc = 0.0;
  for (std::size_t k = 0; k < ls.size(); ++k) acc += std::exp(lt[k]) * (lt[k] - ls[k]);
  // Rounding can leave a tiny negative residue for near-identical inputs.
  return std::max(acc, 0.0);
}

Vec kd_gradient(std::span<const double> v_s, std::span<const double> v_t) {
  check_pair(v_s, v_t, "kd_gradient");
  Vec s = softmax(v_s);
  const Vec t = softmax(v_t);
  for (std::size_t k = 0; k < s.size(); ++k) s[k] -= t[k];
  return s;
}

Vec finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_grad: h must be positive");
  Vec probe(x.begin(), x.end());
  Vec g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double x0 = probe[k];
    probe[k] = x0 + h;
    const double fp = f(probe);
    probe[k] = x0 - h;
    const double fm = f(probe);
    probe[k] = x0;
    g[k] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw InvalidArgument("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace dkd
