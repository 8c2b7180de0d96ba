#include "dkd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dkd/numkernel.hpp"
#include "dkd/rng.hpp"

namespace dkd {
namespace {

void check_same_shape(const LogitBatch& s, const LogitBatch& t, const char* who) {
  if (s.rows() == 0 || s.cols() == 0)
    throw InvalidArgument(std::string(who) + ": empty batch");
  if (s.rows() != t.rows() || s.cols() != t.cols())
    throw InvalidArgument(std::string(who) + ": shape mismatch (" + std::to_string(s.rows()) +
                          "x" + std::to_string(s.cols()) + " vs " + std::to_string(t.rows()) +
                          "x" + std::to_string(t.cols()) + ")");
}

void check_pairs(const LogitBatch& z, const char* who) {
  if (z.rows() < 2) throw InvalidArgument(std::string(who) + ": need at least 2 rows");
}

// Row-wise KL(softmax(t_r) || softmax(s_r)) for every row r.
Vec rowwise_kd(const Matrix& s, const Matrix& t) {
  Vec out(s.rows());
  for (std::size_t r = 0; r < s.rows(); ++r) out[r] = kd_divergence(s.row(r), t.row(r));
  return out;
}

// Stacks z_i - z_j for all i != j in lexicographic order.
Matrix displacement_matrix(const LogitBatch& z) {
  const std::size_t n = z.rows(), c = z.cols();
  Matrix d(n * (n - 1), c);
  std::size_t r = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      auto out = d.row(r++);
      for (std::size_t k = 0; k < c; ++k) out[k] = z(i, k) - z(j, k);
    }
  return d;
}

double mean(const Vec& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

double norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace

double ikd_loss(const LogitBatch& student, const LogitBatch& teacher) {
  check_same_shape(student, teacher, "ikd_loss");
  return mean(rowwise_kd(student, teacher));
}

LogitBatch ikd_grad(const LogitBatch& student, const LogitBatch& teacher) {
  check_same_shape(student, teacher, "ikd_grad");
  const double scale = 1.0 / static_cast<double>(student.rows());
  LogitBatch g(student.rows(), student.cols());
  for (std::size_t i = 0; i < student.rows(); ++i) {
    const Vec gi = kd_gradient(student.row(i), teacher.row(i));
    for (std::size_t k = 0; k < gi.size(); ++k) g(i, k) = scale * gi[k];
  }
  return g;
}

RkdVariant parse_rkd_variant(std::string_view name) {
  if (name == "inner") return RkdVariant::inner;
  if (name == "euclid") return RkdVariant::euclid;
  if (name == "cosine") return RkdVariant::cosine;
  throw InvalidArgument("unknown RKD variant '" + std::string(name) + "'");
}

std::string_view to_string(RkdVariant v) {
  switch (v) {
    case RkdVariant::inner: return "inner";
    case RkdVariant::euclid: return "euclid";
    case RkdVariant::cosine: return "cosine";
  }
  return "inner";
}

Matrix rkd_scores(const LogitBatch& z, RkdVariant variant) {
  check_pairs(z, "rkd_relation");
  const std::size_t n = z.rows(), c = z.cols();
  Matrix r(n, n);
  Vec norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = norm(z.row(i));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double v = 0.0;
      switch (variant) {
        case RkdVariant::inner:
          for (std::size_t k = 0; k < c; ++k) v += z(i, k) * z(j, k);
          break;
        case RkdVariant::euclid:
          for (std::size_t k = 0; k < c; ++k) v += (z(i, k) - z(j, k)) * (z(i, k) - z(j, k));
          v = -std::sqrt(v);
          break;
        case RkdVariant::cosine:
          if (i == j) {
            v = 1.0;
          } else if (norms[i] > 0.0 && norms[j] > 0.0) {
            for (std::size_t k = 0; k < c; ++k) v += z(i, k) * z(j, k);
            v /= norms[i] * norms[j];
          }
          break;
      }
      r(i, j) = v;
      r(j, i) = v;
    }
  }
  return r;
}

Matrix rkd_relation(const LogitBatch& z, RkdVariant variant) {
  Matrix r = rkd_scores(z, variant);
  for (std::size_t i = 0; i < r.rows(); ++i) {
    const Vec h = softmax(r.row(i));
    std::copy(h.begin(), h.end(), r.row(i).begin());
  }
  return r;
}

Vec rkd_row_terms(const LogitBatch& student, const LogitBatch& teacher, RkdVariant variant) {
  check_same_shape(student, teacher, "rkd_loss");
  check_pairs(student, "rkd_loss");
  return rowwise_kd(rkd_scores(student, variant), rkd_scores(teacher, variant));
}

double rkd_loss(const LogitBatch& student, const LogitBatch& teacher, RkdVariant variant) {
  return mean(rkd_row_terms(student, teacher, variant));
}

LogitBatch rkd_grad(const LogitBatch& student, const LogitBatch& teacher, RkdVariant variant) {
  check_same_shape(student, teacher, "rkd_grad");
  check_pairs(student, "rkd_grad");
  const std::size_t n = student.rows(), c = student.cols();
  const Matrix hs = rkd_relation(student, variant);
  const Matrix ht = rkd_relation(teacher, variant);
  // G = dL/dR^s where R^s are the pre-softmax relation scores.
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g(i, j) = (hs(i, j) - ht(i, j)) / static_cast<double>(n);

  LogitBatch dz(n, c);
  switch (variant) {
    case RkdVariant::inner:
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double a = g(i, j) + g(j, i);
          for (std::size_t k = 0; k < c; ++k) dz(i, k) += a * student(j, k);
        }
      break;
    case RkdVariant::euclid:
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
          double dist = 0.0;
          for (std::size_t k = 0; k < c; ++k)
            dist += (student(i, k) - student(j, k)) * (student(i, k) - student(j, k));
          dist = std::sqrt(dist);
          if (dist == 0.0) continue;  // non-differentiable; subgradient 0
          const double a = (g(i, j) + g(j, i)) / dist;
          for (std::size_t k = 0; k < c; ++k) {
            const double u = student(i, k) - student(j, k);
            dz(i, k) -= a * u;
            dz(j, k) += a * u;
          }
        }
      break;
    case RkdVariant::cosine: {
      Vec norms(n);
      for (std::size_t i = 0; i < n; ++i) norms[i] = norm(student.row(i));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
          if (norms[i] == 0.0 || norms[j] == 0.0) continue;
          double dot = 0.0;
          for (std::size_t k = 0; k < c; ++k) dot += student(i, k) * student(j, k);
          const double nn = norms[i] * norms[j];
          const double cosv = dot / nn;
          const double a = g(i, j) + g(j, i);
          for (std::size_t k = 0; k < c; ++k) {
            dz(i, k) += a * (student(j, k) / nn - cosv * student(i, k) / (norms[i] * norms[i]));
            dz(j, k) += a * (student(i, k) / nn - cosv * student(j, k) / (norms[j] * norms[j]));
          }
        }
      break;
    }
  }
  return dz;
}

DisplacementSet dkd_pairs(const LogitBatch& z) {
  check_pairs(z, "dkd_pairs");
  const std::size_t n = z.rows();
  const Matrix d = displacement_matrix(z);
  DisplacementSet out;
  out.reserve(n * (n - 1));
  std::size_t r = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      auto row = d.row(r++);
      out.push_back({i, j, Vec(row.begin(), row.end())});
    }
  return out;
}

Matrix dkd_pair_terms(const LogitBatch& student, const LogitBatch& teacher) {
  check_same_shape(student, teacher, "dkd_loss");
  check_pairs(student, "dkd_loss");
  const std::size_t n = student.rows();
  const Vec terms = rowwise_kd(displacement_matrix(student), displacement_matrix(teacher));
  Matrix out(n, n);
  std::size_t r = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) out(i, j) = terms[r++];
  return out;
}

double dkd_loss(const LogitBatch& student, const LogitBatch& teacher) {
  check_same_shape(student, teacher, "dkd_loss");
  check_pairs(student, "dkd_loss");
  const std::size_t n = student.rows();
  const Vec terms = rowwise_kd(displacement_matrix(student), displacement_matrix(teacher));
  // Inner mean over j != i, then outer mean over i.
  double outer = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double inner = 0.0;
    for (std::size_t j = 0; j + 1 < n; ++j) inner += terms[i * (n - 1) + j];
    outer += inner / static_cast<double>(n - 1);
  }
  return outer / static_cast<double>(n);
}

LogitBatch dkd_grad(const LogitBatch& student, const LogitBatch& teacher) {
  check_same_shape(student, teacher, "dkd_grad");
  check_pairs(student, "dkd_grad");
  const std::size_t n = student.rows(), c = student.cols();
  const Matrix ds = displacement_matrix(student);
  const Matrix dt = displacement_matrix(teacher);
  const double scale = 1.0 / static_cast<double>(n * (n - 1));
  LogitBatch g(n, c);
  std::size_t r = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const Vec gp = kd_gradient(ds.row(r), dt.row(r));
      ++r;
      for (std::size_t k = 0; k < c; ++k) {
        g(i, k) += scale * gp[k];  // i as pre-sequence node
        g(j, k) -= scale * gp[k];  // j as post-sequence node
      }
    }
  return g;
}

PollutionReport pollution_report(std::size_t n, std::size_t outlier_index, std::uint64_t seed,
                                 std::size_t classes) {
  if (n < 2) throw InvalidArgument("pollution_report: need N >= 2");
  if (outlier_index >= n) throw InvalidArgument("pollution_report: outlier index out of range");
  // A single class makes every softmax constant, so nothing could be observed.
  if (classes < 2) throw InvalidArgument("pollution_report: need at least two classes");

  PollutionReport rep;
  rep.dkd_total = n * (n - 1);
  rep.dkd_affected = 2 * (n - 1);
  rep.rkd_total_rows = n;
  rep.rkd_affected_rows = n;

  Rng rng(seed);
  LogitBatch student(n, classes), teacher(n, classes);
  for (double& x : student.data()) x = rng.normal();
  for (double& x : teacher.data()) x = rng.normal();
  LogitBatch polluted = student;
  for (std::size_t k = 0; k < classes; ++k) polluted(outlier_index, k) += 3.0 + rng.normal();

  const Matrix before = dkd_pair_terms(student, teacher);
  const Matrix after = dkd_pair_terms(polluted, teacher);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && before(i, j) != after(i, j)) ++rep.dkd_affected_observed;

  const Vec rows_before = rkd_row_terms(student, teacher);
  const Vec rows_after = rkd_row_terms(polluted, teacher);
  for (std::size_t i = 0; i < n; ++i)
    if (rows_before[i] != rows_after[i]) ++rep.rkd_affected_rows_observed;
  return rep;
}

}  // namespace dkd
