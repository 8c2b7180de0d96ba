#pragma once

#include <cstdint>
#include <string_view>

#include "dkd/types.hpp"

namespace dkd {

// Batch-level distillation losses over N x C logit batches. Every loss takes
// the student batch first, the teacher batch second, and every gradient is
// with respect to the student batch.

double ikd_loss(const LogitBatch& student, const LogitBatch& teacher);
LogitBatch ikd_grad(const LogitBatch& student, const LogitBatch& teacher);

enum class RkdVariant { inner, euclid, cosine };

RkdVariant parse_rkd_variant(std::string_view name);
std::string_view to_string(RkdVariant v);

// Pairwise relation scores before normalization: inner products, negated
// Euclidean distances, or cosine similarities. The diagonal is included.
Matrix rkd_scores(const LogitBatch& z, RkdVariant variant);

// Row-softmax of rkd_scores. Rows of the result each sum to 1.
Matrix rkd_relation(const LogitBatch& z, RkdVariant variant = RkdVariant::inner);

double rkd_loss(const LogitBatch& student, const LogitBatch& teacher,
                RkdVariant variant = RkdVariant::inner);
LogitBatch rkd_grad(const LogitBatch& student, const LogitBatch& teacher,
                    RkdVariant variant = RkdVariant::inner);

// Per-row terms KD(h_i^s || h_i^t); their mean is rkd_loss.
Vec rkd_row_terms(const LogitBatch& student, const LogitBatch& teacher,
                  RkdVariant variant = RkdVariant::inner);

struct Displacement {
  std::size_t from;  // pre-sequence node i
  std::size_t to;    // post-sequence node j
  Vec delta;         // z_i - z_j
};
using DisplacementSet = std::vector<Displacement>;

// All N(N-1) directed displacements in (i, j) lexicographic order.
DisplacementSet dkd_pairs(const LogitBatch& z);

double dkd_loss(const LogitBatch& student, const LogitBatch& teacher);
LogitBatch dkd_grad(const LogitBatch& student, const LogitBatch& teacher);

// N x N matrix of per-pair terms KD(z_i^s - z_j^s || z_i^t - z_j^t); the
// diagonal is zero and unused.
Matrix dkd_pair_terms(const LogitBatch& student, const LogitBatch& teacher);

struct PollutionReport {
  std::size_t dkd_affected = 0;
  std::size_t dkd_total = 0;
  std::size_t rkd_affected_rows = 0;
  std::size_t rkd_total_rows = 0;
  // Counts observed by perturbing the outlier row and diffing per-term losses.
  std::size_t dkd_affected_observed = 0;
  std::size_t rkd_affected_rows_observed = 0;

  bool consistent() const noexcept {
    return dkd_affected == dkd_affected_observed &&
           rkd_affected_rows == rkd_affected_rows_observed;
  }
};

PollutionReport pollution_report(std::size_t n, std::size_t outlier_index,
                                 std::uint64_t seed = 0, std::size_t classes = 4);

}  // namespace dkd
