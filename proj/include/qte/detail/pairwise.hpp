#pragma once

#include <Eigen/Dense>
#include <cstddef>

// Pairwise (cascade) summation with a fixed reduction tree. Given the same
// sequence of terms the result is bit-identical regardless of thread count,
// which the estimation contracts require.

namespace qte::detail {

template <class TermFn>
double pairwise_sum(std::size_t lo, std::size_t hi, const TermFn& term) {
  const std::size_t len = hi - lo;
  if (len <= 16) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += term(i);
    return s;
  }
  const std::size_t mid = lo + len / 2;
  return pairwise_sum(lo, mid, term) + pairwise_sum(mid, hi, term);
}

template <class TermFn>
double pairwise_sum(std::size_t n, const TermFn& term) {
  return pairwise_sum(std::size_t{0}, n, term);
}

// Row-vector variant: sums term(i) which must yield an Eigen expression of
// fixed length `width`.
template <class RowFn>
Eigen::VectorXd pairwise_row_sum(std::size_t lo, std::size_t hi,
                                 Eigen::Index width, const RowFn& row) {
  const std::size_t len = hi - lo;
  if (len <= 16) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(width);
    for (std::size_t i = lo; i < hi; ++i) s += row(i);
    return s;
  }
  const std::size_t mid = lo + len / 2;
  return pairwise_row_sum(lo, mid, width, row) +
         pairwise_row_sum(mid, hi, width, row);
}

template <class RowFn>
Eigen::VectorXd pairwise_row_sum(std::size_t n, Eigen::Index width,
                                 const RowFn& row) {
  return pairwise_row_sum(std::size_t{0}, n, width, row);
}

}  // namespace qte::detail
