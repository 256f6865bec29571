#pragma once

// Slow, obviously-correct reference implementations used to check the
// library. None of these call into the code they check.

#include "logoid/common.hpp"
#include "logoid/dataio.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace oracle {

struct LossOptions {
  double tau = 0.07;
  bool include_self_in_same_view = false;
  bool denominator_includes_positives = false;
  bool mean_over_positives = false;
};

/// l(a,b) + l(b,a) + l(a,a) + l(b,b) by explicit loops over anchors,
/// positives and denominator members, with plain exp/log in long double.
/// Rows need not be normalized.
double naive_total_loss(const logoid::MatrixD& za, const logoid::MatrixD& zb,
                        std::span<const logoid::BrandId> labels, const LossOptions& options);

/// One directed term on its own (u anchors, v candidates; same_view marks
/// l(a,a) / l(b,b)).
double naive_directed_loss(const logoid::MatrixD& zu, const logoid::MatrixD& zv,
                           std::span<const logoid::BrandId> labels, bool same_view,
                           const LossOptions& options);

/// Index order of a brute-force ranking: cosine as a double sum over
/// columns in order, then a stable sort by descending score, so equal
/// scores keep ascending index order.
std::vector<std::size_t> brute_force_order(std::span<const float> query,
                                           const logoid::MatrixF& rows);
std::vector<double> brute_force_scores(std::span<const float> query, const logoid::MatrixF& rows);

/// Mann-Whitney U / (P * N): fraction of (positive, negative) pairs where
/// the positive scores higher, ties counting one half.
double mann_whitney_auc(std::span<const double> scores, std::span<const bool> positive);

/// Wagner-Fischer edit distance over decoded UTF-8 code points.
std::size_t dp_levenshtein(std::string_view a, std::string_view b);

/// Central finite-difference gradient of f at x (double precision).
template <typename F>
logoid::MatrixD finite_difference(F&& f, logoid::MatrixD x, double eps) {
  logoid::MatrixD g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double saved = x(i, j);
      x(i, j) = saved + eps;
      const double plus = f(x);
      x(i, j) = saved - eps;
      const double minus = f(x);
      x(i, j) = saved;
      g(i, j) = (plus - minus) / (2.0 * eps);
    }
  }
  return g;
}

/// max_ij |a - b| / max(1, |a|, |b|).
double max_relative_error(const logoid::MatrixD& a, const logoid::MatrixD& b);

}  // namespace oracle
