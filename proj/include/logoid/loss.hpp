#pragma once

#include "logoid/common.hpp"
#include "logoid/dataio.hpp"

#include <array>
#include <span>
#include <vector>

namespace logoid {

/// Positive and negative index sets for a batch.
///
/// cross_view(i, p): label(i) == label(p), diagonal included.
/// same_view(i, p):  label(i) == label(p) and i != p (unless self pairs are
///                   included, then equal to cross_view).
/// negatives(i, j):  label(i) != label(j).
struct PositiveMask {
  BoolMatrix cross_view;
  BoolMatrix same_view;
  BoolMatrix negatives;
};

/// Requires n >= 2 and at least one negative for every anchor (two or more
/// brands); throws std::invalid_argument otherwise.
PositiveMask positive_sets(std::span<const BrandId> labels, bool include_self_in_same_view = false);

struct LossConfig {
  double tau = 0.07;
  bool include_self_in_same_view = false;
  /// false: denominator sums over negatives only. true: it also sums over
  /// the anchor's positives, the usual supervised-contrastive form.
  bool denominator_includes_positives = false;
  /// Divide each directed term by its number of (anchor, positive) pairs.
  bool mean_over_positives = false;

  void validate() const;
};

/// Two-view projected embeddings. Rows of za and zb are unit-norm.
struct EmbeddingPair {
  MatrixD za;
  MatrixD zb;
  std::vector<BrandId> labels;

  /// Throws std::invalid_argument on shape mismatch or a row whose norm is
  /// not 1 within tol.
  void validate(double tol = 1e-6) const;
};

/// One summand -log(exp(s_ip / tau) / sum_{j in D(i)} exp(s_ij / tau)).
struct LossTerm {
  int term = 0;  // 0: l(a,b), 1: l(b,a), 2: l(a,a), 3: l(b,b)
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t denominator_size = 0;
  double value = 0.0;
};

/// l(Z_u, Z_v) evaluated from logits = Z_u Z_v^T / tau.
///
/// Sums over anchors i and positives p of
///   logsumexp_{j in D(i)} logits(i, j) - logits(i, p)
/// with a max shift inside the logsumexp. Anchors without positives
/// contribute 0. grad_logits, if given, receives dValue/dLogits.
/// Throws logoid::Error for non-finite logits or an anchor that has
/// positives but an empty denominator set.
double directed_loss_from_logits(const MatrixD& logits, const BoolMatrix& positives,
                                 const BoolMatrix& denominator, MatrixD* grad_logits = nullptr,
                                 std::vector<LossTerm>* terms = nullptr, int term_id = 0);

/// l(Z_u, Z_v) with optional gradients w.r.t. both inputs. When zu and zv
/// are the same matrix the caller adds the two gradients.
double directed_loss(const MatrixD& zu, const MatrixD& zv, const BoolMatrix& positives,
                     const BoolMatrix& denominator, double tau, MatrixD* grad_u = nullptr,
                     MatrixD* grad_v = nullptr);

struct LossResult {
  double value = 0.0;
  /// l(a,b), l(b,a), l(a,a), l(b,b)
  std::array<double, 4> directed{};
  MatrixD grad_a;  // dL/dZ_a
  MatrixD grad_b;  // dL/dZ_b
  std::vector<LossTerm> terms;
};

/// L = l(a,b) + l(b,a) + l(a,a) + l(b,b): cross-view mask for the first
/// two, same-view mask for the last two.
LossResult total_loss(const EmbeddingPair& pair, const LossConfig& config,
                      bool with_gradient = true, bool with_terms = false);

/// Same objective from unnormalized head outputs: rows are normalized
/// first and gradients are returned w.r.t. the unnormalized inputs.
LossResult total_loss_unnormalized(const MatrixD& ya, const MatrixD& yb,
                                   std::span<const BrandId> labels, const LossConfig& config);

/// Backward of z = y / ||y|| row-wise: (g - z (z . g)) / ||y||.
MatrixD normalize_rows_backward(const MatrixD& y, const MatrixD& grad_z);

}  // namespace logoid
