#include "logoid/loss.hpp"

#include <cmath>
#include <fmt/format.h>
#include <limits>

namespace logoid {

PositiveMask positive_sets(std::span<const BrandId> labels, bool include_self_in_same_view) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  if (n < 2) throw std::invalid_argument("positive_sets: batch needs at least 2 samples");
  PositiveMask m;
  m.cross_view.resize(n, n);
  m.same_view.resize(n, n);
  m.negatives.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    bool has_negative = false;
    for (Eigen::Index j = 0; j < n; ++j) {
      const bool same = labels[i] == labels[j];
      m.cross_view(i, j) = same;
      m.same_view(i, j) = same && (i != j || include_self_in_same_view);
      m.negatives(i, j) = !same;
      has_negative = has_negative || !same;
    }
    if (!has_negative) {
      throw std::invalid_argument(fmt::format(
          "positive_sets: anchor {} (brand '{}') has no negatives; batch needs >= 2 brands", i,
          labels[i].str()));
    }
  }
  return m;
}

void LossConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::invalid_argument(fmt::format("loss: tau must be positive, got {}", tau));
  }
}

void EmbeddingPair::validate(double tol) const {
  const auto n = static_cast<Eigen::Index>(labels.size());
  if (za.rows() != n || zb.rows() != n || za.cols() != zb.cols()) {
    throw std::invalid_argument(fmt::format(
        "embedding pair: shapes {}x{} and {}x{} with {} labels", za.rows(), za.cols(), zb.rows(),
        zb.cols(), labels.size()));
  }
  for (const MatrixD* z : {&za, &zb}) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double norm = z->row(i).norm();
      if (!(std::abs(norm - 1.0) <= tol)) {
        throw std::invalid_argument(
            fmt::format("embedding pair: row {} has norm {:.9f}, expected 1", i, norm));
      }
    }
  }
}

double directed_loss_from_logits(const MatrixD& logits, const BoolMatrix& positives,
                                 const BoolMatrix& denominator, MatrixD* grad_logits,
                                 std::vector<LossTerm>* terms, int term_id) {
  const Eigen::Index n = logits.rows();
  if (logits.cols() != n || positives.rows() != n || positives.cols() != n ||
      denominator.rows() != n || denominator.cols() != n) {
    throw std::invalid_argument("directed loss: logits and masks must be n x n");
  }
  if (!logits.allFinite()) throw Error("directed loss: non-finite similarity");
  if (grad_logits) grad_logits->setZero(n, n);

  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto num_pos = positives.row(i).count();
    if (num_pos == 0) continue;
    double shift = -std::numeric_limits<double>::infinity();
    Eigen::Index num_den = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (denominator(i, j)) {
        shift = std::max(shift, logits(i, j));
        ++num_den;
      }
    }
    if (num_den == 0) {
      throw Error(fmt::format("directed loss: anchor {} has positives but no negatives", i));
    }
    double sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (denominator(i, j)) sum += std::exp(logits(i, j) - shift);
    }
    const double lse = shift + std::log(sum);

    for (Eigen::Index p = 0; p < n; ++p) {
      if (!positives(i, p)) continue;
      const double value = lse - logits(i, p);
      total += value;
      if (terms) {
        terms->push_back({term_id, static_cast<std::size_t>(i), static_cast<std::size_t>(p),
                          static_cast<std::size_t>(num_den), value});
      }
    }
    if (grad_logits) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (denominator(i, j)) {
          (*grad_logits)(i, j) += static_cast<double>(num_pos) * std::exp(logits(i, j) - lse);
        }
        if (positives(i, j)) (*grad_logits)(i, j) -= 1.0;
      }
    }
  }
  return total;
}

double directed_loss(const MatrixD& zu, const MatrixD& zv, const BoolMatrix& positives,
                     const BoolMatrix& denominator, double tau, MatrixD* grad_u,
                     MatrixD* grad_v) {
  if (!(tau > 0.0)) throw std::invalid_argument("directed loss: tau must be positive");
  if (zu.rows() != zv.rows() || zu.cols() != zv.cols()) {
    throw std::invalid_argument("directed loss: Z_u and Z_v shapes differ");
  }
  if (!zu.allFinite() || !zv.allFinite()) throw Error("directed loss: non-finite embedding");
  const MatrixD logits = (zu * zv.transpose()) / tau;
  MatrixD g;
  const bool want_grad = grad_u != nullptr || grad_v != nullptr;
  const double value =
      directed_loss_from_logits(logits, positives, denominator, want_grad ? &g : nullptr);
  if (grad_u) *grad_u = (g * zv) / tau;
  if (grad_v) *grad_v = (g.transpose() * zu) / tau;
  return value;
}

LossResult total_loss(const EmbeddingPair& pair, const LossConfig& config, bool with_gradient,
                      bool with_terms) {
  config.validate();
  pair.validate();
  const PositiveMask masks = positive_sets(pair.labels, config.include_self_in_same_view);
  const BoolMatrix cross_den = config.denominator_includes_positives
                                   ? BoolMatrix((masks.negatives.array() || masks.cross_view.array()).matrix())
                                   : masks.negatives;
  const BoolMatrix same_den = config.denominator_includes_positives
                                  ? BoolMatrix((masks.negatives.array() || masks.same_view.array()).matrix())
                                  : masks.negatives;

  struct Spec {
    const MatrixD* u;
    const MatrixD* v;
    const BoolMatrix* pos;
    const BoolMatrix* den;
    int grad_u;  // 0 -> a, 1 -> b
    int grad_v;
  };
  const std::array<Spec, 4> specs{{
      {&pair.za, &pair.zb, &masks.cross_view, &cross_den, 0, 1},
      {&pair.zb, &pair.za, &masks.cross_view, &cross_den, 1, 0},
      {&pair.za, &pair.za, &masks.same_view, &same_den, 0, 0},
      {&pair.zb, &pair.zb, &masks.same_view, &same_den, 1, 1},
  }};

  LossResult result;
  if (with_gradient) {
    result.grad_a = MatrixD::Zero(pair.za.rows(), pair.za.cols());
    result.grad_b = MatrixD::Zero(pair.zb.rows(), pair.zb.cols());
  }
  for (int t = 0; t < 4; ++t) {
    const Spec& s = specs[t];
    if (!s.u->allFinite()) throw Error("total loss: non-finite embedding");
    const MatrixD logits = (*s.u * s.v->transpose()) / config.tau;
    MatrixD g;
    double value = directed_loss_from_logits(logits, *s.pos, *s.den, with_gradient ? &g : nullptr,
                                             with_terms ? &result.terms : nullptr, t);
    if (config.mean_over_positives) {
      const auto pairs = s.pos->count();
      if (pairs > 0) {
        value /= static_cast<double>(pairs);
        if (with_gradient) g /= static_cast<double>(pairs);
      }
    }
    result.directed[t] = value;
    result.value += value;
    if (with_gradient) {
      MatrixD& gu = s.grad_u == 0 ? result.grad_a : result.grad_b;
      gu += (g * *s.v) / config.tau;
      MatrixD& gv = s.grad_v == 0 ? result.grad_a : result.grad_b;
      gv += (g.transpose() * *s.u) / config.tau;
    }
  }
  return result;
}

MatrixD normalize_rows_backward(const MatrixD& y, const MatrixD& grad_z) {
  MatrixD out(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const double norm = y.row(i).norm();
    const auto z = y.row(i) / norm;
    out.row(i) = (grad_z.row(i) - z * z.dot(grad_z.row(i))) / norm;
  }
  return out;
}

LossResult total_loss_unnormalized(const MatrixD& ya, const MatrixD& yb,
                                   std::span<const BrandId> labels, const LossConfig& config) {
  EmbeddingPair pair{ya, yb, {labels.begin(), labels.end()}};
  for (MatrixD* z : {&pair.za, &pair.zb}) {
    for (Eigen::Index i = 0; i < z->rows(); ++i) {
      const double norm = z->row(i).norm();
      if (!(norm >= 1e-12)) throw Error(fmt::format("row {} has near-zero norm", i));
      z->row(i) /= norm;
    }
  }
  LossResult r = total_loss(pair, config, true);
  r.grad_a = normalize_rows_backward(ya, r.grad_a);
  r.grad_b = normalize_rows_backward(yb, r.grad_b);
  return r;
}

}  // namespace logoid
