#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dmp/models.hpp"

namespace dmp {

/// Sampler coordinates for a DmpModel.
///
/// Cause effects enter the likelihood only through a softmax, so adding the
/// same amount to every cause of an age row (zeta) or a year row (lambda)
/// is invisible to the data and pinned down by the random-walk prior alone.
/// In the model's own coordinates this produces ridges that a diagonal
/// metric cannot resolve. The basis here rotates each row across causes
/// with an orthonormal Helmert matrix and writes selected rotated series as
/// slope plus sigma-scaled second-difference innovations (non-centered):
/// the cause mean of zeta, every rotated column of lambda, and pi. Period
/// effects are often close to linear, which pushes their sigmas toward zero
/// and turns the centered form into a funnel.
/// The map to the model's unconstrained vector is linear given sigma; its
/// log-Jacobian is (series length - 2) * log sigma per non-centered series.
class SamplingBasis {
 public:
  explicit SamplingBasis(const DmpModel& model) : model_(model) {
    const auto& layout = model.layout();
    const Dims d = model.dims();
    if (model.kind() == ModelKind::AP) {
      add_grid(layout.block("pi").offset, d.years - 1, 1, 1, layout.block("log_sigma_pi").offset);
      add_grid(layout.block("zeta").offset, d.ages - 1, d.causes, 1,
               layout.block("log_sigma_zeta").offset);
      add_grid(layout.block("lambda").offset, d.years - 1, d.causes, d.causes,
               layout.block("log_sigma_lambda").offset);
    } else {
      add_grid(layout.block("zeta").offset, d.ages - 1, d.causes, 1,
               layout.block("log_sigma_zeta").offset);
      theta_offset_ = layout.block("theta").offset;
      theta_helmert_ = helmert(d.causes);
      has_theta_ = true;
    }
  }

  std::size_t dim() const { return model_.dim(); }
  const DmpModel& model() const { return model_; }

  std::vector<double> to_u(std::span<const double> z) const {
    std::vector<double> u(z.begin(), z.end());
    for (const auto& g : grids_) grid_to_u(g, z, u);
    if (has_theta_) {
      const auto C = theta_helmert_.rows();
      const Eigen::VectorXd x =
          theta_helmert_.transpose() * Eigen::Map<const Eigen::VectorXd>(z.data() + theta_offset_, C);
      for (Eigen::Index c = 0; c < C; ++c) u[theta_offset_ + static_cast<std::size_t>(c)] = x[c];
    }
    return u;
  }

  std::vector<double> from_u(std::span<const double> u) const {
    std::vector<double> z(u.begin(), u.end());
    for (const auto& g : grids_) grid_from_u(g, u, z);
    if (has_theta_) {
      const auto C = theta_helmert_.rows();
      const Eigen::VectorXd y =
          theta_helmert_ * Eigen::Map<const Eigen::VectorXd>(u.data() + theta_offset_, C);
      for (Eigen::Index k = 0; k < C; ++k) z[theta_offset_ + static_cast<std::size_t>(k)] = y[k];
    }
    return z;
  }

  /// Log target in sampler coordinates (model log density + log-Jacobian,
  /// dropping constants). Fills grad when non-empty.
  double log_density(std::span<const double> z, std::span<double> grad) const {
    const auto u = to_u(z);
    std::vector<double> gu(grad.empty() ? 0 : u.size());
    double lp = model_.log_density(u, gu);
    for (const auto& g : grids_) lp += jacobian_factor(g) * z[g.log_sigma];
    if (grad.empty()) return lp;

    std::copy(gu.begin(), gu.end(), grad.begin());
    for (const auto& g : grids_) grid_grad(g, z, gu, grad);
    if (has_theta_) {
      const auto C = theta_helmert_.rows();
      const Eigen::VectorXd gy =
          theta_helmert_ * Eigen::Map<const Eigen::VectorXd>(gu.data() + theta_offset_, C);
      for (Eigen::Index k = 0; k < C; ++k) grad[theta_offset_ + static_cast<std::size_t>(k)] = gy[k];
    }
    return lp;
  }

 private:
  struct Grid {
    std::size_t offset;     // block start (u and z share it)
    std::size_t rows;       // free rows (series length - 1)
    std::size_t causes;     // columns, rotated by the Helmert matrix
    std::size_t noncentered;  // leading rotated columns in (slope, innovation) form
    std::size_t log_sigma;  // coordinate of log sigma
    Eigen::MatrixXd helmert;
    Eigen::MatrixXd basis;  // rows x rows: (slope, innovations) -> free series
    Eigen::PartialPivLU<Eigen::MatrixXd> lu;
  };

  static double jacobian_factor(const Grid& g) {
    return static_cast<double>(g.noncentered * (g.rows - 1));
  }

  static Eigen::MatrixXd helmert(std::size_t C) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(C));
    H.row(0).setConstant(1.0 / std::sqrt(static_cast<double>(C)));
    for (std::size_t k = 1; k < C; ++k) {
      const double s = 1.0 / std::sqrt(static_cast<double>(k * (k + 1)));
      for (std::size_t c = 0; c < k; ++c) H(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) = s;
      H(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) = -static_cast<double>(k) * s;
    }
    return H;
  }

  // Centered series of length N = rows + 1 from slope b and innovations e
  // (second differences at positions 2..N-1); returns the first N-1 entries.
  static Eigen::MatrixXd series_basis(std::size_t rows) {
    const auto N = static_cast<Eigen::Index>(rows + 1);
    Eigen::MatrixXd full(N, N - 1);
    for (Eigen::Index i = 0; i < N; ++i) full(i, 0) = static_cast<double>(i) - 0.5 * static_cast<double>(N - 1);
    for (Eigen::Index j = 0; j + 2 < N; ++j) {
      const Eigen::Index i0 = j + 2;
      for (Eigen::Index i = 0; i < N; ++i) full(i, j + 1) = i >= i0 ? static_cast<double>(i - i0 + 1) : 0.0;
      full.col(j + 1).array() -= full.col(j + 1).mean();
    }
    return full.topRows(N - 1);
  }

  void add_grid(std::size_t offset, std::size_t rows, std::size_t causes, std::size_t noncentered,
                std::size_t log_sigma) {
    Grid g{offset, rows, causes, noncentered, log_sigma, helmert(causes), series_basis(rows), {}};
    g.lu.compute(g.basis);
    grids_.push_back(std::move(g));
  }

  // u[offset + c * rows + r] = sum_k H(k, c) y_k(r); z holds the rotated
  // columns y_0..y_{C-1} as consecutive row blocks, the first `noncentered`
  // of them in (slope, innovations / sigma) form.
  void grid_to_u(const Grid& g, std::span<const double> z, std::vector<double>& u) const {
    const auto R = static_cast<Eigen::Index>(g.rows);
    const auto C = static_cast<Eigen::Index>(g.causes);
    const double sigma = std::exp(z[g.log_sigma]);
    Eigen::MatrixXd y(R, C);
    for (Eigen::Index k = 0; k < C; ++k) {
      Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(z.data() + g.offset + static_cast<std::size_t>(k * R), R);
      if (static_cast<std::size_t>(k) < g.noncentered) {
        w.tail(R - 1) *= sigma;
        y.col(k) = g.basis * w;
      } else {
        y.col(k) = w;
      }
    }
    const Eigen::MatrixXd x = y * g.helmert;  // R x C
    for (Eigen::Index c = 0; c < C; ++c)
      for (Eigen::Index r = 0; r < R; ++r) u[g.offset + static_cast<std::size_t>(c * R + r)] = x(r, c);
  }

  void grid_from_u(const Grid& g, std::span<const double> u, std::vector<double>& z) const {
    const auto R = static_cast<Eigen::Index>(g.rows);
    const auto C = static_cast<Eigen::Index>(g.causes);
    Eigen::MatrixXd x(R, C);
    for (Eigen::Index c = 0; c < C; ++c)
      for (Eigen::Index r = 0; r < R; ++r) x(r, c) = u[g.offset + static_cast<std::size_t>(c * R + r)];
    const Eigen::MatrixXd y = x * g.helmert.transpose();
    const double sigma = std::exp(u[g.log_sigma]);
    for (Eigen::Index k = 0; k < C; ++k) {
      Eigen::VectorXd w = y.col(k);
      if (static_cast<std::size_t>(k) < g.noncentered) {
        w = g.lu.solve(w);
        w.tail(R - 1) /= sigma;
      }
      for (Eigen::Index r = 0; r < R; ++r) z[g.offset + static_cast<std::size_t>(k * R + r)] = w[r];
    }
  }

  void grid_grad(const Grid& g, std::span<const double> z, const std::vector<double>& gu,
                 std::span<double> grad) const {
    const auto R = static_cast<Eigen::Index>(g.rows);
    const auto C = static_cast<Eigen::Index>(g.causes);
    Eigen::MatrixXd gx(R, C);
    for (Eigen::Index c = 0; c < C; ++c)
      for (Eigen::Index r = 0; r < R; ++r) gx(r, c) = gu[g.offset + static_cast<std::size_t>(c * R + r)];
    const Eigen::MatrixXd gy = gx * g.helmert.transpose();
    const double sigma = std::exp(z[g.log_sigma]);
    double g_log_sigma = jacobian_factor(g);
    for (Eigen::Index k = 0; k < C; ++k) {
      const std::size_t base = g.offset + static_cast<std::size_t>(k * R);
      if (static_cast<std::size_t>(k) >= g.noncentered) {
        for (Eigen::Index r = 0; r < R; ++r) grad[base + static_cast<std::size_t>(r)] = gy(r, k);
        continue;
      }
      const Eigen::VectorXd gw = g.basis.transpose() * gy.col(k);
      grad[base] = gw[0];
      for (Eigen::Index j = 1; j < R; ++j) {
        grad[base + static_cast<std::size_t>(j)] = sigma * gw[j];
        g_log_sigma += gw[j] * sigma * z[base + static_cast<std::size_t>(j)];
      }
    }
    grad[g.log_sigma] += g_log_sigma;
  }

  const DmpModel& model_;
  std::vector<Grid> grids_;
  Eigen::MatrixXd theta_helmert_;
  std::size_t theta_offset_ = 0;
  bool has_theta_ = false;
};

}  // namespace dmp
