#include "feeder_envelope/sensitivity.hpp"

namespace feeder_envelope {

SensitivityMatrices build_sensitivities(const FeederModel& model) {
  if (!model.ordered) throw FeederError("build_sensitivities requires an ordered feeder");
  const int n = model.size();
  SensitivityMatrices m;
  m.B = Eigen::MatrixXd::Zero(n + 1, n);
  m.r.resize(n);
  m.x.resize(n);
  m.z2.resize(n);
  for (int k = 1; k <= n; ++k) {
    const Branch& b = model.branches[k - 1];
    if (b.to != k || b.from >= k) throw FeederError("feeder ordering is inconsistent");
    m.B(b.from, k - 1) = 1.0;
    m.B(b.to, k - 1) = 1.0;
    m.r(k - 1) = b.r;
    m.x(k - 1) = b.x;
    m.z2(k - 1) = b.z2();
  }
  m.A = m.B.bottomRows(n) - Eigen::MatrixXd::Identity(n, n);

  // I - A is unit upper triangular; back-substitute column by column.
  const Eigen::MatrixXd ia = Eigen::MatrixXd::Identity(n, n) - m.A;
  m.C = Eigen::MatrixXd::Zero(n, n);
  for (int col = 0; col < n; ++col) {
    for (int row = col; row >= 0; --row) {
      double s = (row == col) ? 1.0 : 0.0;
      for (int k = row + 1; k <= col; ++k) s -= ia(row, k) * m.C(k, col);
      m.C(row, col) = s;
    }
  }

  const Eigen::MatrixXd CA = m.C * m.A;
  m.D_R = CA * m.r.asDiagonal();
  m.D_X = CA * m.x.asDiagonal();
  m.M_p = 2.0 * m.C.transpose() * m.r.asDiagonal() * m.C;
  m.M_q = 2.0 * m.C.transpose() * m.x.asDiagonal() * m.C;
  Eigen::MatrixXd inner = 2.0 * (m.r.asDiagonal() * m.D_R + m.x.asDiagonal() * m.D_X);
  inner.diagonal() += m.z2;
  m.H = m.C.transpose() * inner;
  return m;
}

double det_i_minus_a(const SensitivityMatrices& mats) {
  const int n = mats.size();
  const Eigen::MatrixXd ia = Eigen::MatrixXd::Identity(n, n) - mats.A;
  for (int j = 0; j < n; ++j) {
    for (int i = j + 1; i < n; ++i) {
      if (ia(i, j) != 0.0) throw FeederError("I - A is not upper triangular");
    }
  }
  return ia.diagonal().prod();
}

}  // namespace feeder_envelope
