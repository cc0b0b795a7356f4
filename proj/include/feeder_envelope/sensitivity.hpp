#pragma once

#include <Eigen/Dense>

#include "feeder_envelope/feeder.hpp"

namespace feeder_envelope {

/// Linear operators of the branch-flow model on an ordered feeder with n
/// branches. Row/column k-1 of every n x n matrix refers to node k, which is
/// also the child end of branch k.
///
///   P = C p - D_R l,   Q = C q - D_X l,   V = v0 1 + M_p p + M_q q - H l
struct SensitivityMatrices {
  Eigen::MatrixXd B;   // (n+1) x n node-branch incidence
  Eigen::MatrixXd A;   // A(i,j) = 1 iff node i+1 is the parent of node j+1
  Eigen::MatrixXd C;   // (I - A)^-1, C(i,j) = 1 iff node j+1 is in the subtree of node i+1
  Eigen::MatrixXd D_R;
  Eigen::MatrixXd D_X;
  Eigen::MatrixXd M_p;
  Eigen::MatrixXd M_q;
  Eigen::MatrixXd H;
  Eigen::VectorXd r;   // diagonal of R
  Eigen::VectorXd x;   // diagonal of X
  Eigen::VectorXd z2;  // diagonal of Z^2

  int size() const { return static_cast<int>(C.rows()); }
};

/// Throws FeederError if the model has not been through order_radial.
SensitivityMatrices build_sensitivities(const FeederModel& model);

/// det(I - A) computed from the triangular factor; exactly 1 for an ordered tree.
double det_i_minus_a(const SensitivityMatrices& mats);

}  // namespace feeder_envelope
