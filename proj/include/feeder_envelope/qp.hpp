#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace feeder_envelope {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Bounds at or beyond this magnitude are treated as infinite.
inline constexpr double kQpInfinity = 1e30;

class QpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// minimize 1/2 x'Gx + c'x  subject to  lb <= Mx <= ub
struct QpProblem {
  SparseMatrix G;
  Eigen::VectorXd c;
  SparseMatrix M;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;
  std::vector<std::string> var_names;
  std::vector<std::string> row_names;

  int num_vars() const { return static_cast<int>(c.size()); }
  int num_rows() const { return static_cast<int>(lb.size()); }

  /// Checks dimensions, bound ordering, symmetry and positive semidefiniteness of G.
  void validate() const;
};

enum class QpStatus { optimal, primal_infeasible, dual_infeasible, max_iterations };

std::string to_string(QpStatus s);

struct QpSettings {
  double eps_p = 1e-7;
  double eps_d = 1e-7;
  int max_iter = 100000;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  int check_every = 25;
  bool adaptive_rho = true;
  bool polish = true;
  int scaling_iters = 10;
  double eps_infeasible = 1e-7;
  int fallback_after = 2500;  // ADMM iterations before the interior-point fallback runs
};

struct QpSolution {
  Eigen::VectorXd x;
  /// Row multipliers: y_i > 0 on rows held at ub, y_i < 0 on rows held at lb,
  /// so that Gx + c + M'y = 0 at optimality.
  Eigen::VectorXd y;
  QpStatus status = QpStatus::max_iterations;
  double primal_res = 0.0;
  double dual_res = 0.0;
  double objective = 0.0;
  int iterations = 0;
  bool polished = false;
  /// For primal infeasibility: y with M'y ~ 0 and lb'y+ - ub'y- > 0.
  /// For dual infeasibility: a direction d with Gd ~ 0, c'd < 0, Md within the recession cone.
  Eigen::VectorXd certificate;
};

QpSolution solve_qp(const QpProblem& prob, const QpSettings& settings = {});

/// Runs the solver and returns a Farkas certificate if the constraints are
/// infeasible, nullopt if a feasible point was found. Throws QpError if the
/// solver hit its iteration limit without deciding.
std::optional<Eigen::VectorXd> detect_infeasible(const QpProblem& prob, const QpSettings& settings = {});

/// Unscaled KKT residuals of a candidate pair.
struct KktResiduals {
  double primal = 0.0;         // || Mx - proj_[lb,ub](Mx) ||_inf
  double dual = 0.0;           // || Gx + c + M'y ||_inf
  double complementarity = 0.0;  // worst multiplier on the wrong side or on an inactive row
};

KktResiduals kkt_residuals(const QpProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// Plain-text dump: dimensions, G and M as (row col value) triplets, c, bounds, names.
std::string dump_qp(const QpProblem& prob);

}  // namespace feeder_envelope
