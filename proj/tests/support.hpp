#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include <Eigen/Dense>

#include "feeder_envelope/feeder.hpp"
#include "feeder_envelope/io.hpp"
#include "feeder_envelope/loadflow.hpp"
#include "feeder_envelope/opf.hpp"
#include "feeder_envelope/qp.hpp"

namespace fe_test {

using namespace feeder_envelope;

inline std::string data_path(const std::string& rel) { return std::string(FE_DATA_DIR) + "/" + rel; }

inline FeederModel feeder13() { return load_ordered_feeder_file(data_path("feeder13.json")); }

inline Scenario scenario13(const FeederModel& model, const std::string& name) {
  return load_scenario_file(data_path("scenarios/" + name), model);
}

struct BranchSpec {
  int from, to;
  double r, x;
  double lmax = 100.0;
  double pbox = 100.0;
};

/// Feeder JSON text from plain branch data; node ids are taken from the branches.
inline std::string feeder_json(double v0, const std::vector<BranchSpec>& branches, double vmin = 0.81,
                               double vmax = 1.21) {
  nlohmann::json doc;
  doc["base"]["v0_pu2"] = v0;
  std::vector<int> ids{0};
  for (const auto& b : branches) {
    ids.push_back(b.from);
    ids.push_back(b.to);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  doc["nodes"] = nlohmann::json::array();
  for (int id : ids) doc["nodes"].push_back({{"id", id}, {"vmin_pu2", vmin}, {"vmax_pu2", vmax}});
  doc["branches"] = nlohmann::json::array();
  for (const auto& b : branches) {
    doc["branches"].push_back({{"from", b.from},
                               {"to", b.to},
                               {"r_pu", b.r},
                               {"x_pu", b.x},
                               {"lmax_pu2", b.lmax},
                               {"pmin_pu", -b.pbox},
                               {"pmax_pu", b.pbox},
                               {"qmin_pu", -b.pbox},
                               {"qmax_pu", b.pbox}});
  }
  return doc.dump();
}

inline FeederModel two_node(double v0 = 1.0, double r = 0.01, double x = 0.02, double vmin = 0.81,
                            double vmax = 1.21) {
  return order_radial(load_feeder(feeder_json(v0, {{0, 1, r, x}}, vmin, vmax)));
}

/// Random tree on n+1 nodes with shuffled labels and random branch orientation.
inline std::vector<BranchSpec> random_tree(int n, std::mt19937_64& rng, double rmax = 0.02) {
  std::uniform_real_distribution<double> imp(0.001, rmax);
  std::vector<int> label(n + 1);
  std::iota(label.begin(), label.end(), 0);
  std::shuffle(label.begin() + 1, label.end(), rng);
  std::vector<BranchSpec> out;
  std::bernoulli_distribution flip(0.3);
  for (int k = 1; k <= n; ++k) {
    std::uniform_int_distribution<int> pick(std::max(0, k - 4), k - 1);
    int parent = label[pick(rng)];
    int child = label[k];
    BranchSpec b{parent, child, imp(rng), imp(rng)};
    if (flip(rng)) std::swap(b.from, b.to);
    out.push_back(b);
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

inline FeederModel random_feeder(int n, std::mt19937_64& rng, double rmax = 0.02) {
  std::uniform_real_distribution<double> v0(0.95, 1.1);
  return order_radial(load_feeder(feeder_json(v0(rng), random_tree(n, rng, rmax))));
}

/// Loads (negative injections) sized so that sum|p| * max r stays below `budget`.
inline InjectionProfile random_load(const FeederModel& model, std::mt19937_64& rng, double budget) {
  const int n = model.size();
  double rmax = 0.0;
  for (const auto& b : model.branches) rmax = std::max(rmax, b.r);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  InjectionProfile inj = InjectionProfile::zero(n);
  for (int k = 0; k < n; ++k) {
    inj.p(k) = -u(rng);
    inj.q(k) = -0.5 * u(rng);
  }
  const double scale = budget / (inj.p.cwiseAbs().sum() * rmax);
  inj.p *= scale;
  inj.q *= scale;
  return inj;
}

// ---------------------------------------------------------------- oracles

/// Exact integer determinant by fraction-free (Bareiss) elimination.
inline long long bareiss_det(std::vector<std::vector<long long>> a) {
  const int n = static_cast<int>(a.size());
  long long sign = 1, prev = 1;
  for (int k = 0; k < n - 1; ++k) {
    if (a[k][k] == 0) {
      int swap_row = -1;
      for (int i = k + 1; i < n; ++i) {
        if (a[i][k] != 0) swap_row = i;
      }
      if (swap_row < 0) return 0;
      std::swap(a[k], a[swap_row]);
      sign = -sign;
    }
    for (int i = k + 1; i < n; ++i) {
      for (int j = k + 1; j < n; ++j) {
        a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
      }
    }
    prev = a[k][k];
  }
  return sign * a[n - 1][n - 1];
}

/// S(i,j) = 1 iff node j+1 lies in the subtree of node i+1, by depth-first search on the ordered model.
inline Eigen::MatrixXd subtree_indicator(const FeederModel& model) {
  const int n = model.size();
  std::vector<std::vector<int>> children(n + 1);
  for (const auto& b : model.branches) children[b.from].push_back(b.to);
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
  for (int root = 1; root <= n; ++root) {
    std::vector<int> stack{root};
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      S(root - 1, v - 1) = 1.0;
      for (int c : children[v]) stack.push_back(c);
    }
  }
  return S;
}

/// Two-node feeder: V1 solves V = v0 + 2(r p + x q) - z2 (p^2 + q^2) / V.
/// Bisection on the upper (physical) root.
inline double two_node_voltage(double v0, double r, double x, double p, double q) {
  const double z2 = r * r + x * x;
  const double s2 = p * p + q * q;
  auto f = [&](double V) { return V - v0 - 2.0 * (r * p + x * q) + z2 * s2 / V; };
  // f is increasing above sqrt(z2 s2); the physical root sits above the vertex.
  double lo = std::sqrt(z2 * s2), hi = 4.0 * v0 + 10.0;
  if (lo <= 0.0) lo = 1e-12;
  for (int i = 0; i < 300; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) > 0.0) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Hessian of (P^2 + Q^2)/v in (P, Q, v), written out directly.
inline Eigen::Matrix3d hessian_oracle(double P, double Q, double v) {
  Eigen::Matrix3d H;
  H << 2.0 / v, 0.0, -2.0 * P / (v * v),
       0.0, 2.0 / v, -2.0 * Q / (v * v),
       -2.0 * P / (v * v), -2.0 * Q / (v * v), 2.0 * (P * P + Q * Q) / (v * v * v);
  return H;
}

/// Dense strictly convex QP: 1/2 x'Gx + c'x, lb <= Mx <= ub.
struct DenseQp {
  Eigen::MatrixXd G;
  Eigen::VectorXd c;
  Eigen::MatrixXd M;
  Eigen::VectorXd lb, ub;
};

inline QpProblem to_problem(const DenseQp& d) {
  QpProblem p;
  p.G = d.G.sparseView();
  p.c = d.c;
  p.M = d.M.sparseView();
  p.lb = d.lb;
  p.ub = d.ub;
  return p;
}

inline double qp_value(const DenseQp& d, const Eigen::VectorXd& x) { return 0.5 * x.dot(d.G * x) + d.c.dot(x); }

/// Accelerated projected gradient on the dual of a strictly convex QP.
/// Dual variables u = (u_up, u_lo) >= 0; x(u) = -G^-1 (c + M'(u_up - u_lo)).
/// Returns the dual value, which converges to the optimum from below.
inline double projected_gradient_dual(const DenseQp& d, int iterations, Eigen::VectorXd* x_out = nullptr) {
  const int m = static_cast<int>(d.lb.size());
  const Eigen::MatrixXd Ginv = d.G.inverse();
  const Eigen::MatrixXd K = d.M * Ginv * d.M.transpose();
  const double L = 2.0 * K.operatorNorm() + 1e-12;
  const double big = 1e20;
  auto active = [&](const Eigen::VectorXd& b) { return (b.array().abs() < big).cast<double>().matrix(); };
  const Eigen::VectorXd mask_up = active(d.ub), mask_lo = active(d.lb);
  const Eigen::VectorXd ubf = d.ub.cwiseProduct(mask_up), lbf = d.lb.cwiseProduct(mask_lo);
  Eigen::VectorXd up = Eigen::VectorXd::Zero(m), lo = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd yup = up, ylo = lo;
  double t = 1.0;
  auto xof = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) -> Eigen::VectorXd {
    return -Ginv * (d.c + d.M.transpose() * (a - b));
  };
  auto dual_value = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const Eigen::VectorXd x = xof(a, b);
    return qp_value(d, x) + (a - b).dot(d.M * x) - ubf.dot(a) + lbf.dot(b);
  };
  for (int it = 0; it < iterations; ++it) {
    const Eigen::VectorXd x = xof(yup, ylo);
    const Eigen::VectorXd mx = d.M * x;
    // Ascent direction of the concave dual.
    Eigen::VectorXd nup = (yup + (mx - ubf) / L).cwiseMax(0.0).cwiseProduct(mask_up);
    Eigen::VectorXd nlo = (ylo + (lbf - mx) / L).cwiseMax(0.0).cwiseProduct(mask_lo);
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    yup = nup + ((t - 1.0) / tn) * (nup - up);
    ylo = nlo + ((t - 1.0) / tn) * (nlo - lo);
    up = nup;
    lo = nlo;
    t = tn;
  }
  if (x_out) *x_out = xof(up, lo);
  return dual_value(up, lo);
}

/// LP through proximal-point steps, each a strictly convex QP handled by the
/// projected-gradient dual above. Returns c'x at the last proximal iterate.
inline double proximal_lp(const DenseQp& lp, int outer, int inner, double step = 1.0) {
  const int n = static_cast<int>(lp.c.size());
  DenseQp sub = lp;
  sub.G = Eigen::MatrixXd::Identity(n, n) / step;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < outer; ++k) {
    sub.c = lp.c - x / step;
    projected_gradient_dual(sub, inner, &x);
  }
  return lp.c.dot(x);
}

/// Small LP min c'x s.t. lb <= Mx <= ub by enumerating every vertex.
inline double lp_vertex_oracle(const Eigen::VectorXd& c, const Eigen::MatrixXd& M, const Eigen::VectorXd& lb,
                               const Eigen::VectorXd& ub) {
  const int n = static_cast<int>(c.size());
  const int m = static_cast<int>(lb.size());
  std::vector<std::pair<int, double>> planes;  // (row, value)
  for (int i = 0; i < m; ++i) {
    planes.emplace_back(i, lb(i));
    if (ub(i) != lb(i)) planes.emplace_back(i, ub(i));
  }
  const int h = static_cast<int>(planes.size());
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> pick(n);
  std::function<void(int, int)> rec = [&](int start, int depth) {
    if (depth == n) {
      Eigen::MatrixXd A(n, n);
      Eigen::VectorXd b(n);
      for (int k = 0; k < n; ++k) {
        A.row(k) = M.row(planes[pick[k]].first);
        b(k) = planes[pick[k]].second;
      }
      Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
      if (lu.rank() < n) return;
      const Eigen::VectorXd x = lu.solve(b);
      const Eigen::VectorXd mx = M * x;
      for (int i = 0; i < m; ++i) {
        if (mx(i) < lb(i) - 1e-9 || mx(i) > ub(i) + 1e-9) return;
      }
      best = std::min(best, c.dot(x));
      return;
    }
    for (int i = start; i < h; ++i) {
      pick[depth] = i;
      rec(i + 1, depth + 1);
    }
  };
  rec(0, 0);
  return best;
}

/// Random strictly convex QP with a known feasible point and finite two-sided rows.
inline DenseQp random_qp(int n, int m, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  DenseQp d;
  Eigen::MatrixXd F(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) F(i, j) = g(rng);
  d.G = F * F.transpose() / n + 0.5 * Eigen::MatrixXd::Identity(n, n);
  d.c = Eigen::VectorXd::NullaryExpr(n, [&] { return 3.0 * g(rng); });
  d.M = Eigen::MatrixXd::NullaryExpr(m, n, [&] { return g(rng); });
  const Eigen::VectorXd x0 = Eigen::VectorXd::NullaryExpr(n, [&] { return 0.3 * g(rng); });
  const Eigen::VectorXd mx0 = d.M * x0;
  d.lb.resize(m);
  d.ub.resize(m);
  std::uniform_int_distribution<int> kind(0, 3);
  for (int i = 0; i < m; ++i) {
    switch (kind(rng)) {
      case 0:
        d.lb(i) = mx0(i) - u(rng);
        d.ub(i) = kQpInfinity;
        break;
      case 1:
        d.lb(i) = -kQpInfinity;
        d.ub(i) = mx0(i) + u(rng);
        break;
      default:
        d.lb(i) = mx0(i) - u(rng);
        d.ub(i) = mx0(i) + u(rng);
    }
  }
  return d;
}

/// Random bounded LP: box rows on every variable plus general two-sided rows.
inline DenseQp random_lp(int n, int m_general, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.2, 1.5);
  DenseQp d;
  d.G = Eigen::MatrixXd::Zero(n, n);
  d.c = Eigen::VectorXd::NullaryExpr(n, [&] { return g(rng); });
  const int m = n + m_general;
  d.M = Eigen::MatrixXd::Zero(m, n);
  d.M.topRows(n).setIdentity();
  d.M.bottomRows(m_general) = Eigen::MatrixXd::NullaryExpr(m_general, n, [&] { return g(rng); });
  const Eigen::VectorXd x0 = Eigen::VectorXd::NullaryExpr(n, [&] { return 0.3 * g(rng); });
  const Eigen::VectorXd mx0 = d.M * x0;
  d.lb = mx0 - Eigen::VectorXd::NullaryExpr(m, [&] { return u(rng); });
  d.ub = mx0 + Eigen::VectorXd::NullaryExpr(m, [&] { return u(rng); });
  return d;
}

}  // namespace fe_test
