#include "feeder_envelope/qp.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include <Eigen/SparseCholesky>

namespace feeder_envelope {

namespace {

using Eigen::VectorXd;

bool lower_infinite(double v) { return v <= -kQpInfinity; }
bool upper_infinite(double v) { return v >= kQpInfinity; }

double inf_norm(const VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

VectorXd column_inf_norms(const SparseMatrix& m) {
  VectorXd out = VectorXd::Zero(m.cols());
  for (int j = 0; j < m.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(m, j); it; ++it) out(j) = std::max(out(j), std::abs(it.value()));
  }
  return out;
}

VectorXd row_inf_norms(const SparseMatrix& m) {
  VectorXd out = VectorXd::Zero(m.rows());
  for (int j = 0; j < m.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(m, j); it; ++it) out(it.row()) = std::max(out(it.row()), std::abs(it.value()));
  }
  return out;
}

double limit_scale(double v) {
  if (v < 1e-4) return 1.0;
  return std::min(v, 1e4);
}

VectorXd project(const VectorXd& v, const VectorXd& lo, const VectorXd& hi) { return v.cwiseMax(lo).cwiseMin(hi); }

// Ruiz-equilibrated copy of the problem plus the scaling that maps back.
struct Scaled {
  SparseMatrix P, A, At;
  VectorXd q, l, u;
  VectorXd D, E;
  double cost = 1.0;
};

Scaled equilibrate(const QpProblem& prob, int iters) {
  const int n = prob.num_vars(), m = prob.num_rows();
  Scaled s;
  s.P = prob.G;
  s.A = prob.M;
  s.q = prob.c;
  s.D = VectorXd::Ones(n);
  s.E = VectorXd::Ones(m);
  for (int it = 0; it < iters; ++it) {
    VectorXd cn = column_inf_norms(s.P).cwiseMax(column_inf_norms(s.A));
    VectorXd rn = row_inf_norms(s.A);
    VectorXd d(n), e(m);
    for (int j = 0; j < n; ++j) d(j) = 1.0 / std::sqrt(limit_scale(cn(j)));
    for (int i = 0; i < m; ++i) e(i) = 1.0 / std::sqrt(limit_scale(rn(i)));
    s.P = d.asDiagonal() * s.P * d.asDiagonal();
    s.A = e.asDiagonal() * s.A * d.asDiagonal();
    s.q = d.cwiseProduct(s.q);
    s.D = s.D.cwiseProduct(d);
    s.E = s.E.cwiseProduct(e);
  }
  double pn = n > 0 ? column_inf_norms(s.P).mean() : 0.0;
  s.cost = 1.0 / limit_scale(std::max(pn, inf_norm(s.q)));
  s.P *= s.cost;
  s.q *= s.cost;
  s.l.resize(m);
  s.u.resize(m);
  for (int i = 0; i < m; ++i) {
    s.l(i) = lower_infinite(prob.lb(i)) ? -kQpInfinity : prob.lb(i) * s.E(i);
    s.u(i) = upper_infinite(prob.ub(i)) ? kQpInfinity : prob.ub(i) * s.E(i);
  }
  s.P.makeCompressed();
  s.A.makeCompressed();
  s.At = s.A.transpose();
  return s;
}

SparseMatrix speye(int n, double v) {
  SparseMatrix I(n, n);
  I.setIdentity();
  return I * v;
}

constexpr int kPolishRoundsAdmm = 3;
constexpr int kPolishRoundsIpm = 25;
constexpr int kIpmIterations = 80;

class AdmmSolver {
 public:
  AdmmSolver(const QpProblem& prob, const QpSettings& settings)
      : prob_(prob), set_(settings), s_(equilibrate(prob, settings.scaling_iters)) {
    n_ = prob.num_vars();
    m_ = prob.num_rows();
    x_ = VectorXd::Zero(n_);
    z_ = VectorXd::Zero(m_);
    y_ = VectorXd::Zero(m_);
    rho_ = set_.rho;
    set_rho_vector();
    factor();
  }

  QpSolution run() {
    QpSolution out;
    std::vector<int> last_polish_set;
    for (int k = 1; k <= set_.max_iter; ++k) {
      const VectorXd x_prev = x_, z_prev = z_, y_prev = y_;
      VectorXd rhs = set_.sigma * x_ - s_.q + s_.At * (rho_vec_.cwiseProduct(z_) - y_);
      VectorXd xt = kkt_.solve(rhs);
      if (kkt_.info() != Eigen::Success || !xt.allFinite()) throw QpError("numerical breakdown in ADMM linear solve");
      VectorXd zt = s_.A * xt;
      x_ = set_.alpha * xt + (1.0 - set_.alpha) * x_prev;
      VectorXd zr = set_.alpha * zt + (1.0 - set_.alpha) * z_prev;
      z_ = project(zr + y_.cwiseQuotient(rho_vec_), s_.l, s_.u);
      y_ = y_ + rho_vec_.cwiseProduct(zr - z_);
      out.iterations = k;

      if (k % set_.check_every != 0 && k != 1 && k != set_.max_iter) continue;

      const VectorXd ax = s_.A * x_;
      const VectorXd px = s_.P * x_;
      const VectorXd aty = s_.At * y_;
      const double prim = inf_norm((ax - z_).cwiseQuotient(s_.E));
      const double dual = inf_norm((px + s_.q + aty).cwiseQuotient(s_.D)) / s_.cost;
      if (!std::isfinite(prim) || !std::isfinite(dual)) throw QpError("numerical breakdown: non-finite residuals");

      if (prim <= set_.eps_p && dual <= set_.eps_d) {
        if (set_.polish && try_polish(out, last_polish_set)) return out;
        finish(out, QpStatus::optimal);
        const KktResiduals r = kkt_residuals(prob_, out.x, out.y);
        if (r.primal <= set_.eps_p && r.dual <= set_.eps_d) return out;
      } else if (set_.polish && prim < 1e-2 && dual < 1e-2 && try_polish(out, last_polish_set)) {
        return out;
      }

      if (primal_infeasible(y_ - y_prev, out)) return out;
      if (dual_infeasible(x_ - x_prev, out)) return out;

      if (k >= set_.fallback_after && !fallback_tried_) {
        fallback_tried_ = true;
        if (interior_point(out)) return out;
      }

      if (set_.adaptive_rho) {
        const double ps = inf_norm(ax - z_), ds = inf_norm(px + s_.q + aty);
        const double pn = std::max(inf_norm(ax), inf_norm(z_));
        const double dn = std::max({inf_norm(px), inf_norm(aty), inf_norm(s_.q)});
        const double ratio = (ps / (pn + 1e-30)) / (ds / (dn + 1e-30) + 1e-30);
        const double proposed = std::clamp(rho_ * std::sqrt(ratio), 1e-6, 1e6);
        if (proposed > 5.0 * rho_ || proposed < 0.2 * rho_) {
          rho_ = proposed;
          set_rho_vector();
          factor();
        }
      }
    }
    finish(out, QpStatus::max_iterations);
    return out;
  }

 private:
  void set_rho_vector() {
    rho_vec_.resize(m_);
    for (int i = 0; i < m_; ++i) {
      const bool lo_inf = s_.l(i) <= -kQpInfinity, hi_inf = s_.u(i) >= kQpInfinity;
      if (lo_inf && hi_inf) {
        rho_vec_(i) = 1e-6;
      } else if (std::abs(s_.u(i) - s_.l(i)) < 1e-10) {
        rho_vec_(i) = 1e3 * rho_;
      } else {
        rho_vec_(i) = rho_;
      }
    }
  }

  void factor() {
    SparseMatrix K = s_.P + speye(n_, set_.sigma) + SparseMatrix(s_.At * rho_vec_.asDiagonal() * s_.A);
    kkt_.compute(K);
    if (kkt_.info() != Eigen::Success) throw QpError("numerical breakdown: ADMM system factorization failed");
  }

  void finish(QpSolution& out, QpStatus status) {
    out.status = status;
    out.x = s_.D.cwiseProduct(x_);
    out.y = s_.E.cwiseProduct(y_) / s_.cost;
    const KktResiduals r = kkt_residuals(prob_, out.x, out.y);
    out.primal_res = r.primal;
    out.dual_res = r.dual;
    out.objective = 0.5 * out.x.dot(prob_.G * out.x) + prob_.c.dot(out.x);
  }

  // Primal-dual interior point with Mehrotra correction on the scaled problem.
  // Used when ADMM stalls (degenerate LPs); its iterate seeds the polish step.
  // On failure the ADMM state is restored and false is returned.
  bool interior_point(QpSolution& out) {
    const VectorXd x_save = x_, z_save = z_, y_save = y_;
    auto restore = [&] {
      x_ = x_save;
      z_ = z_save;
      y_ = y_save;
      return false;
    };
    VectorXd has_lo = VectorXd::Zero(m_), has_up = VectorXd::Zero(m_), is_eq = VectorXd::Zero(m_);
    for (int i = 0; i < m_; ++i) {
      const bool lo = s_.l(i) > -kQpInfinity, up = s_.u(i) < kQpInfinity;
      if (lo && up && s_.u(i) - s_.l(i) < 1e-10) {
        is_eq(i) = 1.0;
      } else {
        has_lo(i) = lo ? 1.0 : 0.0;
        has_up(i) = up ? 1.0 : 0.0;
      }
    }
    const double n_comp = has_lo.sum() + has_up.sum();
    const VectorXd l0 = has_lo.cwiseProduct(s_.l.cwiseMax(-kQpInfinity));
    const VectorXd u0 = has_up.cwiseProduct(s_.u.cwiseMin(kQpInfinity));
    const VectorXd b0 = is_eq.cwiseProduct(s_.l);

    VectorXd x = VectorXd::Zero(n_);
    VectorXd ax = s_.A * x;
    VectorXd sl = has_lo.cwiseProduct((ax - l0).cwiseMax(1.0)) + (VectorXd::Ones(m_) - has_lo);
    VectorXd tu = has_up.cwiseProduct((u0 - ax).cwiseMax(1.0)) + (VectorXd::Ones(m_) - has_up);
    VectorXd lam = has_lo, mu = has_up, nu = VectorXd::Zero(m_);

    const double reg = 1e-9;
    std::vector<int> last_set;
    Eigen::SimplicialLDLT<SparseMatrix> ldlt;
    bool analysed = false;

    for (int it = 0; it < kIpmIterations; ++it) {
      ax = s_.A * x;
      const VectorXd y = mu - lam + nu;
      const VectorXd r_d = s_.P * x + s_.q + s_.At * y;
      const VectorXd r_l = has_lo.cwiseProduct(ax - sl - l0);
      const VectorXd r_u = has_up.cwiseProduct(ax + tu - u0);
      const VectorXd r_e = is_eq.cwiseProduct(ax - b0);
      const double gap = n_comp > 0 ? (has_lo.cwiseProduct(sl).dot(lam) + has_up.cwiseProduct(tu).dot(mu)) / n_comp : 0.0;
      const double res = std::max({inf_norm(r_d), inf_norm(r_l), inf_norm(r_u), inf_norm(r_e)});
      if (!std::isfinite(res) || !std::isfinite(gap)) return restore();

      if (gap < 1e-7 && res < 1e-7) {
        x_ = x;
        z_ = project(ax, s_.l, s_.u);
        y_ = y;
        if (try_polish(out, last_set, kPolishRoundsIpm)) return true;
        if (gap < 1e-13 && res < 1e-12) break;
      }

      // Reduced system [P + A'DA, A_E'; A_E, 0] for (dx, dnu), regularised.
      VectorXd d = VectorXd::Zero(m_);
      for (int i = 0; i < m_; ++i) {
        if (has_lo(i) > 0) d(i) += lam(i) / sl(i);
        if (has_up(i) > 0) d(i) += mu(i) / tu(i);
        if (is_eq(i) > 0) d(i) = 0.0;
      }
      std::vector<Eigen::Triplet<double>> trip;
      const SparseMatrix H = s_.P + SparseMatrix(s_.At * d.asDiagonal() * s_.A);
      for (int j = 0; j < H.outerSize(); ++j) {
        for (SparseMatrix::InnerIterator e(H, j); e; ++e) trip.emplace_back(e.row(), e.col(), e.value());
      }
      for (int j = 0; j < n_; ++j) trip.emplace_back(j, j, reg);
      for (int j = 0; j < s_.A.outerSize(); ++j) {
        for (SparseMatrix::InnerIterator e(s_.A, j); e; ++e) {
          if (is_eq(e.row()) == 0.0) continue;
          trip.emplace_back(n_ + e.row(), j, e.value());
          trip.emplace_back(j, n_ + e.row(), e.value());
        }
      }
      for (int i = 0; i < m_; ++i) trip.emplace_back(n_ + i, n_ + i, is_eq(i) > 0 ? -reg : -1.0);
      SparseMatrix K(n_ + m_, n_ + m_);
      K.setFromTriplets(trip.begin(), trip.end());
      if (!analysed) {
        ldlt.analyzePattern(K);
        analysed = true;
      }
      ldlt.factorize(K);
      if (ldlt.info() != Eigen::Success) return restore();

      struct Step {
        VectorXd dx, dnu, ds, dlam, dt, dmu;
      };
      auto direction = [&](const VectorXd& r_sl, const VectorXd& r_tu) {
        VectorXd v = VectorXd::Zero(m_);
        for (int i = 0; i < m_; ++i) {
          if (has_lo(i) > 0) v(i) -= (r_sl(i) + lam(i) * r_l(i)) / sl(i);
          if (has_up(i) > 0) v(i) += (r_tu(i) - mu(i) * r_u(i)) / tu(i);
        }
        VectorXd rhs(n_ + m_);
        rhs.head(n_) = -r_d + s_.At * v;
        rhs.tail(m_) = -r_e;
        VectorXd sol = ldlt.solve(rhs);
        Step st;
        st.dx = sol.head(n_);
        st.dnu = is_eq.cwiseProduct(sol.tail(m_));
        const VectorXd adx = s_.A * st.dx;
        st.ds = has_lo.cwiseProduct(adx + r_l);
        st.dt = has_up.cwiseProduct(-r_u - adx);
        st.dlam = VectorXd::Zero(m_);
        st.dmu = VectorXd::Zero(m_);
        for (int i = 0; i < m_; ++i) {
          if (has_lo(i) > 0) st.dlam(i) = (-r_sl(i) - lam(i) * st.ds(i)) / sl(i);
          if (has_up(i) > 0) st.dmu(i) = (-r_tu(i) - mu(i) * st.dt(i)) / tu(i);
        }
        return st;
      };
      auto max_step = [&](const Step& st) {
        double a = 1.0;
        for (int i = 0; i < m_; ++i) {
          if (has_lo(i) > 0) {
            if (st.ds(i) < 0) a = std::min(a, -sl(i) / st.ds(i));
            if (st.dlam(i) < 0) a = std::min(a, -lam(i) / st.dlam(i));
          }
          if (has_up(i) > 0) {
            if (st.dt(i) < 0) a = std::min(a, -tu(i) / st.dt(i));
            if (st.dmu(i) < 0) a = std::min(a, -mu(i) / st.dmu(i));
          }
        }
        return a;
      };

      const VectorXd slam = has_lo.cwiseProduct(sl.cwiseProduct(lam));
      const VectorXd tmu = has_up.cwiseProduct(tu.cwiseProduct(mu));
      const Step aff = direction(slam, tmu);
      const double a_aff = max_step(aff);
      double sigma = 0.0;
      if (n_comp > 0) {
        const double gap_aff =
            (has_lo.cwiseProduct(sl + a_aff * aff.ds).dot(lam + a_aff * aff.dlam) +
             has_up.cwiseProduct(tu + a_aff * aff.dt).dot(mu + a_aff * aff.dmu)) / n_comp;
        sigma = std::pow(std::max(gap_aff, 0.0) / std::max(gap, 1e-300), 3.0);
      }
      const VectorXd r_sl = slam + has_lo.cwiseProduct(aff.ds.cwiseProduct(aff.dlam)) - sigma * gap * has_lo;
      const VectorXd r_tu = tmu + has_up.cwiseProduct(aff.dt.cwiseProduct(aff.dmu)) - sigma * gap * has_up;
      const Step st = direction(r_sl, r_tu);
      const double a = std::min(1.0, 0.99 * max_step(st));
      x += a * st.dx;
      nu += a * st.dnu;
      sl += a * st.ds;
      tu += a * st.dt;
      lam += a * st.dlam;
      mu += a * st.dmu;
    }
    return restore();
  }

  // Guess the active set from the ADMM iterate, then alternate equality-constrained
  // KKT solves with active-set corrections: violated rows join, rows whose
  // multiplier has the wrong sign leave.
  bool try_polish(QpSolution& out, std::vector<int>& last_set, int rounds = kPolishRoundsAdmm) {
    std::vector<int> signature(m_, 0);
    for (int i = 0; i < m_; ++i) {
      const bool at_lower = s_.l(i) > -kQpInfinity && z_(i) - s_.l(i) < -y_(i);
      const bool at_upper = s_.u(i) < kQpInfinity && s_.u(i) - z_(i) < y_(i);
      if (at_upper && (!at_lower || y_(i) >= 0.0)) {
        signature[i] = 1;
      } else if (at_lower) {
        signature[i] = -1;
      }
    }
    if (signature == last_set) return false;
    last_set = signature;

    VectorXd xs, ys;
    for (int round = 0; round < rounds; ++round) {
      if (!solve_reduced_kkt(signature, xs, ys)) return false;
      const VectorXd x = s_.D.cwiseProduct(xs);
      const VectorXd y = s_.E.cwiseProduct(ys) / s_.cost;
      const KktResiduals r = kkt_residuals(prob_, x, y);
      if (r.primal <= set_.eps_p && r.dual <= set_.eps_d && r.complementarity <= set_.eps_d) {
        out.status = QpStatus::optimal;
        out.polished = true;
        out.x = x;
        out.y = y;
        out.primal_res = r.primal;
        out.dual_res = r.dual;
        out.objective = 0.5 * x.dot(prob_.G * x) + prob_.c.dot(x);
        return true;
      }
      bool changed = false;
      const VectorXd ax = s_.A * xs;
      const double tol = 1e-10;
      for (int i = 0; i < m_; ++i) {
        const bool equality = s_.u(i) - s_.l(i) < 1e-10;
        if (signature[i] != 0) {
          if (!equality && ys(i) * signature[i] < -tol) {
            signature[i] = 0;
            changed = true;
          }
        } else if (s_.u(i) < kQpInfinity && ax(i) > s_.u(i) + tol) {
          signature[i] = 1;
          changed = true;
        } else if (s_.l(i) > -kQpInfinity && ax(i) < s_.l(i) - tol) {
          signature[i] = -1;
          changed = true;
        }
      }
      if (!changed) return false;
    }
    return false;
  }

  // Solves [P A_W'; A_W 0] on the rows with a nonzero signature, regularised by
  // delta and anchored at the ADMM iterate, then refined against the exact system.
  bool solve_reduced_kkt(const std::vector<int>& signature, VectorXd& xs, VectorXd& ys) const {
    std::vector<int> rows;
    std::vector<double> target;
    for (int i = 0; i < m_; ++i) {
      if (signature[i] == 0) continue;
      rows.push_back(i);
      target.push_back(signature[i] > 0 ? s_.u(i) : s_.l(i));
    }
    const int na = static_cast<int>(rows.size());
    const double delta = 1e-6;
    std::vector<Eigen::Triplet<double>> trip, trip0;
    for (int j = 0; j < s_.P.outerSize(); ++j) {
      for (SparseMatrix::InnerIterator it(s_.P, j); it; ++it) {
        trip.emplace_back(it.row(), it.col(), it.value());
        trip0.emplace_back(it.row(), it.col(), it.value());
      }
    }
    for (int j = 0; j < n_; ++j) trip.emplace_back(j, j, delta);
    std::vector<int> pos(m_, -1);
    for (int a = 0; a < na; ++a) pos[rows[a]] = a;
    for (int j = 0; j < s_.A.outerSize(); ++j) {
      for (SparseMatrix::InnerIterator it(s_.A, j); it; ++it) {
        const int a = pos[it.row()];
        if (a < 0) continue;
        for (auto* t : {&trip, &trip0}) {
          t->emplace_back(n_ + a, j, it.value());
          t->emplace_back(j, n_ + a, it.value());
        }
      }
    }
    for (int a = 0; a < na; ++a) trip.emplace_back(n_ + a, n_ + a, -delta);
    SparseMatrix K(n_ + na, n_ + na), K0(n_ + na, n_ + na);
    K.setFromTriplets(trip.begin(), trip.end());
    K0.setFromTriplets(trip0.begin(), trip0.end());

    Eigen::SimplicialLDLT<SparseMatrix> ldlt(K);
    if (ldlt.info() != Eigen::Success) return false;
    VectorXd rhs(n_ + na);
    rhs.head(n_) = -s_.q;
    for (int a = 0; a < na; ++a) rhs(n_ + a) = target[a];
    // Free primal directions and multipliers of dependent rows keep their
    // ADMM values through the anchor.
    VectorXd rhs_reg = rhs;
    rhs_reg.head(n_) += delta * x_;
    for (int a = 0; a < na; ++a) rhs_reg(n_ + a) -= delta * y_(rows[a]);
    VectorXd sol = ldlt.solve(rhs_reg);
    for (int it = 0; it < 10 && sol.allFinite(); ++it) {
      VectorXd res = rhs - K0 * sol;
      if (inf_norm(res) < 1e-14) break;
      sol += ldlt.solve(res);
    }
    if (!sol.allFinite()) return false;
    xs = sol.head(n_);
    ys = VectorXd::Zero(m_);
    for (int a = 0; a < na; ++a) ys(rows[a]) = sol(n_ + a);
    return true;
  }

  bool primal_infeasible(VectorXd dy, QpSolution& out) {
    for (int i = 0; i < m_; ++i) {
      if (s_.u(i) >= kQpInfinity) dy(i) = std::min(dy(i), 0.0);
      if (s_.l(i) <= -kQpInfinity) dy(i) = std::max(dy(i), 0.0);
    }
    const double norm = inf_norm(s_.E.cwiseProduct(dy));
    if (norm < 1e-30) return false;
    const double eps = set_.eps_infeasible;
    if (inf_norm((s_.At * dy).cwiseQuotient(s_.D)) > eps * norm) return false;
    double support = 0.0;
    for (int i = 0; i < m_; ++i) support += dy(i) > 0 ? s_.u(i) * dy(i) : s_.l(i) * dy(i);
    if (support > -eps * norm) return false;
    finish(out, QpStatus::primal_infeasible);
    // Reported as y with lb'y+ - ub'y- > 0.
    VectorXd cert = -s_.E.cwiseProduct(dy);
    out.certificate = cert / inf_norm(cert);
    return true;
  }

  bool dual_infeasible(const VectorXd& dx, QpSolution& out) {
    const double norm = inf_norm(s_.D.cwiseProduct(dx));
    if (norm < 1e-30) return false;
    const double eps = set_.eps_infeasible;
    if (inf_norm((s_.P * dx).cwiseQuotient(s_.D)) > s_.cost * eps * norm) return false;
    if (s_.q.dot(dx) > -s_.cost * eps * norm) return false;
    const VectorXd adx = (s_.A * dx).cwiseQuotient(s_.E);
    for (int i = 0; i < m_; ++i) {
      if (s_.u(i) < kQpInfinity && adx(i) > eps * norm) return false;
      if (s_.l(i) > -kQpInfinity && adx(i) < -eps * norm) return false;
    }
    finish(out, QpStatus::dual_infeasible);
    VectorXd cert = s_.D.cwiseProduct(dx);
    out.certificate = cert / inf_norm(cert);
    return true;
  }

  const QpProblem& prob_;
  QpSettings set_;
  Scaled s_;
  int n_ = 0, m_ = 0;
  VectorXd x_, z_, y_, rho_vec_;
  double rho_ = 0.1;
  Eigen::SimplicialLDLT<SparseMatrix> kkt_;
  bool fallback_tried_ = false;
};

}  // namespace

std::string to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::primal_infeasible: return "primal_infeasible";
    case QpStatus::dual_infeasible: return "dual_infeasible";
    case QpStatus::max_iterations: return "max_iterations";
  }
  return "unknown";
}

void QpProblem::validate() const {
  const int n = num_vars(), m = num_rows();
  if (G.rows() != n || G.cols() != n) throw QpError("G must be n x n");
  if (M.rows() != m || M.cols() != n || ub.size() != m) throw QpError("constraint dimensions are inconsistent");
  if (!var_names.empty() && static_cast<int>(var_names.size()) != n) throw QpError("var_names length mismatch");
  if (!row_names.empty() && static_cast<int>(row_names.size()) != m) throw QpError("row_names length mismatch");
  for (int i = 0; i < m; ++i) {
    if (std::isnan(lb(i)) || std::isnan(ub(i)) || lb(i) > ub(i)) {
      throw QpError("row " + std::to_string(i) + " has lb > ub");
    }
  }
  if (!c.allFinite()) throw QpError("objective vector is not finite");
  if (G.nonZeros() == 0) return;
  const SparseMatrix asym = G - SparseMatrix(G.transpose());
  double gmax = 0.0;
  for (int j = 0; j < G.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(G, j); it; ++it) gmax = std::max(gmax, std::abs(it.value()));
  }
  for (int j = 0; j < asym.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(asym, j); it; ++it) {
      if (std::abs(it.value()) > 1e-12 * (1.0 + gmax)) throw QpError("G is not symmetric");
    }
  }
  const double shift = 1e-10 * (1.0 + gmax);
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(G + speye(n, shift));
  if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() < -shift).any()) {
    throw QpError("G is not positive semidefinite");
  }
}

KktResiduals kkt_residuals(const QpProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  KktResiduals r;
  const VectorXd mx = prob.M * x;
  VectorXd lo = prob.lb, hi = prob.ub;
  r.primal = inf_norm(mx - project(mx, lo, hi));
  r.dual = inf_norm(prob.G * x + prob.c + prob.M.transpose() * y);
  for (int i = 0; i < prob.num_rows(); ++i) {
    double gap;
    if (y(i) > 0) {
      gap = upper_infinite(prob.ub(i)) ? std::numeric_limits<double>::infinity() : std::abs(prob.ub(i) - mx(i));
    } else if (y(i) < 0) {
      gap = lower_infinite(prob.lb(i)) ? std::numeric_limits<double>::infinity() : std::abs(mx(i) - prob.lb(i));
    } else {
      continue;
    }
    r.complementarity = std::max(r.complementarity, std::min(std::abs(y(i)), gap));
  }
  return r;
}

QpSolution solve_qp(const QpProblem& prob, const QpSettings& settings) {
  prob.validate();
  if (prob.num_vars() == 0) {
    QpSolution out;
    out.x = VectorXd::Zero(0);
    out.y = VectorXd::Zero(prob.num_rows());
    bool feasible = ((prob.lb.array() <= 0.0) && (prob.ub.array() >= 0.0)).all();
    out.status = feasible ? QpStatus::optimal : QpStatus::primal_infeasible;
    if (!feasible) {
      out.certificate = VectorXd::Zero(prob.num_rows());
      for (int i = 0; i < prob.num_rows(); ++i) {
        if (prob.lb(i) > 0.0) out.certificate(i) = 1.0;
        else if (prob.ub(i) < 0.0) out.certificate(i) = -1.0;
      }
    }
    return out;
  }
  AdmmSolver solver(prob, settings);
  return solver.run();
}

std::optional<Eigen::VectorXd> detect_infeasible(const QpProblem& prob, const QpSettings& settings) {
  // Feasibility does not depend on the objective; drop it so the solver only
  // has to find a point in the constraint set.
  QpProblem feas = prob;
  feas.G = SparseMatrix(prob.num_vars(), prob.num_vars());
  feas.c = VectorXd::Zero(prob.num_vars());
  const QpSolution sol = solve_qp(feas, settings);
  switch (sol.status) {
    case QpStatus::primal_infeasible: return sol.certificate;
    case QpStatus::optimal: return std::nullopt;
    case QpStatus::dual_infeasible: return std::nullopt;
    case QpStatus::max_iterations: break;
  }
  throw QpError("infeasibility check inconclusive within the iteration limit");
}

std::string dump_qp(const QpProblem& prob) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "qp " << prob.num_vars() << " " << prob.num_rows() << "\n";
  os << "G " << prob.G.nonZeros() << "\n";
  for (int j = 0; j < prob.G.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(prob.G, j); it; ++it) os << it.row() << " " << it.col() << " " << it.value() << "\n";
  }
  os << "c\n";
  for (int j = 0; j < prob.num_vars(); ++j) {
    os << j << " " << prob.c(j);
    if (!prob.var_names.empty()) os << " " << prob.var_names[j];
    os << "\n";
  }
  os << "M " << prob.M.nonZeros() << "\n";
  for (int j = 0; j < prob.M.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(prob.M, j); it; ++it) os << it.row() << " " << it.col() << " " << it.value() << "\n";
  }
  os << "bounds\n";
  for (int i = 0; i < prob.num_rows(); ++i) {
    os << i << " " << prob.lb(i) << " " << prob.ub(i);
    if (!prob.row_names.empty()) os << " " << prob.row_names[i];
    os << "\n";
  }
  return os.str();
}

}  // namespace feeder_envelope
