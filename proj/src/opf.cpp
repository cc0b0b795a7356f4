#include "feeder_envelope/opf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace feeder_envelope {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Affine map of one step's local variables: coef * x_local + cst.
struct Affine {
  MatrixXd coef;
  VectorXd cst;

  Affine operator+(const Affine& o) const { return {coef + o.coef, cst + o.cst}; }
  Affine operator-(const Affine& o) const { return {coef - o.coef, cst - o.cst}; }
  Affine operator*(double s) const { return {coef * s, cst * s}; }
  Affine plus(const VectorXd& v) const { return {coef, cst + v}; }
};

Affine operator*(const MatrixXd& m, const Affine& a) { return {m * a.coef, m * a.cst}; }

class RowBuilder {
 public:
  explicit RowBuilder(int cols) : cols_(cols) {}

  // lb <= coef * x_local + cst <= ub, placed at column `offset`.
  void add(const Affine& a, int offset, const VectorXd& lb, const VectorXd& ub, const std::string& name,
           const std::vector<int>& ids) {
    for (int r = 0; r < a.coef.rows(); ++r) {
      const int row = static_cast<int>(lb_.size());
      for (int c = 0; c < a.coef.cols(); ++c) {
        if (a.coef(r, c) != 0.0) trip_.emplace_back(row, offset + c, a.coef(r, c));
      }
      lb_.push_back(lb(r) <= -kQpInfinity ? -kQpInfinity : lb(r) - a.cst(r));
      ub_.push_back(ub(r) >= kQpInfinity ? kQpInfinity : ub(r) - a.cst(r));
      names_.push_back(name + "[" + std::to_string(ids[r]) + "]");
    }
  }

  // Single row with explicit global coefficients.
  void add_row(const std::vector<std::pair<int, double>>& coefs, double lb, double ub, std::string name) {
    const int row = static_cast<int>(lb_.size());
    for (auto [c, v] : coefs) trip_.emplace_back(row, c, v);
    lb_.push_back(lb);
    ub_.push_back(ub);
    names_.push_back(std::move(name));
  }

  int rows() const { return static_cast<int>(lb_.size()); }

  // Row pairs (lower, upper) whose bounds contradict each other on their own.
  void conflict(int lower_row, int upper_row) { conflicts_.emplace_back(lower_row, upper_row); }

  // Throws OpfInfeasible with a two-row certificate if a conflict was recorded.
  void check_conflicts() const {
    if (conflicts_.empty()) return;
    VectorXd cert = VectorXd::Zero(rows());
    std::vector<std::string> rows;
    for (auto [lo, hi] : conflicts_) {
      cert(lo) = 1.0;
      cert(hi) = -1.0;
      rows.push_back(names_[lo]);
      rows.push_back(names_[hi]);
    }
    std::string msg = "robust OPF is infeasible: expansion-point current above its limit; certificate rows:";
    for (const auto& r : rows) msg += " " + r;
    throw OpfInfeasible(msg, cert, rows);
  }

  void finish(QpProblem& qp) const {
    const int m = static_cast<int>(lb_.size());
    qp.M = SparseMatrix(m, cols_);
    qp.M.setFromTriplets(trip_.begin(), trip_.end());
    qp.M.makeCompressed();
    qp.lb = Eigen::Map<const VectorXd>(lb_.data(), m);
    qp.ub = Eigen::Map<const VectorXd>(ub_.data(), m);
    qp.row_names = names_;
  }

 private:
  int cols_;
  std::vector<Eigen::Triplet<double>> trip_;
  std::vector<double> lb_, ub_;
  std::vector<std::string> names_;
  std::vector<std::pair<int, int>> conflicts_;
};

VectorXd constant(int n, double v) { return VectorXd::Constant(n, v); }

StepLayout make_layout(const OperatingPoint& op, const SensitivityMatrices& mats, const Scenario& sc,
                       const std::vector<BatterySpec>& batteries, int offset, const FeederModel& model) {
  StepLayout lay;
  lay.offset = offset;
  lay.n = model.size();
  lay.gens = static_cast<int>(sc.generators.size());
  lay.batteries = static_cast<int>(batteries.size());
  for (const auto& g : sc.generators) lay.gen_nodes.push_back(g.node);
  for (const auto& b : batteries) lay.battery_nodes.push_back(b.node);
  lay.envelope = build_envelope(op, mats);
  lay.op = op;
  lay.P_L = sc.P_L;
  lay.Q_L = sc.Q_L;
  return lay;
}

// Constraint rows of one period. Returns nothing; rows go to `rb`.
void add_step_rows(RowBuilder& rb, const StepLayout& lay, const SensitivityMatrices& mats, const Scenario& sc,
                   const std::vector<BatterySpec>& batteries, const FeederModel& model, const std::string& tag) {
  const int n = lay.n, w = lay.width();
  std::vector<int> node_ids(model.node_ids.begin() + 1, model.node_ids.end());
  auto zero = [&](int rows) { return Affine{MatrixXd::Zero(rows, w), VectorXd::Zero(rows)}; };

  Affine p = zero(n), q = zero(n), lplus = zero(n);
  for (int g = 0; g < lay.gens; ++g) {
    p.coef(lay.gen_nodes[g] - 1, g) += 1.0;
    q.coef(lay.gen_nodes[g] - 1, lay.gens + g) += 1.0;
  }
  for (int b = 0; b < lay.batteries; ++b) p.coef(lay.battery_nodes[b] - 1, 2 * lay.gens + n + b) += 1.0;
  p.cst = -lay.P_L;
  q.cst = -lay.Q_L;
  for (int k = 0; k < n; ++k) lplus.coef(k, 2 * lay.gens + k) = 1.0;

  const CurrentEnvelope& env = lay.envelope;
  const Affine lo = (env.Lp * p + env.Lq * q).plus(env.c0);
  const Affine V_lin = (mats.M_p * p + mats.M_q * q).plus(constant(n, model.v0));
  const Affine P_plus = mats.C * p - mats.D_R * lo;
  const Affine P_minus = mats.C * p - mats.D_R * lplus;
  const Affine Q_plus = mats.C * q - mats.D_X * lo;
  const Affine Q_minus = mats.C * q - mats.D_X * lplus;
  const Affine V_plus = V_lin - mats.H * lo;
  const Affine V_minus = V_lin - mats.H * lplus;

  VectorXd pmin(n), pmax(n), qmin(n), qmax(n), lmax(n), vmin(n), vmax(n);
  for (int k = 1; k <= n; ++k) {
    const Branch& b = model.branches[k - 1];
    pmin(k - 1) = b.pmin;
    pmax(k - 1) = b.pmax;
    qmin(k - 1) = b.qmin;
    qmax(k - 1) = b.qmax;
    lmax(k - 1) = b.lmax;
    vmin(k - 1) = model.vmin[k];
    vmax(k - 1) = model.vmax[k];
  }
  const VectorXd ninf = constant(n, -kQpInfinity), pinf = constant(n, kQpInfinity);

  for (int g = 0; g < lay.gens; ++g) {
    const Generator& gen = sc.generators[g];
    const std::string id = std::to_string(model.node_ids[gen.node]);
    rb.add_row({{lay.pg(g), 1.0}}, gen.pmin, gen.pmax, tag + "pg[" + id + "]");
    rb.add_row({{lay.qg(g), 1.0}}, gen.qmin, gen.qmax, tag + "qg[" + id + "]");
  }
  for (int b = 0; b < lay.batteries; ++b) {
    const std::string id = std::to_string(model.node_ids[batteries[b].node]);
    rb.add_row({{lay.pb(b), 1.0}}, -batteries[b].p_rate, batteries[b].p_rate, tag + "pb[" + id + "]");
  }
  rb.add(P_plus, lay.offset, ninf, pmax, tag + "P+", node_ids);
  rb.add(P_minus, lay.offset, pmin, pinf, tag + "P-", node_ids);
  rb.add(Q_plus, lay.offset, ninf, qmax, tag + "Q+", node_ids);
  rb.add(Q_minus, lay.offset, qmin, pinf, tag + "Q-", node_ids);
  rb.add(V_plus, lay.offset, ninf, vmax, tag + "V+", node_ids);
  rb.add(V_minus, lay.offset, vmin, pinf, tag + "V-", node_ids);
  // l+ >= max(l0, 2 l- - l0) as two epigraph pieces, then l+ <= lmax.
  const int lmin_row = rb.rows();
  rb.add(lplus, lay.offset, env.l0, pinf, tag + "l+min", node_ids);
  const int lmax_row = rb.rows();
  rb.add(lplus, lay.offset, ninf, lmax, tag + "l+max", node_ids);
  for (int k = 0; k < n; ++k) {
    if (env.l0(k) > lmax(k)) rb.conflict(lmin_row + k, lmax_row + k);
  }
  rb.add(lplus - lo * 2.0, lay.offset, -env.l0, pinf, tag + "l+epi", node_ids);
}

void add_objective(const Scenario& sc, const StepLayout& lay, std::vector<Eigen::Triplet<double>>& g, VectorXd& c) {
  for (int i = 0; i < lay.gens; ++i) {
    const Generator& gen = sc.generators[i];
    switch (sc.objective) {
      case Objective::cost:
        if (gen.c1 != 0.0) g.emplace_back(lay.pg(i), lay.pg(i), 2.0 * gen.c1);
        c(lay.pg(i)) += gen.c2;
        break;
      case Objective::hosting:
      case Objective::flex_up:
        c(lay.pg(i)) -= 1.0;
        break;
      case Objective::flex_down:
        c(lay.pg(i)) += 1.0;
        break;
    }
  }
}

std::vector<std::string> variable_names(const StepLayout& lay, const FeederModel& model, const std::string& tag) {
  std::vector<std::string> names;
  for (int g = 0; g < lay.gens; ++g) names.push_back(tag + "pg[" + std::to_string(model.node_ids[lay.gen_nodes[g]]) + "]");
  for (int g = 0; g < lay.gens; ++g) names.push_back(tag + "qg[" + std::to_string(model.node_ids[lay.gen_nodes[g]]) + "]");
  for (int k = 1; k <= lay.n; ++k) names.push_back(tag + "l+[" + std::to_string(model.node_ids[k]) + "]");
  for (int b = 0; b < lay.batteries; ++b) {
    names.push_back(tag + "pb[" + std::to_string(model.node_ids[lay.battery_nodes[b]]) + "]");
  }
  return names;
}

std::vector<std::string> top_rows(const VectorXd& cert, const std::vector<std::string>& names) {
  std::vector<int> idx(cert.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return std::abs(cert(a)) > std::abs(cert(b)); });
  std::vector<std::string> out;
  for (int i : idx) {
    if (std::abs(cert(i)) < 1e-6 || out.size() >= 8) break;
    out.push_back(names[i]);
  }
  return out;
}

void check_status(const OpfProgram& program, const QpSolution& sol) {
  switch (sol.status) {
    case QpStatus::optimal: return;
    case QpStatus::primal_infeasible: {
      auto rows = top_rows(sol.certificate, program.qp.row_names);
      std::string msg = "robust OPF is infeasible; certificate rows:";
      for (const auto& r : rows) msg += " " + r;
      throw OpfInfeasible(msg, sol.certificate, rows);
    }
    case QpStatus::dual_infeasible:
      throw OpfInfeasible("robust OPF is unbounded (dual infeasible)", sol.certificate, {});
    case QpStatus::max_iterations:
      throw OpfSolverLimit("QP solver reached its iteration limit (primal residual " +
                           std::to_string(sol.primal_res) + ", dual residual " + std::to_string(sol.dual_res) + ")");
  }
}

RobustOpfSolution extract_step(const StepLayout& lay, const VectorXd& x, const SensitivityMatrices& mats,
                               const FeederModel& model) {
  const int n = lay.n;
  RobustOpfSolution s;
  s.p_g.resize(lay.gens);
  s.q_g.resize(lay.gens);
  for (int g = 0; g < lay.gens; ++g) {
    s.p_g(g) = x(lay.pg(g));
    s.q_g(g) = x(lay.qg(g));
    s.gen_node_ids.push_back(model.node_ids[lay.gen_nodes[g]]);
  }
  s.p = -lay.P_L;
  s.q = -lay.Q_L;
  for (int g = 0; g < lay.gens; ++g) {
    s.p(lay.gen_nodes[g] - 1) += s.p_g(g);
    s.q(lay.gen_nodes[g] - 1) += s.q_g(g);
  }
  for (int b = 0; b < lay.batteries; ++b) s.p(lay.battery_nodes[b] - 1) += x(lay.pb(b));
  s.l_plus_var = x.segment(lay.lplus(0), n);
  s.l_minus = lay.envelope.lower(s.injection());
  s.l_plus = lay.envelope.upper_from_lower(s.l_minus);
  const VectorXd Cp = mats.C * s.p, Cq = mats.C * s.q;
  const VectorXd V_lin = VectorXd::Constant(n, model.v0) + mats.M_p * s.p + mats.M_q * s.q;
  s.P_plus = Cp - mats.D_R * s.l_minus;
  s.P_minus = Cp - mats.D_R * s.l_plus;
  s.Q_plus = Cq - mats.D_X * s.l_minus;
  s.Q_minus = Cq - mats.D_X * s.l_plus;
  s.V_plus = V_lin - mats.H * s.l_minus;
  s.V_minus = V_lin - mats.H * s.l_plus;
  s.node_ids.assign(model.node_ids.begin() + 1, model.node_ids.end());

  // The solver's l+ may sit above the tight value; the constraints are
  // monotone in l+, so the tight envelopes satisfy them as well.
  const double tol = 1e-6;
  auto fail = [](const std::string& what) { throw std::logic_error("robust solution invariant violated: " + what); };
  if ((s.P_minus - s.P_plus).maxCoeff() > tol || (s.Q_minus - s.Q_plus).maxCoeff() > tol ||
      (s.V_minus - s.V_plus).maxCoeff() > tol) {
    fail("envelope ordering");
  }
  if ((s.l_plus - s.l_plus_var).maxCoeff() > tol) fail("epigraph variable below its bound");
  for (int k = 1; k <= n; ++k) {
    const Branch& b = model.branches[k - 1];
    const int i = k - 1;
    if (s.P_plus(i) > b.pmax + tol || s.P_minus(i) < b.pmin - tol || s.Q_plus(i) > b.qmax + tol ||
        s.Q_minus(i) < b.qmin - tol || s.V_plus(i) > model.vmax[k] + tol || s.V_minus(i) < model.vmin[k] - tol ||
        s.l_plus(i) > b.lmax + tol) {
      fail("limit at node " + std::to_string(model.node_ids[k]));
    }
  }
  return s;
}

}  // namespace

std::string to_string(Objective o) {
  switch (o) {
    case Objective::cost: return "cost";
    case Objective::hosting: return "hosting";
    case Objective::flex_up: return "flex_up";
    case Objective::flex_down: return "flex_down";
  }
  return "unknown";
}

Objective objective_from_string(const std::string& s) {
  if (s == "cost") return Objective::cost;
  if (s == "hosting") return Objective::hosting;
  if (s == "flex_up") return Objective::flex_up;
  if (s == "flex_down") return Objective::flex_down;
  throw std::invalid_argument("unknown objective '" + s + "'");
}

void Scenario::validate(const FeederModel& model) const {
  const int n = model.size();
  if (P_L.size() != n || Q_L.size() != n) throw std::invalid_argument("scenario load vectors do not match feeder size");
  if (!P_L.allFinite() || !Q_L.allFinite()) throw std::invalid_argument("scenario loads must be finite");
  for (const auto& g : generators) {
    if (g.node < 1 || g.node > n) throw std::invalid_argument("generator at a non-existent node");
    if (g.pmin > g.pmax || g.qmin > g.qmax) throw std::invalid_argument("generator bounds are inverted");
    if (!std::isfinite(g.c1) || !std::isfinite(g.c2) || g.c1 < 0.0) {
      throw std::invalid_argument("generator costs must be finite with c1 >= 0");
    }
  }
  for (const auto& b : batteries) {
    if (b.node < 1 || b.node > n) throw std::invalid_argument("battery at a non-existent node");
    if (b.p_rate < 0.0) throw std::invalid_argument("battery rating must be non-negative");
    if (!(b.b_min <= b.b0 && b.b0 <= b.b_max)) throw std::invalid_argument("battery needs b_min <= b0 <= b_max");
    if (b.b_final && (*b.b_final < b.b_min || *b.b_final > b.b_max)) {
      throw std::invalid_argument("battery final state of charge outside its bounds");
    }
  }
  if (horizon) {
    if (horizon->steps < 1 || !(horizon->dt_h > 0.0)) throw std::invalid_argument("horizon needs T >= 1 and dt > 0");
    if (!horizon->load_series.empty() && static_cast<int>(horizon->load_series.size()) != horizon->steps) {
      throw std::invalid_argument("load_series length must equal T");
    }
  }
}

Scenario Scenario::at_step(int t) const {
  Scenario s = *this;
  if (horizon && !horizon->load_series.empty()) {
    const double k = horizon->load_series.at(t);
    s.P_L = P_L * k;
    s.Q_L = Q_L * k;
  }
  return s;
}

OpfProgram build_p3(const SensitivityMatrices& mats, const OperatingPoint& op, const Scenario& scenario,
                    const FeederModel& model) {
  scenario.validate(model);
  const int n = model.size();
  if (mats.size() != n || op.l0.size() != n) throw std::invalid_argument("build_p3: dimension mismatch");
  if (scenario.objective == Objective::cost && scenario.generators.empty()) {
    throw std::invalid_argument("build_p3: cost objective needs at least one generator");
  }
  OpfProgram prog;
  prog.steps.push_back(make_layout(op, mats, scenario, {}, 0, model));
  const StepLayout& lay = prog.steps.front();
  const int cols = lay.width();

  RowBuilder rb(cols);
  add_step_rows(rb, lay, mats, scenario, {}, model, "");
  rb.check_conflicts();
  rb.finish(prog.qp);

  std::vector<Eigen::Triplet<double>> g;
  prog.qp.c = VectorXd::Zero(cols);
  add_objective(scenario, lay, g, prog.qp.c);
  prog.qp.G = SparseMatrix(cols, cols);
  prog.qp.G.setFromTriplets(g.begin(), g.end());
  prog.qp.var_names = variable_names(lay, model, "");
  return prog;
}

RobustOpfSolution extract_solution(const OpfProgram& program, const QpSolution& sol, const FeederModel& model) {
  check_status(program, sol);
  if (program.steps.size() != 1) throw std::invalid_argument("extract_solution expects a single-period program");
  const SensitivityMatrices mats = build_sensitivities(model);
  RobustOpfSolution s = extract_step(program.steps.front(), sol.x, mats, model);
  s.objective = sol.objective;
  s.status = sol.status;
  return s;
}

OpfProgram build_p4(const SensitivityMatrices& mats, const std::vector<OperatingPoint>& ops,
                    const std::vector<Scenario>& scenarios, const std::vector<BatterySpec>& batteries, int steps,
                    double dt_h, const FeederModel& model) {
  if (steps < 1) throw std::invalid_argument("build_p4: horizon must have at least one step");
  if (static_cast<int>(ops.size()) != steps) throw std::invalid_argument("build_p4: one operating point per step required");
  if (static_cast<int>(scenarios.size()) != steps) throw std::invalid_argument("build_p4: one scenario per step required");
  if (!(dt_h > 0.0)) throw std::invalid_argument("build_p4: dt must be positive");
  for (const auto& sc : scenarios) sc.validate(model);
  for (const auto& b : batteries) {
    if (b.node < 1 || b.node > model.size() || b.p_rate < 0.0 || !(b.b_min <= b.b0 && b.b0 <= b.b_max)) {
      throw std::invalid_argument("build_p4: invalid battery");
    }
  }
  if (scenarios.front().objective == Objective::cost &&
      std::all_of(scenarios.begin(), scenarios.end(), [](const Scenario& s) { return s.generators.empty(); })) {
    throw std::invalid_argument("build_p4: cost objective needs at least one generator");
  }

  OpfProgram prog;
  prog.batteries = batteries;
  prog.dt_h = dt_h;
  int offset = 0;
  for (int t = 0; t < steps; ++t) {
    prog.steps.push_back(make_layout(ops[t], mats, scenarios[t], batteries, offset, model));
    offset += prog.steps.back().width();
  }
  const int cols = offset;

  // Period blocks can be assembled independently; rows are concatenated in step order.
  RowBuilder rb(cols);
  for (int t = 0; t < steps; ++t) {
    const std::string tag = steps == 1 ? "" : "t" + std::to_string(t) + ".";
    add_step_rows(rb, prog.steps[t], mats, scenarios[t], batteries, model, tag);
  }
  // State of charge, eliminated: B(t) = B0 - dt * sum_{s<t} P_b(s) for t = 1..T.
  for (int b = 0; b < static_cast<int>(batteries.size()); ++b) {
    const BatterySpec& bat = batteries[b];
    const std::string id = std::to_string(model.node_ids[bat.node]);
    std::vector<std::pair<int, double>> coefs;
    for (int t = 1; t <= steps; ++t) {
      coefs.emplace_back(prog.steps[t - 1].pb(b), -dt_h);
      double lo = bat.b_min - bat.b0, hi = bat.b_max - bat.b0;
      if (t == steps && bat.b_final) lo = hi = *bat.b_final - bat.b0;
      rb.add_row(coefs, lo, hi, "soc" + std::to_string(t) + "[" + id + "]");
    }
  }
  rb.check_conflicts();
  rb.finish(prog.qp);

  std::vector<Eigen::Triplet<double>> g;
  prog.qp.c = VectorXd::Zero(cols);
  for (int t = 0; t < steps; ++t) add_objective(scenarios[t], prog.steps[t], g, prog.qp.c);
  prog.qp.G = SparseMatrix(cols, cols);
  prog.qp.G.setFromTriplets(g.begin(), g.end());
  for (int t = 0; t < steps; ++t) {
    auto names = variable_names(prog.steps[t], model, steps == 1 ? "" : "t" + std::to_string(t) + ".");
    prog.qp.var_names.insert(prog.qp.var_names.end(), names.begin(), names.end());
  }
  return prog;
}

DispatchSchedule extract_schedule(const OpfProgram& program, const QpSolution& sol, const FeederModel& model) {
  check_status(program, sol);
  const SensitivityMatrices mats = build_sensitivities(model);
  DispatchSchedule d;
  d.steps = static_cast<int>(program.steps.size());
  d.dt_h = program.dt_h;
  d.objective = sol.objective;
  d.status = sol.status;
  const int nb = static_cast<int>(program.batteries.size());
  d.P_b = MatrixXd::Zero(d.steps, nb);
  d.soc = MatrixXd::Zero(d.steps + 1, nb);
  for (int b = 0; b < nb; ++b) {
    d.battery_node_ids.push_back(model.node_ids[program.batteries[b].node]);
    d.soc(0, b) = program.batteries[b].b0;
  }
  for (int t = 0; t < d.steps; ++t) {
    RobustOpfSolution s = extract_step(program.steps[t], sol.x, mats, model);
    s.status = sol.status;
    s.objective = 0.0;
    for (int g = 0; g < s.p_g.size(); ++g) {
      const int j = program.steps[t].pg(g);
      s.objective += 0.5 * program.qp.G.coeff(j, j) * sol.x(j) * sol.x(j) + program.qp.c(j) * sol.x(j);
    }
    d.periods.push_back(std::move(s));
    for (int b = 0; b < nb; ++b) {
      d.P_b(t, b) = sol.x(program.steps[t].pb(b));
      d.soc(t + 1, b) = d.soc(t, b) - d.P_b(t, b) * d.dt_h;
    }
  }
  const double tol = 1e-6;
  for (int b = 0; b < nb; ++b) {
    const BatterySpec& bat = program.batteries[b];
    if (d.soc.col(b).maxCoeff() > bat.b_max + tol || d.soc.col(b).minCoeff() < bat.b_min - tol) {
      throw std::logic_error("schedule state of charge leaves its bounds");
    }
  }
  return d;
}

RobustOpfSolution solve_p3(const SensitivityMatrices& mats, const OperatingPoint& op, const Scenario& scenario,
                           const FeederModel& model, const QpSettings& settings) {
  const OpfProgram prog = build_p3(mats, op, scenario, model);
  return extract_solution(prog, solve_qp(prog.qp, settings), model);
}

}  // namespace feeder_envelope
