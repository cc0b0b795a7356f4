#include <doctest.h>

#include "feeder_envelope/bounds.hpp"
#include "support.hpp"

using namespace fe_test;

namespace {

OperatingPoint point(double P, double Q, double v) {
  OperatingPoint op;
  op.P0 = Eigen::VectorXd::Constant(1, P);
  op.Q0 = Eigen::VectorXd::Constant(1, Q);
  op.V0 = Eigen::VectorXd::Constant(1, v);
  op.l0 = Eigen::VectorXd::Constant(1, (P * P + Q * Q) / v);
  op.v0 = v;
  return op;
}

}  // namespace

TEST_CASE("operating point at zero injection is flat") {
  FeederModel m = feeder13();
  OperatingPoint op = operating_point(m, InjectionProfile::zero(m.size()));
  CHECK(op.P0.isZero(0.0));
  CHECK(op.Q0.isZero(0.0));
  CHECK(op.l0.isZero(0.0));
  CHECK(op.V0.isApproxToConstant(m.v0, 0.0));
}

TEST_CASE("operating point on the nominal load has current on every loaded branch") {
  FeederModel m = feeder13();
  Scenario sc = scenario13(m, "nominal_cost.json");
  OperatingPoint op = operating_point(m, sc.forecast_injection());
  SensitivityMatrices mats = build_sensitivities(m);
  const Eigen::VectorXd downstream = mats.C * sc.P_L.cwiseAbs() + mats.C * sc.Q_L.cwiseAbs();
  for (int k = 0; k < m.size(); ++k) {
    CAPTURE(m.node_ids[k + 1]);
    CHECK(std::isfinite(op.l0(k)));
    if (downstream(k) > 0.0) CHECK(op.l0(k) > 0.0);
  }
  CHECK((op.V0.array() > 0.0).all());
}

TEST_CASE("operating point propagates load flow failure") {
  FeederModel m = two_node(1.0, 0.05, 0.1);
  InjectionProfile inj{Eigen::VectorXd::Constant(1, -4.0), Eigen::VectorXd::Constant(1, -2.0)};
  CHECK_THROWS_AS(operating_point(m, inj), LoadFlowError);
  LoadFlowOptions opt;
  opt.max_iter = 1;
  Scenario sc = scenario13(feeder13(), "nominal_cost.json");
  CHECK_THROWS_AS(operating_point(feeder13(), sc.forecast_injection(), opt), LoadFlowError);
}

TEST_CASE("jacobian entries") {
  SUBCASE("no-load point is exactly zero") {
    JacobianBlocks j = jacobian(point(0.0, 0.0, 1.0));
    CHECK(j.jP(0) == 0.0);
    CHECK(j.jQ(0) == 0.0);
    CHECK(j.jV(0) == 0.0);
  }
  SUBCASE("direct substitution") {
    JacobianBlocks j = jacobian(point(0.3, 0.1, 1.0));
    CHECK(j.jP(0) == doctest::Approx(0.6));
    CHECK(j.jQ(0) == doctest::Approx(0.2));
    CHECK(j.jV(0) == doctest::Approx(-0.10));
  }
  SUBCASE("jV equals -l0/V0 at a converged point") {
    FeederModel m = feeder13();
    Scenario sc = scenario13(m, "nominal_cost.json");
    OperatingPoint op = operating_point(m, sc.forecast_injection());
    JacobianBlocks j = jacobian(op);
    CHECK((j.jV.array() <= 0.0).all());
    CHECK((j.jV + op.l0.cwiseQuotient(op.V0)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("hessian spectrum") {
  SUBCASE("zero flow") {
    auto e = hessian_eigs(point(0.0, 0.0, 1.0), 0);
    CHECK(e[0] == doctest::Approx(0.0));
    CHECK(e[1] == doctest::Approx(2.0));
    CHECK(e[2] == doctest::Approx(2.0));
  }
  SUBCASE("P=0.3 Q=0.4") {
    auto e = hessian_eigs(point(0.3, 0.4, 1.0), 0);
    CHECK(e[0] == doctest::Approx(0.0));
    CHECK(e[1] == doctest::Approx(2.0));
    CHECK(e[2] == doctest::Approx(2.5));
  }
  SUBCASE("random points against a numerical eigensolver") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> pq(-3.0, 3.0), vv(0.8, 1.2);
    for (int i = 0; i < 200; ++i) {
      OperatingPoint op = point(pq(rng), pq(rng), vv(rng));
      Eigen::Matrix3d H = hessian_oracle(op.P0(0), op.Q0(0), op.V0(0));
      CHECK((hessian(op, 0) - H).cwiseAbs().maxCoeff() == 0.0);
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(H);
      auto e = hessian_eigs(op, 0);
      for (int k = 0; k < 3; ++k) CHECK(std::abs(e[k] - es.eigenvalues()(k)) <= 1e-9);
    }
  }
}

TEST_CASE("envelope at the expansion point") {
  FeederModel m = feeder13();
  Scenario sc = scenario13(m, "nominal_cost.json");
  SensitivityMatrices mats = build_sensitivities(m);
  OperatingPoint op = operating_point(m, sc.forecast_injection());
  CurrentEnvelope env = build_envelope(op, mats);
  CHECK((env.lower(op.injection) - op.l0).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((env.upper(op.injection) - op.l0).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("envelope degenerates at no load") {
  FeederModel m = feeder13();
  SensitivityMatrices mats = build_sensitivities(m);
  OperatingPoint op = operating_point(m, InjectionProfile::zero(m.size()));
  CurrentEnvelope env = build_envelope(op, mats);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  InjectionProfile inj{Eigen::VectorXd::NullaryExpr(m.size(), [&] { return g(rng); }),
                       Eigen::VectorXd::NullaryExpr(m.size(), [&] { return g(rng); })};
  CHECK(env.lower(inj).isZero(0.0));
  CHECK(env.upper(inj).isZero(0.0));
}

TEST_CASE("lower envelope never exceeds the upper envelope") {
  FeederModel m = feeder13();
  Scenario sc = scenario13(m, "nominal_cost.json");
  SensitivityMatrices mats = build_sensitivities(m);
  CurrentEnvelope env = build_envelope(operating_point(m, sc.forecast_injection()), mats);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int i = 0; i < 200; ++i) {
    InjectionProfile inj{Eigen::VectorXd::NullaryExpr(m.size(), [&] { return g(rng); }),
                         Eigen::VectorXd::NullaryExpr(m.size(), [&] { return g(rng); })};
    CHECK(((env.lower(inj) - env.upper(inj)).array() <= 0.0).all());
  }
}

TEST_CASE("first-order bound with exact deviations underestimates the current") {
  std::mt19937_64 rng(21);
  FeederModel m = feeder13();
  Scenario sc = scenario13(m, "nominal_cost.json");
  OperatingPoint op = operating_point(m, sc.forecast_injection());
  std::normal_distribution<double> g(0.0, 0.3);
  for (int i = 0; i < 200; ++i) {
    InjectionProfile inj = op.injection;
    for (int k = 0; k < m.size(); ++k) {
      inj.p(k) += g(rng);
      inj.q(k) += g(rng);
    }
    LoadFlowState s = solve_loadflow(m, inj);
    REQUIRE(s.converged());
    // Oracle form of the bound, written out per branch.
    for (int k = 0; k < m.size(); ++k) {
      const double P0 = op.P0(k), Q0 = op.Q0(k), V0 = op.V0(k);
      const double lin = op.l0(k) + 2 * P0 / V0 * (s.P(k) - P0) + 2 * Q0 / V0 * (s.Q(k) - Q0) -
                         (P0 * P0 + Q0 * Q0) / (V0 * V0) * (s.V(k) - V0);
      CHECK(lin <= s.l(k) + 1e-9);
    }
    CHECK(((linear_lower_bound(op, s) - s.l).array() <= 1e-9).all());
  }
}

TEST_CASE("injection-space envelope differs from the exact-deviation bound only by the frozen-loss error") {
  std::mt19937_64 rng(22);
  FeederModel m = feeder13();
  Scenario sc = scenario13(m, "nominal_cost.json");
  SensitivityMatrices mats = build_sensitivities(m);
  OperatingPoint op = operating_point(m, sc.forecast_injection());
  CurrentEnvelope env = build_envelope(op, mats);
  const JacobianBlocks jb = jacobian(op);
  std::normal_distribution<double> g(0.0, 1.0);
  int upper_checked = 0;
  for (int i = 0; i < 200; ++i) {
    const double s = i < 100 ? 1e-3 : 1e-1;
    InjectionProfile inj = op.injection;
    for (int k = 0; k < m.size(); ++k) {
      inj.p(k) += s * g(rng);
      inj.q(k) += s * g(rng);
    }
    LoadFlowState st = solve_loadflow(m, inj);
    REQUIRE(st.converged());
    // Linear model with losses frozen at l0.
    const Eigen::VectorXd Pl = mats.C * inj.p - mats.D_R * op.l0;
    const Eigen::VectorXd Ql = mats.C * inj.q - mats.D_X * op.l0;
    const Eigen::VectorXd Vl =
        Eigen::VectorXd::Constant(m.size(), m.v0) + mats.M_p * inj.p + mats.M_q * inj.q - mats.H * op.l0;
    const Eigen::VectorXd lo = env.lower(inj), hi = env.upper(inj);
    const Eigen::VectorXd exact_lo = linear_lower_bound(op, st);
    for (int k = 0; k < m.size(); ++k) {
      const double frozen = jb.jP(k) * (Pl(k) - st.P(k)) + jb.jQ(k) * (Ql(k) - st.Q(k)) + jb.jV(k) * (Vl(k) - st.V(k));
      CHECK(lo(k) - exact_lo(k) == doctest::Approx(frozen).epsilon(1e-9).scale(1.0));
      CHECK(lo(k) <= st.l(k) + std::abs(frozen) + 1e-9);
      // Upper side: where the first-order term dominates the curvature term.
      if (op.l0(k) == 0.0 || s > 1e-2) continue;
      const Eigen::Vector3d dx(st.P(k) - op.P0(k), st.Q(k) - op.Q0(k), st.V(k) - op.V0(k));
      const double first = jb.jP(k) * dx(0) + jb.jQ(k) * dx(1) + jb.jV(k) * dx(2);
      const double second = 0.5 * dx.dot(hessian(op, k) * dx);
      if (std::abs(first) < 10.0 * std::abs(second)) continue;
      ++upper_checked;
      CHECK(st.l(k) <= hi(k) + 2.0 * std::abs(frozen) + 1e-12);
    }
  }
  CHECK(upper_checked > 500);
}
