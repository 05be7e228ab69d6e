// SPDX-License-Identifier: MIT

#include "qep/channels.hpp"

#include "doctest.h"
#include "test_util.hpp"

#include <cmath>
#include <complex>

namespace {

using qep::Complex;
using qep::Matrix;
using qep::RVector;
using qep::Vector;

// CNOT with the system qubit as control and the environment as target,
// basis ordering |s, e> -> index 2 s + e.
Matrix cnot_unitary() {
  Matrix u = Matrix::Zero(4, 4);
  u(0, 0) = u(1, 1) = u(2, 3) = u(3, 2) = 1.0;
  return u;
}

// Thermalizing qubit channel (generalized amplitude damping): fixed point
// diag(1 - p, p), damping strength eta, detailed-balance entropy increments.
qep::KrausMap thermal_qubit_map(double p, double eta) {
  const double beta_eps = std::log((1.0 - p) / p);
  qep::KrausMap map;
  map.dim = 2;
  qep::KrausOperator op;

  op.m = Matrix::Zero(2, 2);
  op.m(0, 0) = 1.0;
  op.m(1, 1) = std::sqrt(1.0 - eta);
  op.m *= std::sqrt(1.0 - p);
  op.label = "stay-";
  op.sigma_e = 0.0;
  map.ops.push_back(op);

  op.m = Matrix::Zero(2, 2);
  op.m(0, 1) = std::sqrt(eta) * std::sqrt(1.0 - p);
  op.label = "down";
  op.sigma_e = beta_eps;
  map.ops.push_back(op);

  op.m = Matrix::Zero(2, 2);
  op.m(0, 0) = std::sqrt(1.0 - eta);
  op.m(1, 1) = 1.0;
  op.m *= std::sqrt(p);
  op.label = "stay+";
  op.sigma_e = 0.0;
  map.ops.push_back(op);

  op.m = Matrix::Zero(2, 2);
  op.m(1, 0) = std::sqrt(eta) * std::sqrt(p);
  op.label = "up";
  op.sigma_e = -beta_eps;
  map.ops.push_back(op);

  return map;
}

qep::KrausMap depolarizing_map(double lambda) {
  qep::KrausMap map;
  map.dim = 2;
  const Matrix id = Matrix::Identity(2, 2);
  const Matrix paulis[3] = {qep::testutil::pauli_x(), qep::testutil::pauli_y(),
                            qep::testutil::pauli_z()};
  qep::KrausOperator op;
  op.m = std::sqrt(1.0 - 0.75 * lambda) * id;
  op.label = "id";
  op.sigma_e = 0.0;
  map.ops.push_back(op);
  for (int i = 0; i < 3; ++i) {
    op.m = std::sqrt(0.25 * lambda) * paulis[i];
    op.label = std::string("pauli") + char('x' + i);
    op.sigma_e = 0.0;
    map.ops.push_back(op);
  }
  return map;
}

}  // namespace

TEST_SUITE("channels") {

TEST_CASE("kraus dilation of a controlled flip") {
  const double beta_eps = 2.5;
  const double z = 1.0 + std::exp(-beta_eps);
  RVector q(2);
  q << 1.0 / z, std::exp(-beta_eps) / z;
  CHECK(std::abs(q(0) - 0.92414181997875655) < 1e-15);

  const auto basis = qep::testutil::computational_basis(2);
  const auto map = qep::kraus_from_unitary(cnot_unitary(), q, basis, basis, 2);
  REQUIRE(map.ops.size() == 4);

  // nu-major, mu-minor ordering with (nu, mu) recorded on each operator.
  CHECK(map.ops[0].in_index == 0);
  CHECK(map.ops[0].out_index == 0);
  CHECK(map.ops[1].in_index == 0);
  CHECK(map.ops[1].out_index == 1);
  CHECK(map.ops[2].in_index == 1);
  CHECK(map.ops[2].out_index == 0);

  // The environment flips exactly when the control is excited, so each
  // operator is sqrt(q_nu) times a projector onto one control state.
  CHECK(std::abs(map.ops[0].m(0, 0) - Complex(0.961322953007, 0)) < 1e-12);
  CHECK(std::abs(map.ops[0].m(1, 1)) < 1e-15);
  CHECK(std::abs(map.ops[1].m(1, 1) - Complex(0.961322953007, 0)) < 1e-12);
  CHECK(std::abs(map.ops[2].m(1, 1) - Complex(0.275423637368, 0)) < 1e-12);
  CHECK(std::abs(map.ops[3].m(0, 0) - Complex(0.275423637368, 0)) < 1e-12);

  // sigma_e is not assigned by the dilation itself.
  CHECK_FALSE(map.ops[0].sigma_e.has_value());

  // Acting on the control, the channel is a complete dephasing.
  Matrix rho(2, 2);
  rho << 0.9, Complex(0.2, 0.1), Complex(0.2, -0.1), 0.1;
  const Matrix out = qep::apply(map, rho);
  CHECK(std::abs(out(0, 0) - Complex(0.9, 0)) < 1e-14);
  CHECK(std::abs(out(1, 1) - Complex(0.1, 0)) < 1e-14);
  CHECK(std::abs(out(0, 1)) < 1e-14);

  // apply_operation returns the unnormalized branch and its weight.
  const auto [branch, prob] = qep::apply_operation(map.ops[0], rho);
  CHECK(std::abs(prob - 0.9 * q(0)) < 1e-14);
  CHECK(std::abs(branch(0, 0).real() - 0.9 * q(0)) < 1e-14);

  CHECK_THROWS_AS(
      qep::kraus_from_unitary(cnot_unitary() * 1.1, q, basis, basis, 2),
      std::invalid_argument);
}

TEST_CASE("sigma assignment from environment distributions") {
  const auto basis = qep::testutil::computational_basis(2);
  RVector q(2), qt(2);
  q << 0.7, 0.3;
  qt << 0.4, 0.6;
  auto map = qep::kraus_from_unitary(cnot_unitary(), q, basis, basis, 2);
  qep::assign_sigma_from_distributions(map, q, qt);
  for (const auto& op : map.ops) {
    REQUIRE(op.sigma_e.has_value());
    CHECK(std::abs(*op.sigma_e -
                   (std::log(q(op.in_index)) - std::log(qt(op.out_index)))) <
          1e-15);
  }
}

TEST_CASE("invariant state: transfer matrix and power iteration") {
  const auto map = thermal_qubit_map(0.2, 0.35);
  const Matrix pi = qep::invariant_state(map);
  CHECK(std::abs(pi(0, 0).real() - 0.8) < 1e-12);
  CHECK(std::abs(pi(1, 1).real() - 0.2) < 1e-12);
  CHECK(std::abs(pi(0, 1)) < 1e-12);

  // Reset channel on d = 18 exercises the power-iteration branch.
  const int d = 18;
  qep::rng::Stream stream(11, 0);
  RVector target(d);
  for (int i = 0; i < d; ++i) target(i) = 0.2 + stream.uniform();
  target /= target.sum();
  qep::KrausMap reset;
  reset.dim = d;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      qep::KrausOperator op;
      op.m = Matrix::Zero(d, d);
      op.m(i, j) = std::sqrt(target(i));
      reset.ops.push_back(std::move(op));
    }
  const Matrix pi_big = qep::invariant_state(reset);
  for (int i = 0; i < d; ++i)
    CHECK(std::abs(pi_big(i, i).real() - target(i)) < 1e-12);

  // A channel whose unique fixed point is pure must be rejected.
  qep::KrausMap damp;
  damp.dim = 2;
  qep::KrausOperator k0, k1;
  k0.m = Matrix::Zero(2, 2);
  k0.m(0, 0) = 1.0;
  k1.m = Matrix::Zero(2, 2);
  k1.m(0, 1) = 1.0;
  damp.ops = {k0, k1};
  CHECK_THROWS_AS(qep::invariant_state(damp), std::runtime_error);
}

TEST_CASE("nonequilibrium potential of a thermal state") {
  const double p = 0.25;
  Matrix pi = Matrix::Zero(2, 2);
  pi(0, 0) = 1.0 - p;
  pi(1, 1) = p;
  const auto pot = qep::nonequilibrium_potential(pi);
  CHECK(std::abs(pot.phi(0) + std::log(p)) < 1e-14);      // ascending pi order
  CHECK(std::abs(pot.phi(1) + std::log(1.0 - p)) < 1e-14);
  Matrix expected = Matrix::Zero(2, 2);
  expected(0, 0) = -std::log(1.0 - p);
  expected(1, 1) = -std::log(p);
  CHECK(qep::max_abs_diff(pot.matrix(), expected) < 1e-13);

  Matrix singular = Matrix::Zero(2, 2);
  singular(0, 0) = 1.0;
  CHECK_THROWS_AS(qep::nonequilibrium_potential(singular), std::invalid_argument);
}

TEST_CASE("ladder condition: gaps, witnesses, operator identity") {
  const double p = 0.2, eta = 0.4;
  auto map = thermal_qubit_map(p, eta);
  const Matrix pi = qep::invariant_state(map);
  const auto pot = qep::nonequilibrium_potential(pi);
  const auto rep = qep::check_ladder_condition(map, pot);
  REQUIRE(rep.satisfied);
  REQUIRE(rep.dphi.size() == 4);
  const double beta_eps = std::log((1.0 - p) / p);
  CHECK(std::abs(rep.dphi[0]) < 1e-12);
  CHECK(std::abs(rep.dphi[1] + beta_eps) < 1e-12);  // emission lowers Phi
  CHECK(std::abs(rep.dphi[2]) < 1e-12);
  CHECK(std::abs(rep.dphi[3] - beta_eps) < 1e-12);

  // [Phi, M_k] = dphi_k M_k for every stamped operator.
  qep::stamp_potential_gaps(map, rep);
  const Matrix phi = pot.matrix();
  for (const auto& op : map.ops) {
    REQUIRE(op.dphi.has_value());
    const Matrix comm = phi * op.m - op.m * phi;
    CHECK(qep::max_abs_diff(comm, Matrix(*op.dphi * op.m)) < 1e-9);
  }

  // <dphi> over outcomes equals Tr[Phi (rho' - rho)].
  qep::rng::Stream stream(23, 0);
  const Matrix rho = qep::testutil::random_density(2, stream);
  double mean_gap = 0.0;
  for (const auto& op : map.ops)
    mean_gap += qep::apply_operation(op, rho).second * *op.dphi;
  const double direct = ((qep::apply(map, rho) - rho) * phi).trace().real();
  CHECK(std::abs(mean_gap - direct) < 1e-9);

  // An operator mixing a finite gap with a zero gap is a violation.
  qep::KrausMap bad;
  bad.dim = 2;
  qep::KrausOperator op;
  op.m = Matrix::Zero(2, 2);
  op.m(0, 0) = 0.5;
  op.m(0, 1) = 0.5;
  op.label = "mixed";
  bad.ops.push_back(op);
  op.m = Matrix::Identity(2, 2);  // completeness filler, not CPTP-checked here
  bad.ops.push_back(op);
  const auto bad_rep = qep::check_ladder_condition(bad, pot);
  CHECK_FALSE(bad_rep.satisfied);
  CHECK(bad_rep.witness_op == 0);
  CHECK(bad_rep.witness.find("mixed") != std::string::npos);
  CHECK_THROWS_AS(qep::stamp_potential_gaps(bad, bad_rep), std::invalid_argument);

  // Unital example: uniform potential, every gap zero.
  const auto dep = depolarizing_map(0.3);
  const Matrix pi_dep = qep::invariant_state(dep);
  CHECK(qep::max_abs_diff(pi_dep, Matrix(Matrix::Identity(2, 2) / 2.0)) < 1e-12);
  const auto rep_dep =
      qep::check_ladder_condition(dep, qep::nonequilibrium_potential(pi_dep));
  REQUIRE(rep_dep.satisfied);
  for (double g : rep_dep.dphi) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("backward map: involution and consistency requirement") {
  auto map = thermal_qubit_map(0.15, 0.6);
  const qep::TimeReversal theta;
  const auto back = qep::backward_map(map, theta);
  qep::check_cptp(back);

  // sigma flips sign, environment indices swap, applying twice recovers.
  const auto twice = qep::backward_map(back, theta);
  REQUIRE(twice.ops.size() == map.ops.size());
  for (size_t k = 0; k < map.ops.size(); ++k) {
    CHECK(qep::max_abs_diff(twice.ops[k].m, map.ops[k].m) < 1e-14);
    CHECK(*back.ops[k].sigma_e == -*map.ops[k].sigma_e);
    CHECK(*twice.ops[k].sigma_e == *map.ops[k].sigma_e);
  }

  // Reversal in a nontrivial basis is also an involution.
  qep::rng::Stream stream(7, 0);
  qep::TimeReversal theta_b{qep::testutil::random_unitary(2, stream)};
  const auto twice_b =
      qep::backward_map(qep::backward_map(map, theta_b), theta_b);
  for (size_t k = 0; k < map.ops.size(); ++k)
    CHECK(qep::max_abs_diff(twice_b.ops[k].m, map.ops[k].m) < 1e-13);

  // Missing sigma is a caller error; an inconsistent assignment fails the
  // completeness check of the reversed map.
  auto unassigned = thermal_qubit_map(0.15, 0.6);
  unassigned.ops[1].sigma_e.reset();
  CHECK_THROWS_AS(qep::backward_map(unassigned, theta), std::invalid_argument);
  auto wrong = thermal_qubit_map(0.15, 0.6);
  wrong.ops[1].sigma_e = 0.1;
  CHECK_THROWS_WITH_AS(qep::backward_map(wrong, theta),
                       doctest::Contains("inconsistent"), std::invalid_argument);
}

TEST_CASE("dual and dual-reverse maps under detailed balance") {
  const double p = 0.3, eta = 0.5;
  const auto map = thermal_qubit_map(p, eta);
  const Matrix pi = qep::invariant_state(map);
  const qep::TimeReversal theta;

  // Detailed balance means sigma + dphi = 0 per operator, so the dual
  // process is the forward process and dual-reverse equals backward.
  const auto dual = qep::dual_map(map, pi, theta);
  const auto back = qep::backward_map(map, theta);
  const auto dual_rev = qep::dual_reverse_map(map, pi, theta);
  REQUIRE(dual.ops.size() == 4);
  for (size_t k = 0; k < map.ops.size(); ++k) {
    CHECK(qep::max_abs_diff(dual.ops[k].m, map.ops[k].m) < 1e-12);
    CHECK(qep::max_abs_diff(dual_rev.ops[k].m, back.ops[k].m) < 1e-12);
  }

  // Annotation algebra: sigma_D = -sigma - 2 dphi, dphi_D = dphi, and the
  // dual of the dual recovers the forward operators and increments.
  const auto dual2 = qep::dual_map(dual, pi, theta);
  for (size_t k = 0; k < map.ops.size(); ++k) {
    CHECK(std::abs(*dual.ops[k].sigma_e -
                   (-*map.ops[k].sigma_e - 2.0 * *dual.ops[k].dphi)) < 1e-12);
    CHECK(qep::max_abs_diff(dual2.ops[k].m, map.ops[k].m) < 1e-12);
    CHECK(std::abs(*dual2.ops[k].sigma_e - *map.ops[k].sigma_e) < 1e-12);
  }

  // Theta pi Theta^dag is invariant under the dual-reverse map.
  const Matrix pi_rev = theta.apply(pi);
  CHECK(qep::max_abs_diff(qep::apply(dual_rev, pi_rev), pi_rev) < 1e-12);

  // dual_map refuses a potential whose ladder condition fails.
  const auto dep = depolarizing_map(0.25);
  qep::rng::Stream stream(3, 0);
  Matrix skew = qep::testutil::random_density(2, stream, 0.3);
  CHECK_THROWS_WITH_AS(qep::dual_map(dep, skew, theta),
                       doctest::Contains("ladder"), std::invalid_argument);

  // dual_reverse_map requires an invariant pi.
  CHECK_THROWS_AS(qep::dual_reverse_map(map, skew, theta), std::invalid_argument);
}

TEST_CASE("dual-reverse map on a unital channel") {
  const auto dep = depolarizing_map(0.4);
  const Matrix pi = Matrix::Identity(2, 2) / 2.0;
  const qep::TimeReversal theta;
  const auto dual_rev = qep::dual_reverse_map(dep, pi, theta);
  qep::check_cptp(dual_rev);
  // pi^{1/2} commutes with everything here, so the result is the adjoint
  // channel conjugated by time reversal, with sigma carried through.
  for (size_t k = 0; k < dep.ops.size(); ++k) {
    CHECK(qep::max_abs_diff(dual_rev.ops[k].m,
                            theta.apply(Matrix(dep.ops[k].m.adjoint()))) < 1e-13);
    REQUIRE(dual_rev.ops[k].sigma_e.has_value());
    CHECK(std::abs(*dual_rev.ops[k].sigma_e - *dep.ops[k].sigma_e) < 1e-13);
    CHECK(std::abs(*dual_rev.ops[k].dphi) < 1e-13);
  }
}

TEST_CASE("concatenation and potential change split") {
  const auto step_a = thermal_qubit_map(0.2, 0.45);
  const auto step_b = thermal_qubit_map(0.35, 0.45);
  const auto conc = qep::concatenate({step_a, step_b, step_a});
  REQUIRE(conc.steps.size() == 3);
  CHECK(std::abs(conc.pis[0](1, 1).real() - 0.2) < 1e-12);
  CHECK(std::abs(conc.pis[1](1, 1).real() - 0.35) < 1e-12);

  qep::rng::Stream stream(41, 0);
  std::vector<Matrix> states{qep::testutil::random_density(2, stream)};
  for (const auto& step : conc.steps)
    states.push_back(qep::apply(step, states.back()));

  const auto [d_boundary, d_path] = qep::potential_change_split(conc, states);

  // The two pieces add up to the stepwise potential change
  // sum_l Tr[Phi_l (rho_l - rho_{l-1})].
  double total = 0.0;
  for (size_t l = 0; l < conc.steps.size(); ++l) {
    const Matrix phi = conc.potentials[l].matrix();
    total += ((states[l + 1] - states[l]) * phi).trace().real();
  }
  CHECK(std::abs(d_boundary + d_path - total) < 1e-12);

  // A single step has no path contribution.
  const auto single = qep::concatenate({step_a});
  const auto [b1, p1] = qep::potential_change_split(
      single, {states[0], qep::apply(step_a, states[0])});
  CHECK(p1 == 0.0);
  CHECK(std::abs(b1 - ((qep::apply(step_a, states[0]) - states[0]) *
                       conc.potentials[0].matrix())
                          .trace()
                          .real()) < 1e-12);

  // Equal potentials throughout: the path term vanishes identically.
  const auto constant = qep::concatenate({step_a, step_a});
  const auto [b2, p2] = qep::potential_change_split(
      constant, {states[0], states[1], qep::apply(step_a, states[1])});
  CHECK(std::abs(p2) < 1e-14);

  CHECK_THROWS_AS(qep::potential_change_split(conc, {states[0], states[1]}),
                  std::invalid_argument);
  qep::KrausMap three;
  three.dim = 3;
  three.ops.push_back({Matrix::Identity(3, 3), "id", -1, -1, 0.0, 0.0});
  CHECK_THROWS_AS(qep::concatenate({step_a, three}), std::invalid_argument);
}

TEST_CASE("random cptp closure under companions") {
  // Random dilation-generated channels stay CPTP under backward and
  // dual-reverse construction.
  qep::rng::Stream stream(77, 0);
  for (int rep = 0; rep < 5; ++rep) {
    const Matrix u = qep::testutil::random_unitary(4, stream);
    RVector q(2);
    const double x = 0.2 + 0.6 * stream.uniform();
    q << x, 1.0 - x;
    const auto basis = qep::testutil::computational_basis(2);
    auto map = qep::kraus_from_unitary(u, q, basis, basis, 2);
    qep::check_cptp(map);

    // q_tilde: the final-environment distribution for a maximally mixed
    // system input.
    RVector qt = RVector::Zero(2);
    const Matrix half = Matrix::Identity(2, 2) / 2.0;
    for (const auto& op : map.ops)
      qt(op.out_index) += qep::apply_operation(op, half).second;
    qep::assign_sigma_from_distributions(map, q, qt);
    const auto back = qep::backward_map(map, qep::TimeReversal{});
    qep::check_cptp(back);

    const Matrix pi = qep::invariant_state(map);
    const auto dual_rev = qep::dual_reverse_map(map, pi, qep::TimeReversal{});
    qep::check_cptp(dual_rev);
  }
}

}  // TEST_SUITE
