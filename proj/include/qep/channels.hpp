// SPDX-License-Identifier: MIT
//
// CPTP maps with labeled Kraus operators: construction from unitary
// dilations, backward / dual-reverse / dual companions, the nonequilibrium
// potential, the ladder condition, and concatenations.

#pragma once

#include "qep/core.hpp"
#include "qep/types.hpp"

namespace qep {

// One Kraus operator. `in_index`/`out_index` hold the environment transition
// (nu, mu) when the map came from a unitary dilation, or (-1, k) for jump
// channel k of a Lindblad unraveling. `sigma_e` is the environment entropy
// increment (nats) attached to the operation by the chosen detection scheme;
// `dphi` the nonequilibrium-potential gap when the ladder condition holds.
struct KrausOperator {
  Matrix m;
  std::string label;
  int in_index = -1;
  int out_index = -1;
  std::optional<double> sigma_e;
  std::optional<double> dphi;
};

struct KrausMap {
  int dim = 0;
  std::vector<KrausOperator> ops;
};

// Spectral form of Phi = -ln pi for a positive definite pi.
struct NonequilibriumPotential {
  RVector phi;   // phi_i = -ln pi_i, ascending in pi's eigenvalue order
  Matrix basis;  // columns: eigenvectors of pi, matching phi's order

  Matrix matrix() const {
    return basis * phi.cast<Complex>().asDiagonal() * basis.adjoint();
  }
};

// Outcome of the ladder-condition check. When satisfied, `dphi[k]` is the
// common potential gap of operator k (coefficient-weighted mean of the
// per-entry gaps, all within tol::ladder of each other). When violated,
// the witness names one operator and two matrix entries in the potential
// eigenbasis that connect levels with different gaps.
struct ConditionReport {
  bool satisfied = false;
  std::vector<double> dphi;
  std::string witness;
  int witness_op = -1;
  std::pair<int, int> witness_entry_a{-1, -1};
  std::pair<int, int> witness_entry_b{-1, -1};
  double witness_coefficient = 0.0;
};

// Ordered composition of CPTP maps (applied first to last) with per-step
// invariant states and potentials.
struct Concatenation {
  std::vector<KrausMap> steps;
  std::vector<Matrix> pis;
  std::vector<NonequilibriumPotential> potentials;
};

// ||sum M^dag M - I||_max; throws when above `tolerance`.
void check_cptp(const KrausMap& map, double tolerance = tol::cptp,
                const std::string& who = "check_cptp");

// Kraus dilation M_{mu nu} = sqrt(q_nu) <phi*_mu| U |phi_nu> of a joint
// unitary with environment initial spectrum (q, {|phi_nu>}) and final
// measurement basis {|phi*_mu>}. Operator order: nu major, mu minor.
// sigma_e is left unset (it depends on the backward initialization).
KrausMap kraus_from_unitary(const Matrix& u, const RVector& q,
                            const ProjectiveBasis& env_init,
                            const ProjectiveBasis& env_final, int dim_s);

// Attaches sigma_e = ln q[nu] - ln q_tilde[mu] to every operator of a
// dilation-built map.
void assign_sigma_from_distributions(KrausMap& map, const RVector& q,
                                     const RVector& q_tilde);

// sum_k M_k rho M_k^dag
Matrix apply(const KrausMap& map, const Matrix& rho);
DensityOperator apply(const KrausMap& map, const DensityOperator& rho);

// (M rho M^dag, Tr[M rho M^dag]) for a single operation.
std::pair<Matrix, double> apply_operation(const KrausOperator& op, const Matrix& rho);

// Fixed point of the map: dense transfer-matrix eigenproblem for dim <= 16,
// power iteration above. The result must be positive definite
// (min eigenvalue > tol::positive_definite).
Matrix invariant_state(const KrausMap& map);

// Phi = -ln pi as a spectral object; requires pi positive definite.
NonequilibriumPotential nonequilibrium_potential(const Matrix& pi);

// Tests whether every Kraus operator connects potential levels with a single
// gap: m^{k}_{ij} != 0 only where phi_j - phi_i is constant per operator.
ConditionReport check_ladder_condition(const KrausMap& map,
                                       const NonequilibriumPotential& pot,
                                       double tau_ladder = tol::ladder,
                                       double tau_coef = tol::ladder_coef);

// Copies the per-operator gaps of a satisfied report onto map.ops[k].dphi.
void stamp_potential_gaps(KrausMap& map, const ConditionReport& report);

// Backward map M~_{nu mu} = e^{-sigma/2} Theta M^dag Theta^dag. Requires
// sigma_e on every operator; completeness failure means the sigma assignment
// violates the trace-preservation consistency condition.
KrausMap backward_map(const KrausMap& map, const TimeReversal& theta);

// Dual-reverse map D~ = Theta pi^{1/2} M^dag pi^{-1/2} Theta^dag. CPTP
// whenever pi is an invariant state of the forward map (verified).
KrausMap dual_reverse_map(const KrausMap& map, const Matrix& pi,
                          const TimeReversal& theta);

// Dual map D = e^{-(sigma+dphi)/2} M. Preconditions checked, with distinct
// errors: (a) ladder condition must hold for pi, (b) Theta pi Theta^dag must
// be an invariant state of the backward map.
KrausMap dual_map(const KrausMap& map, const Matrix& pi,
                  const TimeReversal& theta = TimeReversal{});

// Composite of maps applied in the given order; each must have a fixed point.
Concatenation concatenate(const std::vector<KrausMap>& maps);

// Boundary/path decomposition of the total potential change over a
// concatenation, given the states rho(t_l), l = 0..N:
//   <dphi>_total = sum_l Tr[Phi_l (rho_l - rho_{l-1})] = dPhi_b + dPhi_p,
//   dPhi_b = Tr[rho_N Phi_N] - Tr[rho_0 Phi_1],
//   dPhi_p = -sum_{l=1}^{N-1} Tr[rho_l (Phi_{l+1} - Phi_l)].
std::pair<double, double> potential_change_split(const Concatenation& conc,
                                                 const std::vector<Matrix>& states);

}  // namespace qep
