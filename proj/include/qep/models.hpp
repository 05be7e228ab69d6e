// SPDX-License-Identifier: MIT
//
// Built-in physical models: a CNOT gate on a coherent control and a thermal
// target qubit, an autonomous three-level thermal machine coupled to three
// bosonic baths, and a resonantly driven cavity mode in its rotating frame.

#pragma once

#include "qep/core.hpp"
#include "qep/lindblad.hpp"
#include "qep/trajectories.hpp"
#include "qep/types.hpp"

#include <array>
#include <cmath>
#include <complex>

namespace qep {

// CNOT gate with the system as control and a thermal target, both with level
// splitting eps (H = eps |1><1| on each qubit). The control starts in
// (I + alpha sx)/2, the target in the Gibbs state fixed by beta_eps = beta
// times eps. Empty final bases select the computational (energy) basis.
struct CnotParams {
  double alpha = 0.8;     // sigma_x coherence of the control, in [0, 1]
  double beta_eps = 2.5;  // dimensionless inverse temperature of the target
  double epsilon = 1.0;   // level splitting, sets the energy unit
  ProjectiveBasis s_final, e_final;

  double kappa() const { return std::tanh(0.5 * beta_eps); }
};

// eps |1><1| on one qubit.
Matrix cnot_hamiltonian(const CnotParams& p);

// Average work done by the first gate, eps (1/2 - e^{-beta eps} / Z_E).
double cnot_work(const CnotParams& p);

// Two-point-measurement process for one gate application. The control is
// measured in its sigma_x eigenbasis (left empty at alpha = 0, where the
// degenerate spectrum demands a caller-chosen basis) and the target in the
// energy basis; final bases come from the parameters.
BipartiteProcess build_cnot(const CnotParams& p);

// rho* = sum_{m,mu} varrho*_{m mu} P_m (x) Q_mu, the joint state left by the
// final local measurements.
DensityOperator measured_joint_state(const ResolvedBipartite& r);

// Outcome of running the gate once more on the measured state.
struct CnotRecovery {
  Matrix rho_final;            // U rho* U^dag
  double w_ext = 0.0;          // Tr[(H_S + H_E)(rho* - rho_final)]
  double decorrelation = 0.0;  // max |rho_final - rho_final_S (x) rho_E|
};

// Second CNOT on the measured joint state. With energy-basis final
// measurements the target returns to its thermal state, the state
// decorrelates, and the extracted work equals the first-gate work; any other
// final basis shows up as a nonzero decorrelation defect.
CnotRecovery cnot_second_gate(const CnotParams& p,
                              const DensityOperator& rho_star);

// Three-level machine: transitions g <-> e_A (bath 1), e_A <-> e_B (bath 2)
// and g <-> e_B (bath 3) with bosonic-occupation rates. Energies are given
// as hbar-omega products; the third gap is hw3() = hw1 + hw2.
struct MachineParams {
  double hw1 = 1.0;
  double hw2 = 1.5;
  double beta1 = 5.0, beta2 = 0.5, beta3 = 4.0;
  double gamma1 = 0.1, gamma2 = 0.1, gamma3 = 0.1;

  double hw3() const { return hw1 + hw2; }
  bool equal_couplings() const;
  // beta1 >= beta3 >= beta2 with hw2 at or above the refrigeration window
  // hw1 (beta1 - beta3) / (beta3 - beta2): bath 1 is then the coldest and
  // the machine can pump heat out of it.
  bool cooling_ordering() const;
};

// Lindblad model with six labeled jumps ("down1", "up1", ..., "up3"),
// exchange entropies assigned from the rate pairs, the stationary state
// (closed form for equal couplings, numeric otherwise) and the potential
// gaps stamped on every jump.
LindbladModel build_machine(const MachineParams& p);

// Stationary populations (pi_g, pi_A, pi_B) in closed form; requires equal
// bath couplings (use invariant_state_numeric otherwise).
RVector machine_steady_state(const MachineParams& p);

// e^{beta3 hw3} - e^{beta1 hw1 + beta2 hw2}: positive in the refrigeration
// regime, zero at the design point where every stationary flow stops.
double machine_flow_determinant(const MachineParams& p);

// Stationary heat currents (Q1, Q2, Q3) in closed form, equal couplings.
std::array<double, 3> machine_flows_steady(const MachineParams& p);

// Local inverse temperatures (beta'_1, beta'_2, beta'_3) read off the
// populations across each transition, beta'_r = ln(p_low / p_high) / hw_r.
std::array<double, 3> virtual_temperatures(const RVector& pops,
                                           const MachineParams& p);

// Q_dot_r = Tr[H L_r(rho)] for the three bath dissipators.
std::array<double, 3> machine_heat_flows(const LindbladModel& m,
                                         const Matrix& rho);

// Canned refrigeration cycle g -> e_A -> e_B -> g (one quantum absorbed from
// bath 1, one from bath 2, one released to bath 3) carrying the model's
// entropy annotations; pins the sign conventions in ledger tests.
JumpTrajectory machine_cycle_trajectory(const LindbladModel& m);

// Driven cavity mode in the frame rotating at the drive frequency: constant
// Hamiltonian part V = i hbar (eps a^dag - eps* a), thermal jump operators
// at rate gamma0, and a displaced Gibbs state as stationary state. n_max is
// the number of Fock levels kept (the dimension of the truncated space).
struct CavityParams {
  double omega = 1.0;      // hbar omega, energy of one quantum
  Complex eps{0.02, 0.0};  // drive amplitude |eps| e^{i phi}
  double gamma0 = 0.01;    // bare emission rate
  double beta = 0.1;       // bath inverse temperature
  int n_max = 80;          // Fock levels kept

  Complex alpha() const { return 2.0 * eps / gamma0; }
  double n_th() const { return 1.0 / std::expm1(beta * omega); }
  // gamma0 ~ |eps| << omega, the regime where the dissipator is valid.
  bool weak_driving() const {
    return gamma0 <= 0.1 * omega && std::abs(eps) <= 0.1 * omega;
  }
};

// Truncation quality of the displaced thermal state: stationary population
// in the top five Fock levels, and how far the truncated displacement
// operator is from shifting the mode operator (weighted by the stationary
// state, so edge effects count only where they are populated).
struct CavityTruncation {
  double tail = 0.0;
  double displacement_defect = 0.0;
};

CavityTruncation cavity_truncation(const CavityParams& p);

// D(alpha) e^{-beta H_0} D(alpha)^dag / Z_0 on the truncated space; errors
// when the tail population exceeds 1e-8 (enlarge n_max).
DensityOperator cavity_steady_state(const CavityParams& p);

// Lindblad model with jumps "down" = sqrt(gamma0 (n_th + 1)) a and
// "up" = sqrt(gamma0 n_th) a^dag, the lab-frame energy hbar omega a^dag a as
// bookkeeping observable, the quadrature x_phi as tracked displacement, and
// the displaced Gibbs state attached as stationary state.
LindbladModel build_cavity(const CavityParams& p);

double cavity_power_steady(const CavityParams& p);   // hbar omega gamma0 |alpha|^2
double cavity_energy_steady(const CavityParams& p);  // hbar omega (n_th + |alpha|^2)

// Energy flows at time t of a relaxation that starts diagonal in the number
// basis with mean occupation n0 (moment closed forms, any diagonal start).
EnergyRates cavity_energy_transients(const CavityParams& p, double n0,
                                     double t);

struct CavityRates {
  double w_dot = 0.0;
  double q_dot = 0.0;
  double u_dot = 0.0;
  double x_dot = 0.0;
  double s_dot = 0.0;
  double s_dot_a = 0.0;
  double s_dot_na = 0.0;
  double s_dot_i = 0.0;
};

// Rates at time t of the relaxation starting from rho0. The closed-form
// branch covers the thermal state of the undriven cavity (the entropy rates
// have no closed form for other starts); closed_form = false integrates the
// master equation to t and evaluates the rate formulas on the result.
CavityRates cavity_transients(const CavityParams& p,
                              const DensityOperator& rho0, double t,
                              bool closed_form = true);

// t_n = 2 ln 2 / gamma0, where the adiabatic rate of the thermal-start
// relaxation changes sign.
double adiabatic_sign_change_time(double gamma0);

}  // namespace qep
