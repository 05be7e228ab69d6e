// SPDX-License-Identifier: MIT
//
// Markovian master-equation tools: Lindblad integration, quantum-jump
// unraveling, exchange-entropy assignment, and entropy-production rates.

#pragma once

#include "qep/channels.hpp"
#include "qep/core.hpp"
#include "qep/trajectories.hpp"
#include "qep/types.hpp"

#include <Eigen/SparseCore>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace qep {

using SpMatrix = Eigen::SparseMatrix<Complex>;

// One jump channel L_k (units of rate^{1/2}) with its exchange entropy per
// detection event and, when the ladder condition holds, its potential gap.
struct JumpOperator {
  SpMatrix l;
  std::string label;
  std::optional<double> sigma_e;
  std::optional<double> dphi;
};

// Commutation diagnostics controlling the adiabatic split of jump
// trajectories: the no-jump generator must not mix potential levels.
struct JumpLadderStatus {
  bool available = false;
  double h_commutator = 0.0;    // max |[H, Phi]|
  double rate_commutator = 0.0; // max |[sum L^dag L, Phi]|
  std::string witness;
};

// Time-independent Lindblad generator on a d-dimensional space. All built-in
// models are autonomous (the driven cavity lives in its rotating frame), so
// the Hamiltonian part is a constant matrix. prepare() validates the pieces
// and freezes the caches used by the integrator and the unraveler.
struct LindbladModel {
  int dim = 0;
  double hbar = 1.0;
  SpMatrix h;
  std::vector<JumpOperator> jumps;
  std::optional<Matrix> pi;  // invariant state, analytic when known
  std::optional<JumpLadderStatus> ladder;
  // Energy bookkeeping observable for work/heat rates; defaults to h. A
  // rotating-frame model sets this to the lab-frame energy.
  std::optional<SpMatrix> e_obs;
  std::optional<SpMatrix> quadrature;  // displacement observable, if any

  bool prepared = false;
  std::vector<SpMatrix> ldl;  // L_k^dag L_k
  SpMatrix ldl_sum;
  SpMatrix h_eff;  // H - (i hbar / 2) sum_k L_k^dag L_k
};

LindbladModel& prepare(LindbladModel& m);

// d rho / dt at state rho. The time argument is kept for interface stability;
// the built-in generators are time independent.
Matrix liouvillian_apply(const LindbladModel& m, const Matrix& rho,
                         double t = 0.0);

// Dissipative part restricted to a subset of jump operators (all when empty).
Matrix dissipator_apply(const LindbladModel& m, const Matrix& rho,
                        const std::vector<int>& which = {});

struct IntegrateOptions {
  double dt = 0.0;         // 0 selects 1e-3 / (max rate)
  bool richardson = true;  // verify the endpoint against a halved step
  int positivity_dim_cap = 64;  // full spectrum checks up to this dimension
};

// Fixed-step RK4 propagation, emitting the state at each grid time. The grid
// must start at t >= 0 and increase strictly.
std::vector<Matrix> integrate(const LindbladModel& m,
                              const DensityOperator& rho0,
                              const std::vector<double>& t_grid,
                              const IntegrateOptions& opt = {});

// Streaming variant: advances to t_f and invokes the callback at t = 0 and
// after every emit_every steps (and at t_f). Returns the final state.
Matrix integrate_callback(const LindbladModel& m, const DensityOperator& rho0,
                          double t_f, double dt,
                          const std::function<void(double, const Matrix&)>& cb,
                          int emit_every = 1);

// Detects (L, L^dag) rate pairs and assigns sigma_e = ln(Gamma_down /
// Gamma_up) to each member; Hermitian and zero operators get sigma_e = 0.
// Operators without a partner must carry a user-supplied value. The global
// trace-preservation identity of the backward assignment is then verified.
LindbladModel& assign_environment_entropies(LindbladModel& m);

// max |sum_k (L_k^dag L_k - L_k L_k^dag e^{-sigma_k})|.
double trace_preservation_residual(const LindbladModel& m);

// Checks [H, Phi] and [sum L^dag L, Phi] against the invariant state's
// potential and stamps a potential gap on every jump operator when each one
// connects levels with a single gap. Uses m.pi (or the numeric fixed point).
JumpLadderStatus stamp_jump_gaps(LindbladModel& m);

enum class StepKrausVariant { first_order, normalized };

// One integration step as an explicit Kraus map: M_k = sqrt(dt) L_k plus a
// no-jump operator. The normalized variant is exactly trace preserving.
KrausMap step_kraus_map(const LindbladModel& m, double dt,
                        StepKrausVariant v = StepKrausVariant::normalized);

struct JumpEvent {
  int k = -1;
  double t = 0.0;
  std::optional<double> sigma_e;
  std::optional<double> dphi;
};

struct JumpTrajectory {
  int n = -1;
  int m = -1;
  std::vector<JumpEvent> events;
  // When recorded: the normalized state at t = 0, after each jump, and at
  // t_f before the final measurement.
  std::vector<Vector> states;
};

enum class UnravelMethod { stepwise, gillespie };

struct UnravelOptions {
  UnravelMethod method = UnravelMethod::stepwise;
  bool record_states = false;
  std::vector<double> checkpoints;  // ensemble accumulation times
  int batches = 1;                  // blocking batches for checkpoint means
  ProjectiveBasis initial_basis;    // defaults to the eigenbasis of rho0
};

struct UnravelResult {
  std::vector<JumpTrajectory> trajectories;
  // checkpoint_means[c][b]: mean projector over batch b at checkpoint c.
  std::vector<std::vector<Matrix>> checkpoint_means;
  std::string warning;
};

// Quantum-jump unraveling with counter-based per-trajectory streams: results
// are independent of ordering. Stepwise sampling uses first-order jump
// probabilities dt <L^dag L>; Gillespie sampling draws exact waiting times
// from the non-Hermitian decay of h_eff and ignores dt.
UnravelResult unravel(const LindbladModel& m, const DensityOperator& rho0,
                      double t_f, double dt, int n, std::uint64_t seed,
                      const ProjectiveBasis& final_basis,
                      const UnravelOptions& opt = {});

// Entropy ledger of one jump record given the boundary probabilities p_n of
// the initial and p~_m of the final projective outcome.
EntropyLedger trajectory_entropies(const JumpTrajectory& traj,
                                   const LindbladModel& m, double p_n,
                                   double p_tilde_m);

// Monte Carlo integral fluctuation estimate <e^{-x}> over sampled ledgers,
// with x selected by kind (total, adiabatic, nonadiabatic).
FtEstimate verify_integral_ft(const std::vector<EntropyLedger>& ledgers,
                              FtKind which);

struct RatesSample {
  double t = 0.0;
  double s_dot = 0.0;        // dS/dt
  double phi_dot = 0.0;      // -Tr[drho ln pi]
  double sigma_e_dot = 0.0;  // sum_k Tr[L rho L^dag] sigma_k
  double s_dot_i = 0.0;
  double s_dot_a = 0.0;
  double s_dot_na = 0.0;
  double min_eigenvalue = 0.0;  // conditioning of the ln rho clamp
};

RatesSample entropy_rates(const LindbladModel& m, const Matrix& rho,
                          double t = 0.0);

// ln(rho) with eigenvalues clamped from below, as used inside the rate
// formulas; exposed so sweeps can precompute ln(pi) once.
Matrix clamped_log_density(const Matrix& rho);

// sigma_e_dot + phi_dot evaluated with a precomputed ln(pi): the adiabatic
// rate without the per-call eigensolve of entropy_rates.
double adiabatic_rate(const LindbladModel& m, const Matrix& rho,
                      const Matrix& log_pi);

// Energy flow rates measured on e_obs (or h): the Hamiltonian part drives
// w_dot = (i/hbar) <[h, e_obs]>, the dissipator q_dot = Tr[e_obs D(rho)],
// and u_dot = w_dot + q_dot identically. x_dot tracks the quadrature
// observable when the model declares one (0 otherwise).
struct EnergyRates {
  double w_dot = 0.0;
  double q_dot = 0.0;
  double u_dot = 0.0;
  double x_dot = 0.0;
};

EnergyRates energy_rates(const LindbladModel& m, const Matrix& rho);

// Non-adiabatic entropy produced while relaxing from rho0 to rho_t under a
// fixed invariant state: S(rho0 || pi) - S(rho_t || pi).
double spohn_relaxation(const DensityOperator& rho0,
                        const DensityOperator& rho_t, const Matrix& pi);

// Stationary state of the generator by an exact null-space solve of the
// vectorized Liouvillian. Dimensions above 32 must supply pi analytically.
Matrix invariant_state_numeric(const LindbladModel& m);

}  // namespace qep
